"""Named parameter sets, the Adam update with a max-norm cap, checkpoints.

A checkpoint is one file: a JSON header line describing names, shapes and
precision, then the raw little-endian float32 payload in header order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .autodiff import Tensor, TensorError, active_dtype

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_MAXNORM_CAP = 2.0


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or inconsistent."""


class ParameterSet:
    """Ordered name -> Tensor map holding everything the optimizer touches."""

    def __init__(self, tensors: Mapping[str, Tensor] | None = None):
        self._tensors: dict[str, Tensor] = {}
        if tensors:
            for name, tensor in tensors.items():
                self.add(name, tensor)

    def add(self, name: str, value) -> Tensor:
        if name in self._tensors:
            raise TensorError(f"parameter {name!r} already registered")
        if isinstance(value, Tensor):
            tensor = value
            tensor.requires_grad = True
            tensor.name = name
        else:
            tensor = Tensor(value, requires_grad=True, name=name)
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def items(self):
        return self._tensors.items()

    def merged_with(self, other: "ParameterSet") -> "ParameterSet":
        """New set containing this set's tensors and ``other``'s (shared, not copied)."""
        merged = ParameterSet()
        for name, tensor in self.items():
            merged._tensors[name] = tensor
        for name, tensor in other.items():
            if name in merged._tensors:
                raise TensorError(f"parameter {name!r} present in both sets")
            merged._tensors[name] = tensor
        return merged

    def total_size(self) -> int:
        return sum(t.data.size for t in self._tensors.values())


@dataclass
class OptimizerState:
    """Adam moments plus bookkeeping, keyed like the parameter set."""

    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    skipped_nonfinite: int = 0


def init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform Glorot initialization for a (fan_in, fan_out) weight matrix."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def apply_maxnorm(values: np.ndarray, cap: float) -> np.ndarray:
    """Scale rows of a matrix down to Euclidean norm ``cap``.

    Rows within a few ulps of the cap are left untouched so that applying
    the constraint twice is bitwise the same as applying it once.
    """
    if values.ndim != 2:
        return values
    norms = np.sqrt((values * values).sum(axis=1, keepdims=True))
    slack = 1.0 + 4.0 * np.finfo(values.dtype).eps
    over = norms > cap * slack
    if not over.any():
        return values
    scale = np.where(over, cap / np.maximum(norms, 1e-30), 1.0)
    return (values * scale).astype(values.dtype, copy=False)


def adam_step(
    params: ParameterSet,
    grads: Mapping[str, Tensor],
    state: OptimizerState,
    lr: float = DEFAULT_LEARNING_RATE,
    maxnorm_cap: float = DEFAULT_MAXNORM_CAP,
) -> tuple[ParameterSet, OptimizerState]:
    """One Adam update over the gradients present in ``grads``.

    Parameters without a gradient are untouched.  A non-finite gradient
    skips that parameter's update entirely (moments included) and bumps
    ``state.skipped_nonfinite``.  After the update, 2-D parameters have
    each row clipped to ``maxnorm_cap``.
    """
    unknown = [name for name in grads if name not in params]
    if unknown:
        raise TensorError(f"gradients for unknown parameters: {unknown}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - ADAM_BETA1 ** t
    correction2 = 1.0 - ADAM_BETA2 ** t

    for name, grad in grads.items():
        g = grad.data if isinstance(grad, Tensor) else np.asarray(grad)
        if not np.all(np.isfinite(g)):
            state.skipped_nonfinite += 1
            logger.warning("non-finite gradient for %s; update skipped (total %d)",
                           name, state.skipped_nonfinite)
            continue
        tensor = params[name]
        if g.shape != tensor.data.shape:
            raise TensorError(
                f"gradient shape {g.shape} != parameter shape {tensor.data.shape} for {name!r}")
        dtype = tensor.data.dtype
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        updated = tensor.data - np.asarray(lr, dtype) * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        tensor.data = apply_maxnorm(updated.astype(dtype, copy=False), maxnorm_cap)
    return params, state


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ParameterSet, meta: dict | None = None) -> None:
    """Write a JSON header line plus raw float32 payload, header order."""
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "precision": "float32",
        "tensors": [{"name": name, "shape": list(t.data.shape)} for name, t in params.items()],
    }
    if meta:
        header["meta"] = meta
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for _, tensor in params.items():
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    logger.info("saved checkpoint to %s (%d tensors, %d values)",
                path, len(params), params.total_size())


def load_checkpoint(path) -> tuple[ParameterSet, dict]:
    """Read a checkpoint, returning parameters in the active precision."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')!r}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}")
    entries = header.get("tensors")
    if not isinstance(entries, list):
        raise CheckpointError(f"{path}: header lacks a tensor list")

    payload = raw[newline + 1:]
    expected = sum(int(np.prod(e["shape"])) for e in entries) * 4
    if len(payload) != expected:
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")

    params = ParameterSet()
    offset = 0
    for entry in entries:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape))
        values = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        params.add(entry["name"], values.reshape(shape).astype(active_dtype()))
    return params, header.get("meta", {})
