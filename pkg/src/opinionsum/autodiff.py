"""Reverse-mode automatic differentiation over small dense tensors.

The engine is deliberately minimal: tensors wrap numpy arrays, primitive
operations record themselves on an active :class:`Tape`, and
:func:`backward` walks the tape in reverse accumulating vector-Jacobian
products.  With no active tape the same primitives run as plain forward
computations, which is the inference path.

Precision is a process-global switch (:func:`set_precision`): gradient
checking wants float64 headroom, training and inference run in float32.
"""

from __future__ import annotations

import contextlib
import logging
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}

_active_dtype = np.float32
_active_tape: "Tape | None" = None

# Probabilities below this are clamped before log(); see cross_entropy.
LOG_CLAMP = 1e-12


class TensorError(ValueError):
    """Raised on shape mismatches, non-finite inputs, or misuse of the tape."""


def set_precision(name: str) -> None:
    global _active_dtype
    if name not in PRECISIONS:
        raise TensorError(f"unknown precision {name!r}; expected one of {sorted(PRECISIONS)}")
    _active_dtype = PRECISIONS[name]


def get_precision() -> str:
    return "float64" if _active_dtype == np.float64 else "float32"


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the global float width."""
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def active_dtype():
    return _active_dtype


class Tensor:
    """Dense array with an optional gradient slot.

    ``data`` is always a numpy array in the active precision.  ``grad`` is
    filled in by :func:`backward` for tensors with ``requires_grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_active_dtype)
        if not np.all(np.isfinite(arr)):
            raise TensorError(f"tensor {name or '<anonymous>'} contains non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def assign(self, data) -> None:
        """Overwrite the values in place (used by the optimizer and grad_check)."""
        arr = np.asarray(data, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise TensorError(f"assign shape {arr.shape} != tensor shape {self.data.shape}")
        if not np.all(np.isfinite(arr)):
            raise TensorError(f"assign to {self.name or '<anonymous>'} has non-finite values")
        self.data = arr

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # Light operator sugar; everything funnels through the primitives below.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    """One recorded primitive: output, inputs, recompute and vjp closures."""

    __slots__ = ("kind", "inputs", "output", "forward_fn", "backward_fn")

    def __init__(self, kind, inputs, output, forward_fn, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.forward_fn = forward_fn
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitives; inputs of every node precede it.

    A tape doubles as a context manager that makes itself the recording
    target.  ``rng`` feeds dropout masks so a run's randomness flows from
    one seeded generator.
    """

    def __init__(self, rng: np.random.Generator | None = None):
        self.nodes: list[Node] = []
        self.rng = rng

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise TensorError("tapes do not nest; close the active tape first")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _active_tape
        _active_tape = None

    def __len__(self) -> int:
        return len(self.nodes)

    def owns(self, tensor: Tensor) -> bool:
        return any(node.output is tensor for node in self.nodes)

    def replay(self) -> None:
        """Re-execute every recorded forward, overwriting outputs in place.

        Sampled dropout masks are captured in the closures, so a replay is
        bitwise identical when the leaf inputs are unchanged.
        """
        for node in self.nodes:
            node.output.data = node.forward_fn()


def active_tape() -> Tape | None:
    return _active_tape


def _record(kind, inputs, out_data, forward_fn, backward_fn) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        shapes = [tuple(t.shape) for t in inputs]
        raise TensorError(f"{kind} produced non-finite values from input shapes {shapes}")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    out.name = None
    if _active_tape is not None:
        _active_tape.nodes.append(Node(kind, tuple(inputs), out, forward_fn, backward_fn))
    return out


def as_tensor(value, name: str | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False, name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise TensorError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _record(
        "add", (a, b), out,
        lambda: a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise TensorError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _record(
        "mul", (a, b), out,
        lambda: a.data * b.data,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0 or a.data.ndim > 2 or b.data.ndim > 2:
        raise TensorError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise TensorError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:          # dot -> scalar
            return g * bd, g * ad
        if ad.ndim == 2 and bd.ndim == 1:          # (m,k)@(k,) -> (m,)
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:          # (k,)@(k,n) -> (n,)
            return bd @ g, np.outer(ad, g)
        return g @ bd.T, ad.T @ g                  # (m,k)@(k,n)

    return _record("matmul", (a, b), out, lambda: a.data @ b.data, backward)


def concat(parts: Sequence) -> Tensor:
    tensors = [as_tensor(p) for p in parts]
    if not tensors:
        raise TensorError("concat: needs at least one input")
    if any(t.data.ndim != 1 for t in tensors):
        raise TensorError(f"concat: expects vectors, got shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors])

    def backward(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return _record("concat", tuple(tensors), out,
                   lambda: np.concatenate([t.data for t in tensors]), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", (a,), out, lambda: np.tanh(a.data),
                   lambda g: (g * (1.0 - np.tanh(a.data) ** 2),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Evaluate on the non-overflowing branch for either sign.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)

    def backward(g):
        s = _sigmoid(a.data)
        return (g * s * (1.0 - s),)

    return _record("sigmoid", (a,), out, lambda: _sigmoid(a.data), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _record("relu", (a,), out, lambda: np.maximum(a.data, 0.0),
                   lambda g: (g * (a.data > 0.0),))


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a) -> Tensor:
    """Softmax over the last axis of a vector or matrix."""
    a = as_tensor(a)
    if a.data.ndim not in (1, 2):
        raise TensorError(f"softmax: expects a vector or matrix, got shape {a.shape}")
    out = _softmax(a.data)

    def backward(g):
        p = _softmax(a.data)
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return _record("softmax", (a,), out, lambda: _softmax(a.data), backward)


def embedding_lookup(table, ids) -> Tensor:
    """Select rows of an embedding matrix by integer id (scalar or 1-D)."""
    table = as_tensor(table)
    if table.data.ndim != 2:
        raise TensorError(f"embedding_lookup: table must be a matrix, got {table.shape}")
    idx = np.asarray(ids)
    if idx.ndim > 1:
        raise TensorError("embedding_lookup: ids must be a scalar or a flat sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise TensorError(
            f"embedding_lookup: id out of range for table with {table.shape[0]} rows")
    out = table.data[idx]

    def backward(g):
        dtable = np.zeros_like(table.data)
        if idx.ndim == 0:
            dtable[int(idx)] += g
        else:
            np.add.at(dtable, idx, g)
        return (dtable,)

    return _record("embedding_lookup", (table,), out, lambda: table.data[idx], backward)


_clamp_events = 0


def clamp_event_count() -> int:
    """How many times a probability needed clamping before log()."""
    return _clamp_events


def cross_entropy(probs, target: int) -> Tensor:
    """Negative log-probability of ``target`` under a probability vector.

    Probabilities below ``LOG_CLAMP`` are clamped before the log; each clamp
    is counted (see :func:`clamp_event_count`) and logged for diagnosis.
    """
    probs = as_tensor(probs)
    if probs.data.ndim != 1:
        raise TensorError(f"cross_entropy: expects a probability vector, got {probs.shape}")
    t = int(target)
    if not 0 <= t < probs.shape[0]:
        raise TensorError(f"cross_entropy: target {t} outside distribution of size {probs.shape[0]}")

    def forward():
        global _clamp_events
        p = probs.data[t]
        if p < LOG_CLAMP:
            _clamp_events += 1
            logger.debug("cross_entropy: clamped probability %.3e at index %d", p, t)
            p = LOG_CLAMP
        return np.asarray(-np.log(p), dtype=probs.data.dtype)

    def backward(g):
        dp = np.zeros_like(probs.data)
        dp[t] = -g / max(probs.data[t], LOG_CLAMP)
        return (dp,)

    return _record("cross_entropy", (probs,), forward(), forward, backward)


def dropout(a, rate: float, mode: str) -> Tensor:
    """Inverted dropout: train mode scales retained entries by 1/(1-rate)."""
    a = as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise TensorError(f"dropout: rate {rate} outside [0, 1)")
    if mode == "eval" or rate == 0.0:
        return a
    if mode != "train":
        raise TensorError(f"dropout: unknown mode {mode!r}")
    tape = _active_tape
    if tape is None or tape.rng is None:
        raise TensorError("dropout in train mode needs an active tape with an rng")
    mask = (tape.rng.random(a.shape) >= rate) / (1.0 - rate)
    mask = mask.astype(a.data.dtype)
    return _record("dropout", (a,), a.data * mask,
                   lambda: a.data * mask, lambda g: (g * mask,))


def scatter_sum(weights, ids, size: int) -> Tensor:
    """Dense vector where out[ids[j]] accumulates weights[j].

    Turns attention weights over input-word slots into a distribution over
    output ids (several slots may share one id).
    """
    weights = as_tensor(weights)
    idx = np.asarray(ids)
    if weights.data.ndim != 1 or idx.shape != weights.shape:
        raise TensorError(
            f"scatter_sum: weights {weights.shape} and ids {idx.shape} must be equal-length vectors")
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise TensorError(f"scatter_sum: id out of range for output size {size}")

    def forward():
        out = np.zeros(size, dtype=weights.data.dtype)
        np.add.at(out, idx, weights.data)
        return out

    return _record("scatter_sum", (weights,), forward(), forward,
                   lambda g: (g[idx],))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)
    return _record("sum", (a,), out, lambda: np.asarray(a.data.sum(), dtype=a.data.dtype),
                   lambda g: (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=False),))


PRIMITIVE_KINDS = (
    "matmul", "add", "mul", "concat", "tanh", "sigmoid", "softmax",
    "embedding_lookup", "cross_entropy", "dropout",
)


def forward_primitive(kind: str, inputs: Sequence, mode: str = "eval", **kwargs) -> Tensor:
    """Uniform dispatch over the primitive registry.

    ``mode`` only matters for dropout; everything else ignores it.
    """
    if kind not in PRIMITIVE_KINDS:
        raise TensorError(f"unknown primitive kind {kind!r}")
    if kind == "matmul":
        return matmul(*inputs)
    if kind == "add":
        return add(*inputs)
    if kind == "mul":
        return mul(*inputs)
    if kind == "concat":
        return concat(inputs)
    if kind == "tanh":
        return tanh(*inputs)
    if kind == "sigmoid":
        return sigmoid(*inputs)
    if kind == "softmax":
        return softmax(*inputs)
    if kind == "embedding_lookup":
        return embedding_lookup(inputs[0], kwargs.get("ids", inputs[1] if len(inputs) > 1 else None))
    if kind == "cross_entropy":
        return cross_entropy(inputs[0], kwargs.get("target", inputs[1] if len(inputs) > 1 else None))
    return dropout(inputs[0], kwargs.get("rate", 0.5), mode)


# ---------------------------------------------------------------------------
# backward pass


def backward(tape: Tape, loss: Tensor) -> dict[str, Tensor]:
    """Accumulate gradients of a scalar loss over the whole tape.

    Returns a map from parameter name to gradient for every named tensor
    with ``requires_grad`` that the loss actually depends on.  All reached
    tensors also get their ``grad`` attribute filled.
    """
    if loss.data.ndim != 0:
        raise TensorError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not tape.owns(loss):
        raise TensorError("backward: loss is not an output of this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0, dtype=loss.data.dtype)}
    tensors: dict[int, Tensor] = {id(loss): loss}

    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None or not node.output.requires_grad:
            continue
        input_grads = node.backward_fn(g)
        for tensor, ig in zip(node.inputs, input_grads):
            if ig is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = np.array(ig, dtype=tensor.data.dtype, copy=True)
                tensors[key] = tensor

    named: dict[str, Tensor] = {}
    for key, tensor in tensors.items():
        tensor.grad = grads[key]
        if tensor.name is not None and tensor is not loss:
            named[tensor.name] = Tensor(grads[key])
    return named


def grad_check(
    loss_builder: Callable[[], tuple[Tape, Tensor]],
    params: Iterable[Tensor] | dict[str, Tensor],
    eps: float = 1e-5,
    max_coords: int = 200,
    informative_floor: float = 1e-5,
    sanity_coords: int = 50,
    sanity_tolerance: float = 1e-3,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_builder`` must run a deterministic forward pass (dropout off,
    fixed inputs) and return ``(tape, loss)``.  The relative comparison
    |analytic − numeric| / max(|analytic|, |numeric|, 1e-8) runs on the
    ``max_coords`` largest-magnitude analytic coordinates at or above
    ``informative_floor``: below that, 64-bit central differences cannot
    resolve the derivative and the ratio measures roundoff, not
    correctness.  Near-zero coordinates are still probed (an even spread
    of ``sanity_coords`` of them): any whose numeric derivative exceeds
    ``sanity_tolerance`` — a gradient the backward pass missed — enters
    the returned maximum at full weight.
    """
    if isinstance(params, dict):
        tensors = list(params.values())
    else:
        tensors = list(params)

    tape, loss = loss_builder()
    tape2, loss2 = loss_builder()
    if loss.data.tobytes() != loss2.data.tobytes():
        raise TensorError("grad_check: loss_builder is not deterministic across two passes")
    del tape2, loss2

    backward(tape, loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad for t in tensors]

    coords = [(abs(float(analytic[pi].reshape(-1)[fi])), pi, fi)
              for pi, t in enumerate(tensors) for fi in range(t.data.size)]
    coords.sort(key=lambda c: (-c[0], c[1], c[2]))
    n_informative = sum(1 for magnitude, _, _ in coords if magnitude >= informative_floor)
    relative_probes = coords[:min(max_coords, n_informative)]
    small = coords[len(relative_probes):]
    n_sanity = min(len(small), max(sanity_coords, max_coords - len(relative_probes)))
    stride = len(small) / n_sanity if n_sanity else 0
    sanity_probes = [small[int(i * stride)] for i in range(n_sanity)]

    def numeric_at(pi: int, fi: int) -> float:
        flat = tensors[pi].data.reshape(-1)
        original = flat[fi]
        flat[fi] = original + eps
        _, up = loss_builder()
        flat[fi] = original - eps
        _, down = loss_builder()
        flat[fi] = original
        return (float(up.data) - float(down.data)) / (2.0 * eps)

    worst = 0.0
    for _, pi, fi in relative_probes:
        numeric = numeric_at(pi, fi)
        exact = float(analytic[pi].reshape(-1)[fi])
        err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
        worst = max(worst, err)
    for _, pi, fi in sanity_probes:
        numeric = numeric_at(pi, fi)
        if abs(numeric) > sanity_tolerance:
            exact = float(analytic[pi].reshape(-1)[fi])
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
