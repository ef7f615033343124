"""LSTM cells and bidirectional runs shared by the encoder/decoder stacks.

Gates are four separate weight triples (input, forget, candidate, output)
rather than one packed matrix, which keeps every tensor a plain matmul for
the autodiff engine.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import ParameterSet, glorot

GATE_NAMES = ("i", "f", "g", "o")
FORGET_BIAS_INIT = 1.0


def init_lstm_params(params: ParameterSet, prefix: str, input_dim: int,
                     hidden_dim: int, rng: np.random.Generator) -> None:
    """Register one LSTM cell's weights under ``prefix``."""
    for gate in GATE_NAMES:
        params.add(f"{prefix}.Wx_{gate}", glorot(rng, input_dim, hidden_dim))
        params.add(f"{prefix}.Wh_{gate}", glorot(rng, hidden_dim, hidden_dim))
        bias = np.full(hidden_dim, FORGET_BIAS_INIT) if gate == "f" else np.zeros(hidden_dim)
        params.add(f"{prefix}.b_{gate}", bias)


def lstm_step(params: ParameterSet, prefix: str, x: Tensor,
              h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One cell update; returns the new hidden and cell states."""

    def gate_pre(gate: str) -> Tensor:
        xw = ad.matmul(x, params[f"{prefix}.Wx_{gate}"])
        hw = ad.matmul(h, params[f"{prefix}.Wh_{gate}"])
        return ad.add(ad.add(xw, hw), params[f"{prefix}.b_{gate}"])

    i = ad.sigmoid(gate_pre("i"))
    f = ad.sigmoid(gate_pre("f"))
    g = ad.tanh(gate_pre("g"))
    o = ad.sigmoid(gate_pre("o"))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def run_lstm(params: ParameterSet, prefix: str, inputs: list[Tensor],
             hidden_dim: int) -> list[Tensor]:
    """Run a unidirectional LSTM from zero state; returns all hidden states."""
    h = Tensor(np.zeros(hidden_dim))
    c = Tensor(np.zeros(hidden_dim))
    states = []
    for x in inputs:
        h, c = lstm_step(params, prefix, x, h, c)
        states.append(h)
    return states


def run_bilstm(params: ParameterSet, fwd_prefix: str, bwd_prefix: str,
               inputs: list[Tensor], hidden_dim: int) -> tuple[list[Tensor], Tensor]:
    """Bidirectional pass over a sequence.

    Returns per-position concatenations [forward_t; backward_t] and the
    sequence encoding [forward_last; backward_first].
    """
    forward = run_lstm(params, fwd_prefix, inputs, hidden_dim)
    backward_rev = run_lstm(params, bwd_prefix, list(reversed(inputs)), hidden_dim)
    backward = list(reversed(backward_rev))
    per_position = [ad.concat([f, b]) for f, b in zip(forward, backward)]
    encoding = ad.concat([forward[-1], backward[0]])
    return per_position, encoding
