"""LSTM cell and a masked sequence runner.

Vectors are columns. A batch of states is ``[B, k, 1]``; a sequence of
outputs is ``[B, k, L]``. Gate weights are stored ``[k, 2k]`` so that
``W @ [x; h]`` reads like the textbook equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    DimensionError,
    Tensor,
    add,
    column,
    concat_cols,
    concat_rows,
    matmul,
    mul,
    sigmoid,
    sub,
    tanh,
)

GATES = ("i", "f", "o", "c")


@dataclass
class LstmParams:
    W: dict[str, Tensor]
    b: dict[str, Tensor]

    @property
    def k(self) -> int:
        return self.W["i"].shape[0]

    @classmethod
    def from_mapping(cls, params, prefix: str) -> "LstmParams":
        return cls(
            W={g: params[f"{prefix}.W{g}"] for g in GATES},
            b={g: params[f"{prefix}.b{g}"] for g in GATES},
        )


def init_lstm(rng: np.random.Generator, k: int, prefix: str, dtype) -> dict[str, np.ndarray]:
    s = 1.0 / np.sqrt(k)
    out = {}
    for g in GATES:
        out[f"{prefix}.W{g}"] = rng.uniform(-s, s, (k, 2 * k)).astype(dtype)
        out[f"{prefix}.b{g}"] = np.full((k, 1), 1.0 if g == "f" else 0.0, dtype=dtype)
    return out


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch: int, k: int, dtype) -> "LstmState":
        z = np.zeros((batch, k, 1), dtype=dtype)
        return cls(Tensor(z), Tensor(z.copy()))


@dataclass
class EncodedSequence:
    Y: Tensor
    final: LstmState
    mask: np.ndarray


def lstm_step(x: Tensor, state: LstmState, params: LstmParams) -> LstmState:
    k = params.k
    if x.shape[-2] != k or state.h.shape[-2] != k:
        raise DimensionError(f"lstm_step: k={k} but x is {x.shape}, h is {state.h.shape}")
    H = concat_rows(x, state.h)
    W, b = params.W, params.b
    i = sigmoid(add(matmul(W["i"], H), b["i"]))
    f = sigmoid(add(matmul(W["f"], H), b["f"]))
    o = sigmoid(add(matmul(W["o"], H), b["o"]))
    c = add(mul(f, state.c), mul(i, tanh(add(matmul(W["c"], H), b["c"]))))
    h = mul(o, tanh(c))
    return LstmState(h, c)


def _hold(new: Tensor, old: Tensor, m: np.ndarray) -> Tensor:
    # old + m * (new - old): a masked step leaves the value untouched
    return add(old, mul(sub(new, old), m))


def encode(
    inputs: Tensor,
    params: LstmParams,
    init: LstmState | None = None,
    mask: np.ndarray | None = None,
) -> EncodedSequence:
    """Run the cell over ``inputs [B, k, L]`` left to right.

    ``mask [B, L]`` marks real tokens (right padding). Padded steps carry the
    previous state forward, so the final state belongs to the last real token.
    """
    B, k, L = inputs.shape
    if L < 1:
        raise DimensionError("encode: empty sequence")
    if init is None:
        init = LstmState.zeros(B, k, inputs.dtype)
    if mask is None:
        mask = np.ones((B, L), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    state = init
    outs = []
    for t in range(L):
        step = lstm_step(column(inputs, t), state, params)
        m = mask[:, t]
        if m.all():
            state = step
        else:
            mt = m.astype(inputs.dtype)[:, None, None]
            state = LstmState(_hold(step.h, state.h, mt), _hold(step.c, state.c, mt))
        outs.append(state.h)
    return EncodedSequence(concat_cols(outs), state, mask)
