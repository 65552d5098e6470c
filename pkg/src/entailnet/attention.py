"""Attention over premise outputs: last-output, word-by-word, and two-way.

Shapes follow the column layout of :mod:`entailnet.lstm`: ``Y`` is
``[B, k, L]``, single vectors are ``[B, k, 1]``, and attention weights are
rows ``[B, 1, L]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    DimensionError,
    Tensor,
    add,
    broadcast_cols,
    column,
    concat_rows,
    matmul,
    mul,
    reshape,
    softmax_masked,
    sub,
    tanh,
)


@dataclass
class AttnParams:
    Wy: Tensor
    Wh: Tensor
    w: Tensor  # stored as the row w^T, [1, k]
    Wp: Tensor
    Wx: Tensor
    Wr: Tensor | None = None
    Wt: Tensor | None = None

    @classmethod
    def from_mapping(cls, params, prefix: str = "att") -> "AttnParams":
        get = lambda n: params.get(f"{prefix}.{n}")  # noqa: E731
        return cls(get("Wy"), get("Wh"), get("w"), get("Wp"), get("Wx"), get("Wr"), get("Wt"))

    @property
    def wordbyword(self) -> bool:
        return self.Wr is not None


def init_attention(rng: np.random.Generator, k: int, wordbyword: bool, dtype, prefix="att"):
    s = 1.0 / np.sqrt(k)
    names = ["Wy", "Wh", "Wp", "Wx"] + (["Wr", "Wt"] if wordbyword else [])
    out = {f"{prefix}.{n}": rng.uniform(-s, s, (k, k)).astype(dtype) for n in names}
    out[f"{prefix}.w"] = rng.uniform(-s, s, (1, k)).astype(dtype)
    return out


@dataclass
class AttentionRecord:
    premise: list[str]
    hypothesis: list[str]
    weights: list[list[float]]
    variant: str
    predicted: str | None = None
    gold: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "premise": self.premise,
            "hypothesis": self.hypothesis,
            "weights": self.weights,
            "variant": self.variant,
            "predicted": self.predicted,
            "gold": self.gold,
        }
        out.update(self.extra)
        return out


def _row_mask(mask: np.ndarray | None, B: int, L: int) -> np.ndarray:
    if mask is None:
        return np.ones((B, 1, L), dtype=bool)
    return np.asarray(mask, dtype=bool).reshape(B, 1, L)


def _scores(WyY: Tensor, query: Tensor, w: Tensor, L: int) -> Tensor:
    M = tanh(add(WyY, broadcast_cols(query, L)))
    return matmul(w, M)


def _as_column(alpha: Tensor) -> Tensor:
    B, _, L = alpha.shape
    return reshape(alpha, (B, L, 1))


def attend_last(Y: Tensor, h_last: Tensor, params: AttnParams, mask=None) -> tuple[Tensor, Tensor]:
    """Attention weights ``[B, 1, L]`` and the weighted premise ``r [B, k, 1]``."""
    B, k, L = Y.shape
    if h_last.shape[-2] != k:
        raise DimensionError(f"attend_last: Y is {Y.shape}, h_N is {h_last.shape}")
    scores = _scores(matmul(params.Wy, Y), matmul(params.Wh, h_last), params.w, L)
    alpha = softmax_masked(scores, _row_mask(mask, B, L))
    return alpha, matmul(Y, _as_column(alpha))


def combine(r: Tensor, h_last: Tensor, params: AttnParams) -> Tensor:
    if r.shape != h_last.shape:
        raise DimensionError(f"combine: r is {r.shape}, h_N is {h_last.shape}")
    return tanh(add(matmul(params.Wp, r), matmul(params.Wx, h_last)))


def attend_wordbyword(
    Y: Tensor,
    hyp_outputs: Tensor,
    params: AttnParams,
    mask=None,
    hyp_mask=None,
) -> tuple[list[Tensor], Tensor]:
    """One attention row per hypothesis step, with a recurrent summary ``r_t``.

    Returns the per-step weights (each ``[B, 1, L]``) and the final ``r_N``.
    Padded hypothesis steps (``hyp_mask == 0``) leave ``r`` unchanged.
    """
    B, k, L = Y.shape
    T = hyp_outputs.shape[-1]
    if T < 1:
        raise DimensionError("attend_wordbyword: hypothesis has no steps")
    if not params.wordbyword:
        raise ValueError("attend_wordbyword needs Wr and Wt")
    pmask = _row_mask(mask, B, L)
    hmask = None if hyp_mask is None else np.asarray(hyp_mask, dtype=bool)
    WyY = matmul(params.Wy, Y)
    r = Tensor(np.zeros((B, k, 1), dtype=Y.dtype))
    alphas = []
    for t in range(T):
        h_t = column(hyp_outputs, t)
        query = add(matmul(params.Wh, h_t), matmul(params.Wr, r))
        alpha = softmax_masked(_scores(WyY, query, params.w, L), pmask)
        r_new = add(matmul(Y, _as_column(alpha)), tanh(matmul(params.Wt, r)))
        if hmask is None or hmask[:, t].all():
            r = r_new
        else:
            m = hmask[:, t].astype(Y.dtype)[:, None, None]
            r = add(r, mul(sub(r_new, r), m))
        alphas.append(alpha)
    return alphas, r


def two_way(forward: Tensor, backward: Tensor) -> Tensor:
    """Stack the premise-to-hypothesis and hypothesis-to-premise representations."""
    if forward.shape != backward.shape:
        raise DimensionError(f"two_way: {forward.shape} vs {backward.shape}")
    return concat_rows(forward, backward)
