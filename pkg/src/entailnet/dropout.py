"""Inverted dropout, used only on network inputs and outputs."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, mul


def apply_dropout(x: Tensor, rate: float, phase: str, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if phase != "train" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-phase dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return mul(x, keep)
