"""Image quality metrics."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .mathutil import as_f64

PSNR_CAP = 99.0


def mse(a, b) -> float:
    a = as_f64(a)
    b = as_f64(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for unit-range images; identical pairs report 99 dB."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / err)))
