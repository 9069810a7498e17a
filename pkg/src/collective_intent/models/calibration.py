"""Temperature scaling fitted by golden-section search on validation NLL."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .functional import log_softmax

T_MIN, T_MAX = 0.05, 20.0
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Calibration:
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    lp = log_softmax(np.asarray(logits, dtype=np.float64) / temperature)
    return float(-np.take_along_axis(lp, labels[:, None], axis=1).mean())


def golden_section(f, lo: float, hi: float, tol: float = 1e-5, max_iter: int = 200) -> float:
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def calibrate_temperature(logits: np.ndarray, labels: np.ndarray, lo: float = T_MIN, hi: float = T_MAX) -> Calibration:
    """Fit T on validation logits (K, C) and 0-based labels (K,)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if len(logits) == 0:
        raise ValueError("calibration needs a nonempty validation set")
    # NLL(T) is unimodal in 1/T, so search on a log scale for better conditioning
    t = golden_section(lambda s: nll(logits, labels, math.exp(s)), math.log(lo), math.log(hi))
    return Calibration(float(min(max(math.exp(t), lo), hi)))
