"""Correlation, skewness and skew-reducing transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from ..errors import ConfigError, InsufficientDataError, ZeroVarianceError

TRANSFORMS = ("none", "sqrt", "log1p")
POLICIES = TRANSFORMS + ("auto",)


def pearson(a, b) -> tuple[float, float]:
    """Product-moment correlation with its two-sided p-value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InsufficientDataError("pearson needs equal-length inputs")
    if len(a) < 3:
        raise InsufficientDataError("pearson needs n >= 3")
    if a.std() == 0 or b.std() == 0:
        raise ZeroVarianceError("pearson is undefined for a constant input")
    r, p = sps.pearsonr(a, b)
    return float(r), float(p)


def skewness(x) -> float:
    """Fisher-Pearson g1 = m3 / m2^(3/2) with population moments."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 3:
        raise InsufficientDataError("skewness needs n >= 3")
    m2 = ((x - x.mean()) ** 2).mean()
    if m2 == 0:
        raise ZeroVarianceError("skewness is undefined for a constant input")
    m3 = ((x - x.mean()) ** 3).mean()
    return float(m3 / m2**1.5)


def _apply(x: np.ndarray, transform: str) -> np.ndarray:
    if transform == "none":
        return x
    if transform == "sqrt":
        if (x < 0).any():
            raise ConfigError("sqrt transform needs non-negative data")
        return np.sqrt(x)
    return np.log1p(x)  # ln(x + 1) keeps zeros finite


@dataclass(frozen=True)
class SkewReport:
    g1_before: float
    transform: str
    g1_after: float
    values: np.ndarray


def skewness_and_transform(x, policy: str = "auto") -> SkewReport:
    """Measure skewness, optionally reduce it, measure again.

    auto picks sqrt for moderate right skew (1 <= g1 < 2) and log1p for
    severe right skew (g1 >= 2); otherwise the data passes through.
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown skew policy {policy!r}; choose one of {POLICIES}")
    x = np.asarray(x, dtype=np.float64)
    g1 = skewness(x)
    if policy == "auto":
        if 1.0 <= g1 < 2.0:
            transform = "sqrt"
        elif g1 >= 2.0:
            transform = "log1p"
        else:
            transform = "none"
    else:
        transform = policy
    if transform == "log1p" and (x <= -1).any():
        raise ConfigError("log1p transform needs data above -1")
    out = _apply(x, transform)
    g1_after = g1 if transform == "none" else skewness(out)
    return SkewReport(g1_before=g1, transform=transform, g1_after=g1_after, values=out)
