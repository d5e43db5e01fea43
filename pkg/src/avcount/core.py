"""Shared value types and log-space special functions.

Everything downstream (sequential tests, confidence sets, contrast
programs) works with log Gamma / log multivariate Beta arithmetic, so the
accuracy contracts live here. All types are immutable; their arrays are
frozen with ``writeable=False`` after validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

SIMPLEX_SUM_TOL = 1e-9
SIMPLEX_MIN_ENTRY = 1e-12
CONTRAST_SUM_TOL = 1e-12


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


def log_gamma(x: float) -> float:
    """log Gamma(x) for x > 0.

    Backed by scipy's gammaln; the accuracy contract (1e-12 relative on
    [1e-3, 1e7]) is enforced by the factorial-oracle tests.
    """
    x = float(x)
    if not x > 0.0:
        raise ValueError(f"log_gamma requires x > 0, got {x}")
    return float(gammaln(x))


def log_multivariate_beta(v) -> float:
    """log Beta(v) = sum_i log Gamma(v_i) - log Gamma(sum_i v_i)."""
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError("log_multivariate_beta requires a non-empty vector")
    if not np.all(arr > 0.0):
        raise ValueError("log_multivariate_beta requires strictly positive entries")
    return float(np.sum(gammaln(arr)) - gammaln(np.sum(arr)))


@dataclass(frozen=True)
class SimplexVector:
    """Probability vector on the (d-1)-simplex, d >= 2.

    Entries must be >= 1e-12 (exact zeros are rejected: the odds divide by
    theta0 and the optimization programs take log theta) and must sum to 1
    within 1e-9.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.size < 2:
            raise ValueError(f"simplex vector needs length >= 2, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("simplex vector entries must be finite")
        if np.any(arr < SIMPLEX_MIN_ENTRY):
            raise ValueError(
                f"simplex vector entries must be >= {SIMPLEX_MIN_ENTRY}; got {arr}"
            )
        total = float(arr.sum())
        if abs(total - 1.0) > SIMPLEX_SUM_TOL:
            raise ValueError(f"simplex vector must sum to 1 (+-1e-9), got sum {total!r}")
        object.__setattr__(self, "values", arr)

    @property
    def d(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.d


def validate_simplex(values) -> SimplexVector:
    """Validate a raw vector as a SimplexVector (raises ValueError)."""
    if isinstance(values, SimplexVector):
        return values
    return SimplexVector(np.asarray(values, dtype=float))


@dataclass(frozen=True)
class CountVector:
    """Non-negative integer event counts per arm, with cached total n."""

    counts: np.ndarray
    n: int = field(default=-1)

    def __post_init__(self):
        arr = np.array(self.counts, copy=True).reshape(-1)
        if arr.size < 1:
            raise ValueError("count vector must be non-empty")
        if not np.issubdtype(arr.dtype, np.integer):
            rounded = np.rint(arr)
            if not np.allclose(arr, rounded):
                raise ValueError("counts must be integers")
            arr = rounded.astype(np.int64)
        else:
            arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise ValueError("counts must be non-negative")
        arr.setflags(write=False)
        total = int(arr.sum())
        if self.n >= 0 and self.n != total:
            raise ValueError(f"n={self.n} does not match sum of counts {total}")
        object.__setattr__(self, "counts", arr)
        object.__setattr__(self, "n", total)

    @property
    def d(self) -> int:
        return int(self.counts.size)

    @staticmethod
    def zeros(d: int) -> "CountVector":
        return CountVector(np.zeros(d, dtype=np.int64))


@dataclass(frozen=True)
class DirichletParams:
    """Dirichlet concentration vector; all entries strictly positive."""

    alpha: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.alpha)
        if arr.size < 1:
            raise ValueError("alpha must be non-empty")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
            raise ValueError("alpha entries must be finite and strictly positive")
        object.__setattr__(self, "alpha", arr)

    @property
    def d(self) -> int:
        return int(self.alpha.size)

    def log_beta(self) -> float:
        return log_multivariate_beta(self.alpha)
