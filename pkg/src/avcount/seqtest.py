"""Sequential multinomial test via Dirichlet-multinomial posterior odds.

The running statistic is the posterior odds O_n(theta0) of a
Dirichlet-mixture alternative against the point null theta0, updated one
observation at a time. Under the null it is a nonnegative martingale with
O_0 = 1, so by Ville's inequality the rule "reject once the odds reach
1/u" has Type I error at most u at every sample size simultaneously. The
reciprocal of the running supremum is the sequential p-value.

All quantities are kept in log space: the linear-scale odds overflow after
a few hundred observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    CountVector,
    DirichletParams,
    SimplexVector,
    log_multivariate_beta,
    validate_simplex,
)

PRIOR_MODES = ("uniform", "concentrated")


@dataclass(frozen=True)
class OddsState:
    """Immutable sufficient statistics of one running sequential test.

    Invariants: alpha = alpha0 + counts elementwise;
    log_running_max_odds >= max(0, log_odds); at n=0 both logs are 0.
    """

    theta0: SimplexVector
    alpha0: DirichletParams
    alpha: DirichletParams
    counts: CountVector
    n: int
    log_odds: float
    log_running_max_odds: float

    @property
    def d(self) -> int:
        return self.theta0.d


def init_state(theta0, prior: str = "concentrated", k: float | None = None) -> OddsState:
    """Start a test of the point null theta0 with prior odds 1.

    prior="uniform" puts alpha0_i = 1 (uniform over the simplex);
    prior="concentrated" puts alpha0_i = k * theta0_i, defaulting to k = d,
    which reduces to the uniform prior when theta0 is itself uniform.
    """
    theta0 = validate_simplex(theta0)
    if prior not in PRIOR_MODES:
        raise ValueError(f"prior must be one of {PRIOR_MODES}, got {prior!r}")
    if prior == "uniform":
        if k is not None:
            raise ValueError("k is only meaningful for the concentrated prior")
        alpha0 = np.ones(theta0.d)
    else:
        k = float(theta0.d) if k is None else float(k)
        if not k > 0.0:
            raise ValueError(f"concentration k must be > 0, got {k}")
        alpha0 = k * theta0.values
    a0 = DirichletParams(alpha0)
    return OddsState(
        theta0=theta0,
        alpha0=a0,
        alpha=a0,
        counts=CountVector.zeros(theta0.d),
        n=0,
        log_odds=0.0,
        log_running_max_odds=0.0,
    )


def update(state: OddsState, arm: int) -> OddsState:
    """Fold in one Multinomial(1, .) observation on the given arm.

    The Beta-ratio increment of the recursion collapses to the
    Dirichlet-multinomial predictive: log(alpha_arm / |alpha|) - log theta0_arm.
    """
    arm = int(arm)
    if not 0 <= arm < state.d:
        raise ValueError(f"arm {arm} out of range [0, {state.d})")
    alpha = state.alpha.alpha
    increment = (
        math.log(alpha[arm]) - math.log(float(alpha.sum())) - math.log(state.theta0.values[arm])
    )
    log_odds = state.log_odds + increment
    new_counts = state.counts.counts.copy()
    new_counts[arm] += 1
    new_alpha = alpha.copy()
    new_alpha[arm] += 1.0
    return replace(
        state,
        alpha=DirichletParams(new_alpha),
        counts=CountVector(new_counts),
        n=state.n + 1,
        log_odds=log_odds,
        log_running_max_odds=max(state.log_running_max_odds, log_odds),
    )


def update_batch(state: OddsState, new_counts) -> OddsState:
    """Fold in a block of counts in one step.

    The odds depend on the data only through the running totals, so this
    equals applying update() per counted event in any order. The running
    maximum is refreshed at the block endpoint only: intermediate odds are
    not observable from counts alone.
    """
    block = new_counts if isinstance(new_counts, CountVector) else CountVector(new_counts)
    if block.d != state.d:
        raise ValueError(f"count vector length {block.d} != {state.d} arms")
    if block.n == 0:
        return state
    alpha = state.alpha.alpha
    x = block.counts.astype(float)
    increment = (
        log_multivariate_beta(alpha + x)
        - log_multivariate_beta(alpha)
        - float(np.dot(x, np.log(state.theta0.values)))
    )
    log_odds = state.log_odds + increment
    return replace(
        state,
        alpha=DirichletParams(alpha + x),
        counts=CountVector(state.counts.counts + block.counts),
        n=state.n + block.n,
        log_odds=log_odds,
        log_running_max_odds=max(state.log_running_max_odds, log_odds),
    )


def sequential_p(state: OddsState) -> float:
    """Sequential p-value: reciprocal of the running supremum of the odds.

    Non-increasing along any update sequence; equals 1 at n=0.
    """
    p = math.exp(-state.log_running_max_odds)
    if p > 1.0:
        return 1.0
    if p == 0.0:
        return 5e-324  # extreme evidence underflows; keep the (0, 1] contract
    return p


def should_reject(state: OddsState, u: float) -> bool:
    """True iff the odds ever reached 1/u (Ville threshold at level u)."""
    u = float(u)
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must be in (0, 1), got {u}")
    return state.log_running_max_odds >= -math.log(u)


def kl_rate(state: OddsState) -> float:
    """log O_n / n: converges a.s. to KL(theta || theta0) off the null."""
    if state.n < 1:
        raise ValueError("kl_rate requires at least one observation")
    return state.log_odds / state.n


def kl_divergence(theta, theta0) -> float:
    """KL divergence sum_i theta_i log(theta_i / theta0_i) of two simplex vectors."""
    t = validate_simplex(theta).values
    t0 = validate_simplex(theta0).values
    if t.size != t0.size:
        raise ValueError(f"dimension mismatch: {t.size} vs {t0.size}")
    return float(np.sum(t * (np.log(t) - np.log(t0))))
