"""Confidence sequences on the simplex: membership and linear projections.

The confidence set after n observations is
C_n(u) = {theta : O_n(theta) < 1/u}, equivalently
sum_i S_i log theta_i > b with b = log Beta(alpha0 + S) - log Beta(alpha0) + log u.
It is convex (concavity of the multinomial log-likelihood), so marginal
confidence intervals and any linear functional of theta reduce to
optimizing a linear objective over its closure.

Two routes, both exact up to scalar root-finding:

* one-hot directions (the marginal CI case) reduce to a single concave
  profile g(t) = S_i log t + (n - S_i) log(1 - t) + const, whose boundary
  crossings bracket the interval;
* general directions follow the Pareto path of
  maximize <w, theta> + mu * sum_i S_i log theta_i over the simplex, whose
  solution is closed-form up to one scalar root per mu
  (theta_k = mu S_k / (nu - w_k)), bisecting mu until the likelihood
  constraint is active.

Objective tolerance 1e-6, iteration cap 10k; grid-search oracles pin the
contract in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import log_multivariate_beta, validate_simplex
from .seqtest import OddsState

OBJECTIVE_TOL = 1e-6
MAX_ITER = 10_000
_LOG_MU_MIN = -45.0
_LOG_MU_MAX = 45.0
_BRENTQ_RTOL = 8.9e-16


class EmptyConfidenceSetError(ValueError):
    """Raised when C_n(u) is empty and an interval was requested."""


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi]; endpoints may be infinite."""

    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval endpoints must not be NaN")
        if self.lo > self.hi:
            raise ValueError(f"interval lo {self.lo} > hi {self.hi}")

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lo - slack <= x <= self.hi + slack

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class SolverReport:
    objective: float
    feasible: bool
    iterations: int
    tolerance_achieved: float


def log_odds_at(state: OddsState, theta) -> float:
    """log O_n(theta): the batch posterior odds against the point null theta."""
    t = validate_simplex(theta).values
    if t.size != state.d:
        raise ValueError(f"dimension mismatch: {t.size} vs {state.d}")
    counts = state.counts.counts.astype(float)
    c0 = log_multivariate_beta(state.alpha0.alpha + counts) - state.alpha0.log_beta()
    return c0 - float(np.dot(counts, np.log(t)))


def likelihood_floor(state: OddsState, u: float) -> float:
    """Constraint level b: theta is in C_n(u) iff sum_i S_i log theta_i > b."""
    u = float(u)
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must be in (0, 1), got {u}")
    counts = state.counts.counts.astype(float)
    c0 = log_multivariate_beta(state.alpha0.alpha + counts) - state.alpha0.log_beta()
    return c0 + math.log(u)


def max_log_likelihood(counts: np.ndarray, n: int) -> float:
    """sum_i S_i log(S_i / n) over positive counts (the profile maximum)."""
    pos = counts > 0
    return float(np.dot(counts[pos], np.log(counts[pos] / n)))


def in_confidence_set(theta, state: OddsState, u: float) -> bool:
    """Whether theta would currently not be rejected at level u."""
    u = float(u)
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must be in (0, 1), got {u}")
    return log_odds_at(state, theta) < -math.log(u)


# ---------------------------------------------------------------------------
# one-hot directions: exact 1-D profile
# ---------------------------------------------------------------------------


def _coordinate_bound(counts: np.ndarray, n: int, b: float, i: int, which: str) -> float:
    """Extreme value of theta_i over the closure of {sum S log theta >= b}.

    With theta_i = t pinned, the remaining mass is distributed proportional
    to counts, giving the concave profile g(t) below; the bound is where g
    crosses b on the relevant side of the MLE coordinate S_i / n.
    """
    s_i = float(counts[i])
    s_rest = float(n - s_i)

    if which == "min" and s_i == 0.0:
        return 0.0
    if s_rest == 0.0:
        # all counts on arm i: g(t) = n log t
        return 1.0 if which == "max" else math.exp(b / n)
    if which == "max" and s_i == 0.0:
        return 1.0 - math.exp((b - max_log_likelihood(counts, n)) / s_rest)

    rest = counts[(counts > 0) & (np.arange(counts.size) != i)]
    const = float(np.dot(rest, np.log(rest / s_rest)))

    def g(t: float) -> float:
        return s_i * math.log(t) + s_rest * math.log1p(-t) + const - b

    t_hat = s_i / n
    if g(t_hat) <= 0.0:
        return t_hat  # the set is (numerically) the single point theta_hat
    if which == "max":
        hi_gap = (1.0 - t_hat) / 2.0
        while g(1.0 - hi_gap) > 0.0:
            hi_gap /= 2.0
            if hi_gap < 1e-300:
                return 1.0
        return brentq(g, t_hat, 1.0 - hi_gap, xtol=1e-14, rtol=_BRENTQ_RTOL, maxiter=200)
    lo = t_hat / 2.0
    while g(lo) > 0.0:
        lo /= 2.0
        if lo < 1e-300:
            return 0.0
    return brentq(g, lo, t_hat, xtol=1e-14, rtol=_BRENTQ_RTOL, maxiter=200)


# ---------------------------------------------------------------------------
# general directions: Pareto-path bisection
# ---------------------------------------------------------------------------


def _inner_solution(mu: float, w: np.ndarray, counts: np.ndarray, n: int):
    """Maximize <w, theta> + mu * sum S log theta over the simplex.

    Returns (loglik, objective). Coordinates with zero counts get mass only
    when their w exceeds the equilibrium marginal value nu.
    """
    pos = counts > 0
    s_pos = counts[pos]
    w_pos = w[pos]
    w_top = float(np.max(w_pos))
    s_top = float(np.max(s_pos[w_pos == w_top]))

    def excess(gap: float) -> float:
        return float(np.sum(mu * s_pos / (gap + (w_top - w_pos)))) - 1.0

    lo, hi = mu * s_top, mu * n
    if hi <= lo * (1.0 + 1e-14):
        gap = lo
    else:
        gap = brentq(excess, lo, hi, xtol=1e-300, rtol=_BRENTQ_RTOL, maxiter=200)
    nu = w_top + gap

    free_mass = 0.0
    free_w = 0.0
    if not np.all(pos):
        z_top = float(np.max(w[~pos]))
        if z_top > nu:
            nu = z_top
            free_mass = 1.0 - float(np.sum(mu * s_pos / (nu - w_pos)))
            free_w = z_top

    theta_pos = mu * s_pos / (nu - w_pos)
    loglik = float(np.dot(s_pos, np.log(theta_pos)))
    objective = float(np.dot(w_pos, theta_pos)) + free_mass * free_w
    return loglik, objective


def _solve_linear_path(w: np.ndarray, counts: np.ndarray, n: int, b: float) -> SolverReport:
    iterations = 0

    def probe(s: float):
        nonlocal iterations
        iterations += 1
        return _inner_solution(math.exp(s), w, counts, n)

    s_hi = 0.0
    f_hi, v_hi = probe(s_hi)
    while f_hi < b:
        s_hi += 3.0
        if s_hi > _LOG_MU_MAX:
            # constraint level indistinguishable from the likelihood maximum:
            # the set has collapsed to (numerically) the MLE point
            return SolverReport(float(np.dot(w, counts / n)), True, iterations, 0.0)
        f_hi, v_hi = probe(s_hi)
    s_lo, f_lo, v_lo = s_hi, f_hi, v_hi
    while f_lo >= b:
        s_lo -= 3.0
        if s_lo < _LOG_MU_MIN:
            # constraint slack along the whole path: a vertex optimum lies in
            # the closure of the set
            return SolverReport(float(np.max(w)), True, iterations, 0.0)
        f_lo, v_lo = probe(s_lo)

    while abs(v_lo - v_hi) > OBJECTIVE_TOL and iterations < MAX_ITER and (s_hi - s_lo) > 1e-14:
        s_mid = 0.5 * (s_lo + s_hi)
        f_mid, v_mid = probe(s_mid)
        if f_mid >= b:
            s_hi, v_hi = s_mid, v_mid
        else:
            s_lo, v_lo = s_mid, v_mid

    return SolverReport(v_hi, True, iterations, abs(v_lo - v_hi))


def solve_linear_over_set(
    direction, state: OddsState, u: float, sense: str = "max"
) -> SolverReport:
    """Optimize <direction, theta> over the closure of C_n(u) within the simplex."""
    w = np.asarray(direction, dtype=float).reshape(-1)
    if w.size != state.d:
        raise ValueError(f"direction length {w.size} != {state.d} arms")
    if sense not in ("max", "min"):
        raise ValueError(f"sense must be 'max' or 'min', got {sense!r}")
    if sense == "min":
        rep = solve_linear_over_set(-w, state, u, "max")
        obj = -rep.objective if rep.feasible else rep.objective
        return SolverReport(obj, rep.feasible, rep.iterations, rep.tolerance_achieved)

    b = likelihood_floor(state, u)
    counts = state.counts.counts.astype(float)
    n = state.n

    if n == 0:
        # C_0(u) is the whole simplex; a linear functional peaks at a vertex.
        return SolverReport(float(np.max(w)), True, 0, 0.0)
    if max_log_likelihood(counts, n) < b:
        return SolverReport(float("nan"), False, 0, float("nan"))
    if np.ptp(w) < 1e-15:
        return SolverReport(float(w[0]), True, 0, 0.0)

    nonzero = np.flatnonzero(w)
    if nonzero.size == 1:
        i = int(nonzero[0])
        which = "max" if w[i] > 0 else "min"
        t = _coordinate_bound(counts, n, b, i, which)
        return SolverReport(float(w[i]) * t, True, 1, 0.0)

    return _solve_linear_path(w, counts, n, b)


def marginal_ci(state: OddsState, u: float, i: int) -> Interval:
    """Marginal confidence interval for theta_i: the projection of C_n(u).

    Bounds are clipped to [0, 1] and reported closed; a zero-count arm's
    upper bound can reach the simplex boundary.
    """
    i = int(i)
    if not 0 <= i < state.d:
        raise ValueError(f"arm {i} out of range [0, {state.d})")
    if state.n == 0:
        return Interval(0.0, 1.0)
    e_i = np.zeros(state.d)
    e_i[i] = 1.0
    upper = solve_linear_over_set(e_i, state, u, "max")
    if not upper.feasible:
        raise EmptyConfidenceSetError(
            f"confidence set C_n(u) is empty at n={state.n}, u={u}"
        )
    lower = solve_linear_over_set(e_i, state, u, "min")
    return Interval(min(max(lower.objective, 0.0), 1.0), min(max(upper.objective, 0.0), 1.0))
