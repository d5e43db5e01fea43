"""Inference on log-rate offsets delta behind a softmax reduction.

For d processes with common time-varying level and per-arm offsets delta,
the arm of the next observed event is Multinomial(1, theta) with
theta_i proportional to rho_i * exp(delta_i), independent of the level. The
delta_i themselves are only identified up to a common shift, so this module
fixes the gauge delta[d-1] = 0 internally and exposes only contrasts
(coefficient vectors summing to zero) and gauge-invariant hypotheses.

Contrast confidence bounds optimize <a, delta> over the pullback of the
simplex confidence set, a linear objective over a convex (log-sum-exp)
constraint. Along the Pareto path of maximize <a, delta> + mu * loglik the
stationary point is fully closed-form, theta = (a + mu * S) / (mu * n), so
each bound is one scalar root-find in mu. Composite hypotheses maximize the
log-likelihood over the constraint polytope (SLSQP) and invert the
resulting smallest non-rejected level into a p-value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, linprog, minimize
from scipy.special import logsumexp

from .confset import EmptyConfidenceSetError, Interval, likelihood_floor, max_log_likelihood
from .core import (
    CONTRAST_SUM_TOL,
    SIMPLEX_MIN_ENTRY,
    SimplexVector,
    log_multivariate_beta,
    validate_simplex,
)
from .seqtest import OddsState

_BRENTQ_RTOL = 8.9e-16
_GAUGE_BOX = 200.0  # |delta_k| cap for the numeric hypothesis solve
RELATIONS = ("<=", ">=")


@dataclass(frozen=True)
class DeltaGauge:
    """Convention resolving the shift non-identifiability of delta."""

    convention: str = "pin_last"

    def fix(self, delta) -> np.ndarray:
        """Shift delta so its last coordinate is exactly 0."""
        arr = np.asarray(delta, dtype=float).copy()
        arr -= arr[-1]
        arr[-1] = 0.0
        return arr


PIN_LAST = DeltaGauge()


@dataclass(frozen=True)
class ContrastSpec:
    """Coefficient vector a with sum(a) = 0, identifying sum_i a_i delta_i."""

    a: np.ndarray

    def __post_init__(self):
        arr = np.array(self.a, dtype=float, copy=True).reshape(-1)
        if arr.size < 2:
            raise ValueError("contrast needs at least 2 coefficients")
        if abs(float(arr.sum())) > CONTRAST_SUM_TOL:
            raise ValueError(
                f"contrast coefficients must sum to 0 (+-1e-12), got sum {arr.sum()!r}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "a", arr)

    @property
    def d(self) -> int:
        return int(self.a.size)


def as_contrast(a, d: int | None = None) -> ContrastSpec:
    spec = a if isinstance(a, ContrastSpec) else ContrastSpec(np.asarray(a, dtype=float))
    if d is not None and spec.d != d:
        raise ValueError(f"contrast length {spec.d} != number of arms {d}")
    return spec


@dataclass(frozen=True)
class LinearHypothesis:
    """Conjunction of linear constraints on delta, each gauge-invariant.

    Constraints are (coeffs, relation, rhs) triplets read as
    <coeffs, delta> relation rhs; coefficient vectors must sum to zero,
    otherwise the constraint would depend on the unidentifiable gauge.
    """

    constraints: tuple

    def __post_init__(self):
        if len(self.constraints) == 0:
            raise ValueError("hypothesis needs at least one constraint")
        norm = []
        width = None
        for coeffs, relation, rhs in self.constraints:
            arr = np.array(coeffs, dtype=float, copy=True).reshape(-1)
            if relation not in RELATIONS:
                raise ValueError(f"relation must be one of {RELATIONS}, got {relation!r}")
            if abs(float(arr.sum())) > CONTRAST_SUM_TOL:
                raise ValueError(
                    "hypothesis constraint coefficients must sum to 0 "
                    f"(gauge invariance), got sum {arr.sum()!r}"
                )
            if width is None:
                width = arr.size
            elif arr.size != width:
                raise ValueError("all hypothesis constraints must have equal length")
            arr.setflags(write=False)
            norm.append((arr, relation, float(rhs)))
        object.__setattr__(self, "constraints", tuple(norm))

    @property
    def d(self) -> int:
        return int(self.constraints[0][0].size)

    def canonical(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows (A, b) with the constraints rewritten as A delta <= b."""
        rows, rhs = [], []
        for coeffs, relation, r in self.constraints:
            if relation == "<=":
                rows.append(coeffs)
                rhs.append(r)
            else:
                rows.append(-coeffs)
                rhs.append(-r)
        return np.array(rows, dtype=float), np.array(rhs, dtype=float)

    def satisfied_by(self, delta, tol: float = 1e-9) -> bool:
        a_mat, b_vec = self.canonical()
        return bool(np.all(a_mat @ np.asarray(delta, dtype=float) <= b_vec + tol))


def softmax_rho(rho, delta) -> SimplexVector:
    """theta_i = rho_i e^{delta_i} / sum_j rho_j e^{delta_j}.

    delta is gauge-normalized by max-subtraction before any mixing with
    log rho, so a common shift of delta cancels before it can perturb the
    rounding of later operations.
    """
    r = validate_simplex(rho).values
    arr = np.asarray(delta, dtype=float).reshape(-1)
    if arr.size != r.size:
        raise ValueError(f"delta length {arr.size} != rho length {r.size}")
    z = arr - np.max(arr)
    logw = np.log(r) + z
    w = np.exp(logw - np.max(logw))
    theta = w / w.sum()
    if theta.min() < SIMPLEX_MIN_ENTRY:
        # saturated coordinates are clamped just above the boundary floor
        theta = np.maximum(theta, 2.0 * SIMPLEX_MIN_ENTRY)
        theta = theta / theta.sum()
    return SimplexVector(theta)


def null_from_equality(rho) -> SimplexVector:
    """The multinomial null for "all delta_i equal": theta0 = rho."""
    return validate_simplex(rho)


def delta_mle(state: OddsState, rho) -> np.ndarray:
    """Gauge-fixed MLE: log(S_i / n) - log rho_i, shifted so delta[d-1] = 0.

    Zero-count arms are at the boundary and come back as -inf (or +inf for
    the others when the pinned arm itself has no counts).
    """
    r = validate_simplex(rho).values
    if r.size != state.d:
        raise ValueError(f"rho length {r.size} != {state.d} arms")
    if state.n == 0:
        raise ValueError("delta_mle requires at least one observation")
    counts = state.counts.counts.astype(float)
    with np.errstate(divide="ignore"):
        raw = np.log(counts / state.n) - np.log(r)
    if math.isinf(raw[-1]):
        shifted = np.where(counts > 0, np.inf, raw)  # pinned arm at the boundary
        shifted[-1] = 0.0
        return shifted
    return PIN_LAST.fix(raw)


# ---------------------------------------------------------------------------
# contrast confidence bounds (Pareto path, closed-form inner solution)
# ---------------------------------------------------------------------------


def _contrast_upper(counts: np.ndarray, n: int, b: float, a: np.ndarray, log_rho: np.ndarray) -> float:
    """sup <a, delta> over {sum_i S_i log softmax_rho(delta)_i >= b}."""
    if np.all(a == 0.0):
        return 0.0
    if np.any((counts == 0) & (a < 0.0)):
        # pushing such a coordinate to -inf raises the objective for free
        return math.inf

    pos = counts > 0
    s_pos = counts[pos]

    neg = a < 0.0
    mu_min = float(np.max(-a[neg] / counts[neg]))  # all neg coords have counts > 0 here

    def loglik(mu: float) -> float:
        theta_pos = (a[pos] + mu * s_pos) / (mu * n)
        if np.any(theta_pos <= 0.0):
            return -math.inf  # rounding at the path boundary; the limit is -inf
        return float(np.dot(s_pos, np.log(theta_pos)))

    # upper bracket: loglik(mu) increases to the profile maximum
    hi = mu_min + max(mu_min, 1.0)
    for _ in range(200):
        if loglik(hi) >= b:
            break
        hi = mu_min + 2.0 * (hi - mu_min)
    else:
        # constraint level indistinguishable from the maximum: MLE point
        theta_hat = counts / n
        nz = a != 0.0
        return float(np.dot(a[nz], np.log(theta_hat[nz]) - log_rho[nz]))

    lo = mu_min + (hi - mu_min) / 2.0
    for _ in range(4000):
        if loglik(lo) < b:
            break
        lo = mu_min + (lo - mu_min) / 2.0
    else:
        raise RuntimeError("failed to bracket the contrast bound")

    def gap_loglik(t: float) -> float:
        return loglik(mu_min + math.exp(t)) - b

    t_star = brentq(
        gap_loglik,
        math.log(lo - mu_min),
        math.log(hi - mu_min),
        xtol=1e-13,
        rtol=_BRENTQ_RTOL,
        maxiter=300,
    )
    mu_star = mu_min + math.exp(t_star)
    theta_star = (a + mu_star * counts) / (mu_star * n)
    nz = a != 0.0
    return float(np.dot(a[nz], np.log(theta_star[nz]) - log_rho[nz]))


def contrast_ci(state: OddsState, rho, u: float, a) -> Interval:
    """Confidence interval for the contrast <a, delta> at level u.

    Bounds may be infinite: with zero counts in a referenced arm the
    optimization program is genuinely unbounded.
    """
    r = validate_simplex(rho).values
    spec = as_contrast(a, state.d)
    if r.size != state.d:
        raise ValueError(f"rho length {r.size} != {state.d} arms")
    if state.n == 0:
        return Interval(-math.inf, math.inf)
    b = likelihood_floor(state, u)
    counts = state.counts.counts.astype(float)
    if max_log_likelihood(counts, state.n) < b:
        raise EmptyConfidenceSetError(
            f"confidence set C_n(u) is empty at n={state.n}, u={u}"
        )
    log_rho = np.log(r)
    hi = _contrast_upper(counts, state.n, b, spec.a, log_rho)
    lo = -_contrast_upper(counts, state.n, b, -spec.a, log_rho)
    return Interval(lo, hi)


# ---------------------------------------------------------------------------
# composite hypotheses (Eq.-style sup over the null set)
# ---------------------------------------------------------------------------


def _loglik_gauge(z: np.ndarray, counts: np.ndarray, n: int, log_rho: np.ndarray):
    delta = np.append(z, 0.0)
    w = log_rho + delta
    lse = float(logsumexp(w))
    theta = np.exp(w - lse)
    value = float(np.dot(counts, w)) - n * lse
    grad = counts - n * theta
    return value, grad[:-1]


def _feasible_start(a_gauge: np.ndarray, b_vec: np.ndarray, width: int) -> np.ndarray:
    """A strictly interior point of the constraint polytope (max-slack LP)."""
    c = np.zeros(width + 1)
    c[-1] = -1.0
    a_ub = np.hstack([a_gauge, np.ones((a_gauge.shape[0], 1))])
    bounds = [(-_GAUGE_BOX / 2, _GAUGE_BOX / 2)] * width + [(0.0, 1.0)]
    res = linprog(c, A_ub=a_ub, b_ub=b_vec, bounds=bounds, method="highs")
    if not res.success:
        raise ValueError("hypothesis is infeasible as a delta-set")
    return res.x[:-1]


def sup_loglik_under(state: OddsState, rho, h0: LinearHypothesis, x0=None):
    """(sup of the log-likelihood over h0, maximizing gauge point)."""
    r = validate_simplex(rho).values
    if h0.d != state.d:
        raise ValueError(f"hypothesis constraint length {h0.d} != {state.d} arms")
    counts = state.counts.counts.astype(float)
    n = state.n
    log_rho = np.log(r)
    a_mat, b_vec = h0.canonical()
    a_gauge = a_mat[:, :-1]  # delta[d-1] pinned to 0

    if np.all(counts > 0):
        delta_hat = PIN_LAST.fix(np.log(counts / n) - log_rho)
        if h0.satisfied_by(delta_hat):
            return max_log_likelihood(counts, n), delta_hat[:-1]

    if x0 is not None and np.all(a_gauge @ np.asarray(x0, dtype=float) <= b_vec + 1e-9):
        z0 = np.asarray(x0, dtype=float)
    else:
        z0 = _feasible_start(a_gauge, b_vec, state.d - 1)

    def objective(z):
        value, grad = _loglik_gauge(z, counts, n, log_rho)
        return -value, -grad

    cons = [{"type": "ineq", "fun": lambda z: b_vec - a_gauge @ z, "jac": lambda z: -a_gauge}]
    bounds = [(-_GAUGE_BOX, _GAUGE_BOX)] * (state.d - 1)
    best = None
    for start in (z0, np.zeros(state.d - 1)):
        if np.any(a_gauge @ start > b_vec + 1e-9):
            continue
        res = minimize(
            objective,
            np.clip(start, -_GAUGE_BOX, _GAUGE_BOX),
            jac=True,
            method="SLSQP",
            constraints=cons,
            bounds=bounds,
            options={"maxiter": 300, "ftol": 1e-12},
        )
        if best is None or -res.fun > best[0]:
            best = (-float(res.fun), res.x)
    if best is None:
        raise RuntimeError("no feasible start for the hypothesis solve")
    return best


def composite_p(state: OddsState, rho, h0: LinearHypothesis, x0=None) -> float:
    """Current composite p-value: the largest u at which h0 is not rejected.

    h0 is rejected at level u once the confidence set no longer meets it,
    so the p-value inverts the smallest non-rejected level:
    p = min(1, sup over h0 of 1 / O_n(softmax_rho(delta))). Callers that
    stream observations should track the running minimum across n (see
    CompositeTestStream).
    """
    if state.n == 0:
        _ = validate_simplex(rho)
        a_mat, b_vec = h0.canonical()
        _feasible_start(a_mat[:, :-1], b_vec, h0.d - 1)
        return 1.0
    sup_l, _ = sup_loglik_under(state, rho, h0, x0=x0)
    counts = state.counts.counts.astype(float)
    c0 = log_multivariate_beta(state.alpha0.alpha + counts) - state.alpha0.log_beta()
    edge = sup_l - c0  # log(1 / inf odds over the null set)
    return 1.0 if edge >= 0.0 else math.exp(edge)


class CompositeTestStream:
    """Streaming composite test: running minimum of composite_p across n.

    Wraps a multinomial odds state (null theta0 = rho) and warm-starts each
    hypothesis solve at the previous optimum.
    """

    def __init__(self, rho, h0: LinearHypothesis, prior: str = "uniform", k: float | None = None):
        from .seqtest import init_state

        self.rho = validate_simplex(rho)
        self.h0 = h0
        self.state = init_state(self.rho, prior=prior, k=k)
        self.p_min = 1.0
        self._warm = None

    def update(self, arm: int) -> float:
        from .seqtest import update

        self.state = update(self.state, arm)
        return self.refresh()

    def refresh(self) -> float:
        """Recompute the composite p at the current n and fold into the minimum."""
        if self.state.n > 0:
            sup_l, z = sup_loglik_under(self.state, self.rho, self.h0, x0=self._warm)
            self._warm = z
            counts = self.state.counts.counts.astype(float)
            c0 = (
                log_multivariate_beta(self.state.alpha0.alpha + counts)
                - self.state.alpha0.log_beta()
            )
            edge = sup_l - c0
            p = 1.0 if edge >= 0.0 else math.exp(edge)
            self.p_min = min(self.p_min, p)
        return self.p_min

    def advance(self, arm: int) -> None:
        """Fold in an observation without re-solving (for sparse report grids)."""
        from .seqtest import update

        self.state = update(self.state, arm)
