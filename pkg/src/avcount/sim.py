"""Monte-Carlo harness verifying the frequentist guarantees by simulation.

The experiments reproduce the verification studies behind the method:
Type-I error under continuous monitoring against a chi-square-peeking
baseline, power off the null, entire-trajectory coverage of the confidence
sequences, and the inhomogeneous-Bernoulli conversion scenario.

Replication loops are vectorized: the posterior-odds trajectory of a whole
block of streams is one cumulative sum of predictive log-increments
log(alpha_arm / |alpha|) - log theta0_arm, identical to the per-event
update rule. Everything is reproducible bit-for-bit given (config, seed).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc

from . import contrasts as ct
from . import seqtest
from .confset import marginal_ci
from .core import CountVector, validate_simplex

_CHUNK = 256  # replications per vectorized block (pinned: affects rng stream layout)


@dataclass(frozen=True)
class ExperimentConfig:
    theta_true: tuple
    theta0: tuple
    n_max: int
    reps: int
    u: float
    seed: int
    prior: str = "uniform"
    k: float | None = None

    def __post_init__(self):
        if self.reps < 1 or self.n_max < 1:
            raise ValueError("reps and n_max must be >= 1")
        if not 0.0 < self.u < 1.0:
            raise ValueError(f"u must be in (0, 1), got {self.u}")
        validate_simplex(self.theta_true)
        validate_simplex(self.theta0)


@dataclass
class ExperimentResult:
    reject_count_sequential: int
    reject_count_chi2: int
    first_rejection_histogram: dict
    runtime_seconds: float
    reps: int = 0
    sequential_rejected: np.ndarray | None = None
    sequential_first_n: np.ndarray | None = None  # 0 when the rule never fired
    chi2_rejected: np.ndarray | None = None


@dataclass
class CoverageReport:
    reps: int
    covered: int
    check_ns: tuple
    runtime_seconds: float
    covered_flags: np.ndarray | None = None

    @property
    def coverage(self) -> float:
        return self.covered / self.reps


def _alpha0_for(theta0: np.ndarray, prior: str, k: float | None) -> np.ndarray:
    return seqtest.init_state(theta0, prior=prior, k=k).alpha0.alpha


def pearson_chi2_p(counts, theta0) -> float:
    """Fixed-n Pearson chi-square goodness-of-fit p-value against theta0.

    Upper tail of chi-square with d-1 degrees of freedom, computed as the
    regularized upper incomplete gamma Q((d-1)/2, X^2/2).
    """
    block = counts if isinstance(counts, CountVector) else CountVector(counts)
    t0 = validate_simplex(theta0).values
    if block.d != t0.size:
        raise ValueError(f"counts length {block.d} != theta0 length {t0.size}")
    n = block.n
    if n < 1:
        raise ValueError("chi-square test requires at least one observation")
    expected = n * t0
    x2 = float(np.sum((block.counts - expected) ** 2 / expected))
    return float(gammaincc((t0.size - 1) / 2.0, x2 / 2.0))


# ---------------------------------------------------------------------------
# vectorized stream machinery
# ---------------------------------------------------------------------------


def draw_arm_block(rng: np.random.Generator, theta: np.ndarray, reps: int, n: int) -> np.ndarray:
    """(reps, n) iid Multinomial(1, theta) arm indices."""
    cum = np.cumsum(theta)
    cum[-1] = 1.0
    return np.searchsorted(cum, rng.random((reps, n)), side="right").astype(np.int16)


def log_odds_paths(arms: np.ndarray, theta0: np.ndarray, alpha0: np.ndarray) -> np.ndarray:
    """(reps, n) trajectories of log O_m(theta0) along each stream.

    Uses the same predictive increment as seqtest.update; a dedicated test
    pins the two routes against each other.
    """
    reps, n = arms.shape
    prior_count = np.zeros(arms.shape, dtype=np.int32)
    for k in range(int(arms.max()) + 1 if arms.size else 0):
        mask = arms == k
        prior_count[mask] = (np.cumsum(mask, axis=1) - 1)[mask]
    alpha_at = alpha0[arms] + prior_count
    denom = float(alpha0.sum()) + np.arange(n, dtype=float)
    inc = np.log(alpha_at) - np.log(denom)[None, :] - np.log(theta0)[arms]
    return np.cumsum(inc, axis=1)


def chi2_p_paths(arms: np.ndarray, theta0: np.ndarray) -> np.ndarray:
    """(reps, n) fixed-n chi-square p-values recomputed at every m (peeking)."""
    reps, n = arms.shape
    ns = np.arange(1, n + 1, dtype=float)
    x2 = np.zeros((reps, n))
    for k in range(theta0.size):
        sk = np.cumsum(arms == k, axis=1, dtype=float)
        ek = ns * theta0[k]
        x2 += (sk - ek) ** 2 / ek
    return gammaincc((theta0.size - 1) / 2.0, x2 / 2.0)


def _first_true(flags: np.ndarray) -> np.ndarray:
    """Per row: 1-based index of the first True, or 0 when none."""
    any_hit = flags.any(axis=1)
    firsts = flags.argmax(axis=1) + 1
    firsts[~any_hit] = 0
    return firsts


def run_type1_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Null streams monitored continuously: sequential rule vs chi-square peeking.

    The chi-square baseline recomputes its fixed-n p-value at every
    n >= max(d, 5) (earlier the expected counts make the statistic
    meaningless) and rejects once it ever drops below u.
    """
    t0 = validate_simplex(cfg.theta0).values
    t_true = validate_simplex(cfg.theta_true).values
    if not np.array_equal(t_true, t0):
        raise ValueError("type-I experiment requires theta_true == theta0")
    alpha0 = _alpha0_for(t0, cfg.prior, cfg.k)
    threshold = -math.log(cfg.u)
    skip = max(t0.size, 5)

    start = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    firsts_all = []
    chi2_all = []
    done = 0
    while done < cfg.reps:
        block = min(_CHUNK, cfg.reps - done)
        arms = draw_arm_block(rng, t0, block, cfg.n_max)
        paths = log_odds_paths(arms, t0, alpha0)
        firsts_all.append(_first_true(paths >= threshold))
        pv = chi2_p_paths(arms, t0)
        pv[:, : skip - 1] = 1.0
        chi2_all.append((pv < cfg.u).any(axis=1))
        done += block
    firsts = np.concatenate(firsts_all)
    chi2_rejected = np.concatenate(chi2_all)
    hist = {int(n): int(c) for n, c in zip(*np.unique(firsts[firsts > 0], return_counts=True))}
    return ExperimentResult(
        reject_count_sequential=int((firsts > 0).sum()),
        reject_count_chi2=int(chi2_rejected.sum()),
        first_rejection_histogram=hist,
        runtime_seconds=time.perf_counter() - start,
        reps=cfg.reps,
        sequential_rejected=firsts > 0,
        sequential_first_n=firsts,
        chi2_rejected=chi2_rejected,
    )


def run_power_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Streams drawn off the null; counts rejections of theta0 by n_max."""
    t0 = validate_simplex(cfg.theta0).values
    t_true = validate_simplex(cfg.theta_true).values
    if np.array_equal(t_true, t0):
        raise ValueError("power experiment requires theta_true != theta0")
    alpha0 = _alpha0_for(t0, cfg.prior, cfg.k)
    threshold = -math.log(cfg.u)

    start = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    firsts_all = []
    done = 0
    while done < cfg.reps:
        block = min(_CHUNK, cfg.reps - done)
        arms = draw_arm_block(rng, t_true, block, cfg.n_max)
        paths = log_odds_paths(arms, t0, alpha0)
        firsts_all.append(_first_true(paths >= threshold))
        done += block
    firsts = np.concatenate(firsts_all)
    hist = {int(n): int(c) for n, c in zip(*np.unique(firsts[firsts > 0], return_counts=True))}
    return ExperimentResult(
        reject_count_sequential=int((firsts > 0).sum()),
        reject_count_chi2=0,
        first_rejection_histogram=hist,
        runtime_seconds=time.perf_counter() - start,
        reps=cfg.reps,
        sequential_rejected=firsts > 0,
        sequential_first_n=firsts,
    )


def _default_check_ns(n_max: int, points: int = 8) -> tuple:
    grid = np.unique(np.geomspace(5, n_max, points).astype(int))
    return tuple(int(n) for n in grid if n >= 1)


def _state_at(theta0, prior, k, counts) -> seqtest.OddsState:
    state = seqtest.init_state(theta0, prior=prior, k=k)
    return seqtest.update_batch(state, counts)


def run_coverage_experiment(
    cfg: ExperimentConfig,
    targets: str = "coords",
    rho=None,
    contrast_list=None,
    check_ns=None,
) -> CoverageReport:
    """Entire-trajectory coverage of the confidence sequences.

    A replication counts as covered when the true parameter stays inside
    C_n(u) at every n <= n_max (exact, via the odds trajectory evaluated at
    the truth) and the reported intervals contain the true coordinate /
    contrast values at every checkpoint n (exercising the actual solvers).

    targets="coords" checks the marginal simplex intervals for theta_true;
    targets="contrasts" checks contrast intervals for the delta behind
    theta_true = softmax_rho(delta) under the supplied rho.
    """
    t_true = validate_simplex(cfg.theta_true).values
    t0 = validate_simplex(cfg.theta0).values
    alpha0 = _alpha0_for(t0, cfg.prior, cfg.k)
    threshold = -math.log(cfg.u)
    if check_ns is None:
        check_ns = _default_check_ns(cfg.n_max)
    check_ns = tuple(sorted(set(int(n) for n in check_ns)))

    if targets == "coords":
        true_values = t_true
    elif targets == "contrasts":
        if rho is None or contrast_list is None:
            raise ValueError("contrast coverage needs rho and contrast_list")
        rho_v = validate_simplex(rho).values
        specs = [ct.as_contrast(a, t_true.size) for a in contrast_list]
        # gauge-fixed delta behind theta_true
        delta_true = ct.PIN_LAST.fix(np.log(t_true) - np.log(rho_v))
        true_values = np.array([float(np.dot(s.a, delta_true)) for s in specs])
    else:
        raise ValueError(f"unknown targets {targets!r}")

    start = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    flags = np.zeros(cfg.reps, dtype=bool)
    done = 0
    while done < cfg.reps:
        block = min(_CHUNK, cfg.reps - done)
        arms = draw_arm_block(rng, t_true, block, cfg.n_max)
        # membership of the truth at every n, via the odds path at theta_true
        paths = log_odds_paths(arms, t_true, alpha0)
        member_ok = ~(paths >= threshold).any(axis=1)
        for r in range(block):
            ok = bool(member_ok[r])
            if ok:
                counts_at = np.zeros(t_true.size, dtype=np.int64)
                row = arms[r]
                prev = 0
                for n_chk in check_ns:
                    counts_at += np.bincount(row[prev:n_chk], minlength=t_true.size)
                    prev = n_chk
                    state = _state_at(t0, cfg.prior, cfg.k, counts_at)
                    if targets == "coords":
                        for i in range(t_true.size):
                            if not marginal_ci(state, cfg.u, i).contains(true_values[i], 1e-9):
                                ok = False
                                break
                    else:
                        for s, truth in zip(specs, true_values):
                            if not ct.contrast_ci(state, rho_v, cfg.u, s).contains(truth, 1e-9):
                                ok = False
                                break
                    if not ok:
                        break
            flags[done + r] = ok
        done += block
    return CoverageReport(
        reps=cfg.reps,
        covered=int(flags.sum()),
        check_ns=check_ns,
        runtime_seconds=time.perf_counter() - start,
        covered_flags=flags,
    )


# ---------------------------------------------------------------------------
# the inhomogeneous-Bernoulli conversion scenario
# ---------------------------------------------------------------------------

SCENARIO_RHO = (0.1, 0.3, 0.6)
SCENARIO_DELTA = (math.log(0.2), math.log(0.3), math.log(0.4))
SCENARIO_CONTRASTS = ((-1.0, 0.0, 1.0), (0.0, -1.0, 1.0))
SCENARIO_HYPOTHESIS = ct.LinearHypothesis(
    (
        ((-1.0, 1.0, 0.0), "<=", 0.0),  # delta_0 >= delta_1
        ((-1.0, 0.0, 1.0), "<=", 0.0),  # delta_0 >= delta_2
    )
)


def scenario_success_stream(rng: np.random.Generator, n_units: int, rho, delta) -> np.ndarray:
    """Assignment + Bernoulli draw + drop failures, returning success arms.

    Success probability for unit i is exp(mu(i)) * exp(delta_arm) with
    mu(i) = 0.5 sin(7 pi i / n_units) + 0.5; the common time-varying factor
    cancels from the mark distribution of the surviving successes.
    """
    rho_v = validate_simplex(rho).values
    dlt = np.asarray(delta, dtype=float)
    assigned = draw_arm_block(rng, rho_v, 1, n_units)[0]
    idx = np.arange(1, n_units + 1, dtype=float)
    mu = 0.5 * np.sin(7.0 * math.pi * idx / n_units) + 0.5
    p = np.exp(mu + dlt[assigned])  # may exceed 1 at the peaks; draw clips
    success = rng.random(n_units) < p
    return assigned[success].astype(np.int16)


@dataclass
class BernoulliScenarioRun:
    success_arms: np.ndarray
    record_ns: np.ndarray
    contrast_los: np.ndarray  # (len(record_ns), n_contrasts)
    contrast_his: np.ndarray
    composite_p: np.ndarray  # running-min composite p at record_ns
    contrasts: tuple = SCENARIO_CONTRASTS
    truth: dict = field(default_factory=dict)


def run_bernoulli_scenario(
    seed,
    n_units: int = 5000,
    u: float = 0.05,
    record_every: int = 25,
    prior: str = "uniform",
    k: float | None = None,
    max_successes: int | None = None,
    stop_when_composite_below: float | None = None,
) -> BernoulliScenarioRun:
    """One replication of the conversion scenario with contrast and composite tracking.

    Tracks the two winning-arm contrasts and the composite hypothesis
    "arm 0 is best" (delta_0 >= delta_1 and delta_0 >= delta_2); the
    composite p is the running minimum over the recorded grid. When
    stop_when_composite_below is set, recording stops at the first grid
    point whose running-min p drops below it (first-crossing studies).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    successes = scenario_success_stream(rng, n_units, SCENARIO_RHO, SCENARIO_DELTA)
    if max_successes is not None:
        successes = successes[:max_successes]
    rho_v = validate_simplex(SCENARIO_RHO).values
    specs = [ct.as_contrast(a) for a in SCENARIO_CONTRASTS]

    stream = ct.CompositeTestStream(rho_v, SCENARIO_HYPOTHESIS, prior=prior, k=k)
    record_ns = []
    los, his, ps = [], [], []
    for j, arm in enumerate(successes, start=1):
        stream.advance(int(arm))
        if j % record_every == 0 or j == successes.size:
            p_run = stream.refresh()
            lo_row, hi_row = [], []
            for s in specs:
                ci = ct.contrast_ci(stream.state, rho_v, u, s)
                lo_row.append(ci.lo)
                hi_row.append(ci.hi)
            record_ns.append(j)
            los.append(lo_row)
            his.append(hi_row)
            ps.append(p_run)
            if stop_when_composite_below is not None and p_run <= stop_when_composite_below:
                break

    delta_true = ct.PIN_LAST.fix(np.asarray(SCENARIO_DELTA))
    truth = {
        tuple(s.a): float(np.dot(s.a, delta_true)) for s in specs
    }
    return BernoulliScenarioRun(
        success_arms=successes,
        record_ns=np.asarray(record_ns, dtype=int),
        contrast_los=np.asarray(los, dtype=float),
        contrast_his=np.asarray(his, dtype=float),
        composite_p=np.asarray(ps, dtype=float),
        contrasts=SCENARIO_CONTRASTS,
        truth=truth,
    )


def run_scenario_contrast_coverage(
    reps: int,
    seed: int,
    n_units: int = 2500,
    u: float = 0.05,
    prior: str = "uniform",
    k: float | None = None,
    contrast_list=((-1.0, 0.0, 1.0), (0.0, -1.0, 1.0), (-1.0, 1.0, 0.0)),
    check_points: int = 8,
) -> CoverageReport:
    """Entire-trajectory contrast coverage through the full Bernoulli pipeline.

    Streams are generated end-to-end (assignment, Bernoulli draw, failures
    dropped); a replication is covered when the softmax-reduced truth stays
    inside C_n(u) at every success count and every contrast interval
    contains its true value at the checkpoint counts.
    """
    rho_v = validate_simplex(SCENARIO_RHO).values
    delta = np.asarray(SCENARIO_DELTA)
    theta_star = ct.softmax_rho(rho_v, delta).values
    specs = [ct.as_contrast(a, rho_v.size) for a in contrast_list]
    delta_true = ct.PIN_LAST.fix(delta)
    truths = [float(np.dot(s.a, delta_true)) for s in specs]
    alpha0 = _alpha0_for(rho_v, prior, k)
    threshold = -math.log(u)

    start = time.perf_counter()
    root = np.random.SeedSequence(seed)
    flags = np.zeros(reps, dtype=bool)
    for r, child in enumerate(root.spawn(reps)):
        rng = np.random.default_rng(child)
        successes = scenario_success_stream(rng, n_units, rho_v, delta)
        if successes.size == 0:
            flags[r] = True
            continue
        paths = log_odds_paths(successes[None, :], theta_star, alpha0)[0]
        ok = bool(paths.max() < threshold)
        if ok:
            check_ns = _default_check_ns(successes.size, check_points)
            counts_at = np.zeros(rho_v.size, dtype=np.int64)
            prev = 0
            for n_chk in check_ns:
                counts_at += np.bincount(successes[prev:n_chk], minlength=rho_v.size)
                prev = n_chk
                state = _state_at(rho_v, prior, k, counts_at)
                for s, truth in zip(specs, truths):
                    if not ct.contrast_ci(state, rho_v, u, s).contains(truth, 1e-9):
                        ok = False
                        break
                if not ok:
                    break
        flags[r] = ok
    return CoverageReport(
        reps=reps,
        covered=int(flags.sum()),
        check_ns=(),
        runtime_seconds=time.perf_counter() - start,
        covered_flags=flags,
    )
