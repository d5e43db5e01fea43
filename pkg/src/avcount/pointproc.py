"""Marked inhomogeneous Poisson machinery: simulation and reduction.

For d processes with intensities rho_i e^{delta_i} lambda(t), the mark of
the next point is Multinomial(1, theta) with theta the rho-weighted softmax
of delta, independent of lambda and of history. Sorting marked events by
time therefore turns a Poisson stream into a multinomial observation
sequence for the sequential test.

Simulation is by thinning: homogeneous proposals at a dominating rate, each
kept with probability lambda(t) / lambda_max. Simulators are pure functions
of (spec, seed); per-process randomness is split off the root seed with
numpy SeedSequence spawning so replications are reproducible regardless of
scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .contrasts import softmax_rho
from .core import SimplexVector, validate_simplex


@dataclass(frozen=True)
class MarkedEvent:
    """One timestamped event carrying the index of the emitting process."""

    t: float
    arm: int

    def __post_init__(self):
        if not math.isfinite(self.t):
            raise ValueError(f"event time must be finite, got {self.t}")
        if int(self.arm) < 0:
            raise ValueError(f"arm index must be non-negative, got {self.arm}")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "arm", int(self.arm))


@dataclass(frozen=True)
class ConstantIntensity:
    """lambda(t) = rate."""

    rate: float

    def __post_init__(self):
        if not self.rate >= 0.0:
            raise ValueError(f"rate must be >= 0, got {self.rate}")

    @property
    def lambda_max(self) -> float:
        return float(self.rate)

    def rate_at(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.rate)


@dataclass(frozen=True)
class SinusoidSigmoidIntensity:
    """lambda(t) = scale * sigmoid(sin(angular_freq * t) + slope * t + offset).

    Defaults reproduce the canary-style simulation intensity
    2000 sigmoid(sin(10 pi t) + 8 t - 4).
    """

    scale: float = 2000.0
    angular_freq: float = 10.0 * math.pi
    slope: float = 8.0
    offset: float = -4.0

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    @property
    def lambda_max(self) -> float:
        return float(self.scale)  # sigmoid < 1 everywhere

    def rate_at(self, t):
        x = np.sin(self.angular_freq * np.asarray(t, dtype=float)) + self.slope * np.asarray(
            t, dtype=float
        ) + self.offset
        return self.scale / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class TabulatedIntensity:
    """Piecewise-linear interpolation between (time, rate) knots.

    Evaluation outside the knot range clamps to the end values; the linear
    interpolant never exceeds the largest knot, which serves as lambda_max.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float, copy=True).reshape(-1)
        v = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if t.size != v.size or t.size < 2:
            raise ValueError("need matching times/values with at least 2 knots")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("knot times must be strictly increasing")
        if np.any(v < 0.0):
            raise ValueError("knot rates must be >= 0")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def lambda_max(self) -> float:
        return float(np.max(self.values))

    def rate_at(self, t):
        return np.interp(np.asarray(t, dtype=float), self.times, self.values)


def mark_probability(rho, delta) -> SimplexVector:
    """Probability the next point carries each mark (softmax of delta under rho)."""
    return softmax_rho(rho, delta)


def events_to_observations(events) -> list[int]:
    """Arm sequence of the events sorted by time (stable on ties)."""
    seq = list(events)
    if not seq:
        return []
    times = np.array([e.t for e in seq], dtype=float)
    order = np.argsort(times, kind="stable")
    return [seq[i].arm for i in order]


def _thin(rng: np.random.Generator, intensity, horizon: float, rate_scale: float = 1.0) -> np.ndarray:
    """Thinned sample of a process with rate rate_scale * lambda(t) on [0, horizon]."""
    lam_max = rate_scale * intensity.lambda_max
    if lam_max == 0.0:
        return np.empty(0)
    n_prop = int(rng.poisson(lam_max * horizon))
    times = np.sort(rng.uniform(0.0, horizon, size=n_prop))
    rates = rate_scale * np.asarray(intensity.rate_at(times), dtype=float)
    if np.any(rates > lam_max * (1.0 + 1e-12)):
        worst = float(np.max(rates))
        raise ValueError(
            f"intensity exceeds its dominating rate: lambda(t)={worst} > {lam_max}"
        )
    keep = rng.uniform(0.0, 1.0, size=n_prop) * lam_max < rates
    return times[keep]


def simulate_thinned(spec, horizon: float, seed: int) -> np.ndarray:
    """Inhomogeneous Poisson sample on [0, horizon] by thinning; pure in (spec, seed)."""
    horizon = float(horizon)
    if not horizon >= 0.0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return _thin(rng, spec, horizon)


def simulate_marked_system(rho, delta, base, horizon: float, seed) -> list[MarkedEvent]:
    """Simulate d processes with intensities rho_i e^{delta_i} lambda(t), merged by time.

    Each process is thinned with its own child of the root seed; ties (a
    probability-zero event) are broken by process order. rho may be a
    single-entry vector (the degenerate one-process system).
    """
    r = np.asarray(rho, dtype=float).reshape(-1)
    if r.size >= 2:
        r = validate_simplex(r).values
    elif r.size != 1 or abs(r[0] - 1.0) > 1e-9:
        raise ValueError("single-process system requires rho = (1.0,)")
    dlt = np.asarray(delta, dtype=float).reshape(-1)
    if dlt.size != r.size:
        raise ValueError(f"delta length {dlt.size} != rho length {r.size}")
    horizon = float(horizon)
    children = np.random.SeedSequence(seed).spawn(r.size)
    all_times = []
    all_arms = []
    for i in range(r.size):
        rng = np.random.default_rng(children[i])
        times = _thin(rng, base, horizon, rate_scale=float(r[i] * math.exp(dlt[i])))
        all_times.append(times)
        all_arms.append(np.full(times.size, i, dtype=np.int64))
    times = np.concatenate(all_times)
    arms = np.concatenate(all_arms)
    order = np.argsort(times, kind="stable")
    return [MarkedEvent(float(times[j]), int(arms[j])) for j in order]
