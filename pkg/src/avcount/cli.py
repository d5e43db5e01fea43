"""Streaming command-line front end.

Subcommands:

* ``srm``      -- sequential sample-ratio-mismatch test of intended
                  assignment probabilities, with marginal CIs per arm.
* ``convert``  -- conversion streams (successes only): equality test
                  against rho, contrast CIs, optional composite hypothesis.
* ``canary``   -- timestamped marked events: equality test, rate-ratio CI
                  for arm 1 vs arm 0, optional one-sided test.
* ``simulate`` -- drives the Monte-Carlo experiments to CSV.

Events arrive as newline-delimited JSON objects ({"arm": int, "t": float?})
from a file or stdin; configuration is a single JSON document; reports are
CSV with floats at 12 significant digits ("inf"/"-inf" tokens allowed,
never NaN). Exit codes: 0 completed without rejection, 2 rejected, 1 error.

Checkpoints capture the exact test state (floats round-trip exactly through
JSON), so splitting an input stream at any point and resuming yields
byte-identical subsequent report lines.
"""

from __future__ import annotations

import argparse
import hashlib
import heapq
import json
import math
import os
import sys

import numpy as np

from . import contrasts as ct
from . import seqtest, sim
from .confset import marginal_ci
from .core import CountVector, DirichletParams, SimplexVector
from .pointproc import (
    ConstantIntensity,
    SinusoidSigmoidIntensity,
    TabulatedIntensity,
    events_to_observations,
    simulate_marked_system,
)
from .seqtest import OddsState

CHECKPOINT_VERSION = 1


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config / formatting helpers
# ---------------------------------------------------------------------------


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc


def config_digest(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if math.isnan(v):
        raise CliError("internal error: NaN reached report output")
    return f"{v:.12g}"


def _exp_safe(x: float) -> float:
    return math.inf if x > 709.0 else math.exp(x)


def _prior_args(cfg: dict) -> tuple[str, float | None]:
    prior = cfg.get("prior", {"mode": "concentrated"})
    mode = prior.get("mode", "concentrated")
    k = prior.get("k")
    return mode, (float(k) if k is not None else None)


def _init_from_config(theta0, cfg: dict) -> OddsState:
    mode, k = _prior_args(cfg)
    return seqtest.init_state(theta0, prior=mode, k=k)


def _hypothesis_from_config(cfg: dict) -> ct.LinearHypothesis | None:
    raw = cfg.get("hypothesis")
    if not raw:
        return None
    rows = []
    for item in raw:
        rows.append((item["coeffs"], item["relation"], float(item.get("rhs", 0.0))))
    return ct.LinearHypothesis(tuple(rows))


class ReportWriter:
    def __init__(self, out_path: str | None):
        self._own = out_path is not None
        self._fh = open(out_path, "w", encoding="utf-8", newline="") if out_path else sys.stdout

    def row(self, cells) -> None:
        self._fh.write(",".join(fmt(c) if not isinstance(c, str) else c for c in cells))
        self._fh.write("\n")

    def header(self, columns) -> None:
        self._fh.write(",".join(columns))
        self._fh.write("\n")

    def close(self) -> None:
        if self._own:
            self._fh.close()
        else:
            self._fh.flush()


# ---------------------------------------------------------------------------
# event ingestion
# ---------------------------------------------------------------------------


def _iter_events(source: str, d: int, need_t: bool, strict: bool):
    """Yield (arm, t) from NDJSON lines; malformed lines warn or abort.

    Timestamps are all-or-nothing: once one event carries t, every later
    event must too (and vice versa).
    """
    fh = sys.stdin if source == "-" else open(source, "r", encoding="utf-8")
    expect_t = True if need_t else None
    try:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                arm = int(obj["arm"])
                if not 0 <= arm < d:
                    raise ValueError(f"arm {arm} out of range [0, {d})")
                t = obj.get("t")
                if t is None and need_t:
                    raise ValueError("event is missing required timestamp 't'")
                if expect_t is None:
                    expect_t = t is not None
                if (t is not None) != expect_t:
                    raise ValueError(
                        "mixed events: timestamps must be present on all events or none"
                    )
                if t is not None:
                    t = float(t)
            except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
                msg = f"line {lineno}: malformed event ({exc})"
                if strict:
                    raise CliError(msg) from exc
                print(f"warning: {msg}; skipping", file=sys.stderr)
                continue
            yield arm, t
    finally:
        if fh is not sys.stdin:
            fh.close()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _state_to_json(state: OddsState) -> dict:
    return {
        "theta0": state.theta0.values.tolist(),
        "alpha0": state.alpha0.alpha.tolist(),
        "alpha": state.alpha.alpha.tolist(),
        "counts": state.counts.counts.tolist(),
        "n": state.n,
        "log_odds": state.log_odds,
        "log_running_max_odds": state.log_running_max_odds,
    }


def _state_from_json(obj: dict) -> OddsState:
    return OddsState(
        theta0=SimplexVector(np.array(obj["theta0"], dtype=float)),
        alpha0=DirichletParams(np.array(obj["alpha0"], dtype=float)),
        alpha=DirichletParams(np.array(obj["alpha"], dtype=float)),
        counts=CountVector(np.array(obj["counts"], dtype=np.int64)),
        n=int(obj["n"]),
        log_odds=float(obj["log_odds"]),
        log_running_max_odds=float(obj["log_running_max_odds"]),
    )


def checkpoint_save(path: str, digest: str, state: OddsState, events_processed: int,
                    rho=None, extras: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config_digest": digest,
        "events_processed": int(events_processed),
        "state": _state_to_json(state),
        "rho": list(map(float, rho)) if rho is not None else None,
        "extras": extras or {},
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def checkpoint_restore(path: str, digest: str) -> tuple[OddsState, int, dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot restore checkpoint {path}: {exc}") from exc
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CliError(
            f"checkpoint version mismatch: file has {payload.get('version')}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    if payload.get("config_digest") != digest:
        raise CliError(
            "checkpoint config digest mismatch: the configuration changed mid-stream "
            f"(checkpoint {payload.get('config_digest')}, current {digest})"
        )
    return _state_from_json(payload["state"]), int(payload["events_processed"]), payload.get("extras", {})


# ---------------------------------------------------------------------------
# stream subcommands
# ---------------------------------------------------------------------------


def _u_from(cfg: dict, args) -> float:
    u = args.u if args.u is not None else cfg.get("u", 0.05)
    u = float(u)
    if not 0.0 < u < 1.0:
        raise CliError(f"u must be in (0, 1), got {u}")
    return u


def cmd_srm(args) -> int:
    cfg = load_config(args.config)
    digest = config_digest(cfg)
    theta0 = cfg["theta0"]
    d = len(theta0)
    u = _u_from(cfg, args)
    report_every = int(args.report_every or cfg.get("report_every", 1))

    events_processed = 0
    if args.checkpoint and os.path.exists(args.checkpoint):
        state, events_processed, _ = checkpoint_restore(args.checkpoint, digest)
    else:
        state = _init_from_config(theta0, cfg)

    writer = ReportWriter(args.out)
    columns = ["n", "log_odds", "p", "reject"]
    for i in range(d):
        columns += [f"ci{i}_lo", f"ci{i}_hi"]
    writer.header(columns)
    try:
        for arm, _t in _iter_events(args.events, d, need_t=False, strict=args.strict):
            state = seqtest.update(state, arm)
            events_processed += 1
            if state.n % report_every == 0:
                cells = [
                    state.n,
                    state.log_odds,
                    seqtest.sequential_p(state),
                    seqtest.should_reject(state, u),
                ]
                for i in range(d):
                    iv = marginal_ci(state, u, i)
                    cells += [iv.lo, iv.hi]
                writer.row(cells)
    finally:
        writer.close()
    if args.checkpoint:
        checkpoint_save(args.checkpoint, digest, state, events_processed)
    return 2 if seqtest.should_reject(state, u) else 0


def cmd_convert(args) -> int:
    cfg = load_config(args.config)
    digest = config_digest(cfg)
    rho = cfg["rho"]
    d = len(rho)
    u = _u_from(cfg, args)
    report_every = int(args.report_every or cfg.get("report_every", 1))
    contrast_specs = [ct.as_contrast(a, d) for a in cfg.get("contrasts", [])]
    h0 = _hypothesis_from_config(cfg)
    if h0 is not None and h0.d != d:
        raise CliError(f"hypothesis constraint length {h0.d} != number of arms {d}")

    events_processed = 0
    p_min_composite = 1.0
    if args.checkpoint and os.path.exists(args.checkpoint):
        state, events_processed, extras = checkpoint_restore(args.checkpoint, digest)
        p_min_composite = float(extras.get("p_min_composite", 1.0))
    else:
        state = _init_from_config(ct.null_from_equality(rho), cfg)

    writer = ReportWriter(args.out)
    columns = ["n", "log_odds", "p", "reject"]
    for j in range(len(contrast_specs)):
        columns += [f"contrast{j}_lo", f"contrast{j}_hi"]
    if h0 is not None:
        columns += ["composite_p", "composite_reject"]
    writer.header(columns)
    try:
        for arm, _t in _iter_events(args.events, d, need_t=False, strict=args.strict):
            state = seqtest.update(state, arm)
            events_processed += 1
            if state.n % report_every == 0:
                cells = [
                    state.n,
                    state.log_odds,
                    seqtest.sequential_p(state),
                    seqtest.should_reject(state, u),
                ]
                for spec in contrast_specs:
                    iv = ct.contrast_ci(state, rho, u, spec)
                    cells += [iv.lo, iv.hi]
                if h0 is not None:
                    p_min_composite = min(p_min_composite, ct.composite_p(state, rho, h0))
                    cells += [p_min_composite, p_min_composite <= u]
                writer.row(cells)
    finally:
        writer.close()
    if args.checkpoint:
        checkpoint_save(
            args.checkpoint, digest, state, events_processed, rho=rho,
            extras={"p_min_composite": p_min_composite},
        )
    rejected = seqtest.should_reject(state, u) or (h0 is not None and p_min_composite <= u)
    return 2 if rejected else 0


def cmd_canary(args) -> int:
    cfg = load_config(args.config)
    digest = config_digest(cfg)
    rho = cfg["rho"]
    d = len(rho)
    if d < 2:
        raise CliError("canary needs at least 2 arms")
    u = _u_from(cfg, args)
    report_every = int(args.report_every or cfg.get("report_every", 1))
    window = int(args.reorder_window)
    ratio_contrast = np.zeros(d)
    ratio_contrast[0] = -1.0
    ratio_contrast[1] = 1.0

    h0 = None
    if args.direction:
        coeffs = ratio_contrast if args.direction == "greater" else -ratio_contrast
        # H0 is the complement of the direction we test for
        h0 = ct.LinearHypothesis(((tuple(coeffs), "<=", 0.0),))

    events_processed = 0
    p_min_onesided = 1.0
    buffer: list = []
    next_seq = 0
    last_t = -math.inf
    if args.checkpoint and os.path.exists(args.checkpoint):
        state, events_processed, extras = checkpoint_restore(args.checkpoint, digest)
        p_min_onesided = float(extras.get("p_min_onesided", 1.0))
        buffer = [tuple(item) for item in extras.get("buffer", [])]
        heapq.heapify(buffer)
        next_seq = int(extras.get("next_seq", 0))
        last_t = float(extras.get("last_t", -math.inf))
    else:
        state = _init_from_config(ct.null_from_equality(rho), cfg)

    writer = ReportWriter(args.out)
    columns = ["n", "t", "log_odds", "p", "reject", "ratio_lo", "ratio_hi"]
    if h0 is not None:
        columns += ["p_onesided", "reject_onesided"]
    writer.header(columns)

    def emit(t: float, arm: int):
        nonlocal state, p_min_onesided
        state = seqtest.update(state, arm)
        if state.n % report_every == 0:
            iv = ct.contrast_ci(state, rho, u, ratio_contrast)
            cells = [
                state.n,
                t,
                state.log_odds,
                seqtest.sequential_p(state),
                seqtest.should_reject(state, u),
                _exp_safe(iv.lo),
                _exp_safe(iv.hi),
            ]
            if h0 is not None:
                p_min_onesided = min(p_min_onesided, ct.composite_p(state, rho, h0))
                cells += [p_min_onesided, p_min_onesided <= u]
            writer.row(cells)

    try:
        for arm, t in _iter_events(args.events, d, need_t=True, strict=args.strict):
            heapq.heappush(buffer, (t, next_seq, arm))
            next_seq += 1
            events_processed += 1
            if len(buffer) > window:
                t_out, _seq, arm_out = heapq.heappop(buffer)
                if t_out < last_t:
                    raise CliError(
                        f"event at t={t_out} arrived out of order beyond the "
                        f"--reorder-window of {window}"
                    )
                last_t = t_out
                emit(t_out, arm_out)
        if not args.checkpoint:
            while buffer:
                t_out, _seq, arm_out = heapq.heappop(buffer)
                if t_out < last_t:
                    raise CliError("buffered events out of order")
                last_t = t_out
                emit(t_out, arm_out)
    finally:
        writer.close()
    if args.checkpoint:
        checkpoint_save(
            args.checkpoint, digest, state, events_processed, rho=rho,
            extras={
                "p_min_onesided": p_min_onesided,
                "buffer": [list(item) for item in sorted(buffer)],
                "next_seq": next_seq,
                "last_t": last_t if math.isfinite(last_t) else None,
            },
        )
    rejected = seqtest.should_reject(state, u) or (h0 is not None and p_min_onesided <= u)
    return 2 if rejected else 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _intensity_from_config(obj: dict):
    kind = obj.get("kind", "sinusoid_sigmoid")
    if kind == "constant":
        return ConstantIntensity(float(obj["rate"]))
    if kind == "sinusoid_sigmoid":
        return SinusoidSigmoidIntensity(
            scale=float(obj.get("scale", 2000.0)),
            angular_freq=float(obj.get("angular_freq", 10.0 * math.pi)),
            slope=float(obj.get("slope", 8.0)),
            offset=float(obj.get("offset", -4.0)),
        )
    if kind == "tabulated":
        return TabulatedIntensity(np.asarray(obj["times"]), np.asarray(obj["values"]))
    raise CliError(f"unknown intensity kind {kind!r}")


def _experiment_config(cfg: dict, seed_override) -> sim.ExperimentConfig:
    mode, k = _prior_args(cfg)
    return sim.ExperimentConfig(
        theta_true=tuple(cfg.get("theta", cfg["theta0"])),
        theta0=tuple(cfg["theta0"]),
        n_max=int(cfg["n_max"]),
        reps=int(cfg["reps"]),
        u=float(cfg.get("u", 0.05)),
        seed=int(seed_override if seed_override is not None else cfg.get("seed", 0)),
        prior=mode,
        k=k,
    )


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    writer = ReportWriter(args.out)
    try:
        if args.kind == "type1":
            ecfg = _experiment_config(cfg, args.seed)
            res = sim.run_type1_experiment(ecfg)
            writer.header(["rep", "rejected_sequential", "first_n_sequential", "rejected_chi2"])
            for r in range(ecfg.reps):
                writer.row([r, int(res.sequential_rejected[r]), int(res.sequential_first_n[r]),
                            int(res.chi2_rejected[r])])
            writer.row(["summary", res.reject_count_sequential, 0, res.reject_count_chi2])
            print(
                f"type1: sequential {res.reject_count_sequential}/{ecfg.reps} "
                f"chi2 {res.reject_count_chi2}/{ecfg.reps} ({res.runtime_seconds:.1f}s)",
                file=sys.stderr,
            )
        elif args.kind == "power":
            ecfg = _experiment_config(cfg, args.seed)
            res = sim.run_power_experiment(ecfg)
            writer.header(["rep", "rejected_sequential", "first_n_sequential"])
            for r in range(ecfg.reps):
                writer.row([r, int(res.sequential_rejected[r]), int(res.sequential_first_n[r])])
            writer.row(["summary", res.reject_count_sequential, 0])
            print(
                f"power: rejected {res.reject_count_sequential}/{ecfg.reps} "
                f"({res.runtime_seconds:.1f}s)",
                file=sys.stderr,
            )
        elif args.kind == "coverage":
            ecfg = _experiment_config(cfg, args.seed)
            report = sim.run_coverage_experiment(
                ecfg,
                targets=cfg.get("targets", "coords"),
                rho=cfg.get("rho"),
                contrast_list=cfg.get("contrasts"),
            )
            writer.header(["rep", "covered"])
            for r in range(report.reps):
                writer.row([r, int(report.covered_flags[r])])
            writer.row(["summary", report.covered])
            print(
                f"coverage: {report.covered}/{report.reps} = {report.coverage:.4f} "
                f"({report.runtime_seconds:.1f}s)",
                file=sys.stderr,
            )
        elif args.kind == "bernoulli":
            base_seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
            reps = int(cfg.get("reps", 1))
            u = float(cfg.get("u", 0.05))
            writer.header([
                "rep", "n_successes", "composite_p_final", "composite_rejected",
                "first_composite_n", "c0_lo", "c0_hi", "c1_lo", "c1_hi",
            ])
            rejected_total = 0
            for r in range(reps):
                run = sim.run_bernoulli_scenario(
                    [base_seed, r],
                    n_units=int(cfg.get("n_units", 5000)),
                    u=u,
                    record_every=int(cfg.get("record_every", 25)),
                )
                hit = run.composite_p <= u
                first_n = int(run.record_ns[hit.argmax()]) if hit.any() else 0
                rejected_total += int(hit.any())
                writer.row([
                    r, int(run.success_arms.size), float(run.composite_p[-1]),
                    bool(hit.any()), first_n,
                    run.contrast_los[-1, 0], run.contrast_his[-1, 0],
                    run.contrast_los[-1, 1], run.contrast_his[-1, 1],
                ])
            writer.row(["summary", 0, 0.0, rejected_total, 0, 0.0, 0.0, 0.0, 0.0])
            print(f"bernoulli: composite rejected {rejected_total}/{reps}", file=sys.stderr)
        elif args.kind == "poisson":
            base_seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
            reps = int(cfg.get("reps", 1))
            u = float(cfg.get("u", 0.05))
            rho = cfg["rho"]
            delta = cfg["delta"]
            horizon = float(cfg.get("horizon", 1.0))
            intensity = _intensity_from_config(cfg.get("intensity", {}))
            mode, k = _prior_args(cfg)
            writer.header([
                "rep", "events", "mark1_count", "mark1_fraction",
                "rejected_equality", "ratio_lo", "ratio_hi",
            ])
            total_events = 0
            total_mark1 = 0
            for r in range(reps):
                events = simulate_marked_system(rho, delta, intensity, horizon, [base_seed, r])
                arms = events_to_observations(events)
                state = seqtest.init_state(ct.null_from_equality(rho), prior=mode, k=k)
                counts = np.bincount(arms, minlength=len(rho)) if arms else np.zeros(len(rho), int)
                state = seqtest.update_batch(state, counts)
                mark1 = int(counts[1]) if len(counts) > 1 else 0
                total_events += len(arms)
                total_mark1 += mark1
                a = np.zeros(len(rho))
                a[0], a[1] = -1.0, 1.0
                iv = ct.contrast_ci(state, rho, u, a)
                writer.row([
                    r, len(arms), mark1,
                    (mark1 / len(arms)) if arms else 0.0,
                    seqtest.should_reject(state, u),
                    _exp_safe(iv.lo), _exp_safe(iv.hi),
                ])
            writer.row([
                "summary", total_events, total_mark1,
                (total_mark1 / total_events) if total_events else 0.0, 0, 0.0, 0.0,
            ])
            print(
                f"poisson: pooled mark-1 fraction "
                f"{(total_mark1 / total_events) if total_events else 0.0:.5f}",
                file=sys.stderr,
            )
        else:
            raise CliError(f"unknown simulate kind {args.kind!r}")
    finally:
        writer.close()
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _add_stream_args(sub, with_events=True):
    sub.add_argument("--config", required=True, help="JSON configuration file")
    if with_events:
        sub.add_argument("events", nargs="?", default="-",
                         help="NDJSON event file, or - for stdin (default)")
    sub.add_argument("--out", default=None, help="CSV output path (default stdout)")
    sub.add_argument("--u", type=float, default=None, help="override the level u")
    sub.add_argument("--report-every", type=int, default=None, dest="report_every")
    sub.add_argument("--strict", action="store_true",
                     help="abort on malformed event lines instead of skipping")
    sub.add_argument("--checkpoint", default=None,
                     help="checkpoint file: restored when present, saved at EOF")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avcount",
        description="Anytime-valid sequential tests and confidence sequences for count data.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    srm = subs.add_parser("srm", help="sequential sample-ratio-mismatch test")
    _add_stream_args(srm)
    srm.set_defaults(func=cmd_srm)

    conv = subs.add_parser("convert", help="conversion stream: contrasts and composite tests")
    _add_stream_args(conv)
    conv.set_defaults(func=cmd_convert)

    can = subs.add_parser("canary", help="timestamped canary stream")
    _add_stream_args(can)
    can.add_argument("--reorder-window", type=int, default=0, dest="reorder_window",
                     help="bounded buffer size for out-of-order timestamps")
    can.add_argument("--direction", choices=("greater", "less"), default=None,
                     help="one-sided hypothesis on arm 1 vs arm 0")
    can.set_defaults(func=cmd_canary)

    simp = subs.add_parser("simulate", help="Monte-Carlo experiments")
    simp.add_argument("kind", choices=("type1", "power", "coverage", "bernoulli", "poisson"))
    simp.add_argument("--config", required=True)
    simp.add_argument("--out", default=None)
    simp.add_argument("--seed", type=int, default=None, help="override the config seed")
    simp.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
