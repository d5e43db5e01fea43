import json
import os

import numpy as np
import pytest

from avcount.cli import config_digest, main

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
GOLDEN = os.path.join(DATA, "golden")


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def run_to_file(argv, tmp_path, name="out.csv"):
    out = str(tmp_path / name)
    code = main(argv + ["--out", out])
    return code, read(out)


class TestGolden:
    @pytest.mark.parametrize(
        "argv,golden,expected_code",
        [
            (["srm", "--config", f"{DATA}/srm_config.json", f"{DATA}/srm_events.ndjson"],
             "srm.csv", 0),
            (["convert", "--config", f"{DATA}/convert_config.json", f"{DATA}/srm_events.ndjson"],
             "convert.csv", 0),
            (["canary", "--config", f"{DATA}/canary_config.json",
              f"{DATA}/canary_events.ndjson", "--direction", "greater"],
             "canary.csv", 2),
            (["simulate", "type1", "--config", f"{DATA}/sim_type1.json"], "type1.csv", 0),
            (["simulate", "power", "--config", f"{DATA}/sim_power.json"], "power.csv", 0),
            (["simulate", "coverage", "--config", f"{DATA}/sim_coverage.json"], "coverage.csv", 0),
            (["simulate", "bernoulli", "--config", f"{DATA}/sim_bernoulli.json"], "bernoulli.csv", 0),
            (["simulate", "poisson", "--config", f"{DATA}/sim_poisson.json"], "poisson.csv", 0),
        ],
    )
    def test_byte_identical(self, tmp_path, argv, golden, expected_code):
        code, got = run_to_file(argv, tmp_path)
        assert code == expected_code
        assert got == read(os.path.join(GOLDEN, golden))

    def test_no_nan_tokens_anywhere(self):
        for name in os.listdir(GOLDEN):
            text = read(os.path.join(GOLDEN, name)).decode()
            assert "nan" not in text.lower()

    def test_simulate_deterministic(self, tmp_path):
        argv = ["simulate", "type1", "--config", f"{DATA}/sim_type1.json"]
        _, a = run_to_file(argv, tmp_path, "a.csv")
        _, b = run_to_file(argv, tmp_path, "b.csv")
        assert a == b


class TestCheckpoints:
    def _split_run(self, tmp_path, events, config, split, tag):
        lines = read(events).decode().splitlines(keepends=True)
        p1 = tmp_path / f"part1_{tag}.ndjson"
        p2 = tmp_path / f"part2_{tag}.ndjson"
        p1.write_text("".join(lines[:split]))
        p2.write_text("".join(lines[split:]))
        cp = str(tmp_path / f"cp_{tag}.json")
        out1 = str(tmp_path / f"s1_{tag}.csv")
        out2 = str(tmp_path / f"s2_{tag}.csv")
        assert main(["srm", "--config", config, str(p1), "--checkpoint", cp, "--out", out1]) in (0, 2)
        assert main(["srm", "--config", config, str(p2), "--checkpoint", cp, "--out", out2]) in (0, 2)
        return read(out1) + b"".join(read(out2).splitlines(keepends=True)[1:])

    def test_split_anywhere_twenty_points(self, tmp_path):
        config = f"{DATA}/srm_config.json"
        events = f"{DATA}/srm_events.ndjson"
        cp_full = str(tmp_path / "cp_full.json")
        out_full = str(tmp_path / "full.csv")
        main(["srm", "--config", config, events, "--checkpoint", cp_full, "--out", out_full])
        full = read(out_full)
        rng = np.random.default_rng(99)
        for i, split in enumerate(rng.integers(1, 60, size=20)):
            joined = self._split_run(tmp_path, events, config, int(split), f"k{i}_{split}")
            assert joined == full, f"split at {split} diverged"

    def test_convert_checkpoint_roundtrip(self, tmp_path):
        config = f"{DATA}/convert_config.json"
        events = f"{DATA}/srm_events.ndjson"
        out_full = str(tmp_path / "cfull.csv")
        main(["convert", "--config", config, events, "--out", out_full,
              "--checkpoint", str(tmp_path / "ccp0.json")])
        lines = read(events).decode().splitlines(keepends=True)
        p1, p2 = tmp_path / "c1.ndjson", tmp_path / "c2.ndjson"
        p1.write_text("".join(lines[:25]))
        p2.write_text("".join(lines[25:]))
        cp = str(tmp_path / "ccp.json")
        o1, o2 = str(tmp_path / "c1.csv"), str(tmp_path / "c2.csv")
        main(["convert", "--config", config, str(p1), "--checkpoint", cp, "--out", o1])
        main(["convert", "--config", config, str(p2), "--checkpoint", cp, "--out", o2])
        joined = read(o1) + b"".join(read(o2).splitlines(keepends=True)[1:])
        assert joined == read(out_full)

    def test_digest_mismatch_refused(self, tmp_path):
        config = f"{DATA}/srm_config.json"
        events = f"{DATA}/srm_events.ndjson"
        cp = str(tmp_path / "cp.json")
        main(["srm", "--config", config, events, "--checkpoint", cp, "--out", str(tmp_path / "x.csv")])
        other = dict(json.load(open(config)))
        other["u"] = 0.01
        altered = tmp_path / "altered.json"
        altered.write_text(json.dumps(other))
        code = main(["srm", "--config", str(altered), events, "--checkpoint", cp,
                     "--out", str(tmp_path / "y.csv")])
        assert code == 1

    def test_version_mismatch_refused(self, tmp_path):
        config = f"{DATA}/srm_config.json"
        cp = tmp_path / "cp.json"
        payload = {"version": 99, "config_digest": config_digest(json.load(open(config))),
                   "events_processed": 0, "state": {}, "rho": None, "extras": {}}
        cp.write_text(json.dumps(payload))
        code = main(["srm", "--config", config, f"{DATA}/srm_events.ndjson",
                     "--checkpoint", str(cp), "--out", str(tmp_path / "z.csv")])
        assert code == 1

    def test_corrupt_checkpoint(self, tmp_path):
        cp = tmp_path / "cp.json"
        cp.write_text("{not json")
        code = main(["srm", "--config", f"{DATA}/srm_config.json",
                     f"{DATA}/srm_events.ndjson", "--checkpoint", str(cp),
                     "--out", str(tmp_path / "z.csv")])
        assert code == 1


class TestEventHandling:
    def test_empty_input_header_only(self, tmp_path):
        empty = tmp_path / "empty.ndjson"
        empty.write_text("")
        code, got = run_to_file(
            ["srm", "--config", f"{DATA}/srm_config.json", str(empty)], tmp_path
        )
        assert code == 0
        assert got.decode().splitlines() == [
            "n,log_odds,p,reject,ci0_lo,ci0_hi,ci1_lo,ci1_hi,ci2_lo,ci2_hi"
        ]

    def test_malformed_line_skipped_by_default(self, tmp_path, capsys):
        bad = tmp_path / "bad.ndjson"
        bad.write_text('{"arm": 0}\nnot json\n{"arm": 9}\n{"arm": 1}\n')
        code, got = run_to_file(
            ["srm", "--config", f"{DATA}/srm_config.json", str(bad)], tmp_path
        )
        assert code == 0
        err = capsys.readouterr().err
        assert "line 2" in err and "line 3" in err
        assert len(got.decode().splitlines()) == 1  # header only: 2 events < report_every

    def test_malformed_line_strict_aborts(self, tmp_path):
        bad = tmp_path / "bad.ndjson"
        bad.write_text('{"arm": 0}\nnot json\n')
        code = main(["srm", "--config", f"{DATA}/srm_config.json", str(bad), "--strict",
                     "--out", str(tmp_path / "o.csv")])
        assert code == 1

    def test_rejection_exit_code(self, tmp_path):
        stream = tmp_path / "biased.ndjson"
        stream.write_text("".join(json.dumps({"arm": 2}) + "\n" for _ in range(80)))
        code = main(["srm", "--config", f"{DATA}/srm_config.json", str(stream),
                     "--out", str(tmp_path / "o.csv")])
        assert code == 2

    def test_contrast_length_error_text(self, tmp_path, capsys):
        cfg = {"rho": [0.1, 0.3, 0.6], "u": 0.05, "contrasts": [[1, -1]]}
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        ev = tmp_path / "e.ndjson"
        ev.write_text('{"arm": 0}\n')
        code = main(["convert", "--config", str(path), str(ev), "--out", str(tmp_path / "o.csv")])
        assert code == 1
        assert "contrast length 2 != number of arms 3" in capsys.readouterr().err

    def test_missing_timestamp_for_canary(self, tmp_path):
        ev = tmp_path / "e.ndjson"
        ev.write_text('{"arm": 0}\n')
        code = main(["canary", "--config", f"{DATA}/canary_config.json", str(ev),
                     "--strict", "--out", str(tmp_path / "o.csv")])
        assert code == 1


class TestReorderWindow:
    def _events(self, tmp_path, order):
        ev = tmp_path / "e.ndjson"
        ev.write_text("".join(json.dumps({"t": t, "arm": 0}) + "\n" for t in order))
        return str(ev)

    def test_within_window_ok(self, tmp_path):
        ev = self._events(tmp_path, [0.1, 0.3, 0.2, 0.4, 0.5])
        code = main(["canary", "--config", f"{DATA}/canary_config.json", ev,
                     "--reorder-window", "2", "--out", str(tmp_path / "o.csv")])
        assert code in (0, 2)

    def test_beyond_window_errors(self, tmp_path):
        ev = self._events(tmp_path, [0.5, 0.6, 0.7, 0.8, 0.05])
        code = main(["canary", "--config", f"{DATA}/canary_config.json", ev,
                     "--reorder-window", "1", "--out", str(tmp_path / "o.csv")])
        assert code == 1

    def test_reordered_equals_sorted(self, tmp_path):
        shuffled = self._events(tmp_path, [0.2, 0.1, 0.4, 0.3, 0.5])
        ordered = self._events(tmp_path / ".." / tmp_path.name, [0.1, 0.2, 0.3, 0.4, 0.5])
        c1, out1 = run_to_file(
            ["canary", "--config", f"{DATA}/canary_config.json", shuffled,
             "--reorder-window", "3"], tmp_path, "a.csv")
        c2, out2 = run_to_file(
            ["canary", "--config", f"{DATA}/canary_config.json", ordered], tmp_path, "b.csv")
        assert out1 == out2


class TestUFlagOverride:
    def test_u_override_changes_report(self, tmp_path):
        argv = ["srm", "--config", f"{DATA}/srm_config.json", f"{DATA}/srm_events.ndjson"]
        _, base = run_to_file(argv, tmp_path, "base.csv")
        _, loose = run_to_file(argv + ["--u", "0.5"], tmp_path, "loose.csv")
        assert base != loose


class TestMixedTimestamps:
    def test_mixed_t_rejected_strict(self, tmp_path):
        ev = tmp_path / "mixed.ndjson"
        ev.write_text('{"arm": 0, "t": 0.5}\n{"arm": 1}\n')
        code = main(["srm", "--config", f"{DATA}/srm_config.json", str(ev), "--strict",
                     "--out", str(tmp_path / "o.csv")])
        assert code == 1

    def test_all_t_or_none_ok(self, tmp_path):
        ev = tmp_path / "all_t.ndjson"
        ev.write_text('{"arm": 0, "t": 0.5}\n{"arm": 1, "t": 0.7}\n')
        code = main(["srm", "--config", f"{DATA}/srm_config.json", str(ev), "--strict",
                     "--out", str(tmp_path / "o.csv")])
        assert code == 0
