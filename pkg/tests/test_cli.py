"""End-to-end tests of the command-line driver and its exit codes."""

import csv
import json

import pytest

from grainflow.cli import main

BASE = {
    "model": {"beta": 1.0, "n0": 8, "delta_a": 0.1, "num_nodes": 121},
    "stepper": {"dt": 0.1},
    "t_final": 0.5,
    "initial": {"family": "exponential", "scale": 1.0, "rate": 2.0},
    "seed": 42,
}


def write_config(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


class TestSimulate:
    def test_artifacts_and_determinism(self, tmp_path):
        payload = dict(BASE)
        payload["output"] = {"directory": str(tmp_path / "a"),
                             "snapshot_every": 2}
        payload["diagnostics"] = {"tightness": True, "bounds": True,
                                  "lewis": True}
        config = write_config(tmp_path, payload)

        assert main(["simulate", "--config", config, "--quiet"]) == 0
        names = set(tree_bytes(tmp_path / "a"))
        assert {"timeseries.csv", "invariants.csv", "snapshot_final.csv",
                "snapshot_00000000.csv", "tightness.csv", "count_bounds.csv",
                "lewis_means.csv", "lewis_fit.csv"} <= names

        assert main(["simulate", "--config", config, "--quiet",
                     "--out", str(tmp_path / "b")]) == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_timeseries_layout(self, tmp_path):
        config = write_config(tmp_path, dict(BASE))
        assert main(["simulate", "--config", config, "--quiet",
                     "--out", str(tmp_path / "out")]) == 0
        rows = read_rows(tmp_path / "out" / "timeseries.csv")
        assert rows[0][0] == "time"
        assert len(rows) == 1 + 6  # header + initial row + five steps
        assert float(rows[1][0]) == 0.0
        assert float(rows[-1][0]) == 0.5

    def test_missing_section(self, tmp_path, capsys):
        payload = {k: v for k, v in BASE.items() if k != "model"}
        config = write_config(tmp_path, payload)
        assert main(["simulate", "--config", config,
                     "--out", str(tmp_path / "out")]) == 2
        assert "missing the 'model' section" in capsys.readouterr().err

    def test_overflow_abort_keeps_partial_artifacts(self, tmp_path, capsys):
        payload = {
            "model": {"beta": 1.0, "n0": 8, "delta_a": 0.1, "num_nodes": 41},
            "stepper": {"dt": 0.1, "overflow_tol_factor": 1e-12},
            "t_final": 2.0,
            "initial": {"family": "compact-bump", "a_lo": 3.0, "a_hi": 3.8,
                        "weights": {"5": 1.0, "7": 1.0}},
        }
        config = write_config(tmp_path, payload)
        out = tmp_path / "out"
        assert main(["simulate", "--config", config, "--quiet",
                     "--out", str(out)]) == 3
        assert "aborted" in capsys.readouterr().err
        rows = read_rows(out / "timeseries.csv")
        assert 2 < len(rows) < 22  # stopped partway


class TestLadder:
    def test_rung_table(self, tmp_path):
        payload = {
            "model": {"beta": 1.0, "n0": 12, "delta_a": 0.1, "num_nodes": 121},
            "stepper": {"dt": 0.1},
            "t_final": 0.5,
            "initial": {"family": "compact-bump", "a_lo": 0.5, "a_hi": 2.0,
                        "weights": {"4": 1.0, "8": 0.5}},
            "ladder": {"rungs": [8, 10, 12]},
        }
        config = write_config(tmp_path, payload)
        out = tmp_path / "out"
        assert main(["ladder", "--config", config, "--quiet",
                     "--out", str(out)]) == 0
        rows = read_rows(out / "ladder.csv")
        assert rows[0][:3] == ["rung_low", "rung_high", "sup_diff"]
        assert [r[:2] for r in rows[1:]] == [["8", "10"], ["10", "12"]]
        sups = [float(r[2]) for r in rows[1:]]
        assert sups[1] < sups[0]


class TestSelfsim:
    def test_converged_tables(self, tmp_path):
        payload = {"selfsim": {"beta": 1.0,
                               "boundary_values": [1.0, 0.0, 0.0, 0.0]}}
        config = write_config(tmp_path, payload)
        out = tmp_path / "out"
        assert main(["selfsim", "--config", config, "--quiet",
                     "--out", str(out)]) == 0
        summary = {k: v for k, v in read_rows(out / "selfsim_summary.csv")[1:]}
        assert summary["converged"] == "True"
        assert abs(float(summary["coupling"]) - 0.5519357916336951) < 1e-11
        moments = read_rows(out / "selfsim_moments.csv")
        assert moments[0] == ["n", "phi"]
        assert len(moments) == 1 + 63  # classes 2 .. 64

    def test_degenerate_datum_aborts(self, tmp_path, capsys):
        payload = {"selfsim": {"beta": 1.0,
                               "boundary_values": [0.0, 0.0, 0.0, 1.0]}}
        config = write_config(tmp_path, payload)
        assert main(["selfsim", "--config", config, "--quiet",
                     "--out", str(tmp_path / "out")]) == 3
        assert "error" in capsys.readouterr().err


class TestStability:
    def payload(self, tmp_path):
        payload = dict(BASE)
        payload["stability"] = {"deltas": [0.01, 0.001], "t_final": 0.3}
        return payload

    def test_energy_tables(self, tmp_path):
        config = write_config(tmp_path, self.payload(tmp_path))
        out = tmp_path / "out"
        assert main(["stability", "--config", config, "--quiet",
                     "--out", str(out)]) == 0
        fits = read_rows(out / "stability_fit.csv")
        assert fits[0][:2] == ["delta", "rate"]
        assert len(fits) == 3
        # smaller perturbations carry quadratically smaller energy
        e_big = float(fits[1][3])
        e_small = float(fits[2][3])
        assert e_big / e_small == pytest.approx(100.0, rel=0.5)

    def test_seed_controls_noise(self, tmp_path):
        config = write_config(tmp_path, self.payload(tmp_path))
        outs = [tmp_path / name for name in ("s1", "s1_again", "s2")]
        for out, seed in zip(outs, ("1", "1", "2")):
            assert main(["stability", "--config", config, "--quiet",
                         "--out", str(out), "--seed", seed]) == 0
        read = lambda out: (out / "stability.csv").read_bytes()
        assert read(outs[0]) == read(outs[1])
        assert read(outs[0]) != read(outs[2])


class TestCheck:
    def test_config_mode(self, tmp_path, capsys):
        config = write_config(tmp_path, dict(BASE))
        assert main(["check", "--config", config]) == 0
        assert "config OK" in capsys.readouterr().out

    def test_snapshot_mode(self, tmp_path, capsys):
        config = write_config(tmp_path, dict(BASE))
        out = tmp_path / "out"
        assert main(["simulate", "--config", config, "--quiet",
                     "--out", str(out)]) == 0
        snap = out / "snapshot_final.csv"
        assert main(["check", "--snapshot", str(snap)]) == 0
        assert "snapshot OK" in capsys.readouterr().out

    def test_flag_exclusivity(self, tmp_path):
        config = write_config(tmp_path, dict(BASE))
        assert main(["check"]) == 2
        assert main(["check", "--config", config,
                     "--snapshot", "whatever.csv"]) == 2

    def test_malformed_snapshot(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("n,a,f\n2,0.0,1.0\n")
        assert main(["check", "--snapshot", str(bad)]) == 2

    def test_negative_density_snapshot(self, tmp_path):
        bad = tmp_path / "bad.csv"
        rows = ["n,a,f"]
        for n in (2, 3):
            for j in range(3):
                value = "-1.0" if (n, j) == (3, 1) else "1.0"
                rows.append(f"{n},{float(j):.1f},{value}")
        bad.write_text("\n".join(rows) + "\n")
        assert main(["check", "--snapshot", str(bad)]) == 2


class TestExitCodes:
    def test_missing_config_file_is_io_error(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "out")]) == 4

    def test_invalid_json_is_config_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert main(["simulate", "--config", str(bad),
                     "--out", str(tmp_path / "out")]) == 2
