import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from maxgraph.cli import barrier_table, main

ALL_PROBES = [
    "residual",
    "first_variation",
    "second_variation",
    "volume_maximality",
    "uniqueness",
    "gradient_ellipticity",
    "ricci",
    "comparison",
]


def write_config(tmp_path, name="run.json", **overrides):
    cfg = {
        "signature": {"n": 2, "m": 1},
        "domain": {"kind": "polar_annulus", "bounds": [[1, 2]], "counts": [9, 32]},
        "boundary": {"preset": "catenoid_trace", "params": {"K": 1}},
        "solver": {"homotopy_steps_init": 5},
        "verify": {"probes": ALL_PROBES, "trials": 20, "seed": 7},
        "output": {
            "solution_csv": "out/solution.csv",
            "progress_jsonl": "out/progress.jsonl",
            "report_json": "out/report.json",
            "probes_json": "out/probes.json",
        },
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_solve_affine(tmp_path):
    A = [[0.3, -0.1], [0.2, 0.5]]
    cfg = write_config(
        tmp_path,
        signature={"n": 2, "m": 2},
        domain={"kind": "cartesian_box", "bounds": [[0, 1], [0, 1]], "counts": [9, 9]},
        boundary={"preset": "affine", "params": {"A": A}},
    )
    assert main(["solve", "--config", str(cfg)]) == 0
    header, data = read_csv(tmp_path / "out/solution.csv")
    assert header == ["x1", "x2", "u1", "u2"]
    assert np.abs(data[:, 2:] - data[:, :2] @ np.array(A)).max() < 1e-10
    progress = [json.loads(line) for line in (tmp_path / "out/progress.jsonl").read_text().splitlines()]
    assert [p["t"] for p in progress][-1] == 1.0
    assert set(progress[0]) == {"t", "residual_inf", "min_margin", "iters"}


def test_solve_catenoid_report(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["solve", "--config", str(cfg)]) == 0
    report = json.loads((tmp_path / "out/report.json").read_text())
    assert set(report) == {
        "volume", "residual_inf", "sigma_max_Du", "mu", "sum_gii_max", "ellipticity_bound",
        "interior_energy_max", "boundary_energy_max", "ricci_min_eig", "second_variation_max_rayleigh",
    }
    assert report["residual_inf"] <= 1e-10
    header, _ = read_csv(tmp_path / "out/solution.csv")
    assert header == ["x1", "x2", "u1", "r", "theta"]


def test_solve_acausal_exit_3(tmp_path, capsys):
    cfg = write_config(tmp_path, boundary={"preset": "affine", "params": {"A": [[1.1], [0.0]]}})
    assert main(["solve", "--config", str(cfg)]) == 3
    assert "mu0 = -0.1" in capsys.readouterr().err


def test_solve_nonconvergence_exit_4(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        signature={"n": 2, "m": 2},
        domain={"kind": "cartesian_box", "bounds": [[0, 1], [0, 1]], "counts": [9, 9]},
        boundary={"preset": "sinusoidal", "params": {"amplitude": 0.19, "frequency": 3.14}},
        solver={"max_newton_iters": 1, "step_halving_limit": 1, "newton_tol": 1e-14},
    )
    assert main(["solve", "--config", str(cfg)]) == 4
    assert "last good t" in capsys.readouterr().err


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: c.pop("signature"),
        lambda c: c["boundary"].update(preset="spiral"),
        lambda c: c["signature"].update(n=3),
        lambda c: c["solver"].update(newton_tolerance=1.0),
        lambda c: c["domain"].update(counts=[2, 32]),
        lambda c: c["verify"].update(probes=["telepathy"]),
    ],
)
def test_config_errors_exit_2(tmp_path, mutate):
    path = write_config(tmp_path)
    cfg = json.loads(path.read_text())
    mutate(cfg)
    path.write_text(json.dumps(cfg))
    assert main(["solve", "--config", str(path)]) == 2


def test_missing_or_malformed_config(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["verify", "--config", str(bad)]) == 2


def test_verify_full_suite(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["verify", "--config", str(cfg)]) == 0
    res = json.loads((tmp_path / "out/probes.json").read_text())
    assert res["passed"] and set(res["probes"]) == set(ALL_PROBES)


def test_verify_detects_corrupted_solution(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["solve", "--config", str(cfg)]) == 0
    header, data = read_csv(tmp_path / "out/solution.csv")
    r = data[:, header.index("r")]
    data[np.isclose(r, 1.5), header.index("u1")] += 0.01
    with open(tmp_path / "bad.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(data.tolist())
    cfg = json.loads(cfg.read_text())
    cfg["verify"]["solution_csv"] = "bad.csv"
    path = tmp_path / "bad_run.json"
    path.write_text(json.dumps(cfg))
    assert main(["verify", "--config", str(path)]) == 5
    res = json.loads((tmp_path / "out/probes.json").read_text())
    assert not res["probes"]["residual"]["passed"]


def test_verify_empty_block_warns(tmp_path, capsys):
    cfg = write_config(tmp_path, verify={})
    assert main(["verify", "--config", str(cfg)]) == 0
    assert "warning" in capsys.readouterr().err
    assert json.loads((tmp_path / "out/probes.json").read_text())["probes"] == {}


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    for d in (a, b):
        assert main(["verify", "--config", str(write_config(d))]) == 0
    for name in ("solution.csv", "progress.jsonl", "report.json", "probes.json"):
        assert (a / "out" / name).read_bytes() == (b / "out" / name).read_bytes()


def test_barrier_table_catenoid():
    rows = barrier_table(2, 1, 1.0, 0.0, 11)
    r = [row[0] for row in rows]
    assert r[0] == 0 and r[-1] == 10.0
    assert rows[1][0] == 1.0 and rows[1][1] == pytest.approx(0.8813736, abs=1e-7)
    assert np.all(np.isnan(rows[0][3:]))


def test_barrier_table_negative_lambda_excludes_r_max():
    rows = barrier_table(2, 2, 1.0, -1.0, 8)
    assert max(row[0] for row in rows) < np.sqrt(2)
    assert all(0 < row[2] < 1 for row in rows[1:])


def test_barrier_command(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["barrier", "--n", "2", "--m", "1", "--K", "1", "--Lambda", "0", "--samples", "11", "--output", str(out)]) == 0
    header, data = read_csv(out)
    assert header == ["r", "f", "f_prime", "c1", "c2", "c3"] and data.shape == (11, 6)
    assert main(["barrier", "--n", "2", "--m", "1", "--K", "0", "--Lambda", "0", "--samples", "11"]) == 2
    assert main(["barrier", "--n", "2", "--m", "1", "--K", "1", "--Lambda", "0.5", "--samples", "11"]) == 2
    assert main(["barrier", "--n", "2", "--m", "1", "--K", "1", "--Lambda", "-1", "--samples", "1"]) == 2
    assert main(["barrier", "--n", "2", "--m", "1", "--K", "1", "--Lambda", "-1", "--samples", "5", "--r-max", "3"]) == 2
    assert main(["barrier", "--n", "2"]) == 2


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "maxgraph", "barrier", "--n", "2", "--m", "1", "--K", "1", "--Lambda", "0", "--samples", "3"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "r,f,f_prime,c1,c2,c3"
