import csv
import json

import numpy as np
import pytest
from scipy import stats

from randinv.cli import RESULT_COLUMNS, cmd_table, main, read_results, sweep_cells
from randinv.config import ConfigError, parse_config


def write_config(tmp_path, body, name="c.ini"):
    path = tmp_path / name
    path.write_text(body, encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def strip_wall(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rsplit(",", 1)[0] for line in fh]


DECONV = """
[problem]
problem = deconv1d
n = 100
[run]
methods = {methods}
N = {N}
seeds = {seeds}
out = {out}
"""


def deconv_config(tmp_path, methods="MAP", N="10", seeds="0, 1, 2", out="out"):
    return write_config(tmp_path, DECONV.format(methods=methods, N=N, seeds=seeds,
                                                out=tmp_path / out))


def test_map_only(tmp_path):
    assert main(["run", "--config", deconv_config(tmp_path)]) == 0
    rows = read_csv(tmp_path / "out" / "results.csv")
    assert [r["seed"] for r in rows] == ["0", "1", "2"]
    assert all(float(r["rel_err_vs_map_pct"]) == 0 for r in rows)
    assert all(r["N"] == "0" and r["method"] == "MAP" for r in rows)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["completed"] == 3
    assert list((tmp_path / "out" / "cache").glob("map-*.npy"))


def test_full_sweep_layout_and_determinism(tmp_path):
    methods = "RMAP, RMA, RMA+RMAP, RS, ENKF, ALL"
    cfg = deconv_config(tmp_path, methods, "10, 100, 1000, 10000", "0, 1, 2, 3, 4")
    assert main(["run", "--config", cfg, "--threads", "4"]) in (0, 2)
    path = tmp_path / "out" / "results.csv"
    rows = read_csv(path)
    assert len(rows) == 120
    with open(path, encoding="utf-8") as fh:
        assert fh.readline().strip() == ",".join(RESULT_COLUMNS)
    first = strip_wall(path)
    assert main(["run", "--config", cfg, "--threads", "1"]) in (0, 2)
    assert strip_wall(path) == first
    # floats are printed round-trippably
    err = rows[0]["rel_err_vs_map_pct"]
    assert repr(float(err)) == repr(float(format(float(err), ".17g")))


def test_cli_overrides(tmp_path):
    cfg = deconv_config(tmp_path, "RMA", "10")
    assert main(["run", "--config", cfg, "--seeds", "7,8", "--out", str(tmp_path / "o2")]) == 0
    rows = read_csv(tmp_path / "o2" / "results.csv")
    assert [r["seed"] for r in rows] == ["7", "8"]


def test_threads_env_fallback(tmp_path, monkeypatch):
    cfg = deconv_config(tmp_path, "RMA, RS", "10, 100")
    monkeypatch.setenv("RANDINV_THREADS", "3")
    assert main(["run", "--config", cfg]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["threads"] == 3
    monkeypatch.setenv("RANDINV_THREADS", "lots")
    assert main(["run", "--config", cfg]) == 1


def test_not_converged_exit_code(tmp_path):
    # at n = 1000 the sketched prior is singular for N < n and CG stalls
    cfg = write_config(tmp_path, f"[problem]\nproblem = deconv1d\n[run]\nmethods = ALL\n"
                                 f"N = 100\nseeds = 0\nout = {tmp_path / 'out'}\n")
    assert main(["run", "--config", cfg]) == 2
    assert "not_converged" in read_csv(tmp_path / "out" / "results.csv")[0]["flags"]


def test_budget_exceeded(tmp_path):
    body = DECONV.format(methods="RMAP", N="10, 100", seeds="0, 1", out=tmp_path / "out")
    cfg = write_config(tmp_path, body + "budget_secs = 1e-9\n")
    assert main(["run", "--config", cfg]) == 3
    rows = read_csv(tmp_path / "out" / "results.csv")
    assert len(rows) < 4


def test_config_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 1
    bad = write_config(tmp_path, "[run]\nmethods = SGD\n")
    assert main(["run", "--config", bad]) == 1
    assert "SGD" in capsys.readouterr().err
    assert main(["run", "--config", deconv_config(tmp_path), "--budget-secs", "0"]) == 1


def test_sweep_cells_order():
    cfg = parse_config("[run]\nmethods = MAP, RMA\nN = 100, 10\nseeds = 1, 0\n")
    cells = [(m.value, N, s) for m, N, s in sweep_cells(cfg)]
    assert cells == [("MAP", 0, 1), ("MAP", 0, 0), ("RMA", 10, 1), ("RMA", 10, 0),
                     ("RMA", 100, 1), ("RMA", 100, 0)]


# --- table ----------------------------------------------------------------


def result_rows(*rows):
    keys = RESULT_COLUMNS
    return [dict(zip(keys, ["deconv1d", m, str(N), str(s), str(e), "0", "1", "", "1.0"]))
            for m, N, s, e in rows]


def test_table_single_row():
    text = cmd_table(result_rows(("RMA", 10, 0, 3.14159)))
    lines = text.strip().splitlines()
    assert lines[0] == "| method | N=10 |"
    assert lines[2] == "| RMA | 3.14 |"


def test_table_median_and_missing():
    text = cmd_table(result_rows(("RMAP", 10, 0, 1.0), ("RMAP", 10, 1, 5.0), ("RMAP", 10, 2, 2.0),
                                 ("RS", 100, 0, 7.0)))
    lines = text.strip().splitlines()
    assert lines[2] == "| RMAP | 2.00 | - |"
    assert lines[3] == "| RS | - | 7.00 |"


def test_table_map_rows(tmp_path, capsys):
    main(["run", "--config", deconv_config(tmp_path)])
    assert main(["table", str(tmp_path / "out" / "results.csv")]) == 0
    assert capsys.readouterr().out.splitlines()[2] == "| MAP | 0.00 |"


def test_table_empty_csv(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text(",".join(RESULT_COLUMNS) + "\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_results(path)
    assert main(["table", str(path)]) == 1


def test_table_from_config_and_file_output(tmp_path):
    cfg = deconv_config(tmp_path)
    main(["run", "--config", cfg])
    out = tmp_path / "table.md"
    assert main(["table", "--config", cfg, "--out", str(out)]) == 0
    assert out.read_text().startswith("| method |")


# --- spectrum -------------------------------------------------------------


def test_spectrum_identity_rank(tmp_path):
    cfg = write_config(tmp_path, f"[problem]\nproblem = deconv1d\nn = 1000\nalpha = 1\n"
                                 f"[run]\nout = {tmp_path}\ndistribution = gaussian\n"
                                 f"[spectrum]\nprior = identity\nN = 100\n")
    assert main(["spectrum", "--config", cfg]) == 0
    rows = read_csv(tmp_path / "spectrum.csv")
    assert list(rows[0]) == ["index", "true_eig", "eig_N100"]
    assert len(rows) == 1000
    assert all(abs(float(r["eig_N100"])) <= 1e-10 for r in rows[100:])
    assert all(float(r["true_eig"]) == 1.0 for r in rows)


def test_spectrum_bilaplacian_sorted(tmp_path):
    cfg = write_config(tmp_path, f"[problem]\nproblem = advdiff\ngrid = 32\n[run]\nout = {tmp_path}\n"
                                 f"[spectrum]\nprior = bilaplacian\nN = 100, 1000\n")
    assert main(["spectrum", "--config", cfg]) == 0
    rows = read_csv(tmp_path / "spectrum.csv")
    assert list(rows[0]) == ["index", "true_eig", "eig_N100", "eig_N1000"]
    true = np.array([float(r["true_eig"]) for r in rows])
    assert np.all(np.diff(true) <= 0)


def test_spectrum_deterministic_basis(tmp_path):
    cfg = write_config(tmp_path, f"[problem]\nproblem = advdiff\ngrid = 8\n"
                                 f"[run]\nout = {tmp_path}\ndistribution = deterministic_basis\n"
                                 f"[spectrum]\nprior = bilaplacian\nN = 64\n")
    assert main(["spectrum", "--config", cfg]) == 0
    rows = read_csv(tmp_path / "spectrum.csv")
    a = np.array([float(r["true_eig"]) for r in rows])
    b = np.array([float(r["eig_N64"]) for r in rows])
    np.testing.assert_allclose(b, a, rtol=1e-10)


def test_spectrum_too_large(tmp_path):
    cfg = write_config(tmp_path, f"[problem]\nproblem = xray\ngrid = 65\n[run]\nout = {tmp_path}\n"
                                 f"[spectrum]\nprior = identity\n")
    assert main(["spectrum", "--config", cfg]) == 1


# --- bounds ---------------------------------------------------------------


def run_bounds(tmp_path, body):
    cfg = write_config(tmp_path, f"[run]\nout = {tmp_path}\ndistribution = gaussian\n[bounds]\n{body}")
    code = main(["bounds", "--config", cfg])
    return code, read_csv(tmp_path / "bounds.csv") if code in (0, 2) else None


def test_bounds_mean_scalar(tmp_path):
    code, rows = run_bounds(tmp_path, "id = mean\nbeta = 0.5\nN = 16\nR = 2000\n")
    assert code == 0
    assert float(rows[0]["exceed_freq"]) == pytest.approx(2 * stats.norm.cdf(-2), abs=0.02)
    assert rows[0]["pass"] == "true"


def test_bounds_huge_beta(tmp_path):
    code, rows = run_bounds(tmp_path, "id = mean\nbeta = 100\nN = 1, 10, 100\nR = 100\n")
    assert code == 0
    assert all(float(r["exceed_freq"]) == 0 for r in rows)


def test_bounds_perturbation(tmp_path):
    code, rows = run_bounds(tmp_path, "id = perturb\nN = 10000\nR = 20\nn = 20\nk = 30\n")
    assert code == 0
    assert all(r["pass"] == "true" for r in rows)


def test_bounds_failure_exit_code(tmp_path):
    # frequencies that rise with N fail the decay property
    code, rows = run_bounds(tmp_path, "id = outer\nbeta = 0.3\nN = 1000, 10\nR = 100\n")
    assert code == 2
    assert rows[0]["pass"] == "false"


def test_bounds_other_ids(tmp_path):
    assert run_bounds(tmp_path, "id = triple\nR = 100000\nN = 10, 100, 1000\n")[0] == 0
    assert run_bounds(tmp_path, "id = outer\nmoment = precision\nbeta = 0.5\n"
                                "N = 100, 1000\nR = 100\ndim = 3\n")[0] == 0


def test_bounds_unknown_id(tmp_path):
    assert run_bounds(tmp_path, "id = chernoff\n")[0] == 1
