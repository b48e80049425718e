import csv

import numpy as np
import pytest

from eegbem.harness import (COLUMNS, ConfigError, DenseSizeError, ExperimentConfig,
                            contrast_conductivities, main, run_accuracy_sweep, run_conditioning_sweep,
                            run_cr_sweep, write_gnuplot)

SMALL = """
# two small levels of the three-layer head
levels = 3, 4
conductivities = 1/3, 1/240, 1/3
cr_level = 3
cr_list = 1, 80
"""


def test_config_parsing():
    c = ExperimentConfig.from_text(SMALL)
    assert c.levels == (3, 4)
    assert np.isclose(c.conductivities[1], 1 / 240)
    assert c.cr_list == (1.0, 80.0)
    assert c.tol == 1e-8 and c.solver == "pcg"


@pytest.mark.parametrize("text", ["unknown = 3", "levels 3", "tol = abc", "levels = 2\nlevels = 3",
                                  "solver = gmres", "radii = 1, 2\nconductivities = 1"])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text)


def test_contrast_conductivities():
    c = ExperimentConfig()
    assert np.allclose(contrast_conductivities(c, 80), (1 / 3, 1 / 240, 1 / 3))


def test_accuracy_is_invariant_to_moment_scaling():
    base = ExperimentConfig.from_text("levels = 3\nlevel_kind = frequency")
    double = ExperimentConfig.from_text("levels = 3\ndipole_moment = 0, 0, 2")
    a, b = run_accuracy_sweep(base)[0], run_accuracy_sweep(double)[0]
    assert a.converged_unprec and a.converged_prec
    assert np.isclose(a.rel_error_prec, b.rel_error_prec, rtol=1e-6)


def test_cr_one_converges():
    rows = run_cr_sweep(ExperimentConfig.from_text(SMALL))
    assert rows[0].CR == 1.0 and rows[0].converged_unprec and rows[0].converged_prec
    for r in rows:
        # two Zhat products per preconditioned application, one for the right-hand side,
        # two per true-residual check (every 10 iterations and once at convergence)
        checks = r.iters_prec // 10 + (r.iters_prec % 10 != 0)
        assert r.mvp_prec == 2 * (r.iters_prec + checks) + 1


def test_dense_guard():
    c = ExperimentConfig.from_text("levels = 3\nmax_dense = 100")
    with pytest.raises(DenseSizeError):
        run_conditioning_sweep(c)


def test_single_layer_config_emits_rows(tmp_path):
    cfg = tmp_path / "one.cfg"
    cfg.write_text("radii = 1.0\nconductivities = 1.0\nsigma_outer = 0.5\nlevels = 1\n"
                   "level_kind = subdivision\ndipole_position = 0, 0, 0.2\n")
    assert main(["conditioning", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "conditioning.csv")))
    assert tuple(rows[0]) == COLUMNS["conditioning"]
    assert len(rows) == 2 and float(rows[1][1]) > 1


def test_csv_is_reproducible(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL)
    out = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["cr-sweep", "--config", str(cfg), "--out", str(d)]) == 0
        out.append((d / "cr-sweep.csv").read_bytes())
    assert out[0] == out[1]
    header = out[0].decode().splitlines()[0]
    assert header == ",".join(COLUMNS["cr-sweep"])
    assert main(["gnuplot", "--out", str(tmp_path / "run0")]) == 0
    assert (tmp_path / "run0" / "cr-sweep.gp").exists()
    assert write_gnuplot(tmp_path / "empty") == []


def test_oracle_check_cli(tmp_path):
    cfg = tmp_path / "o.cfg"
    cfg.write_text("levels = 1\nlevel_kind = subdivision\nradii = 1.0\nconductivities = 1.0\n")
    assert main(["oracle-check", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "oracle-check.csv")))
    names = {r["check"] for r in rows}
    assert {"dual_laplacian_congruence[0]", "primal_laplacian_gradient[0]", "N_ones[0]"} <= names
    assert all(r["passed"] == "1" for r in rows if "laplacian" in r["check"] or r["check"].startswith("N_ones"))


def test_cli_reports_guard(tmp_path, capsys):
    cfg = tmp_path / "g.cfg"
    cfg.write_text("levels = 3\n")
    assert main(["spectrum", "--config", str(cfg), "--out", str(tmp_path), "--max-dense", "10"]) == 2
    assert "max_dense" in capsys.readouterr().err


def test_cli_reports_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("levels = 3\nno_such_key = 1\n")
    assert main(["accuracy", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "no_such_key" in capsys.readouterr().err
    assert not (tmp_path / "accuracy.csv").exists()
