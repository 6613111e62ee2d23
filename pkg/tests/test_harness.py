import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from freelimit import laws
from freelimit.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    check_lemma31,
    check_phi_additivity,
    check_prop23,
    cli_main,
    load_config,
    run_experiment,
)
from freelimit.measure import GridSpec, Measure, load_measure, save_measure
from tests import oracles

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="module")
def clt_report():
    return run_experiment(load_config(CONFIGS / "free_clt.json"))


@pytest.fixture(scope="module")
def poisson_report():
    return run_experiment(load_config(CONFIGS / "free_poisson.json"))


def _write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# experiments


def test_free_clt_experiment(clt_report):
    assert clt_report.errors == {}
    free = clt_report.column("free_dist")
    assert np.all(np.diff(free) < 0)
    assert free[-1] <= 0.05
    assert np.all(np.diff(clt_report.column("classical_dist")) < 0)
    assert clt_report.column("classical_dist")[-1] <= 0.05
    # sigma_n: atoms at +-1/sqrt(n) of mass n/(2(n+1)) each
    np.testing.assert_allclose(clt_report.column("sigma_dist"), [0.5, 0.25, 0.125, 0.0625], rtol=1e-12)
    np.testing.assert_array_equal(clt_report.column("gamma_err"), 0.0)
    sig = clt_report.rows[-1].sigma_n
    assert sig.total_mass == pytest.approx(256 / 257, rel=1e-14)


def test_free_poisson_experiment(poisson_report):
    assert poisson_report.errors == {}
    for r in poisson_report.rows:
        assert r.sigma_n.atoms_x.tolist() == [1.0]
        assert r.sigma_n.atoms_w[0] == pytest.approx(0.5, abs=1e-12)
        assert r.sigma_dist <= 1e-12
        assert r.gamma_err <= 1e-12
    assert poisson_report.column("free_dist")[-1] <= 0.05
    assert poisson_report.column("classical_dist")[-1] <= 0.05


def test_diagnostics_shrink_along_rows(clt_report, poisson_report):
    for rep in (clt_report, poisson_report):
        for col in ("max_v", "lemma32_gap"):
            assert np.all(np.diff(rep.column(col)) < 0)
        np.testing.assert_array_equal(rep.column("lemma31_viol1"), 0.0)
        np.testing.assert_array_equal(rep.column("lemma31_viol2"), 0.0)
    assert np.all(np.diff(poisson_report.column("max_tail")) < 0)


def test_lemma32_gap_is_controlled_by_the_residual(clt_report, poisson_report):
    for rep in (clt_report, poisson_report):
        for y in rep.rows[0].profile:
            ratios = np.array([r.profile[y]["gap"] / r.profile[y]["im_f"] / r.profile[y]["max_v"]
                               for r in rep.rows])
            assert np.all(ratios <= 2 * (1 + y))
            assert ratios.max() <= 1.01 * ratios.min()


def test_point_mass_array_hits_its_limit(tmp_path):
    gamma = 0.4
    rows = [{"n": n, "c": gamma, "measures": [{"atoms": [{"x": 0.0, "w": 1.0}]}] * n} for n in (1, 2, 5)]
    cfg = ExperimentConfig(kind="custom_rows", params={"rows": rows}, rows=[1, 2, 5], gamma=gamma)
    rep = run_experiment(cfg)
    assert rep.errors == {}
    for col in ("free_dist", "classical_dist", "sigma_dist", "gamma_err", "max_a", "max_tail", "max_v",
                "lemma32_gap"):
        np.testing.assert_allclose(rep.column(col), 0.0, atol=1e-12)


def test_row_errors_are_isolated():
    # a grid far from the mass breaks the free convolution; the atomic classical side ignores the grid
    cfg = ExperimentConfig(kind="iid_scaled_bernoulli", rows=[4, 16], sigma=Measure.finite([0.0], [1.0]),
                           grid=GridSpec(5.0, 6.0, 256), reference={"free": {"law": "semicircle"},
                                                                    "classical": {"law": "gaussian"}})
    rep = run_experiment(cfg)
    assert set(rep.errors) == {4, 16}
    assert all(len(errs) == 1 and errs[0].startswith("free_convolve_many: MassDefect") for errs in rep.errors.values())
    assert np.all(np.isnan(rep.column("free_dist")))
    assert np.all(np.isfinite(rep.column("classical_dist")))
    assert np.all(np.isfinite(rep.column("sigma_dist")))
    assert np.all(np.isfinite(rep.column("max_v")))


def test_report_is_deterministic(tmp_path):
    paths = [tmp_path / f"{i}.csv" for i in range(2)]
    for p in paths:
        assert cli_main(["limit", "--config", str(CONFIGS / "free_poisson.json"), "--out-csv", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    threaded = tmp_path / "t.csv"
    assert cli_main(["limit", "--config", str(CONFIGS / "free_poisson.json"), "--out-csv", str(threaded),
                     "--threads", "2"]) == 0
    assert threaded.read_bytes() == paths[0].read_bytes()


def test_condition3_columns_ignore_the_grid():
    base = json.loads((CONFIGS / "free_clt.json").read_text())
    base["array"]["rows"] = [4, 16]
    out = []
    for n_points in (1024, 2048):
        base["grid"] = {"lo": -4.0, "hi": 4.0, "n_points": n_points}
        out.append(run_experiment(ExperimentConfig.from_dict(base, CONFIGS)))
    for col in ("sigma_dist", "gamma_err"):
        np.testing.assert_allclose(out[0].column(col), out[1].column(col), atol=1e-12, rtol=0)


# suites


def test_check_suites_pass_on_the_shipped_configs():
    for name in ("free_clt.json", "free_poisson.json"):
        cfg = load_config(CONFIGS / name)
        assert check_lemma31(cfg)["pass"]
        assert check_prop23(cfg)["pass"]
    res = check_phi_additivity(load_config(CONFIGS / "free_clt.json"))
    assert res["pass"] and res["max_error"] <= 1e-5


# command line


def test_cli_freeconv_of_point_masses(tmp_path):
    d0 = tmp_path / "delta0.json"
    save_measure(laws.point_mass(0.0), d0)
    out = tmp_path / "out.json"
    assert cli_main(["freeconv", str(d0), str(d0), "--out", str(out)]) == 0
    assert load_measure(out) == laws.point_mass(0.0)
    assert cli_main(["classical", str(d0), str(d0), "--shift", "1.5", "--out", str(out)]) == 0
    assert load_measure(out) == laws.point_mass(1.5)


def test_cli_lh_gives_the_semicircle(tmp_path):
    sigma = _write(tmp_path, "dirac0.json", {"atoms": [{"x": 0.0, "w": 1.0}]})
    out = tmp_path / "sc.json"
    assert cli_main(["lh", "--gamma", "0", "--sigma", sigma, "--law", "free", "--out", str(out)]) == 0
    d = load_measure(out).density
    assert np.interp(0.0, d.nodes, d.values) == pytest.approx(1 / np.pi, abs=5e-3)
    pois = _write(tmp_path, "half1.json", {"atoms": [{"x": 1.0, "w": 0.5}]})
    assert cli_main(["lh", "--gamma", "0.5", "--sigma", pois, "--law", "classical", "--out", str(out)]) == 0
    m = load_measure(out)
    assert m.atoms_w[:3] == pytest.approx([oracles.poisson_pmf(k) for k in range(3)], abs=1e-3)


def test_cli_transform(tmp_path, capsys):
    path = tmp_path / "bern.json"
    save_measure(laws.symmetric_bernoulli(), path)
    assert cli_main(["transform", "--measure", str(path), "--which", "phi", "--points", "3i, 1+4i"]) == 0
    vals = json.loads(capsys.readouterr().out)
    got = np.array([complex(*v["value"]) for v in vals])
    np.testing.assert_allclose(got, oracles.bernoulli_phi(np.array([3j, 1 + 4j])), rtol=1e-10)


def test_cli_limit_csv_columns(tmp_path, capsys):
    out = tmp_path / "clt.csv"
    assert cli_main(["limit", "--config", str(CONFIGS / "free_clt.json"), "--out-csv", str(out)]) == 0
    rows = _read_csv(out)
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [r[0] for r in rows[1:]] == ["4", "16", "64", "256"]
    free = [float(r[1]) for r in rows[1:]]
    assert all(b < a for a, b in zip(free, free[1:]))
    # without --out-csv the table goes to stdout
    assert cli_main(["limit", "--config", str(CONFIGS / "free_poisson.json")]) == 0
    text = capsys.readouterr().out
    assert list(csv.reader(io.StringIO(text)))[0] == list(CSV_COLUMNS)


def test_cli_check(tmp_path, capsys):
    assert cli_main(["check", "--suite", "lemma31", "--config", str(CONFIGS / "free_clt.json")]) == 0
    assert json.loads(capsys.readouterr().out)["pass"] is True
    cfg = json.loads((CONFIGS / "free_clt.json").read_text())
    cfg["phi_additivity"]["tol"] = 1e-15
    bad = _write(tmp_path, "strict.json", cfg)
    assert cli_main(["check", "--suite", "phi-additivity", "--config", bad]) == 1


def test_cli_exit_codes(tmp_path):
    good = tmp_path / "g.json"
    save_measure(laws.gaussian(), good)
    out = str(tmp_path / "o.json")
    assert cli_main([]) == 2
    assert cli_main(["freeconv", str(tmp_path / "missing.json"), "--out", out]) == 2
    assert cli_main(["transform", "--measure", str(good), "--which", "phi", "--points", "banana"]) == 2
    assert cli_main(["transform", "--measure", str(good), "--which", "cauchy", "--points", "1-2i"]) == 2
    assert cli_main(["limit", "--config", _write(tmp_path, "c.json", {"array": {"kind": "nope"}})]) == 2
    assert cli_main(["limit", "--config", _write(tmp_path, "m.json", {"array": {"kind": "iid_scaled_bernoulli"},
                                                                       "metric": "wasserstein"})]) == 2
    bad_grid = ["classical", str(good), str(good), "--grid", "5,6,256", "--out", out]
    assert cli_main(bad_grid) == 1
    assert cli_main(["classical", str(good), "--grid", "5,6", "--out", out]) == 2
