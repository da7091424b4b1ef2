import json

import numpy as np
import pytest

from trrb import cli
from trrb.affine import ThetaFunction

from conftest import make_theta_only_fom

TIME_COLUMNS = {"wall_time", "runtime_avg", "runtime_min", "runtime_max"}


def _fin_run(out, *extra):
    return cli.main(["run", "--problem", "fin", "--variant", "ncd", "--seeds", "3", "--tau-foc", "5e-4",
                     "--output", str(out), *extra])


def _strip_times(path):
    rows = cli.read_csv(path)
    return [{k: v for k, v in r.items() if k not in TIME_COLUMNS} for r in rows]


def _header(path):
    return [line for line in path.read_text().splitlines() if line.startswith("#")]


def test_splitmix64_reference_vectors():
    # first outputs of the reference generator seeded with 0
    assert cli.derive_seeds(0, 3) == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
    assert cli.derive_seeds(7, 5)[:2] == cli.derive_seeds(7, 2)


def test_initial_parameter_deterministic(building_fom):
    a = cli.initial_parameter(building_fom.space, 42)
    np.testing.assert_array_equal(a, cli.initial_parameter(building_fom.space, 42))
    assert np.all((a >= building_fom.space.lower) & (a <= building_fom.space.upper))


@pytest.fixture(scope="module")
def fin_runs(tmp_path_factory):
    first, second = tmp_path_factory.mktemp("first"), tmp_path_factory.mktemp("second")
    assert _fin_run(first) == cli.EXIT_OK
    assert _fin_run(second) == cli.EXIT_OK
    return first, second


def test_run_writes_csvs_and_summary(fin_runs):
    out, _ = fin_runs
    runs = sorted(out.glob("run_ncd-lagrangian_*.csv"))
    assert len(runs) == 3
    summary = cli.read_csv(out / "summary_ncd-lagrangian.csv")
    assert list(summary[0]) == list(cli.SUMMARY_COLUMNS)
    assert summary[0]["runs"] == "3"
    rows = cli.read_csv(runs[0])
    assert list(rows[0])[:len(cli.RUN_COLUMNS)] == list(cli.RUN_COLUMNS)
    assert rows[0]["branch"] == "init"
    assert any(line.startswith("# tau_foc=") for line in _header(runs[0]))


def test_rerun_identical_apart_from_times(fin_runs):
    first, second = fin_runs
    names = sorted(p.name for p in first.glob("*.csv"))
    assert names == sorted(p.name for p in second.glob("*.csv"))
    for name in names:
        assert _header(first / name) == _header(second / name)
        assert _strip_times(first / name) == _strip_times(second / name)


def test_seed_list_names_files(tmp_path):
    rc = cli.main(["run", "--problem", "fin", "--variant", "fom-bfgs", "--seed-list", "5", "--tau-foc", "1e-3",
                   "--output", str(tmp_path)])
    assert rc == cli.EXIT_OK
    assert (tmp_path / "run_fom-bfgs_5.csv").exists() and (tmp_path / "summary_fom-bfgs.csv").exists()


def test_missing_building_reference_is_io_error(tmp_path):
    assert cli.main(["run", "--problem", "building", "--seeds", "1", "--output", str(tmp_path)]) == cli.EXIT_IO


def test_mismatched_reference_is_io_error(tmp_path):
    ref = tmp_path / "reference.json"
    ref.write_text(json.dumps({"problem": "building", "resolution": "40x20", "mu": [0.0] * 10}))
    rc = cli.main(["run", "--problem", "building", "--resolution", "20", "10", "--seeds", "1",
                   "--output", str(tmp_path)])
    assert rc == cli.EXIT_IO


def test_unwritable_output_is_io_error():
    assert _fin_run("/proc/trrb-no-such-dir") == cli.EXIT_IO


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        cli.main(["validate", "--problem", ""])
    assert exc.value.code == cli.EXIT_USAGE
    assert cli.main(["run", "--problem", "fin", "--resolution", "4", "4"]) == cli.EXIT_USAGE
    assert cli.main(["run", "--problem", "fin", "--seeds", "0"]) == cli.EXIT_USAGE
    assert cli.main(["run", "--problem", "fin", "--resolution", "5"]) == cli.EXIT_USAGE


def test_validate_passes_and_detects_fault(capsys):
    assert cli.main(["validate"]) == cli.EXIT_OK
    assert "FAIL" not in capsys.readouterr().out
    assert cli.main(["validate", "--inject-fault"]) == cli.EXIT_VALIDATION
    assert "FAIL" in capsys.readouterr().out


def test_reference_idempotent(tmp_path):
    args = ["reference", "--problem", "building", "--output", str(tmp_path)]
    assert cli.main(args) == cli.EXIT_OK
    first = (tmp_path / "reference.json").read_text()
    assert cli.main(args) == cli.EXIT_OK
    assert (tmp_path / "reference.json").read_text() == first
    data = json.loads(first)
    assert data["foc"] <= cli.REFERENCE_TAU and data["second_order_accepted"]


def test_reference_of_quadratic_matches_closed_form(tmp_path, monkeypatch):
    center = np.array([0.25, -0.75])
    fom = make_theta_only_fom(ThetaFunction.quadratic([1.0, 4.0], center, 2.0))
    monkeypatch.setattr(cli, "build_problem", lambda *a, **k: (fom, None))
    assert cli.main(["reference", "--problem", "fin", "--output", str(tmp_path)]) == cli.EXIT_OK
    np.testing.assert_allclose(json.loads((tmp_path / "reference.json").read_text())["mu"], center, atol=1e-12)


def test_config_file_overrides(tmp_path):
    good = tmp_path / "tr.ini"
    good.write_text("[trust_region]\nbeta1 = 0.25\nmax_outer = 5\n")
    out = tmp_path / "out"
    assert _fin_run(out, "--config", str(good)) == cli.EXIT_OK
    header = _header(next(out.glob("run_*.csv")))
    assert "# beta1=0.25" in header and "# max_outer=5" in header
    bad = tmp_path / "bad.ini"
    bad.write_text("[trust_region]\nradius = 3\n")
    assert _fin_run(tmp_path / "x", "--config", str(bad)) == cli.EXIT_USAGE
    invalid = tmp_path / "invalid.ini"
    invalid.write_text("[trust_region]\nbeta1 = 2\n")
    assert _fin_run(tmp_path / "y", "--config", str(invalid)) == cli.EXIT_USAGE
    assert _fin_run(tmp_path / "z", "--config", str(tmp_path / "absent.ini")) == cli.EXIT_IO


def test_estimator_study_outputs(tmp_path):
    base = ["estimator-study", "--problem", "building", "--training-size", "8", "--validation-size", "4",
            "--output", str(tmp_path)]
    # the empty model's relative estimates are unbounded, so only an infinite bar skips every extension
    assert cli.main(base + ["--tau-j", "inf", "--tau-grad", "inf"]) == cli.EXIT_OK
    assert cli.read_csv(tmp_path / "estimator_study.csv") == []
    assert cli.main(base + ["--tau-j", "1e-3", "--tau-grad", "1e-3", "--max-extensions", "4"]) == cli.EXIT_OK
    rows = cli.read_csv(tmp_path / "estimator_study.csv")
    assert len(rows) == 4 and list(rows[0]) == list(cli.ESTIMATOR_COLUMNS)
    assert float(rows[-1]["err_J_ncd"]) < float(rows[-1]["err_J_standard"])
    slopes = {r["quantity"]: r["slope_vs_est_pr"] for r in cli.read_csv(tmp_path / "estimator_study_slopes.csv")}
    assert "err_J_ncd" in slopes
