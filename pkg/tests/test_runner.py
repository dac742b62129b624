import csv
import json

import pytest

from shrinkball.errors import ConfigError
from shrinkball.runner.cli import main
from shrinkball.runner.config import ExperimentConfig, dump_config, parse_config
from shrinkball.runner.run import PLOT_FILES, emit_plot_data, run


def cfg(text, tmp_path, **over):
    return parse_config(text, {"out_dir": str(tmp_path), **over})


SMOKE = """
experiment = example1   # sign law
model = bm1
observable = exp_minus_one
n_grid = 100
paths = 10
"""


def test_parse_types_and_comments(tmp_path):
    c = cfg(SMOKE + "times = 0.25, 0.5\nreference_paths = 1e3\ncheck_identity = no\n", tmp_path)
    assert c.n_grid == [100] and c.paths == 10 and c.times == [0.25, 0.5]
    assert c.reference_paths == 1000 and c.check_identity is False
    assert parse_config(dump_config(c)) == c


@pytest.mark.parametrize("text,field", [
    ("experiment = example1\nmodel = nosuch\n", "model"),
    ("experiment = example1\nobservable = nosuch\n", "observable"),
    ("experiment = nosuch\n", "experiment"),
    ("model = bm1\n", "experiment"),
    ("experiment = example1\nn_grid = 1000, 100\n", "n_grid"),
    ("experiment = example1\npaths = many\n", "paths"),
    ("experiment = example1\npaths = 2.5e0\n", "paths"),
    ("experiment = example1\nbogus = 1\n", "bogus"),
    ("experiment = example1\nmethod = euler\n", "method"),
    ("experiment = example1\nallow_zero = true\n", "allow_zero"),
    ("experiment = fdd_grid\ntimes = 0, 0.5\n", "times"),
    ("experiment = bias_study\nsteps = 0.001\n", "steps"),
    ("experiment = martingale_horizon\n", "horizons"),
    ("experiment = example1\npaths = 0\n", "paths"),
    ("experiment = example1\npaths = 3\npaths = 4\n", "paths"),
])
def test_config_errors_name_field(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field


def test_allow_zero_for_non_tightness():
    c = parse_config("experiment = non_tightness\ntimes = 0, 0.01\nallow_zero = true\n")
    assert c.times[0] == 0.0


def test_example1_smoke(tmp_path):
    m = run(cfg(SMOKE, tmp_path))
    out = tmp_path / "example1"
    with open(out / "paths.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    assert list(rows[0])[:5] == ["n", "h", "method", "seed", "path_index"]
    assert [int(r["path_index"]) for r in rows] == list(range(10))
    assert {r["n"] for r in rows} == {"100"}
    on_disk = json.loads((out / "manifest.json").read_text())
    assert on_disk["config"]["paths"] == 10 and on_disk["master_seed"] == 0
    assert set(on_disk["outputs"]) == {"paths", "report"}
    reports = json.loads((out / "report.json").read_text())
    for r in reports:
        assert {"n", "h", "method", "seed"} <= set(r["metadata"])
    assert m["all_passed"] in (True, False)


SMALL = {
    "example1": "n_grid = 100\npaths = 5000\n",
    "fdd_grid": "n_grid = 100, 1000\npaths = 3000\ntimes = 0.25, 1.0\n",
    "sphere_uniformity": "model = rotbm2\nobservable = identity\nn_grid = 100\npaths = 2500\n",
    "non_tightness": "n_grid = 100\npaths = 3000\ntimes = 0, 0.01\nallow_zero = true\n"
                     "control_paths = 300\ncontrol_step = 1e-5\n",
    "remainder_ucp": "n_grid = 100, 1000\npaths = 2500\n",
    "bias_study": "steps = 0.004, 0.001\npaths = 2500\n",
    "martingale_horizon": "n_grid = 1, 100\npaths = 2500\nhorizons = 0.5, 2\n",
    "exit_time_law": "n_grid = 100\npaths = 2500\nreference_paths = 300\nreference_step = 1e-3\n",
}


def _outputs(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.name != "manifest.json"}


@pytest.mark.slow
@pytest.mark.parametrize("experiment", sorted(SMALL))
def test_byte_identical_across_workers(experiment, tmp_path):
    text = f"experiment = {experiment}\nmaster_seed = 11\n" + SMALL[experiment]
    seen = []
    for w in (1, 2, 8):
        c = cfg(text, tmp_path / f"w{w}")
        run(c, workers=w)
        seen.append(_outputs(tmp_path / f"w{w}" / experiment))
    assert seen[0] and seen[0] == seen[1] == seen[2]
    c = cfg(text, tmp_path / "w1")
    run(c, workers=1)
    assert _outputs(tmp_path / "w1" / experiment) == seen[0]


def test_plot_data_empty(tmp_path):
    files = emit_plot_data([], tmp_path)
    for f in files:
        lines = f.read_text().splitlines()
        assert lines == [",".join(PLOT_FILES[f.name])]


def test_plot_data_bias_rows_and_idempotent(tmp_path):
    text = "experiment = bias_study\nsteps = 0.004, 0.001, 0.00025\npaths = 300\n"
    m = run(cfg(text, tmp_path))
    first = [p.read_bytes() for p in emit_plot_data(m["path"])]
    second = [p.read_bytes() for p in emit_plot_data(m)]
    assert first == second
    with open(tmp_path / "bias_study" / "bias_vs_h.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted(float(r["h"]) for r in rows) == [0.00025, 0.001, 0.004]


def test_plot_data_missing_outputs(tmp_path):
    m = run(cfg(SMOKE, tmp_path))
    (tmp_path / "example1" / "report.json").unlink()
    with pytest.raises(FileNotFoundError):
        emit_plot_data(m)


def test_plot_data_ks_rows(tmp_path):
    text = "experiment = fdd_grid\nn_grid = 100, 1000\npaths = 200\ntimes = 0.5\n"
    m = run(cfg(text, tmp_path))
    emit_plot_data(m)
    with open(tmp_path / "fdd_grid" / "ks_vs_n.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["n"] for r in rows if r["test_name"] == "ks_fdd"} == {"100", "1000"}


def test_cli_catalog(capsys):
    assert main(["catalog"]) == 0
    out = capsys.readouterr().out
    assert "bm1" in out and "exp_minus_one" in out


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text("experiment = remainder_ucp\nn_grid = 100\npaths = 50\n")
    assert main(["run", str(good), "--out-dir", str(tmp_path), "--seed", "5"]) == 0
    man = json.loads((tmp_path / "remainder_ucp" / "manifest.json").read_text())
    assert man["master_seed"] == 5
    bad = tmp_path / "bad.cfg"
    bad.write_text("experiment = example1\nmodel = nope\n")
    assert main(["run", str(bad)]) == 2
    assert "model" in capsys.readouterr().err
    failing = tmp_path / "fail.cfg"
    failing.write_text("experiment = example1\nn_grid = 100\npaths = 20\nsign_tol = 0\n")
    assert main(["run", str(failing), "--out-dir", str(tmp_path)]) == 1


def test_cli_timeout_exit_code(tmp_path, capsys):
    c = tmp_path / "slow.cfg"
    c.write_text("experiment = example1\nn_grid = 1\npaths = 4\n")
    from shrinkball.runner import experiments
    orig = experiments.Setup.simulate

    def stuck(self, n, ctx, retain=False):
        from shrinkball.errors import ExitTimeoutError
        raise ExitTimeoutError("budget exhausted", path_index=3, n=n)
    experiments.Setup.simulate = stuck
    try:
        assert main(["run", str(c), "--out-dir", str(tmp_path)]) == 3
    finally:
        experiments.Setup.simulate = orig
    assert "path_index=3" in capsys.readouterr().err


def test_defaults_match_declared_thresholds():
    c = ExperimentConfig("example1")
    assert (c.ks_p, c.chi2_p, c.exceed_min, c.remainder_max) == (0.01, 0.01, 0.95, 0.05)
