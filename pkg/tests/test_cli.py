import subprocess
import sys

import numpy as np
import pytest
from scipy import optimize

from conftest import FIGURE_FIXTURES, grid_field
from tohm.bumphunt import BumpModel, Region, save_events, simulate_events
from tohm.cli import main
from tohm.lattice import save_field
from tohm.rft import CHIBAR01, GAUSSIAN, LKCSolution, expected_ec, write_lkc_record

SMALL_GRID = """
[run]
seed = 5
threads = 1
[lattice]
axes = 0:19:20; 0:19:20
[kernel]
length_scale = 3
[calibrate]
family = chibar01
transform = chibar
thresholds = 1, 4
n_reps = 70
L0 = 1
[validate]
grid = 2:12:6
n_calib = 70
n_tail = 300
"""

SMALL_BUMP = """
[run]
seed = 4
[calibrate]
thresholds = 1, 8
n_reps = 40
[bumphunt]
region = disc
center = 0, 0
radius = 5
step = 0.5
nu = 0.5
n_events = 10000
eta = {eta}
theta = 1, -2
"""


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def grid_cfg(tmp_path):
    p = tmp_path / "grid.ini"
    p.write_text(SMALL_GRID)
    return p


def _record(tmp_path, family, lkcs, L0=1.0):
    sol = LKCSolution(family, L0, np.arange(1.0, len(lkcs) + 1), np.array(lkcs, float), np.zeros((len(lkcs),) * 2))
    p = tmp_path / "lkc.tsv"
    write_lkc_record(sol, p)
    return p


def test_ec_figure_centre(tmp_path, capsys):
    binary, expected = FIGURE_FIXTURES[1]
    save_field(grid_field(binary * 3.0), tmp_path / "f.txt")
    code, out, _ = run(["ec", tmp_path / "f.txt", 1.5], capsys)
    assert code == 0 and f"EC = {expected}" in out
    assert "|C^0| = " in out and "|C^2| = " in out


def test_ec_empty_set(tmp_path, capsys):
    save_field(grid_field(np.zeros((3, 3))), tmp_path / "f.txt")
    code, out, _ = run(["ec", tmp_path / "f.txt", 1.0], capsys)
    assert code == 0 and "EC = 0 (empty excursion set)" in out


def test_ec_missing_and_malformed_file(tmp_path, capsys):
    assert run(["ec", tmp_path / "nope.txt", 0], capsys)[0] == 2
    (tmp_path / "bad.txt").write_text("# tohm-field v1 dims=1\n# axis 1 0 1\n0\n")
    code, _, err = run(["ec", tmp_path / "bad.txt", 0], capsys)
    assert code == 2 and "error" in err


def test_pvalue_table_row(tmp_path, capsys):
    lkcs = [-244.053, 644.244]
    c = optimize.brentq(lambda c: np.log(expected_ec(CHIBAR01, 1.0, lkcs, c)) - np.log(1.092e-26), 60, 200)
    code, out, _ = run(["pvalue", _record(tmp_path, CHIBAR01, lkcs), repr(c)], capsys)
    assert code == 0
    assert "p-value = 1.092e-26" in out and "10.629σ" in out


def test_pvalue_normal_tail(tmp_path, capsys):
    code, out, _ = run(["pvalue", _record(tmp_path, GAUSSIAN, [0.0, 0.0]), 3], capsys)
    assert code == 0 and "p-value = 0.00135" in out and "3.000σ" in out


def test_pvalue_errors(tmp_path, capsys):
    rec = _record(tmp_path, CHIBAR01, [1.0, 2.0])
    assert run(["pvalue", rec, -1], capsys)[0] == 2
    bad = tmp_path / "bad.tsv"
    bad.write_text("not a record\n")
    assert run(["pvalue", bad, 3], capsys)[0] == 2


def test_calibrate_then_pvalue_matches_module(grid_cfg, tmp_path, capsys):
    from tohm.config import RunConfig
    from tohm.rft import global_pvalue
    from tohm.simulate import calibrate_lkc

    rec = tmp_path / "lkc.tsv"
    code, out, _ = run(["calibrate", "--config", grid_cfg, "--output", rec], capsys)
    assert code == 0 and "condition number" in out and "L*_2" in out
    cfg = RunConfig.load(grid_cfg)
    lat = cfg.lattice()
    sol, _ = calibrate_lkc(lat, cfg.kernel(2), "chibar", CHIBAR01, 1.0, [1.0, 4.0], 70, 5)
    code, out, _ = run(["pvalue", rec, 9], capsys)
    assert f"p-value = {global_pvalue(9, sol).pvalue:.4g}" in out


def test_calibrate_duplicate_thresholds(tmp_path, capsys):
    p = tmp_path / "dup.ini"
    p.write_text(SMALL_GRID.replace("thresholds = 1, 4", "thresholds = 2, 2"))
    assert run(["calibrate", "--config", p, "--output", tmp_path / "x"], capsys)[0] == 2


def test_calibrate_singular_system_exits_one(tmp_path, capsys):
    p = tmp_path / "sing.ini"
    p.write_text(SMALL_GRID.replace("thresholds = 1, 4", "thresholds = 1, 1.000000000000001"))
    code, _, err = run(["calibrate", "--config", p, "--output", tmp_path / "x"], capsys)
    assert code == 1 and "condition" in err


def test_missing_config(tmp_path, capsys):
    assert run(["calibrate"], capsys)[0] == 2
    assert run(["validate", "--config", tmp_path / "nope.ini"], capsys)[0] == 2


def test_validate_output(grid_cfg, tmp_path, capsys):
    out_path = tmp_path / "v.tsv"
    assert run(["validate", "--config", grid_cfg, "--output", out_path], capsys)[0] == 0
    lines = out_path.read_text().splitlines()
    assert lines[0] == "c\tempirical_tail\tempirical_se\tapprox_pvalue\tapprox_low\tapprox_high"
    approx = [float(line.split("\t")[3]) for line in lines[1:]]
    assert len(approx) == 6 and all(a > b for a, b in zip(approx, approx[1:]))


def test_simulate_field_then_ec(grid_cfg, tmp_path, capsys):
    f = tmp_path / "f.txt"
    assert run(["simulate-field", "--config", grid_cfg, "--output", f, "--transform", "chibar"], capsys)[0] == 0
    code, out, _ = run(["ec", f, 1.0], capsys)
    assert code == 0 and "EC = " in out


def test_bumphunt_signal_and_null(tmp_path, capsys):
    p = tmp_path / "b.ini"
    p.write_text(SMALL_BUMP.format(eta=0.05))
    code, out, _ = run(["bumphunt", "--config", p], capsys)
    assert code == 0
    sigma = float(out.split("significance = ")[1].split("σ")[0])
    x, y = (float(v) for v in out.split("argmax theta = (")[1].split(")")[0].split(","))
    assert sigma >= 5 and np.hypot(x - 1, y + 2) <= 1.0
    p.write_text(SMALL_BUMP.format(eta=0.0))
    code, out, _ = run(["bumphunt", "--config", p], capsys)
    assert code == 0 and "p-value" in out


def test_bumphunt_event_file(tmp_path, capsys):
    p = tmp_path / "b.ini"
    p.write_text(SMALL_BUMP.format(eta=0.0))
    ev = simulate_events(BumpModel(Region.disc((0, 0), 5), 0.5, 0.0), 2000, 1)
    save_events(ev, tmp_path / "ev.txt")
    assert run(["bumphunt", "--config", p, "--events", tmp_path / "ev.txt"], capsys)[0] == 0
    (tmp_path / "bad.txt").write_text("# tohm-events v1\n1 2 3\n")
    assert run(["bumphunt", "--config", p, "--events", tmp_path / "bad.txt"], capsys)[0] == 2


@pytest.mark.parametrize("threads", [1, 3])
def test_outputs_identical_across_runs_and_threads(grid_cfg, tmp_path, capsys, threads):
    ref = tmp_path / "ref.tsv"
    run(["calibrate", "--config", grid_cfg, "--output", ref, "--threads", 1], capsys)
    again = tmp_path / f"again{threads}.tsv"
    run(["calibrate", "--config", grid_cfg, "--output", again, "--threads", threads], capsys)
    assert ref.read_bytes() == again.read_bytes()
    other = tmp_path / "other.tsv"
    run(["calibrate", "--config", grid_cfg, "--output", other, "--seed", 6], capsys)
    assert other.read_bytes() != ref.read_bytes()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tohm", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "tohm" in res.stdout
