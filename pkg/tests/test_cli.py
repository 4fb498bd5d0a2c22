import json
import os

import numpy as np

from cellvar.cli import main, run, verify


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


HOMOG = """
seed = 42

[integrand]
name = "quadratic_coeff_1d"
[integrand.params]
a = [1.0, 4.0]

[geometry]
xi_grid = [[1.0]]
n_max = 2
resolution = 65
"""


def test_homogenize_run_final_value(tmp_path):
    cfg = write(tmp_path, "homog.toml", HOMOG)
    out = str(tmp_path / "out")
    assert run("homogenize", cfg, out_dir=out) == 0
    rows = np.genfromtxt(os.path.join(out, "homogenize.csv"), delimiter=",", names=True)
    assert abs(float(np.atleast_1d(rows["value"])[-1]) - 1.6) <= 1e-3
    summary = json.loads(open(os.path.join(out, "homogenize_summary.json")).read())
    est = summary["estimates"]["1.0"]["estimate"]
    assert abs(est - 1.6) <= 1e-3


def test_byte_identical_reruns(tmp_path):
    cfg = write(tmp_path, "homog.toml", HOMOG)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert run("homogenize", cfg, out_dir=out1) == 0
    assert run("homogenize", cfg, out_dir=out2) == 0
    b1 = open(os.path.join(out1, "homogenize.csv"), "rb").read()
    b2 = open(os.path.join(out2, "homogenize.csv"), "rb").read()
    assert b1 == b2
    j1 = open(os.path.join(out1, "homogenize_summary.json"), "rb").read()
    j2 = open(os.path.join(out2, "homogenize_summary.json"), "rb").read()
    assert j1 == j2


def test_missing_config_is_validation_error(tmp_path, capsys):
    assert run("cell", str(tmp_path / "absent.toml")) == 2
    assert "not found" in capsys.readouterr().err


def test_malformed_schedule_names_field(tmp_path, capsys):
    cfg = write(
        tmp_path,
        "bad.toml",
        """
seed = 7
[schedules]
rho = [0.01, 0.02]
[derivative]
points = [[0.5, 0.5]]
""",
    )
    assert run("derivative", cfg, out_dir=str(tmp_path / "o")) == 2
    err = capsys.readouterr().err
    assert "rho" in err and "decreasing" in err


def test_missing_seed_rejected(tmp_path, capsys):
    cfg = write(tmp_path, "noseed.toml", HOMOG.replace("seed = 42", ""))
    assert run("homogenize", cfg, out_dir=str(tmp_path / "o")) == 2
    assert "seed" in capsys.readouterr().err


def test_seed_override_allows_missing_config_seed(tmp_path):
    cfg = write(tmp_path, "noseed.toml", HOMOG.replace("seed = 42", ""))
    assert run("homogenize", cfg, out_dir=str(tmp_path / "o"), seed=11) == 0


def test_noncoercive_refused_with_explanation(tmp_path, capsys):
    cfg = write(
        tmp_path,
        "dw.toml",
        """
seed = 7
[integrand]
name = "double_well_1d"
[geometry]
xi_grid = [[0.5]]
n_max = 1
resolution = 33
""",
    )
    assert run("homogenize", cfg, out_dir=str(tmp_path / "o")) == 2
    assert "periodic" in capsys.readouterr().err


def test_operation_mismatch_rejected(tmp_path, capsys):
    cfg = write(tmp_path, "op.toml", 'operation = "cell"\nseed = 1\n')
    assert run("homogenize", cfg, out_dir=str(tmp_path / "o")) == 2
    assert "declares operation" in capsys.readouterr().err


def test_cell_runner(tmp_path):
    cfg = write(
        tmp_path,
        "cell.toml",
        """
seed = 3
[integrand]
name = "p_power"
[integrand.params]
p = 2.0
d = 1
m = 1
[geometry]
x = [0.0]
rho = 1.0
resolution = 17
xi = [[1.5]]
""",
    )
    out = str(tmp_path / "o")
    assert run("cell", cfg, out_dir=out) == 0
    summary = json.loads(open(os.path.join(out, "cell_summary.json")).read())
    assert abs(summary["normalized_value"] - 2.25) < 1e-8
    assert summary["converged"] is True


def test_envelope_and_derivative_runners(tmp_path):
    cfg = write(
        tmp_path,
        "env.toml",
        """
seed = 5
[set_function]
kind = "coordinate"
d = 2
[envelope]
fineness = 0.1
max_depth = 8
""",
    )
    out = str(tmp_path / "o")
    assert run("envelope", cfg, out_dir=out) == 0
    summary = json.loads(open(os.path.join(out, "envelope_summary.json")).read())
    assert abs(summary["value"] - 0.5) < 1e-3

    cfg2 = write(
        tmp_path,
        "der.toml",
        """
seed = 5
[set_function]
kind = "coordinate"
d = 2
[schedules]
rho = [0.05, 0.02]
[derivative]
points = [[0.3, 0.5], [0.7, 0.5]]
""",
    )
    assert run("derivative", cfg2, out_dir=out) == 0
    summary = json.loads(open(os.path.join(out, "derivative_summary.json")).read())
    assert abs(summary["lower"][0] - 0.3) < 0.02
    assert abs(summary["lower"][1] - 0.7) < 0.02


def test_density_and_relax_and_gap_runners(tmp_path):
    out = str(tmp_path / "o")
    cfg = write(
        tmp_path,
        "density.toml",
        """
seed = 5
[integrand]
name = "double_well_1d"
[geometry]
x = [0.0]
xi = [[0.0]]
resolution = 65
[schedules]
rho = [0.25, 0.125]
[solver]
multistart_count = 4
[density]
method = "constant_family"
""",
    )
    assert run("density", cfg, out_dir=out) == 0
    summary = json.loads(open(os.path.join(out, "density_summary.json")).read())
    assert summary["value"] <= 0.02

    cfg2 = write(
        tmp_path,
        "relax.toml",
        """
seed = 5
[integrand]
name = "p_power"
[integrand.params]
p = 2.0
d = 1
m = 1
[geometry]
x = [0.5]
rho = 1.0
resolution = 17
cell_resolution = 17
xi = [[1.0]]
[schedules]
rho = [0.25, 0.125]
""",
    )
    assert run("relax", cfg2, out_dir=out) == 0
    summary = json.loads(open(os.path.join(out, "relax_summary.json")).read())
    assert abs(summary["total"] - 1.0) < 1e-6
    assert abs(summary["relaxation_gap"]) < 1e-6

    assert run("gamma-gap", cfg2, out_dir=out) == 0
    summary = json.loads(open(os.path.join(out, "gamma_gap_summary.json")).read())
    assert summary["gap"] <= 1e-6


def test_no_temporary_files_left(tmp_path):
    cfg = write(tmp_path, "homog.toml", HOMOG)
    out = str(tmp_path / "o")
    assert run("homogenize", cfg, out_dir=out) == 0
    leftovers = [f for f in os.listdir(out) if f.endswith(".tmp")]
    assert leftovers == []


def test_verify_unknown_suite(capsys):
    assert verify("bogus") == 2
    assert "unknown suite" in capsys.readouterr().err


def test_verify_convex_passes(tmp_path, capsys):
    assert verify("convex", out_dir=str(tmp_path / "v")) == 0
    out = capsys.readouterr().out
    assert "[PASS] C1" in out
    assert (tmp_path / "v" / "convex_jensen.csv").exists()
    assert (tmp_path / "v" / "convex_summary.json").exists()


def test_main_entrypoint(tmp_path):
    cfg = write(tmp_path, "homog.toml", HOMOG)
    code = main(["homogenize", "--config", cfg, "--out", str(tmp_path / "o"), "--jobs", "1"])
    assert code == 0


def test_results_independent_of_worker_count(tmp_path):
    cfg = write(tmp_path, "homog.toml", HOMOG)
    out1, out2 = str(tmp_path / "j1"), str(tmp_path / "j4")
    assert run("homogenize", cfg, jobs=1, out_dir=out1) == 0
    assert run("homogenize", cfg, jobs=4, out_dir=out2) == 0
    b1 = open(os.path.join(out1, "homogenize.csv"), "rb").read()
    b2 = open(os.path.join(out2, "homogenize.csv"), "rb").read()
    assert b1 == b2


def test_dat_twin_output(tmp_path):
    cfg = write(tmp_path, "homog.toml", HOMOG)
    out = str(tmp_path / "o")
    assert run("homogenize", cfg, out_dir=out, dat=True) == 0
    dat = open(os.path.join(out, "homogenize.dat")).read().splitlines()
    assert dat[0].startswith("# xi rho t")
    assert len(dat) == sum(1 for _ in open(os.path.join(out, "homogenize.csv")))


def test_xi_box_grid(tmp_path):
    cfg = write(
        tmp_path,
        "box.toml",
        """
seed = 2
[integrand]
name = "quadratic_coeff_1d"
[integrand.params]
a = [1.0, 4.0]
[geometry]
xi_box = [-1.0, 1.0]
xi_points = 3
n_max = 1
resolution = 33
""",
    )
    out = str(tmp_path / "o")
    assert run("homogenize", cfg, out_dir=out) == 0
    summary = json.loads(open(os.path.join(out, "homogenize_summary.json")).read())
    assert len(summary["estimates"]) == 3


def test_homogenize_diagnostic_mode(tmp_path):
    cfg = write(
        tmp_path,
        "hdiag.toml",
        """
seed = 13
[integrand]
name = "quadratic_coeff_1d"
[integrand.params]
a = [1.0, 4.0]
[geometry]
xi = [[1.0]]
x_samples = [[0.0], [0.2]]
resolution = 81
[schedules]
rho = [1.0, 0.5]
t = [2.0, 4.0]
[homogenize]
mode = "hdiag"
""",
    )
    out = str(tmp_path / "o")
    assert run("homogenize", cfg, out_dir=out) == 0
    summary = json.loads(open(os.path.join(out, "homogenize_summary.json")).read())
    assert summary["numerically_homogenizable"] is True
    assert summary["max_gap"] <= 1e-3
