import json

import numpy as np
import pytest
from click.testing import CliRunner

from nschannel.cli import main
from nschannel.config import ConfigError, default_config, load_config


@pytest.fixture()
def runner():
    return CliRunner()


def small_config(tmp_path, **tweaks):
    cfg = default_config()
    cfg["geometry"].update(nx=12, ny=4)
    cfg["n_modes"] = 8
    cfg["time"]["intervals"] = 24
    cfg["perturbation"]["trials"] = 2
    cfg["corner"].update(grid_re=31, grid_im=11)
    cfg["output"]["figures"] = False
    for key, val in tweaks.items():
        section, _, name = key.partition(".")
        if name:
            cfg[section][name] = val
        else:
            cfg[section] = val
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p


def test_defaults_prints_valid_config(runner):
    res = runner.invoke(main, ["defaults"])
    assert res.exit_code == 0
    cfg = json.loads(res.output)
    assert cfg["n_modes"] == 24
    assert cfg["geometry"]["nx"] == 48


def test_config_loader_rejects_unknown_keys(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"not_a_key": 1}))
    with pytest.raises(ConfigError):
        load_config(p)


def test_mesh_command(tmp_path, runner):
    cfg = small_config(tmp_path)
    out = tmp_path / "run"
    res = runner.invoke(main, ["mesh", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "mesh_report.json").read_text())
    assert rep["passed"] is True
    assert (out / "mesh.json").exists() and (out / "mesh.vtk").exists()
    assert len(rep["corner_points"]) == 4


def test_mesh_refine_flag(tmp_path, runner):
    cfg = small_config(tmp_path)
    out0, out1 = tmp_path / "r0", tmp_path / "r1"
    assert runner.invoke(main, ["mesh", "--config", str(cfg), "--out", str(out0)]).exit_code == 0
    assert runner.invoke(main, ["mesh", "--config", str(cfg), "--out", str(out1),
                                "--refine", "1"]).exit_code == 0
    n0 = json.loads((out0 / "mesh_report.json").read_text())["n_triangles"]
    n1 = json.loads((out1 / "mesh_report.json").read_text())["n_triangles"]
    assert n1 == 4 * n0


def test_invalid_geometry_exits_2(tmp_path, runner):
    cfg = small_config(tmp_path, **{"geometry.nx": 0})
    res = runner.invoke(main, ["eig", "--config", str(cfg), "--out", str(tmp_path / "x")])
    assert res.exit_code == 2


def test_eig_command_contracts(tmp_path, runner):
    cfg = small_config(tmp_path)
    out = tmp_path / "eig"
    res = runner.invoke(main, ["eig", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "eig_report.json").read_text())
    assert rep["passed"] is True
    assert len(rep["lambdas"]) == 8
    assert rep["lambdas"][0] > 0
    assert (out / "basis.json").exists() and (out / "modes.csv").exists()


def test_eig_single_mode(tmp_path, runner):
    cfg = small_config(tmp_path, n_modes=1)
    out = tmp_path / "eig1"
    res = runner.invoke(main, ["eig", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "eig_report.json").read_text())
    assert len(rep["lambdas"]) == 1 and rep["lambdas"][0] > 0


def test_steady_command(tmp_path, runner):
    cfg = small_config(tmp_path)
    out = tmp_path / "steady"
    res = runner.invoke(main, ["steady", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "steady_report.json").read_text())
    assert rep["residual"] <= 1e-8
    assert np.isfinite(rep["stability_ratio"])
    header = (out / "steady_fields.csv").read_text().splitlines()[0]
    assert header == "x,y,u1,u2,p"


def test_stokes_command_energy_report(tmp_path, runner):
    cfg = small_config(tmp_path)
    out = tmp_path / "stokes"
    res = runner.invoke(main, ["stokes", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "stokes_report.json").read_text())
    assert rep["energy"]["modewise_ok"] and rep["energy"]["summed_ok"]
    assert rep["roundtrip_defect"] <= 1e-9
    assert (out / "trajectories.csv").exists()


def test_stokes_command_halved_dt(tmp_path, runner):
    cfg = small_config(tmp_path, **{"output.halve_dt": True})
    out = tmp_path / "stokes2"
    res = runner.invoke(main, ["stokes", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "stokes_report.json").read_text())
    assert rep["halved_dt_norm_change"] < 1e-8


def test_ns_command_manufactured(tmp_path, runner):
    cfg = small_config(tmp_path, **{"forcing.target_solution_norm": 2.0})
    out = tmp_path / "ns"
    res = runner.invoke(main, ["ns", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "ns_report.json").read_text())
    assert rep["final_error_X"] <= 1e-8
    assert rep["newton"]["converged"] is True
    hist = (out / "newton_history.csv").read_text().splitlines()
    assert hist[0] == "iteration,residual_Y"
    assert len(hist) >= 3


def test_ns_command_absurd_amplitude_graceful(tmp_path, runner):
    cfg = small_config(tmp_path, **{"forcing.target_solution_norm": 1e6,
                                    "newton.max_iters": 4})
    out = tmp_path / "ns_bad"
    res = runner.invoke(main, ["ns", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 1
    rep = json.loads((out / "ns_report.json").read_text())
    assert rep["passed"] is False
    assert rep["newton"]["converged"] is False
    assert rep["newton"]["failure"] != ""


def test_perturb_command(tmp_path, runner):
    cfg = small_config(tmp_path)
    out = tmp_path / "pert"
    res = runner.invoke(main, ["perturb", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "perturb_report.json").read_text())
    assert rep["all_converged"] is True
    assert rep["ratio_spread_across_scales"] <= 0.2
    assert len(rep["per_scale"]) == 2
    for s in rep["per_scale"]:
        assert s["failures"] == 0
    rows = (out / "perturbation_trials.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 2  # header + trials x scales


def test_corner_command(tmp_path, runner):
    cfg = small_config(tmp_path)
    out = tmp_path / "corner"
    res = runner.invoke(main, ["corner", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "corner_report.json").read_text())
    assert rep["root_report"]["winding_count"] == 1
    r0 = rep["root_report"]["roots"][0]
    assert abs(complex(r0["re"], r0["im"]) - (-1j)) <= 1e-10
    assert rep["inner_window_winding"] == 0
    assert rep["checks"]["outside_root_minus_2i"] is True
    assert (out / "determinant_grid.csv").exists()
    assert (out / "singular_expansion.json").exists()


def test_corner_window_through_root_reports_failure(tmp_path, runner):
    cfg = small_config(tmp_path, **{"corner.im_window": [-1.0, -0.5]})
    out = tmp_path / "corner_bad"
    res = runner.invoke(main, ["corner", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 1
    rep = json.loads((out / "corner_report.json").read_text())
    assert "hint" in rep


def test_seed_override_and_determinism(tmp_path, runner):
    cfg = small_config(tmp_path)
    outs = [tmp_path / f"d{i}" for i in range(3)]
    for i, o in enumerate(outs):
        seed = "7" if i < 2 else "8"
        res = runner.invoke(main, ["stokes", "--config", str(cfg), "--out", str(o),
                                   "--seed", seed])
        assert res.exit_code == 0, res.output
    a = (outs[0] / "stokes_report.json").read_bytes()
    b = (outs[1] / "stokes_report.json").read_bytes()
    c = (outs[2] / "stokes_report.json").read_bytes()
    assert a == b
    assert a != c
    assert ((outs[0] / "trajectories.csv").read_bytes()
            == (outs[1] / "trajectories.csv").read_bytes())


def test_figures_rendered_when_enabled(tmp_path, runner):
    cfg = small_config(tmp_path, **{"output.figures": True})
    out = tmp_path / "fig"
    res = runner.invoke(main, ["mesh", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0
    assert (out / "mesh.png").stat().st_size > 0


def test_steady_vtk_export(tmp_path, runner):
    cfg = small_config(tmp_path, **{"output.vtk": True})
    out = tmp_path / "steady_vtk"
    res = runner.invoke(main, ["steady", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    text = (out / "steady.vtk").read_text()
    assert "VECTORS velocity double" in text and "SCALARS pressure double 1" in text
