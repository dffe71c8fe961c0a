"""Command-line front end: reproducible experiment runs with machine-readable output.

Each command reads one JSON config (defaults embedded, printable via
``nschannel defaults``), writes a self-contained run directory containing a
copy of the config, a JSON report, CSV tables, figures, and optional VTK.
Exit codes: 0 when the report contains no failed assertion, 1 on numerical
failure, 2 on config errors.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import fem, figures, reports, stokes
from . import evolution as ev
from . import navier_stokes as nsm
from .config import ConfigError, default_config, load_config
from .corner import (ContourError, count_roots, find_root, locate_roots,
                     fit_singular_expansion, reduced_characteristic,
                     pencil_matrix, sample_corner_field)
from .mesh import (MeshTaggingError, build_channel_mesh, refine,
                   save_mesh_json, save_mesh_vtk)


def _load(config_path, seed, refine_k):
    overrides = {}
    if seed is not None:
        overrides["seed"] = int(seed)
    try:
        cfg = load_config(config_path, overrides)
    except (ConfigError, OSError) as exc:
        raise click.UsageError(str(exc))
    cfg["_refine"] = int(refine_k or 0)
    return cfg


def _outdir(out, command):
    path = out or os.path.join("runs", command)
    os.makedirs(path, exist_ok=True)
    return path


def _dump_config(cfg, outdir):
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    reports.write_json(os.path.join(outdir, "config.json"), clean)


def _build_mesh(cfg):
    g = cfg["geometry"]
    try:
        m = build_channel_mesh(g["length"], g["height"], int(g["nx"]), int(g["ny"]),
                               gamma_spec=dict(cfg["boundary"]), grading=g["grading"])
        for _ in range(cfg.get("_refine", 0)):
            m = refine(m)
    except (MeshTaggingError, ValueError) as exc:
        raise click.UsageError(str(exc))
    return m


def _build_basis(cfg, mesh):
    spaces = fem.assemble(mesh)
    basis = stokes.compute_eigenbasis(spaces, int(cfg["n_modes"]))
    return spaces, basis


def _build_grid(cfg):
    t = cfg["time"]
    return ev.make_time_grid(t["t_end"], int(t["intervals"]), int(t["gauss_points"]))


def _seeded_mode_forcing(cfg, basis, grid, rng):
    """Smooth deterministic forcing in mode coordinates: per-mode trig
    trajectories with 1/lambda_k decay, plus a random initial state."""
    amp = cfg["forcing"]["amplitude"]
    K = basis.n_modes
    c1 = rng.standard_normal(K)
    c2 = rng.standard_normal(K)
    ph = rng.uniform(0, 2 * np.pi, K)
    t = grid.times[None, :, :]
    scale = (amp / basis.lambdas)[:, None, None]
    mu = scale * (c1[:, None, None] * np.sin(t + ph[:, None, None])
                  + c2[:, None, None] * np.cos(2.0 * t))
    a = amp * rng.standard_normal(K) / basis.lambdas
    return ev.DataPair(basis=basis, grid=grid, mu=mu, a=a)


def _finish(outdir, name, payload, passed):
    payload = dict(payload)
    payload["passed"] = bool(passed)
    reports.write_json(os.path.join(outdir, name), payload)
    if not passed:
        sys.exit(1)


@click.group()
def main():
    """Spectral Stokes/Navier-Stokes toolkit for mixed-boundary channels."""


_common = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="JSON config file; defaults used when omitted."),
    click.option("--out", type=click.Path(), default=None, help="Output directory."),
    click.option("--seed", type=int, default=None, help="Override config seed."),
    click.option("--refine", "refine_k", type=int, default=0,
                 help="Uniformly refine the mesh K times."),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@main.command()
@click.option("--out", type=click.Path(), default=None)
def defaults(out):
    """Print the default configuration as JSON."""
    cfg = default_config()
    text = json.dumps(reports.sanitize(cfg), sort_keys=True, indent=2)
    if out:
        with open(out, "w") as f:
            f.write(text + "\n")
    click.echo(text)


@main.command(name="mesh")
@common_options
def cmd_mesh(config_path, out, seed, refine_k):
    """Generate the tagged channel mesh and export it."""
    cfg = _load(config_path, seed, refine_k)
    outdir = _outdir(out, "mesh")
    _dump_config(cfg, outdir)
    m = _build_mesh(cfg)
    save_mesh_json(m, os.path.join(outdir, "mesh.json"))
    save_mesh_vtk(m, os.path.join(outdir, "mesh.vtk"))
    if cfg["output"]["figures"]:
        figures.mesh_figure(m, os.path.join(outdir, "mesh.png"))
    areas = m.triangle_areas()
    checks = {
        "all_areas_positive": bool(np.all(areas > 0)),
        "area_total_matches": bool(abs(areas.sum() - m.length * m.height)
                                   <= 1e-12 * m.length * m.height),
        "dirichlet_nonempty": bool(np.any(m.boundary_tags == "dirichlet")),
    }
    payload = {
        "command": "mesh",
        "n_vertices": m.n_vertices,
        "n_triangles": m.n_triangles,
        "n_boundary_edges": int(m.boundary_edges.shape[0]),
        "corner_points": [int(v) for v in m.corner_points],
        "corner_coords": [[float(x), float(y)] for x, y in m.vertices[m.corner_points]],
        "h": m.h,
        "checks": checks,
    }
    _finish(outdir, "mesh_report.json", payload, all(checks.values()))


@main.command(name="eig")
@common_options
def cmd_eig(config_path, out, seed, refine_k):
    """Compute the Stokes eigenbasis and verify its contracts."""
    cfg = _load(config_path, seed, refine_k)
    outdir = _outdir(out, "eig")
    _dump_config(cfg, outdir)
    m = _build_mesh(cfg)
    try:
        spaces, basis = _build_basis(cfg, m)
    except (stokes.SaddlePointError, stokes.EigenSolveError, fem.AssemblyError) as exc:
        _finish(outdir, "eig_report.json", {"command": "eig", "error": str(exc)}, False)
        return
    stokes.save_basis(basis, os.path.join(outdir, "basis.json"),
                      os.path.join(outdir, "modes.csv"))
    rep = stokes.orthogonality_report(basis)
    if cfg["output"]["figures"]:
        figures.spectrum_figure(basis.lambdas, os.path.join(outdir, "spectrum.png"))
    ok = (rep["mass_orthonormality_error"] <= 1e-8
          and rep["stiffness_orthogonality_error"] <= 1e-6
          and rep["lambdas_positive"] and rep["lambdas_sorted"]
          and rep["max_divergence_residual"] <= 1e-8)
    payload = {"command": "eig", "orthogonality": rep,
               "lambdas": [float(x) for x in basis.lambdas]}
    _finish(outdir, "eig_report.json", payload, ok)


@main.command(name="steady")
@common_options
def cmd_steady(config_path, out, seed, refine_k):
    """Solve the steady mixed-BC Stokes problem with seeded smooth forcing."""
    cfg = _load(config_path, seed, refine_k)
    outdir = _outdir(out, "steady")
    _dump_config(cfg, outdir)
    m = _build_mesh(cfg)
    spaces = fem.assemble(m)
    rng = np.random.default_rng(cfg["seed"])
    c = rng.standard_normal(6)
    amp = cfg["forcing"]["amplitude"]

    def forcing(x, y):
        return (amp * (c[0] * np.sin(np.pi * y) + c[1] * np.cos(np.pi * x / m.length)
                       + c[2] * x * y / (m.length * m.height)),
                amp * (c[3] * np.sin(np.pi * x / m.length) + c[4] * np.cos(np.pi * y)
                       + c[5] * y / m.height))

    sol = stokes.solve_steady_stokes(spaces, forcing)
    u_full = spaces.expand(sol.velocity)
    nv = m.n_vertices
    ns_ = spaces.n_scalar
    rows = [[m.vertices[i, 0], m.vertices[i, 1], u_full[i], u_full[ns_ + i],
             sol.pressure[i]] for i in range(nv)]
    reports.write_csv(os.path.join(outdir, "steady_fields.csv"),
                      ["x", "y", "u1", "u2", "p"], rows)
    if cfg["output"]["vtk"]:
        save_mesh_vtk(m, os.path.join(outdir, "steady.vtk"),
                      {"velocity": np.column_stack([u_full[:nv], u_full[ns_:ns_ + nv]]),
                       "pressure": sol.pressure})
    if cfg["output"]["figures"]:
        figures.velocity_figure(m, spaces, u_full, os.path.join(outdir, "steady.png"))
    ok = sol.residual <= 1e-8
    payload = {"command": "steady", "residual": sol.residual,
               "stability_ratio": sol.stability_ratio,
               "velocity_V_norm": float(np.sqrt(sol.velocity @ (spaces.K @ sol.velocity)))}
    _finish(outdir, "steady_report.json", payload, ok)


@main.command(name="stokes")
@common_options
def cmd_stokes(config_path, out, seed, refine_k):
    """Exact spectral evolution of the nonsteady Stokes problem + energy checks."""
    cfg = _load(config_path, seed, refine_k)
    outdir = _outdir(out, "stokes")
    _dump_config(cfg, outdir)
    m = _build_mesh(cfg)
    spaces, basis = _build_basis(cfg, m)
    grid = _build_grid(cfg)
    rng = np.random.default_rng(cfg["seed"])
    data = _seeded_mode_forcing(cfg, basis, grid, rng)
    u = ev.solve_stokes_evolution(data, basis, grid)
    energy = ev.verify_energy_inequalities(u, data)
    roundtrip = ev.norm_Y(ev.apply_S(u) - data)

    rows = ev.trajectories_csv_rows(u)
    K = basis.n_modes
    header = (["t"] + [f"theta_{k + 1}" for k in range(K)]
              + [f"dtheta_{k + 1}" for k in range(K)])
    reports.write_csv(os.path.join(outdir, "trajectories.csv"), header, rows)
    if cfg["output"]["figures"]:
        ts = np.array([r[0] for r in rows])
        th = np.array([r[1:K + 1] for r in rows]).T
        figures.trajectories_figure(ts, th, os.path.join(outdir, "trajectories.png"))

    payload = {
        "command": "stokes",
        "norm_X": u.norm_X(),
        "norm_Y_data": data.norm_Y(),
        "roundtrip_defect": roundtrip,
        "energy": energy.to_dict(),
    }
    ok = energy.all_ok and roundtrip <= 1e-9
    if cfg["output"]["halve_dt"]:
        grid2 = ev.make_time_grid(grid.t_end, 2 * grid.n_intervals, grid.n_gauss)
        data2 = _seeded_mode_forcing(cfg, basis, grid2, np.random.default_rng(cfg["seed"]))
        u2 = ev.solve_stokes_evolution(data2, basis, grid2)
        change = abs(u2.norm_X() - u.norm_X())
        payload["halved_dt_norm_change"] = change
        ok = ok and change < 1e-8
    _finish(outdir, "stokes_report.json", payload, ok)


@main.command(name="ns")
@common_options
def cmd_ns(config_path, out, seed, refine_k):
    """Newton solve of the nonlinear problem on a manufactured solution."""
    cfg = _load(config_path, seed, refine_k)
    outdir = _outdir(out, "ns")
    _dump_config(cfg, outdir)
    m = _build_mesh(cfg)
    spaces, basis = _build_basis(cfg, m)
    grid = _build_grid(cfg)
    rng = np.random.default_rng(cfg["seed"])
    data0 = _seeded_mode_forcing(cfg, basis, grid, rng)
    u0 = ev.solve_stokes_evolution(data0, basis, grid)
    target = cfg["forcing"]["target_solution_norm"]
    ubar = (target / u0.norm_X()) * u0
    data = nsm.apply_N(ubar)
    opts = nsm.NewtonOptions(
        max_iters=int(cfg["newton"]["max_iters"]),
        abs_tol=cfg["newton"]["abs_tol"],
        damping=cfg["newton"]["damping"],
        linear_tol=cfg["newton"]["linear_tol"],
    )
    u, rep = nsm.solve_navier_stokes(data, basis, grid, opts)
    err = (u - ubar).norm_X()
    reports.write_csv(os.path.join(outdir, "newton_history.csv"),
                      ["iteration", "residual_Y"],
                      list(enumerate(rep.residual_history)))
    if cfg["output"]["figures"]:
        figures.newton_history_figure(rep.residual_history,
                                      os.path.join(outdir, "newton_history.png"))
    payload = {
        "command": "ns",
        "manufactured_norm_X": float(ubar.norm_X()),
        "final_error_X": float(err),
        "newton": rep.to_dict(),
    }
    ok = rep.converged and err <= 1e-8 and np.isfinite(err)
    _finish(outdir, "ns_report.json", payload, ok)


@main.command(name="perturb")
@common_options
def cmd_perturb(config_path, out, seed, refine_k):
    """Data-perturbation continuation around a base nonlinear solution."""
    cfg = _load(config_path, seed, refine_k)
    outdir = _outdir(out, "perturb")
    _dump_config(cfg, outdir)
    m = _build_mesh(cfg)
    spaces, basis = _build_basis(cfg, m)
    grid = _build_grid(cfg)
    rng = np.random.default_rng(cfg["seed"])
    data0 = _seeded_mode_forcing(cfg, basis, grid, rng)
    us = ev.solve_stokes_evolution(data0, basis, grid)
    base = (cfg["perturbation"]["target_stokes_norm"] / us.norm_X()) * data0
    scales = [float(s) for s in cfg["perturbation"]["scales"]]
    trials = int(cfg["perturbation"]["trials"])
    opts = nsm.NewtonOptions(
        max_iters=int(cfg["newton"]["max_iters"]),
        abs_tol=cfg["newton"]["abs_tol"],
        damping=cfg["newton"]["damping"],
        linear_tol=cfg["newton"]["linear_tol"],
    )
    reps = nsm.perturbation_experiment(base, scales, trials, cfg["seed"] + 1,
                                       basis, grid, opts)
    rows = []
    per_scale = {s: [] for s in scales}
    idx = 0
    for t in range(trials):
        for s in scales:
            r = reps[idx]
            idx += 1
            ratio = r.solution_shift / r.perturbation_norm if r.perturbation_norm else 0.0
            rows.append([t, s, r.perturbation_norm, r.solution_shift, ratio,
                         int(r.converged)])
            per_scale[s].append(r)
    reports.write_csv(os.path.join(outdir, "perturbation_trials.csv"),
                      ["trial", "scale", "perturbation_norm", "solution_shift",
                       "shift_ratio", "converged"], rows)
    if cfg["output"]["figures"]:
        figures.perturbation_figure(rows, os.path.join(outdir, "perturbation.png"))

    summary = []
    for s in scales:
        rs = per_scale[s]
        ratios = [r.solution_shift / r.perturbation_norm for r in rs if r.converged]
        summary.append({
            "scale": s,
            "trials": len(rs),
            "mean_shift_ratio": float(np.mean(ratios)) if ratios else float("nan"),
            "max_iterations": max(r.newton_iterations for r in rs),
            "failures": sum(0 if r.converged else 1 for r in rs),
        })
    # ratio consistency per direction across scales (local linearity)
    consistency = []
    if len(scales) >= 2:
        for t in range(trials):
            rr = [per_scale[s][t] for s in scales]
            if all(r.converged for r in rr):
                vals = [r.solution_shift / r.perturbation_norm for r in rr]
                consistency.append(max(vals) / min(vals) - 1.0)
    max_spread = float(max(consistency)) if consistency else float("nan")
    all_converged = all(r.converged for r in reps)
    ok = all_converged and (not consistency or max_spread <= 0.2)
    payload = {
        "command": "perturb",
        "per_scale": summary,
        "ratio_spread_across_scales": max_spread,
        "all_converged": all_converged,
    }
    _finish(outdir, "perturb_report.json", payload, ok)


@main.command(name="corner")
@common_options
def cmd_corner(config_path, out, seed, refine_k):
    """Pencil determinant scan, root certification, and the corner-field fit."""
    cfg = _load(config_path, seed, refine_k)
    outdir = _outdir(out, "corner")
    _dump_config(cfg, outdir)
    cc = cfg["corner"]
    re_w, im_w = cc["re_window"], cc["im_window"]

    re_vals = np.linspace(re_w[0], re_w[1], int(cc["grid_re"]))
    im_vals = np.linspace(im_w[0], im_w[1], int(cc["grid_im"]))
    R, I = np.meshgrid(re_vals, im_vals, indexing="ij")
    F = reduced_characteristic(R + 1j * I)
    D4 = np.array([[abs(np.linalg.det(pencil_matrix(lam))) if (lam := complex(r + 1j * i)) != 0
                    else float("nan") for i in im_vals] for r in re_vals])
    rows = [[re_vals[i], im_vals[j], abs(F[i, j]), D4[i, j]]
            for i in range(re_vals.size) for j in range(im_vals.size)]
    reports.write_csv(os.path.join(outdir, "determinant_grid.csv"),
                      ["re", "im", "abs_reduced", "abs_det4"], rows)

    try:
        report = locate_roots(re_w, im_w)
        inner_count, _ = count_roots(re_w, (-0.9, -0.1))
    except ContourError as exc:
        _finish(outdir, "corner_report.json",
                {"command": "corner", "error": str(exc),
                 "hint": "nudge the imaginary window away from the root"}, False)
        return
    below = find_root(-1.9j)
    if cfg["output"]["figures"]:
        figures.determinant_heatmap(re_vals, im_vals, np.abs(F),
                                    [r.root for r in report.roots],
                                    os.path.join(outdir, "determinant.png"))

    # steady solve on the configured mesh, fitted at the inflow/wall corner
    m = _build_mesh(cfg)
    spaces = fem.assemble(m)
    rng = np.random.default_rng(cfg["seed"])
    c = rng.standard_normal(4)

    def forcing(x, y):
        return (c[0] * np.sin(np.pi * y) + c[1] * x / m.length,
                c[2] * np.cos(np.pi * y) + c[3] * np.sin(np.pi * x / m.length))

    sol = stokes.solve_steady_stokes(spaces, forcing)
    origin_corner = min(
        (int(v) for v in m.corner_points),
        key=lambda v: np.hypot(*m.vertices[v]),
    )
    samples = sample_corner_field(spaces, sol.velocity, sol.pressure,
                                  origin_corner, cc["fit_delta"])
    fit = fit_singular_expansion(samples, cc["fit_delta"])

    root_ok = (report.winding_count == 1
               and len(report.roots) == 1
               and abs(report.roots[0].root - (-1j)) <= 1e-10
               and report.roots[0].simple)
    checks = {
        "winding_in_strip_is_one": report.winding_count == 1,
        "root_is_minus_i": bool(len(report.roots) == 1
                                and abs(report.roots[0].root - (-1j)) <= 1e-10),
        "strip_interior_free": inner_count == 0,
        "zero_not_eigenvalue": bool(abs(reduced_characteristic(0.0) + 4.0) == 0.0),
        "outside_root_minus_2i": bool(abs(below.root - (-2j)) <= 1e-10),
    }
    payload = {
        "command": "corner",
        "root_report": report.to_dict(),
        "inner_window_winding": inner_count,
        "outside_strip_root": {"re": below.root.real, "im": below.root.imag},
        "singular_fit": fit.to_dict(),
        "fit_corner_vertex": origin_corner,
        "checks": checks,
    }
    reports.write_json(os.path.join(outdir, "singular_expansion.json"),
                       {"command": "corner-fit", **fit.to_dict()})
    _finish(outdir, "corner_report.json", payload, root_ok and all(checks.values()))


if __name__ == "__main__":
    main()
