"""Figure rendering for command outputs; PNG files next to the CSV/JSON."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def mesh_figure(mesh, path):
    fig, ax = plt.subplots(figsize=(8, 3.2))
    tri = mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
    ax.triplot(tri, lw=0.4, color="0.55")
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        p = mesh.vertices[[a, b]]
        ax.plot(p[:, 0], p[:, 1], color="C3" if tag == "dirichlet" else "C0", lw=1.8)
    cp = mesh.vertices[mesh.corner_points]
    if cp.size:
        ax.plot(cp[:, 0], cp[:, 1], "ko", ms=5)
    ax.set_aspect("equal")
    ax.set_title(f"channel mesh, h={mesh.h:.4g} (walls red, in/outflow blue)")
    _save(fig, path)


def spectrum_figure(lambdas, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(np.arange(1, len(lambdas) + 1), lambdas, "o-", ms=4)
    ax.set_xlabel("mode index k")
    ax.set_ylabel(r"$\lambda_k$")
    ax.set_title("constrained Stokes spectrum")
    ax.grid(alpha=0.3)
    _save(fig, path)


def velocity_figure(mesh, spaces, u_full, path, title="velocity magnitude"):
    ns = spaces.n_scalar
    nv = mesh.n_vertices
    speed = np.hypot(u_full[:nv], u_full[ns:ns + nv])
    fig, ax = plt.subplots(figsize=(8, 3.2))
    tri = mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
    tc = ax.tripcolor(tri, speed, shading="gouraud")
    fig.colorbar(tc, ax=ax, shrink=0.85)
    ax.set_aspect("equal")
    ax.set_title(title)
    _save(fig, path)


def trajectories_figure(times, theta, path, n_show=6):
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for k in range(min(n_show, theta.shape[0])):
        ax.plot(times, theta[k], lw=1.2, label=f"mode {k + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\vartheta_k(t)$")
    ax.legend(fontsize=8, ncol=2)
    ax.set_title("mode trajectories")
    ax.grid(alpha=0.3)
    _save(fig, path)


def newton_history_figure(history, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.semilogy(np.arange(len(history)), history, "o-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual (data-space norm)")
    ax.set_title("Newton residual history")
    ax.grid(alpha=0.3, which="both")
    _save(fig, path)


def perturbation_figure(rows, path):
    """rows: (trial, scale, perturbation_norm, shift, ratio, converged)."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    scales = sorted({r[1] for r in rows})
    for s in scales:
        pts = [(r[0], r[4]) for r in rows if r[1] == s]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o",
                label=f"scale {s:g}", alpha=0.8)
    ax.set_xlabel("trial")
    ax.set_ylabel("shift / perturbation")
    ax.set_title("local sensitivity of the solution map")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def determinant_heatmap(re_vals, im_vals, mag, roots, path):
    fig, ax = plt.subplots(figsize=(7, 3.8))
    pc = ax.pcolormesh(re_vals, im_vals, np.log10(mag.T + 1e-300), shading="auto")
    fig.colorbar(pc, ax=ax, label=r"$\log_{10}|D|$")
    for r in roots:
        ax.plot(r.real, r.imag, "r*", ms=12, mec="white")
    ax.set_xlabel(r"Re $\lambda$")
    ax.set_ylabel(r"Im $\lambda$")
    ax.set_title("characteristic determinant magnitude")
    _save(fig, path)
