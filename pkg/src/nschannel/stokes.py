"""Steady mixed-BC Stokes solves and the constrained Stokes eigenbasis.

The steady problem is the saddle-point system

    [ K  B^T ] [ velocity ]   [ M sigma ]
    [ B   0  ] [ pressure ] = [    0    ]

on wall-constrained dofs; the do-nothing ends need no boundary term.  The
eigenbasis consists of the smallest eigenpairs of the stiffness operator
restricted to the discretely divergence-free subspace, computed against the
mass inner product.  Modes come out orthonormal in L2 and orthogonal in the
gradient inner product, with eigenvalues positive and nondecreasing; they
are the coordinate system for everything time-dependent in this package.

Two routes are implemented: a matrix-free Lanczos iteration on the inverse
Stokes operator (production), and a dense explicit-nullspace projection
(small meshes; used to cross-check the production route).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .fem import DiscreteSpaces

_EIG_SEED = 20240915  # fixed Lanczos start vector makes runs bit-reproducible


class SaddlePointError(RuntimeError):
    """Saddle-point factorization failed (velocity/pressure pair not inf-sup stable)."""


class EigenSolveError(RuntimeError):
    pass


@dataclass
class SteadySolution:
    velocity: np.ndarray        # free velocity dofs
    pressure: np.ndarray
    residual: float             # relative algebraic residual of the saddle system
    stability_ratio: float      # (|v|_V + |q|_L2) / |sigma|_L2


@dataclass
class EigenBasis:
    lambdas: np.ndarray         # ascending, positive
    modes: np.ndarray           # (n_free, n_modes), L2-orthonormal columns
    spaces: DiscreteSpaces
    n_modes: int

    def mode_full(self, k: int) -> np.ndarray:
        return self.spaces.expand(self.modes[:, k])


def _saddle_lu(spaces: DiscreteSpaces):
    lu = getattr(spaces, "_saddle_lu_cache", None)
    if lu is None:
        S = sp.bmat([[spaces.K, spaces.B.T], [spaces.B, None]], format="csc")
        try:
            lu = sla.splu(S)
        except RuntimeError as exc:
            raise SaddlePointError(f"singular Stokes saddle-point system: {exc}") from exc
        piv = np.abs(lu.U.diagonal())
        if piv.min() <= 1e-12 * piv.max():
            # happens when the outflow part is empty: constant-pressure nullspace
            raise SaddlePointError(
                "Stokes saddle-point system is singular (pressure nullspace); "
                "the velocity/pressure pair is not inf-sup stable on this tagging")
        spaces._saddle_lu_cache = lu
    return lu


def _mass_lu(spaces: DiscreteSpaces):
    lu = getattr(spaces, "_mass_lu_cache", None)
    if lu is None:
        lu = sla.splu(spaces.M.tocsc())
        spaces._mass_lu_cache = lu
    return lu


def forcing_to_rhs(spaces: DiscreteSpaces, sigma) -> tuple[np.ndarray, float]:
    """L2 load vector on free dofs and the L2 norm of the forcing.

    ``sigma`` is a full stacked coefficient vector or a callable (x, y) ->
    (f1, f2), which gets interpolated into the velocity space first.
    """
    from .fem import interpolate_velocity

    if callable(sigma):
        sigma = interpolate_velocity(spaces, sigma)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (spaces.ndof_v,):
        raise ValueError(f"forcing vector must have length {spaces.ndof_v}")
    ns = spaces.n_scalar
    Ms = spaces.mass_scalar
    full = np.concatenate([Ms @ sigma[:ns], Ms @ sigma[ns:]])
    norm = float(np.sqrt(max(sigma @ full, 0.0)))
    return full[spaces.free_dofs], norm


def solve_steady_stokes(spaces: DiscreteSpaces, sigma) -> SteadySolution:
    lu = _saddle_lu(spaces)
    rhs, sigma_norm = forcing_to_rhs(spaces, sigma)
    nf = spaces.n_free
    sol = lu.solve(np.concatenate([rhs, np.zeros(spaces.ndof_p)]))
    # the saddle multiplier is the negative of the physical pressure: the
    # do-nothing weak form carries -int q div(v), the solve uses +B^T
    v, q = sol[:nf], -sol[nf:]
    res_vec = np.concatenate([spaces.K @ v - spaces.B.T @ q - rhs, spaces.B @ v])
    scale = max(np.linalg.norm(rhs), 1e-300)
    residual = float(np.linalg.norm(res_vec) / scale) if sigma_norm > 0 else float(np.linalg.norm(res_vec))
    v_norm = float(np.sqrt(max(v @ (spaces.K @ v), 0.0)))
    q_norm = float(np.sqrt(max(q @ (spaces.Mp @ q), 0.0)))
    ratio = (v_norm + q_norm) / sigma_norm if sigma_norm > 0 else 0.0
    return SteadySolution(velocity=v, pressure=q, residual=residual, stability_ratio=ratio)


def stokes_inverse(spaces: DiscreteSpaces):
    """v -> velocity part of the Stokes solve with L2 load Mv; image is div-free."""
    lu = _saddle_lu(spaces)
    nf = spaces.n_free
    zp = np.zeros(spaces.ndof_p)

    def apply(v):
        return lu.solve(np.concatenate([spaces.M @ v, zp]))[:nf]

    return apply


def compute_eigenbasis(spaces: DiscreteSpaces, n_modes: int, tol: float = 1e-12) -> EigenBasis:
    """Smallest ``n_modes`` constrained Stokes eigenpairs, L2-orthonormalized.

    Lanczos runs on the inverse Stokes operator (one sparse factorization,
    one solve per iteration), which is self-adjoint in the mass inner
    product and whose dominant eigenvalues are the reciprocals of the
    wanted ones.  A Rayleigh-Ritz pass in the converged subspace restores
    orthogonality to machine precision.
    """
    nf = spaces.n_free
    max_modes = nf - spaces.ndof_p
    if not 1 <= n_modes <= max_modes:
        raise EigenSolveError(f"n_modes must be in [1, {max_modes}], got {n_modes}")

    Tinv = stokes_inverse(spaces)
    M = spaces.M

    A = sla.LinearOperator((nf, nf), matvec=lambda v: M @ Tinv(v), dtype=float)
    v0 = np.random.default_rng(_EIG_SEED).standard_normal(nf)
    ncv = min(nf, max(3 * n_modes, 40))
    try:
        w, Phi = sla.eigsh(A, k=n_modes, M=M, which="LM", v0=v0, tol=tol, ncv=ncv)
    except sla.ArpackNoConvergence as exc:
        raise EigenSolveError(f"eigen-iteration did not converge: {exc}") from exc
    if np.any(w <= 0):
        raise EigenSolveError("inverse-operator eigenvalues not positive; basis unreliable")

    # one extra inverse application pushes every column into the constraint space
    Phi = np.column_stack([Tinv(Phi[:, j]) for j in range(n_modes)])
    return _rayleigh_ritz(spaces, Phi)


def compute_eigenbasis_dense(spaces: DiscreteSpaces, n_modes: int) -> EigenBasis:
    """Explicit-nullspace route: dense, exact, only sensible at small sizes."""
    null = scipy.linalg.null_space(spaces.B.toarray())
    if n_modes > null.shape[1]:
        raise EigenSolveError(f"n_modes exceeds divergence-free dimension {null.shape[1]}")
    Kn = null.T @ (spaces.K @ null)
    Mn = null.T @ (spaces.M @ null)
    w, V = scipy.linalg.eigh(Kn, Mn)
    Phi = null @ V[:, :n_modes]
    return _rayleigh_ritz(spaces, Phi)


def _rayleigh_ritz(spaces: DiscreteSpaces, Phi: np.ndarray) -> EigenBasis:
    G = Phi.T @ (spaces.M @ Phi)
    L = scipy.linalg.cholesky(G, lower=True)
    Phi = scipy.linalg.solve_triangular(L, Phi.T, lower=True).T
    Kr = Phi.T @ (spaces.K @ Phi)
    lam, Q = scipy.linalg.eigh(0.5 * (Kr + Kr.T))
    Phi = Phi @ Q
    # deterministic sign: largest-magnitude entry of each mode is positive
    for j in range(Phi.shape[1]):
        i = np.argmax(np.abs(Phi[:, j]))
        if Phi[i, j] < 0:
            Phi[:, j] = -Phi[:, j]
    return EigenBasis(lambdas=lam, modes=Phi, spaces=spaces, n_modes=Phi.shape[1])


def eigen_residual(basis: EigenBasis, k: int, cg_tol: float = 1e-12) -> float:
    """Constraint-space residual |K phi - lambda M phi|_{M^-1} with the
    pressure-multiplier component projected out."""
    spaces = basis.spaces
    r = spaces.K @ basis.modes[:, k] - basis.lambdas[k] * (spaces.M @ basis.modes[:, k])
    mlu = _mass_lu(spaces)
    y = mlu.solve(r)

    B = spaces.B

    def schur(p):
        return B @ mlu.solve(B.T @ p)

    S = sla.LinearOperator((spaces.ndof_p, spaces.ndof_p), matvec=schur, dtype=float)
    mp_lu = sla.splu(spaces.Mp.tocsc())
    Pre = sla.LinearOperator((spaces.ndof_p, spaces.ndof_p), matvec=mp_lu.solve, dtype=float)
    xi, info = sla.cg(S, B @ y, rtol=cg_tol, atol=0.0, M=Pre, maxiter=400)
    if info != 0:
        raise EigenSolveError(f"pressure-projection CG failed with info={info}")
    s = y - mlu.solve(B.T @ xi)
    return float(np.sqrt(max(s @ (spaces.M @ s), 0.0)))


def orthogonality_report(basis: EigenBasis) -> dict:
    """Gram-matrix defects of the basis contracts, for reports and tests."""
    spaces = basis.spaces
    G = basis.modes.T @ (spaces.M @ basis.modes)
    W = basis.modes.T @ (spaces.K @ basis.modes)
    lam = basis.lambdas
    mass_err = float(np.abs(G - np.eye(basis.n_modes)).max())
    stiff = np.abs(W - np.diag(lam))
    stiff_err = float((stiff / lam[None, :]).max())  # column-wise lambda_k scaling
    div = spaces.B @ basis.modes
    div_err = float(max(np.linalg.norm(div[:, j]) for j in range(basis.n_modes)))
    return {
        "n_modes": int(basis.n_modes),
        "lambda_min": float(lam[0]),
        "lambda_max": float(lam[-1]),
        "mass_orthonormality_error": mass_err,
        "stiffness_orthogonality_error": stiff_err,
        "max_divergence_residual": div_err,
        "lambdas_positive": bool(np.all(lam > 0)),
        "lambdas_sorted": bool(np.all(np.diff(lam) >= 0)),
    }


# --- amplitude-space norms; trajectories get theirs in the evolution module ---

def norm_D(amps: np.ndarray, basis: EigenBasis) -> float:
    """Graph norm of the constrained Stokes operator: (sum lambda_k^2 a_k^2)^(1/2)."""
    amps = np.asarray(amps, dtype=float)
    if amps.shape != (basis.n_modes,):
        raise ValueError(f"expected {basis.n_modes} amplitudes")
    return float(np.sqrt(np.sum(basis.lambdas ** 2 * amps ** 2)))


def norm_V_amps(amps: np.ndarray, basis: EigenBasis) -> float:
    amps = np.asarray(amps, dtype=float)
    return float(np.sqrt(np.sum(basis.lambdas * amps ** 2)))


def norm_L2_amps(amps: np.ndarray) -> float:
    return float(np.linalg.norm(amps))


def project_onto_basis(basis: EigenBasis, u_free: np.ndarray) -> np.ndarray:
    """L2 projection coefficients a_k = (u, phi_k)."""
    return basis.modes.T @ (basis.spaces.M @ u_free)


def reconstruct(basis: EigenBasis, amps: np.ndarray) -> np.ndarray:
    return basis.modes @ amps


def inf_sup_constant(spaces: DiscreteSpaces) -> float:
    """Smallest singular value of the pressure-velocity coupling in the
    energy geometry: sqrt of the minimal eigenvalue of Mp^-1 B K^-1 B^T.

    Dense; intended for modest meshes in verification runs.
    """
    Kd = spaces.K.toarray()
    Bd = spaces.B.toarray()
    X = scipy.linalg.solve(Kd, Bd.T, assume_a="pos")
    S = Bd @ X
    Mpd = spaces.Mp.toarray()
    w = scipy.linalg.eigh(S, Mpd, eigvals_only=True)
    return float(np.sqrt(max(w[0], 0.0)))


def save_basis(basis: EigenBasis, json_path, csv_path) -> None:
    """Binary-free export: metadata+eigenvalues as JSON, mode matrix as CSV.

    The CSV is recorded by basename and expected to sit next to the JSON.
    """
    meta = {
        "schema": "stokes-eigenbasis@1",
        "n_modes": int(basis.n_modes),
        "n_free": int(basis.spaces.n_free),
        "lambdas": [float(x) for x in basis.lambdas],
        "modes_csv": os.path.basename(str(csv_path)),  # resolved next to the JSON
    }
    with open(json_path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    header = ",".join(f"mode_{k}" for k in range(basis.n_modes))
    np.savetxt(csv_path, basis.modes, delimiter=",", header=header, comments="", fmt="%.17g")


def load_basis(json_path, spaces: DiscreteSpaces) -> EigenBasis:
    with open(json_path) as f:
        meta = json.load(f)
    csv_path = os.path.join(os.path.dirname(os.path.abspath(str(json_path))),
                            meta["modes_csv"])
    modes = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    modes = np.atleast_2d(modes)
    if modes.shape[0] != spaces.n_free:
        raise ValueError("basis file does not match the discrete spaces")
    return EigenBasis(
        lambdas=np.array(meta["lambdas"], dtype=float),
        modes=modes,
        spaces=spaces,
        n_modes=int(meta["n_modes"]),
    )
