"""Nonlinear operator machinery: convection, linearization, Newton, perturbations.

The convection trilinear form b(theta, psi, phi) = int theta_j d_j psi_i phi_i
is assembled by exact quadrature.  Restricted to the eigenbasis it becomes a
dense third-order tensor T[j, l, k] = b(phi_j, phi_l, phi_k), computed once;
after that the forward operator, its linearization at a point, and every
Newton step are cheap tensor contractions in mode space.

The linearized solve treats the convection coupling implicitly at the Gauss
collocation points of each interval while the diagonal Stokes part is
propagated by the exact exponential formulas, so setting the base field to
zero reproduces the plain Stokes evolution identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import DiscreteSpaces, triangle_rule, p2_values, physical_grads, _element_geometry
from .stokes import EigenBasis
from .evolution import (DataPair, SpectralField, TimeGrid, ModeSet, _conv_moments,
                        _particular_poly, apply_S, solve_stokes_evolution, norm_Y)


class LinearizedSolveError(RuntimeError):
    def __init__(self, interval: int, msg: str):
        super().__init__(f"linearized step matrix failed on interval {interval}: {msg}")
        self.interval = interval


@dataclass
class NewtonOptions:
    max_iters: int = 12
    abs_tol: float = 1e-11
    damping: float = 1.0
    linear_tol: float = 1e-9
    max_backtracks: int = 8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.abs_tol <= 0 or self.linear_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")


@dataclass
class ContinuationReport:
    base_residual: float
    perturbation_norm: float
    solution_shift: float
    newton_iterations: int
    converged: bool
    quadratic_ratios: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    failure: str = ""

    def to_dict(self) -> dict:
        return {
            "base_residual": self.base_residual,
            "perturbation_norm": self.perturbation_norm,
            "solution_shift": self.solution_shift,
            "newton_iterations": self.newton_iterations,
            "converged": self.converged,
            "quadratic_ratios": list(self.quadratic_ratios),
            "residual_history": list(self.residual_history),
            "failure": self.failure,
        }


# --- trilinear form and its eigenbasis tensor ---

def trilinear_b(spaces: DiscreteSpaces, theta: np.ndarray, psi: np.ndarray,
                phi: np.ndarray, quad_degree: int = 5) -> float:
    """Exact quadrature of int theta_j (d psi_i / d x_j) phi_i; full coefficient
    vectors, no boundary constraints applied."""
    for v in (theta, psi, phi):
        if np.asarray(v).shape != (spaces.ndof_v,):
            raise ValueError(f"expected full velocity vectors of length {spaces.ndof_v}")
    mesh = spaces.mesh
    lam, w = triangle_rule(quad_degree)
    N2 = p2_values(lam)
    G = physical_grads(mesh, lam)
    _, _, area = _element_geometry(mesh)
    wq = w[None, :] * area[:, None]
    from .fem import _scalar_dofs

    tri_dofs, _, _, _ = _scalar_dofs(mesh)
    ns = spaces.n_scalar

    def field_vals(u):
        loc = u.reshape(2, ns)[:, tri_dofs]            # (2, ne, 6)
        return np.einsum("qi,cei->ceq", N2, loc)       # (2, ne, nq)

    def field_grads(u):
        loc = u.reshape(2, ns)[:, tri_dofs]
        return np.einsum("eqid,cei->ceqd", G, loc)     # (2, ne, nq, 2)

    th = field_vals(theta)
    gps = field_grads(psi)
    ph = field_vals(phi)
    conv = np.einsum("jeq,ieqj->ieq", th, gps)         # (theta . grad) psi
    return float(np.einsum("eq,ieq,ieq->", wq, conv, ph))


class ConvectionTensor:
    """Dense tensor T[j, l, k] = b(phi_j, phi_l, phi_k) over the eigenbasis."""

    def __init__(self, basis: EigenBasis, quad_degree: int = 5):
        spaces = basis.spaces
        mesh = spaces.mesh
        lam, w = triangle_rule(quad_degree)
        N2 = p2_values(lam)
        G = physical_grads(mesh, lam)
        _, _, area = _element_geometry(mesh)
        wq = w[None, :] * area[:, None]
        from .fem import _scalar_dofs

        tri_dofs, _, _, _ = _scalar_dofs(mesh)
        ns = spaces.n_scalar
        K = basis.n_modes

        vals = np.empty((K, 2, tri_dofs.shape[0], lam.shape[0]))
        grads = np.empty((K, 2, tri_dofs.shape[0], lam.shape[0], 2))
        for k in range(K):
            full = basis.mode_full(k).reshape(2, ns)[:, tri_dofs]
            vals[k] = np.einsum("qi,cei->ceq", N2, full)
            grads[k] = np.einsum("eqid,cei->ceqd", G, full)

        wv = vals * wq[None, None, :, :]               # weight folded into the test slot
        T = np.empty((K, K, K))
        for j in range(K):
            conv = np.einsum("deq,lieqd->lieq", vals[j], grads)   # (theta_j . grad) phi_l
            T[j] = np.einsum("lieq,kieq->lk", conv, wv)
        self.T = T
        self.basis = basis

    def pair_samples(self, theta_u: np.ndarray, theta_w: np.ndarray) -> np.ndarray:
        """Samples of b(u(t), w(t), phi_k) from mode samples (K, N, q)."""
        K, N, q = theta_u.shape
        tu = theta_u.reshape(K, N * q)
        tw = theta_w.reshape(K, N * q)
        out = np.einsum("jt,lt,jlk->kt", tu, tw, self.T, optimize=True)
        return out.reshape(K, N, q)

    def linearization_matrices(self, theta_u: np.ndarray) -> np.ndarray:
        """A[t, k, l] with (B_u w)_k = sum_l A_kl w_l at each sample time."""
        K, N, q = theta_u.shape
        tu = theta_u.reshape(K, N * q)
        Tsym = self.T + np.transpose(self.T, (1, 0, 2))   # b(u, ., phi) + b(., u, phi)
        A = np.einsum("jt,jlk->tkl", tu, Tsym, optimize=True)
        return A.reshape(N, q, K, K)


def convection_tensor(basis: EigenBasis) -> ConvectionTensor:
    ct = getattr(basis, "_conv_tensor", None)
    if ct is None:
        ct = ConvectionTensor(basis)
        basis._conv_tensor = ct
    return ct


def convection_data(u: SpectralField, w: SpectralField, basis: EigenBasis,
                    grid: TimeGrid) -> np.ndarray:
    """Per-mode trajectories (K, N, q) of the convection functional b(u, w, .)."""
    return convection_tensor(basis).pair_samples(u.theta_samples(), w.theta_samples())


def apply_N(u: SpectralField) -> DataPair:
    """Forward nonlinear operator: Stokes part plus self-convection, initial trace."""
    basis = u.basis
    d = apply_S(u)
    d.mu = d.mu + convection_tensor(basis).pair_samples(u.theta_samples(), u.theta_samples())
    return d


def apply_B_u(u: SpectralField, w: SpectralField) -> DataPair:
    """Convection linearization at u applied to w; zero initial slot."""
    basis = u.basis
    ct = convection_tensor(basis)
    tu, tw = u.theta_samples(), w.theta_samples()
    mu = ct.pair_samples(tu, tw) + ct.pair_samples(tw, tu)
    return DataPair(basis=basis, grid=u.grid, mu=mu, a=np.zeros(basis.n_modes))


def apply_G_u(u: SpectralField, w: SpectralField) -> DataPair:
    """Frechet derivative of the forward operator at u, applied to w."""
    return apply_S(w) + apply_B_u(u, w)


def solve_linearized(u: SpectralField, rhs: DataPair, grid: TimeGrid) -> SpectralField:
    """Solve (S + B_u) w = rhs by interval-wise Gauss collocation.

    Per interval the mode amplitudes at the collocation points satisfy

        W = exp-propagated initial value + Conv[rhs - A(t) W],

    a dense (q*K)x(q*K) linear system; the exponential convolution weights
    are exact, so with u = 0 this reduces to the plain Stokes solve.
    """
    basis = u.basis
    lambdas = basis.lambdas
    K = basis.n_modes
    N, q = grid.n_intervals, grid.n_gauss
    x = grid.gauss_x
    deltas = grid.deltas

    A = convection_tensor(basis).linearization_matrices(u.theta_samples())  # (N, q, K, K)

    pc = np.empty((K, N, q))
    beta = np.empty((K, N))
    node_vals = np.empty((K, N + 1))
    node_vals[:, 0] = rhs.a

    eye = np.eye(q * K)
    for i in range(N):
        mus = lambdas * deltas[i]                                  # (K,)
        Im = _conv_moments(mus, x, q - 1)                          # (K, q, m)
        # C[k, g, h]: convolution value at x_g of the interpolant through samples at x_h
        C = np.einsum("kgm,mh->kgh", Im, grid.Vinv) * deltas[i]
        decay = np.exp(-mus[:, None] * x[None, :])                 # (K, q)

        rhs_vec = decay.T * node_vals[:, i][None, :]               # (g, k)
        rhs_vec = rhs_vec + np.einsum("kgh,hk->gk", C, rhs.mu[:, i, :].T)
        Mat = eye + np.einsum("kgh,hkl->gkhl", C, A[i]).reshape(q * K, q * K)
        try:
            W = np.linalg.solve(Mat, rhs_vec.reshape(q * K)).reshape(q, K)
        except np.linalg.LinAlgError as exc:
            raise LinearizedSolveError(i, str(exc)) from exc

        bracket = rhs.mu[:, i, :].T - np.einsum("gkl,gl->gk", A[i], W)   # (g, k)
        c = grid.Vinv @ bracket                                          # (m, k) coeffs
        P = _particular_poly(c.T, mus, deltas[i])                        # (K, q)
        pc[:, i, :] = P
        beta[:, i] = node_vals[:, i] - P[:, 0]
        node_vals[:, i + 1] = P.sum(axis=1) + beta[:, i] * np.exp(-mus)

    ms = ModeSet(lambdas=lambdas, grid=grid, pc=pc, beta=beta, node_vals=node_vals)
    return SpectralField(basis=basis, modes=ms)


def solve_navier_stokes(data: DataPair, basis: EigenBasis, grid: TimeGrid,
                        opts: NewtonOptions | None = None,
                        initial_guess: SpectralField | None = None,
                        ) -> tuple[SpectralField, ContinuationReport]:
    """Newton iteration on the operator equation N(u) = data.

    The default initial guess is the Stokes solution of the same data, which
    sits in the basin for the small-perturbation regime this package targets.
    Non-convergence is reported, not raised; the best iterate is returned.
    """
    opts = opts or NewtonOptions()
    u = initial_guess if initial_guess is not None else solve_stokes_evolution(data, basis, grid)

    def residual_of(v):
        return apply_N(v) - data

    res = residual_of(u)
    rnorm = norm_Y(res)
    history = [rnorm]
    failure = ""
    it = 0
    while rnorm > opts.abs_tol and it < opts.max_iters:
        try:
            delta = solve_linearized(u, -1.0 * res, grid)
        except LinearizedSolveError as exc:
            failure = str(exc)
            break
        step = opts.damping
        accepted = False
        for _ in range(opts.max_backtracks + 1):
            trial = u + step * delta
            trial_res = residual_of(trial)
            trial_norm = norm_Y(trial_res)
            if trial_norm < rnorm or trial_norm <= opts.abs_tol:
                u, res, rnorm = trial, trial_res, trial_norm
                accepted = True
                break
            step *= 0.5
        it += 1
        if not accepted:
            failure = f"backtracking stalled at iteration {it}"
            break
        history.append(rnorm)

    ratios = [history[n + 1] / history[n] ** 2 for n in range(len(history) - 1)
              if history[n] > 0]
    converged = rnorm <= opts.abs_tol
    if not converged and not failure:
        failure = f"no convergence within {opts.max_iters} iterations"
    report = ContinuationReport(
        base_residual=rnorm,
        perturbation_norm=0.0,
        solution_shift=0.0,
        newton_iterations=it,
        converged=converged,
        quadratic_ratios=ratios,
        residual_history=history,
        failure="" if converged else failure,
    )
    return u, report


def random_unit_perturbation(basis: EigenBasis, grid: TimeGrid, rng) -> DataPair:
    """Random data-space direction with mode-wise 1/lambda_k decay, unit Y-norm."""
    K = basis.n_modes
    scale = 1.0 / basis.lambdas
    mu = rng.standard_normal((K, grid.n_intervals, grid.n_gauss)) * scale[:, None, None]
    a = rng.standard_normal(K) * scale
    p = DataPair(basis=basis, grid=grid, mu=mu, a=a)
    n = p.norm_Y()
    if n == 0:
        raise ValueError("degenerate zero perturbation")
    return (1.0 / n) * p


def perturbation_experiment(base_data: DataPair, scales, trials: int, seed: int,
                            basis: EigenBasis, grid: TimeGrid,
                            opts: NewtonOptions | None = None,
                            ) -> list[ContinuationReport]:
    """Continuation around a base solution: re-solve at perturbed data and
    record the shift/perturbation ratios (local Lipschitz constant of the
    inverse solution map).  One report per (trial, scale), trial-major."""
    opts = opts or NewtonOptions()
    u_base, base_rep = solve_navier_stokes(base_data, basis, grid, opts)
    if not base_rep.converged:
        raise RuntimeError(f"base problem did not converge: {base_rep.failure}")
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(trials):
        p = random_unit_perturbation(basis, grid, rng)
        for eps in scales:
            data_t = base_data + float(eps) * p
            u_t, rep = solve_navier_stokes(data_t, basis, grid, opts, initial_guess=u_base)
            rep.perturbation_norm = float(eps) * p.norm_Y()
            rep.solution_shift = (u_t - u_base).norm_X()
            reports.append(rep)
    return reports
