"""Exact spectral evolution of the nonsteady Stokes problem.

In eigenbasis coordinates the evolution decouples into scalar mode ODEs

    theta_k'(t) + lambda_k theta_k(t) = mu_k(t),   theta_k(0) = a_k,

solved exactly by variation of constants.  Forcing trajectories are carried
as samples at per-interval Gauss points and read as the degree-(q-1)
polynomial through those points; against that interpolant the solution is
computed in closed form.  On each interval a mode trajectory is stored as

    theta(t_i + s*dt) = P(s) + beta * exp(-lambda*dt*s),    s in [0, 1],

with P polynomial, so time integrals of theta^2 and theta'^2, point values,
and the forward operator (the residual functional plus the initial trace)
are all evaluated exactly; the only approximation in the whole pipeline is
the polynomial reading of the data.  Derivatives use the ODE identity
rather than numerical differentiation, which keeps the solve/apply round
trip at rounding level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stokes import EigenBasis

_SERIES_CUTOFF = 1.0
_SERIES_TERMS = 40


@dataclass
class TimeGrid:
    t_end: float
    nodes: np.ndarray         # (N+1,), strictly increasing, nodes[0]=0, nodes[-1]=t_end
    gauss_x: np.ndarray       # (q,) Gauss points on (0,1)
    gauss_w: np.ndarray       # (q,) weights summing to 1
    times: np.ndarray         # (N, q) absolute quadrature times
    weights: np.ndarray       # (N, q) absolute quadrature weights
    V: np.ndarray             # (q, q) Vandermonde x^m at gauss_x
    Vinv: np.ndarray

    @property
    def n_intervals(self):
        return self.nodes.size - 1

    @property
    def n_gauss(self):
        return self.gauss_x.size

    @property
    def deltas(self):
        return np.diff(self.nodes)


def make_time_grid(t_end: float = 1.0, n_intervals: int = 64, gauss_points: int = 4,
                   nodes=None) -> TimeGrid:
    if nodes is None:
        if t_end <= 0 or n_intervals < 1:
            raise ValueError("t_end must be positive and n_intervals >= 1")
        nodes = np.linspace(0.0, t_end, n_intervals + 1)
    else:
        nodes = np.asarray(nodes, dtype=float)
        if nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must start at 0 and increase strictly")
        t_end = float(nodes[-1])
    if gauss_points < 2:
        raise ValueError("need at least 2 Gauss points per interval")
    g, w = np.polynomial.legendre.leggauss(gauss_points)
    x = 0.5 * (g + 1.0)
    w = 0.5 * w
    deltas = np.diff(nodes)
    times = nodes[:-1, None] + deltas[:, None] * x[None, :]
    weights = deltas[:, None] * w[None, :]
    V = x[:, None] ** np.arange(gauss_points)[None, :]
    return TimeGrid(t_end=float(t_end), nodes=nodes, gauss_x=x, gauss_w=w,
                    times=times, weights=weights, V=V, Vinv=np.linalg.inv(V))


# --- exponential moment integrals, stable across the lambda*dt range ---

def _exp_moments(mu: np.ndarray, mmax: int) -> np.ndarray:
    """J_m(mu) = int_0^1 s^m exp(-mu s) ds for m = 0..mmax; mu >= 0 array."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    out = np.empty(mu.shape + (mmax + 1,))
    small = mu < _SERIES_CUTOFF
    if np.any(small):
        ms = mu[small]
        for m in range(mmax + 1):
            term = np.ones_like(ms) / (m + 1)
            acc = term.copy()
            for j in range(1, _SERIES_TERMS):
                term = term * (-ms) / j * (m + j) / (m + j + 1)
                acc += term
            out[small, m] = acc
    big = ~small
    if np.any(big):
        mb = mu[big]
        e = np.exp(-mb)
        J = -np.expm1(-mb) / mb
        out[big, 0] = J
        for m in range(1, mmax + 1):
            J = (m * J - e) / mb
            out[big, m] = J
    return out


def _conv_moments(mu: np.ndarray, x: np.ndarray, mmax: int) -> np.ndarray:
    """I_m(mu, x) = int_0^x exp(-mu (x - s)) s^m ds, m = 0..mmax.

    mu: (...,) nonnegative; x: (p,) in (0, 1]; result (..., p, mmax+1).
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    x = np.asarray(x, dtype=float)
    out = np.empty(mu.shape + (x.size, mmax + 1))
    arg = mu[..., None] * x  # (..., p)
    small = arg < _SERIES_CUTOFF
    if np.any(small):
        a = arg[small]
        xs = np.broadcast_to(x, arg.shape)[small]
        for m in range(mmax + 1):
            # x^{m+1} * sum_j (-mu x)^j * m! / (j+m+1)!
            term = xs ** (m + 1) / (m + 1)
            acc = term.copy()
            for j in range(1, _SERIES_TERMS):
                term = term * (-a) / (j + m + 1)
                acc += term
            out[small, m] = acc
    big = ~small
    if np.any(big):
        a = arg[big]
        xs = np.broadcast_to(x, arg.shape)[big]
        mus = np.broadcast_to(mu[..., None], arg.shape)[big]
        I = -np.expm1(-a) / mus
        out[big, 0] = I
        for m in range(1, mmax + 1):
            I = (xs ** m - m * I) / mus
            out[big, m] = I
    return out


def _poly_eval(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate (..., q) monomial coefficients at points x -> (..., len(x))."""
    powers = x[:, None] ** np.arange(coeffs.shape[-1])[None, :]
    return coeffs @ powers.T


def _poly_derivative(coeffs: np.ndarray) -> np.ndarray:
    q = coeffs.shape[-1]
    return coeffs[..., 1:] * np.arange(1, q)


def _poly_sq_integral(coeffs: np.ndarray) -> np.ndarray:
    """int_0^1 P(s)^2 ds for monomial coefficients along the last axis."""
    q = coeffs.shape[-1]
    prod = np.einsum("...m,...n->...mn", coeffs, coeffs)
    denom = 1.0 + np.arange(q)[:, None] + np.arange(q)[None, :]
    return np.sum(prod / denom, axis=(-2, -1))


def _particular_poly(c: np.ndarray, mu: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Solve P'(s) + mu P(s) = delta * c(s) coefficient-wise (backward recurrence)."""
    q = c.shape[-1]
    P = np.zeros_like(c)
    P[..., q - 1] = deltas * c[..., q - 1] / mu
    for m in range(q - 2, -1, -1):
        P[..., m] = (deltas * c[..., m] - (m + 1) * P[..., m + 1]) / mu
    return P


class ModeSet:
    """Per-interval polynomial + exponential trajectories for a set of modes."""

    def __init__(self, lambdas: np.ndarray, grid: TimeGrid, pc: np.ndarray,
                 beta: np.ndarray, node_vals: np.ndarray):
        self.lambdas = lambdas
        self.grid = grid
        self.pc = pc                  # (K, N, q)
        self.beta = beta              # (K, N)
        self.node_vals = node_vals    # (K, N+1)
        self._mu = lambdas[:, None] * grid.deltas[None, :]   # (K, N)

    @property
    def n_modes(self):
        return self.lambdas.size

    # -- sample arrays on the quadrature points --

    def theta_samples(self) -> np.ndarray:
        x = self.grid.gauss_x
        vals = _poly_eval(self.pc, x)
        vals += self.beta[..., None] * np.exp(-self._mu[..., None] * x)
        return vals

    def theta_prime_samples(self) -> np.ndarray:
        x = self.grid.gauss_x
        dp = _poly_derivative(self.pc)
        vals = _poly_eval(dp, x) if dp.shape[-1] else np.zeros(self.pc.shape[:-1] + (x.size,))
        vals -= (self._mu * self.beta)[..., None] * np.exp(-self._mu[..., None] * x)
        return vals / self.grid.deltas[None, :, None]

    def stokes_residual_samples(self) -> np.ndarray:
        """theta' + lambda theta at the Gauss points; the exponential cancels."""
        x = self.grid.gauss_x
        dp = _poly_derivative(self.pc)
        vals = _poly_eval(dp, x) if dp.shape[-1] else np.zeros(self.pc.shape[:-1] + (x.size,))
        vals = vals / self.grid.deltas[None, :, None]
        vals += self.lambdas[:, None, None] * _poly_eval(self.pc, x)
        return vals

    # -- pointwise evaluation --

    def _locate(self, t: float) -> tuple[int, float]:
        nodes = self.grid.nodes
        if t < nodes[0] - 1e-12 or t > nodes[-1] + 1e-12:
            raise ValueError(f"time {t} outside [0, {nodes[-1]}]")
        i = int(np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 2))
        s = (t - nodes[i]) / (nodes[i + 1] - nodes[i])
        return i, float(np.clip(s, 0.0, 1.0))

    def value(self, t: float) -> np.ndarray:
        i, s = self._locate(t)
        powers = s ** np.arange(self.pc.shape[-1])
        return self.pc[:, i, :] @ powers + self.beta[:, i] * np.exp(-self._mu[:, i] * s)

    def derivative(self, t: float) -> np.ndarray:
        i, s = self._locate(t)
        dp = _poly_derivative(self.pc[:, i, :])
        val = dp @ (s ** np.arange(dp.shape[-1])) if dp.shape[-1] else np.zeros(self.n_modes)
        val -= self._mu[:, i] * self.beta[:, i] * np.exp(-self._mu[:, i] * s)
        return val / (self.grid.nodes[i + 1] - self.grid.nodes[i])

    # -- exact interval integrals --

    def interval_theta_sq(self) -> np.ndarray:
        """(K, N) of int over each interval of theta^2 dt, exact."""
        J = _exp_moments(self._mu.ravel(), self.pc.shape[-1] - 1).reshape(self._mu.shape + (-1,))
        J2 = _exp_moments(2.0 * self._mu.ravel(), 0).reshape(self._mu.shape)
        cross = np.sum(self.pc * J, axis=-1)
        val = _poly_sq_integral(self.pc) + 2.0 * self.beta * cross + self.beta ** 2 * J2
        return val * self.grid.deltas[None, :]

    def interval_theta_prime_sq(self) -> np.ndarray:
        dp = _poly_derivative(self.pc)
        mmax = max(dp.shape[-1] - 1, 0)
        J = _exp_moments(self._mu.ravel(), mmax).reshape(self._mu.shape + (-1,))
        J2 = _exp_moments(2.0 * self._mu.ravel(), 0).reshape(self._mu.shape)
        g = -self._mu * self.beta
        if dp.shape[-1]:
            cross = np.sum(dp * J[..., :dp.shape[-1]], axis=-1)
            base = _poly_sq_integral(dp)
        else:
            cross = np.zeros_like(g)
            base = np.zeros_like(g)
        val = base + 2.0 * g * cross + g ** 2 * J2
        return val / self.grid.deltas[None, :]


def _modes_from_samples(lambdas: np.ndarray, grid: TimeGrid, mu_samples: np.ndarray,
                        a: np.ndarray) -> ModeSet:
    """Exact variation-of-constants against the polynomial reading of mu."""
    K = lambdas.size
    N = grid.n_intervals
    c = np.einsum("mg,kng->knm", grid.Vinv, mu_samples)  # monomial coeffs of mu per interval
    mus = lambdas[:, None] * grid.deltas[None, :]
    P = _particular_poly(c, mus, grid.deltas[None, :])
    beta = np.empty((K, N))
    node_vals = np.empty((K, N + 1))
    node_vals[:, 0] = a
    decay = np.exp(-mus)
    P_end = P.sum(axis=-1)  # P(1)
    for i in range(N):
        beta[:, i] = node_vals[:, i] - P[:, i, 0]
        node_vals[:, i + 1] = P_end[:, i] + beta[:, i] * decay[:, i]
    return ModeSet(lambdas=lambdas, grid=grid, pc=P, beta=beta, node_vals=node_vals)


@dataclass
class SpectralField:
    """Element of the solution space: per-mode trajectories with derivatives."""

    basis: EigenBasis
    modes: ModeSet

    @property
    def grid(self):
        return self.modes.grid

    @property
    def n_modes(self):
        return self.modes.n_modes

    def initial_amplitudes(self) -> np.ndarray:
        return self.modes.node_vals[:, 0].copy()

    def theta_samples(self) -> np.ndarray:
        return self.modes.theta_samples()

    def theta_prime_samples(self) -> np.ndarray:
        return self.modes.theta_prime_samples()

    def norm_X(self) -> float:
        lam2 = self.basis.lambdas[:, None] ** 2
        part_d = np.sum(lam2 * self.modes.interval_theta_sq())
        part_p = np.sum(self.modes.interval_theta_prime_sq())
        return float(np.sqrt(max(part_d, 0.0)) + np.sqrt(max(part_p, 0.0)))

    def sup_norm_V_sq(self) -> float:
        """sup over sampled times of sum_k lambda_k theta_k(t)^2."""
        lam = self.basis.lambdas[:, None]
        nodes = np.sum(lam * self.modes.node_vals ** 2, axis=0).max()
        lam = lam[..., None]
        samples = np.sum(lam * self.modes.theta_samples() ** 2, axis=0).max()
        return float(max(nodes, samples))

    def _combine(self, other, sa, sb):
        if other.grid is not self.grid and not np.array_equal(other.grid.nodes, self.grid.nodes):
            raise ValueError("fields live on different time grids")
        m = ModeSet(
            lambdas=self.modes.lambdas,
            grid=self.grid,
            pc=sa * self.modes.pc + sb * other.modes.pc,
            beta=sa * self.modes.beta + sb * other.modes.beta,
            node_vals=sa * self.modes.node_vals + sb * other.modes.node_vals,
        )
        return SpectralField(basis=self.basis, modes=m)

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0)

    def __mul__(self, s: float):
        m = ModeSet(self.modes.lambdas, self.grid, s * self.modes.pc,
                    s * self.modes.beta, s * self.modes.node_vals)
        return SpectralField(basis=self.basis, modes=m)

    __rmul__ = __mul__


@dataclass
class DataPair:
    """Element of the data space: forcing samples plus initial amplitudes."""

    basis: EigenBasis
    grid: TimeGrid
    mu: np.ndarray     # (K, N, q) samples at the quadrature times
    a: np.ndarray      # (K,)

    def interval_mu_sq(self) -> np.ndarray:
        return np.einsum("kng,ng->kn", self.mu ** 2, self.grid.weights)

    def norm_Y(self) -> float:
        forcing = np.sum(self.interval_mu_sq())
        initial = np.sum(self.basis.lambdas * self.a ** 2)
        return float(np.sqrt(max(forcing, 0.0)) + np.sqrt(max(initial, 0.0)))

    def _combine(self, other, sa, sb):
        return DataPair(self.basis, self.grid, sa * self.mu + sb * other.mu,
                        sa * self.a + sb * other.a)

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0)

    def __mul__(self, s: float):
        return DataPair(self.basis, self.grid, s * self.mu, s * self.a)

    __rmul__ = __mul__


def zero_data(basis: EigenBasis, grid: TimeGrid) -> DataPair:
    K = basis.n_modes
    return DataPair(basis, grid, np.zeros((K, grid.n_intervals, grid.n_gauss)), np.zeros(K))


def project_L2_full(spaces, basis: EigenBasis, u_full: np.ndarray) -> np.ndarray:
    """(u, phi_k) against the full mass matrix; u may be nonzero on the walls."""
    ns = spaces.n_scalar
    Ms = spaces.mass_scalar
    mu_full = np.concatenate([Ms @ u_full[:ns], Ms @ u_full[ns:]])
    return basis.modes.T @ mu_full[spaces.free_dofs]


def expand_data(f, u0, basis: EigenBasis, grid: TimeGrid) -> DataPair:
    """Mode coordinates of forcing and initial velocity.

    ``f`` is None, a (K, N, q) sample array, or a callable t -> full stacked
    velocity coefficient vector; ``u0`` is None, a (K,) amplitude vector, or
    a full stacked coefficient vector.
    """
    spaces = basis.spaces
    K = basis.n_modes
    if f is None:
        mu = np.zeros((K, grid.n_intervals, grid.n_gauss))
    elif callable(f):
        mu = np.empty((K, grid.n_intervals, grid.n_gauss))
        for i in range(grid.n_intervals):
            for g in range(grid.n_gauss):
                val = np.asarray(f(grid.times[i, g]), dtype=float)
                if val.shape != (spaces.ndof_v,):
                    raise ValueError(
                        f"forcing callable must return full stacked coefficient "
                        f"vectors of length {spaces.ndof_v}, got shape {val.shape}")
                mu[:, i, g] = project_L2_full(spaces, basis, val)
    else:
        mu = np.asarray(f, dtype=float)
        if mu.shape != (K, grid.n_intervals, grid.n_gauss):
            raise ValueError("forcing sample array has the wrong shape")
        mu = mu.copy()
    if u0 is None:
        a = np.zeros(K)
    else:
        u0 = np.asarray(u0, dtype=float)
        if u0.shape == (K,):
            a = u0.copy()
        elif u0.shape == (spaces.ndof_v,):
            a = project_L2_full(spaces, basis, u0)
        else:
            raise ValueError("u0 must be mode amplitudes or a full coefficient vector")
    return DataPair(basis=basis, grid=grid, mu=mu, a=a)


class ModeTrajectory:
    """Single-mode exact solution, for direct use and verification."""

    def __init__(self, modeset: ModeSet):
        self._m = modeset

    def value(self, t):
        return float(self._m.value(float(t))[0])

    def derivative(self, t):
        return float(self._m.derivative(float(t))[0])

    @property
    def node_values(self):
        return self._m.node_vals[0]

    @property
    def samples(self):
        return self._m.theta_samples()[0]

    @property
    def derivative_samples(self):
        return self._m.theta_prime_samples()[0]


def solve_mode_ode(lam: float, mu, a: float, grid: TimeGrid) -> ModeTrajectory:
    """Exact single-mode solve; ``mu`` is a callable of t or a (N, q) sample array."""
    if lam <= 0:
        raise ValueError("decay rate must be positive")
    if callable(mu):
        samples = np.vectorize(mu)(grid.times)[None, :, :]
    else:
        samples = np.asarray(mu, dtype=float)[None, :, :]
    ms = _modes_from_samples(np.array([float(lam)]), grid, samples, np.array([float(a)]))
    return ModeTrajectory(ms)


def solve_stokes_evolution(data: DataPair, basis: EigenBasis, grid: TimeGrid) -> SpectralField:
    ms = _modes_from_samples(basis.lambdas, grid, data.mu, data.a)
    return SpectralField(basis=basis, modes=ms)


def apply_S(u: SpectralField) -> DataPair:
    """Forward Stokes evolution operator: residual functional plus initial trace."""
    return DataPair(basis=u.basis, grid=u.grid,
                    mu=u.modes.stokes_residual_samples(),
                    a=u.modes.node_vals[:, 0].copy())


@dataclass
class EnergyReport:
    max_modewise_violation: float   # worst defect of the per-mode energy identity
    n_violations: int               # grid-node/mode pairs beyond tolerance
    eq19_lhs: float
    eq19_rhs: float
    eq19a_lhs: float
    eq19a_rhs: float
    tolerance: float

    @property
    def modewise_ok(self) -> bool:
        return self.n_violations == 0

    @property
    def summed_ok(self) -> bool:
        return (self.eq19_lhs <= self.eq19_rhs + self.tolerance
                and self.eq19a_lhs <= self.eq19a_rhs + self.tolerance)

    @property
    def all_ok(self) -> bool:
        return self.modewise_ok and self.summed_ok

    def to_dict(self) -> dict:
        return {
            "max_modewise_violation": self.max_modewise_violation,
            "n_violations": self.n_violations,
            "supV_plus_deriv": self.eq19_lhs,
            "supV_plus_deriv_bound": self.eq19_rhs,
            "domain_norm_sq": self.eq19a_lhs,
            "domain_norm_sq_bound": self.eq19a_rhs,
            "tolerance": self.tolerance,
            "modewise_ok": self.modewise_ok,
            "summed_ok": self.summed_ok,
        }


def verify_energy_inequalities(u: SpectralField, data: DataPair,
                               tol: float = 1e-9) -> EnergyReport:
    """Check the mode-wise energy identity at every grid node plus the summed
    a priori bounds with explicit constants (2,2) and (6,4)."""
    lam = u.basis.lambdas
    th_nodes = u.modes.node_vals                     # (K, N+1)
    cum_dth = np.concatenate(
        [np.zeros((u.n_modes, 1)), np.cumsum(u.modes.interval_theta_prime_sq(), axis=1)], axis=1)
    cum_mu = np.concatenate(
        [np.zeros((u.n_modes, 1)), np.cumsum(data.interval_mu_sq(), axis=1)], axis=1)
    lhs = cum_dth + lam[:, None] * th_nodes ** 2
    rhs = lam[:, None] * th_nodes[:, :1] ** 2 + cum_mu
    defect = lhs - rhs
    max_violation = float(defect.max())
    n_bad = int(np.sum(defect > tol))

    total_mu = float(np.sum(data.interval_mu_sq()))
    total_a_V = float(np.sum(lam * data.a ** 2))
    eq19_lhs = float(np.sqrt(u.sup_norm_V_sq())
                     + np.sqrt(max(np.sum(u.modes.interval_theta_prime_sq()), 0.0)))
    eq19_rhs = 2.0 * np.sqrt(total_mu) + 2.0 * np.sqrt(total_a_V)
    eq19a_lhs = float(np.sum(lam[:, None] ** 2 * u.modes.interval_theta_sq()))
    eq19a_rhs = 6.0 * total_mu + 4.0 * total_a_V
    return EnergyReport(
        max_modewise_violation=max_violation,
        n_violations=n_bad,
        eq19_lhs=eq19_lhs, eq19_rhs=eq19_rhs,
        eq19a_lhs=eq19a_lhs, eq19a_rhs=eq19a_rhs,
        tolerance=tol,
    )


def norm_X(u: SpectralField) -> float:
    return u.norm_X()


def norm_Y(d: DataPair) -> float:
    return d.norm_Y()


def norm_LinfL2(u: SpectralField) -> float:
    nodes = np.sum(u.modes.node_vals ** 2, axis=0).max()
    samples = np.sum(u.modes.theta_samples() ** 2, axis=0).max()
    return float(np.sqrt(max(nodes, samples)))


def trajectories_csv_rows(u: SpectralField):
    """Rows (t, theta_1..theta_K, dtheta_1..dtheta_K) on the quadrature times."""
    grid = u.grid
    th = u.theta_samples()
    dth = u.theta_prime_samples()
    rows = []
    t0 = 0.0
    rows.append([t0] + list(u.modes.value(t0)) + list(u.modes.derivative(t0)))
    for i in range(grid.n_intervals):
        for g in range(grid.n_gauss):
            rows.append([grid.times[i, g]] + list(th[:, i, g]) + list(dth[:, i, g]))
    tN = grid.t_end
    rows.append([tN] + list(u.modes.value(tN)) + list(u.modes.derivative(tN)))
    return rows
