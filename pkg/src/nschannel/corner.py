"""Pencil analysis at a wall/outflow corner: determinant, roots, singular fit.

Localizing the steady problem at a right-angle corner where the wall meets
an in/outflow end, passing to polar/strip coordinates and Fourier
transforming yields, for each complex parameter lambda, a boundary-value
problem for three functions of the angle on (0, pi/2).  Its solvability is
governed by a 4x4 characteristic determinant D(lambda) whose zeros are the
pencil eigenvalues.  D is proportional to the scalar function

    (i lambda)^2 - 4 cos^2(i lambda pi/2) - sin^2(i lambda pi/2),

and the proportionality factor is exactly -4 (verified symbolically by the
double-angle reduction z^2 - 5/2 - (3/2) cos(pi z), z = i lambda; tests
confirm it numerically).  The strip Im(lambda) in [-1-eps, 0) contains the
single simple eigenvalue -i; certifying that is a winding-number
computation, and the corresponding eigenfields drive the singular-expansion
fit of solutions near the corner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.integrate

TWO_PI_I = 2j * np.pi


class ContourError(RuntimeError):
    """Winding contour passes too close to a root, or the count is unreliable."""


@dataclass
class PencilSample:
    lam: complex
    det_full: complex
    det_reduced: complex


@dataclass
class RootResult:
    root: complex
    residual: float
    simplicity: float      # |d/dlambda| of the reduced characteristic at the root
    simple: bool


@dataclass
class RootReport:
    re_range: tuple
    im_range: tuple
    winding_count: int
    winding_defect: float
    roots: list            # of RootResult

    def to_dict(self) -> dict:
        return {
            "re_range": [float(self.re_range[0]), float(self.re_range[1])],
            "im_range": [float(self.im_range[0]), float(self.im_range[1])],
            "winding_count": int(self.winding_count),
            "winding_defect": float(self.winding_defect),
            "roots": [
                {
                    "re": float(r.root.real),
                    "im": float(r.root.imag),
                    "residual": float(r.residual),
                    # |d/dlambda| at the root: a computable proxy for pencil
                    # simplicity, not the operator-level definition itself
                    "simplicity_proxy": float(r.simplicity),
                    "simple": bool(r.simple),
                }
                for r in self.roots
            ],
        }


@dataclass
class SingularExpansion:
    c: np.ndarray             # four intensity factors
    regular_residual: float   # rms misfit after subtracting singular + regular parts
    singular_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def to_dict(self) -> dict:
        return {
            "c": [float(v) for v in self.c],
            "regular_residual": float(self.regular_residual),
        }


# --- reduced characteristic ---

def reduced_characteristic(lam) -> complex:
    """(i lam)^2 - 4 cos^2 - sin^2, evaluated through the double-angle form
    z^2 - 5/2 - (3/2) cos(pi z) to avoid squaring large hyperbolic factors."""
    z = 1j * np.asarray(lam, dtype=complex)
    return z * z - 2.5 - 1.5 * np.cos(np.pi * z)


def reduced_characteristic_direct(lam) -> complex:
    """Literal form, kept as an independent cross-check of the stabilized one."""
    z = 1j * np.asarray(lam, dtype=complex)
    return z * z - 4.0 * np.cos(z * np.pi / 2) ** 2 - np.sin(z * np.pi / 2) ** 2


def reduced_characteristic_derivative(lam) -> complex:
    z = 1j * np.asarray(lam, dtype=complex)
    return 1j * (2.0 * z + 1.5 * np.pi * np.sin(np.pi * z))


def real_imag_system(a: float, b: float) -> tuple[float, float]:
    """Residuals of the split real/imaginary root system at lambda = a + i b.

    These are exactly Re and Im of the reduced characteristic; the split form
    is what the localization argument reasons about (sign analysis in b,
    exponential domination in a)."""
    r1 = (b * b - a * a) - 2.5 - 0.75 * np.cos(np.pi * b) * (np.exp(np.pi * a) + np.exp(-np.pi * a))
    r2 = -2.0 * a * b - 0.75 * np.sin(np.pi * b) * (np.exp(np.pi * a) - np.exp(-np.pi * a))
    return float(r1), float(r2)


# --- fundamental system of the transformed ODEs ---

def fundamental_columns(lam: complex, omega) -> np.ndarray:
    """(3, 4) array of the four homogeneous solutions (e1, e2, e_q) at angle omega.

    Falls back to the separate lambda = 0 fundamental system exactly at 0.
    """
    omega = np.asarray(omega)
    out = np.empty((3, 4) + omega.shape, dtype=complex)
    if lam == 0:
        out[0, 0] = np.cos(2 * omega)
        out[1, 0] = np.sin(2 * omega) - 2 * omega
        out[2, 0] = 4 * np.cos(omega)
        out[0, 1] = -np.sin(2 * omega) - 2 * omega
        out[1, 1] = np.cos(2 * omega)
        out[2, 1] = -4 * np.sin(omega)
        out[0, 2] = 1.0
        out[1, 2] = 0.0
        out[2, 2] = 0.0
        out[0, 3] = 0.0
        out[1, 3] = 1.0
        out[2, 3] = 0.0
        return out
    z = 1j * lam
    out[0, 0] = np.cos(z * omega)
    out[1, 0] = -np.sin(z * omega)
    out[2, 0] = 0.0
    out[0, 1] = np.sin(z * omega)
    out[1, 1] = np.cos(z * omega)
    out[2, 1] = 0.0
    out[0, 2] = -(z / 2) * np.cos((z - 2) * omega)
    out[1, 2] = np.sin(z * omega) + (z / 2) * np.sin((z - 2) * omega)
    out[2, 2] = -2 * z * np.cos((z - 1) * omega)
    out[0, 3] = (z / 2) * np.sin((z - 2) * omega)
    out[1, 3] = np.cos(z * omega) + (z / 2) * np.cos((z - 2) * omega)
    out[2, 3] = 2 * z * np.sin((z - 1) * omega)
    return out


def fundamental_columns_domega(lam: complex, omega) -> np.ndarray:
    """Analytic d/d(omega) of the fundamental columns (lambda != 0 branch)."""
    omega = np.asarray(omega)
    out = np.empty((3, 4) + omega.shape, dtype=complex)
    if lam == 0:
        out[0, 0] = -2 * np.sin(2 * omega)
        out[1, 0] = 2 * np.cos(2 * omega) - 2
        out[2, 0] = -4 * np.sin(omega)
        out[0, 1] = -2 * np.cos(2 * omega) - 2
        out[1, 1] = -2 * np.sin(2 * omega)
        out[2, 1] = -4 * np.cos(omega)
        out[:, 2] = 0.0
        out[:, 3] = 0.0
        return out
    z = 1j * lam
    out[0, 0] = -z * np.sin(z * omega)
    out[1, 0] = -z * np.cos(z * omega)
    out[2, 0] = 0.0
    out[0, 1] = z * np.cos(z * omega)
    out[1, 1] = -z * np.sin(z * omega)
    out[2, 1] = 0.0
    out[0, 2] = (z / 2) * (z - 2) * np.sin((z - 2) * omega)
    out[1, 2] = z * np.cos(z * omega) + (z / 2) * (z - 2) * np.cos((z - 2) * omega)
    out[2, 2] = 2 * z * (z - 1) * np.sin((z - 1) * omega)
    out[0, 3] = (z / 2) * (z - 2) * np.cos((z - 2) * omega)
    out[1, 3] = -z * np.sin(z * omega) - (z / 2) * (z - 2) * np.sin((z - 2) * omega)
    out[2, 3] = 2 * z * (z - 1) * np.cos((z - 1) * omega)
    return out


def general_solution(lam: complex, C, omega):
    """Combination of the fundamental system with coefficients C (length 4)."""
    C = np.asarray(C, dtype=complex)
    if C.shape != (4,):
        raise ValueError("expected four coefficients")
    cols = fundamental_columns(lam, omega)
    return np.tensordot(cols, C, axes=([1], [0]))


def pencil_matrix(lam: complex) -> np.ndarray:
    """The 4x4 characteristic matrix with constant first two rows
    (0, 4-il, 0, -2+il), (2+il, 0, 4+il, 0) and trigonometric wall rows."""
    if lam == 0:
        raise ValueError("lambda = 0 is handled by a separate nondegeneracy check")
    z = 1j * lam
    c = np.cos(z * np.pi / 2)
    s = np.sin(z * np.pi / 2)
    c2 = np.cos((z - 2) * np.pi / 2)
    s2 = np.sin((z - 2) * np.pi / 2)
    d31 = c - (z / 2) * c2
    d41 = (z / 2) * s2
    d32 = s - (z / 2) * s2
    d42 = -(z / 2) * c2
    d33 = -(z / 2) * c2
    d43 = s + (z / 2) * s2
    d34 = (z / 2) * s2
    d44 = c + (z / 2) * c2
    return np.array([
        [0.0, 4.0 - z, 0.0, -2.0 + z],
        [2.0 + z, 0.0, 4.0 + z, 0.0],
        [d31, d32, d33, d34],
        [d41, d42, d43, d44],
    ], dtype=complex)


def pencil_matrix_from_boundary_operators(lam: complex) -> np.ndarray:
    """Rebuild the characteristic matrix by applying the boundary operators
    to the fundamental system.

    The printed matrix corresponds to the recombined columns
    (c1 + c3, c2 - c4, c3, c4) with the two outflow-end rows divided by
    (i lambda)/2; the column recombination is unimodular and the row scaling
    nonvanishing for lambda != 0, so the root set is unchanged.  Agreement
    with ``pencil_matrix`` entry by entry is the double-construction check.
    """
    if lam == 0:
        raise ValueError("lambda = 0 is handled by a separate nondegeneracy check")
    z = 1j * lam
    f0 = fundamental_columns(lam, 0.0)
    df0 = fundamental_columns_domega(lam, 0.0)
    f1 = fundamental_columns(lam, np.pi / 2)
    recomb = np.array([
        [1, 0, 0, 0],
        [0, 1, 0, 0],
        [1, 0, 1, 0],
        [0, -1, 0, 1],
    ], dtype=complex)  # columns: c1+c3, c2-c4, c3, c4
    f0 = f0 @ recomb
    df0 = df0 @ recomb
    f1 = f1 @ recomb
    M = np.empty((4, 4), dtype=complex)
    M[0] = df0[0] * (2.0 / z)             # e1' at omega=0
    M[1] = (df0[1] - f0[2]) * (2.0 / z)   # e2' - e_q at omega=0
    M[2] = f1[0]                          # e1 at omega=pi/2
    M[3] = f1[1]                          # e2 at omega=pi/2
    return M


def pencil_sample(lam: complex) -> PencilSample:
    return PencilSample(
        lam=complex(lam),
        det_full=complex(np.linalg.det(pencil_matrix(lam))),
        det_reduced=complex(reduced_characteristic(lam)),
    )


# --- root localization ---

def count_roots(re_range, im_range, n_contour: int = 512,
                min_modulus: float = 1e-8) -> tuple[int, float]:
    """Winding number of the reduced characteristic around the rectangle.

    Adaptive quadrature of F'/F over the four edges; raises ContourError if
    the contour passes within ``min_modulus`` of a root or if the integral
    is not an integer to within 0.01.
    """
    re_lo, re_hi = float(re_range[0]), float(re_range[1])
    im_lo, im_hi = float(im_range[0]), float(im_range[1])
    if re_lo >= re_hi or im_lo >= im_hi:
        raise ValueError("degenerate rectangle")
    corners = [re_lo + 1j * im_lo, re_hi + 1j * im_lo, re_hi + 1j * im_hi, re_lo + 1j * im_hi]

    smin = np.inf
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        ts = np.linspace(0.0, 1.0, max(n_contour // 4, 16) + 1)  # endpoints + midpoint
        vals = np.abs(reduced_characteristic(a + (b - a) * ts))
        smin = min(smin, vals.min())
    if smin < min_modulus:
        raise ContourError(
            f"contour modulus {smin:.3e} below threshold {min_modulus:.1e}; "
            "nudge the window away from a root")

    total = 0j
    with np.errstate(all="ignore"):
        for k in range(4):
            a, b = corners[k], corners[(k + 1) % 4]

            def integrand(t, a=a, b=b):
                lam = a + (b - a) * t
                return (reduced_characteristic_derivative(lam)
                        / reduced_characteristic(lam)) * (b - a)

            try:
                val, _ = scipy.integrate.quad(integrand, 0.0, 1.0, complex_func=True,
                                              limit=400, epsabs=1e-10, epsrel=1e-10)
            except (ValueError, ZeroDivisionError) as exc:
                raise ContourError(f"winding quadrature failed near a root: {exc}") from exc
            total += val
    if not np.isfinite(total):
        raise ContourError("winding quadrature diverged; a root sits on the contour")
    w = total / TWO_PI_I
    count = int(np.rint(w.real))
    defect = float(abs(w - count))
    if defect > 0.01:
        raise ContourError(f"winding integral {w} is not close to an integer")
    return count, defect


def find_root(guess: complex, tol: float = 1e-12, maxiter: int = 50,
              simple_threshold: float = 1e-6) -> RootResult:
    """Complex Newton iteration on the reduced characteristic."""
    lam = complex(guess)
    for _ in range(maxiter):
        f = complex(reduced_characteristic(lam))
        if abs(f) <= tol:
            break
        df = complex(reduced_characteristic_derivative(lam))
        if df == 0:
            raise RuntimeError(f"vanishing derivative at {lam}")
        step = f / df
        lam = lam - step
    else:
        raise RuntimeError(f"root iteration from {guess} did not converge")
    resid = abs(complex(reduced_characteristic(lam)))
    simp = abs(complex(reduced_characteristic_derivative(lam)))
    return RootResult(root=lam, residual=float(resid), simplicity=float(simp),
                      simple=bool(simp > simple_threshold))


def locate_roots(re_range, im_range, n_seeds: int = 61, tol: float = 1e-12) -> RootReport:
    """Certified root list: winding count plus Newton refinement from grid seeds."""
    count, defect = count_roots(re_range, im_range)
    res = np.linspace(re_range[0], re_range[1], n_seeds)
    ims = np.linspace(im_range[0], im_range[1], max(n_seeds // 3, 9))
    R, I = np.meshgrid(res, ims, indexing="ij")
    lam = R + 1j * I
    vals = np.abs(reduced_characteristic(lam))
    order = np.argsort(vals.ravel())
    roots: list[RootResult] = []
    for idx in order[: 4 * max(count, 1)]:
        try:
            r = find_root(lam.ravel()[idx], tol=tol)
        except RuntimeError:
            continue
        if not (re_range[0] - 1e-9 <= r.root.real <= re_range[1] + 1e-9
                and im_range[0] - 1e-9 <= r.root.imag <= im_range[1] + 1e-9):
            continue
        if any(abs(r.root - r0.root) < 1e-6 for r0 in roots):
            continue
        roots.append(r)
        if len(roots) == count:
            break
    if len(roots) != count:
        raise RuntimeError(
            f"winding count {count} but only {len(roots)} roots located; "
            "increase the seed density")
    return RootReport(re_range=tuple(re_range), im_range=tuple(im_range),
                      winding_count=count, winding_defect=defect, roots=roots)


# --- singular fields near the corner and the expansion fit ---

def singular_basis(r, omega) -> np.ndarray:
    """The four corner fields (u1, u2, q) printed for the eigenvalue -i,
    evaluated at polar points; shape (4, 3) + shape(r)."""
    r = np.asarray(r, dtype=float)
    omega = np.asarray(omega, dtype=float)
    x = r * np.cos(omega)
    y = r * np.sin(omega)
    zero = np.zeros_like(x)
    f1 = np.stack([x, -y, zero])
    f2 = np.stack([y, x, zero])
    f3 = np.stack([-x, y, np.full_like(x, -4.0)])
    f4 = np.stack([-y, 3.0 * x, zero])
    return np.stack([f1, f2, f3, f4])


def pencil_kernel_coefficients(tol: float = 1e-10) -> np.ndarray:
    """Intensity pattern of the actual eigenfield at -i in the singular basis.

    Computed from the kernel of the characteristic matrix, mapped through
    the column recombination and the printed normalization of the fields.
    """
    M = pencil_matrix(-1j)
    _, s, Vh = np.linalg.svd(M)
    if s[-1] > tol:
        raise RuntimeError("characteristic matrix at -i is unexpectedly nonsingular")
    Cprime = Vh[-1].conj()
    recomb = np.array([
        [1, 0, 0, 0],
        [0, 1, 0, 0],
        [1, 0, 1, 0],
        [0, -1, 0, 1],
    ], dtype=complex)
    C = recomb @ Cprime
    # printed fields scale columns 3 and 4 of the fundamental system by 1/2
    c = C * np.array([1.0, 1.0, 0.5, 0.5])
    c = c / c[np.argmax(np.abs(c))]
    return c


@dataclass
class CornerSamples:
    r: np.ndarray
    omega: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    q: np.ndarray


def _regular_design(x, y):
    """Low-degree regular part: velocity constants + pure quadratics,
    pressure linear in (x, y).  Linear velocity monomials and the constant
    pressure are excluded because the singular fields span them; keeping
    them would make the intensity factors unidentifiable."""
    one = np.ones_like(x)
    vel = np.stack([one, x * x, x * y, y * y], axis=1)
    press = np.stack([x, y], axis=1)
    return vel, press


def fit_singular_expansion(samples: CornerSamples, delta: float) -> SingularExpansion:
    """Least-squares fit of corner samples against the four singular fields
    plus a polynomial regular part; returns intensity factors and misfit."""
    keep = samples.r <= delta * (1 + 1e-12)
    r, om = samples.r[keep], samples.omega[keep]
    u1, u2, q = samples.u1[keep], samples.u2[keep], samples.q[keep]
    n = r.size
    if n < 10:
        raise ValueError("not enough samples inside the fit radius")
    x = r * np.cos(om)
    y = r * np.sin(om)
    sb = singular_basis(r, om)           # (4, 3, n)
    vel, press = _regular_design(x, y)
    nreg_v, nreg_p = vel.shape[1], press.shape[1]
    ncols = 4 + 2 * nreg_v + nreg_p
    A = np.zeros((3 * n, ncols))
    rhs = np.concatenate([u1, u2, q])
    for j in range(4):
        A[:n, j] = sb[j, 0]
        A[n:2 * n, j] = sb[j, 1]
        A[2 * n:, j] = sb[j, 2]
    A[:n, 4:4 + nreg_v] = vel
    A[n:2 * n, 4 + nreg_v:4 + 2 * nreg_v] = vel
    A[2 * n:, 4 + 2 * nreg_v:] = press
    sol, res, rank, sv = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < ncols:
        raise np.linalg.LinAlgError(
            f"singular fit system is rank deficient ({rank} < {ncols}); add samples")
    misfit = np.linalg.norm(A @ sol - rhs) / np.sqrt(3 * n)
    return SingularExpansion(c=sol[:4].copy(), regular_residual=float(misfit),
                             singular_values=sv)


def corner_frame(mesh, corner_vertex: int):
    """Orthogonal local frame at a corner: first axis along the outflow-end
    ray (angle 0), second along the wall ray (angle pi/2)."""
    from .mesh import DIRICHLET, NEUMANN

    v = int(corner_vertex)
    t_n = t_d = None
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        if v == a or v == b:
            other = int(b) if v == int(a) else int(a)
            d = mesh.vertices[other] - mesh.vertices[v]
            d = d / np.linalg.norm(d)
            if tag == NEUMANN and t_n is None:
                t_n = d
            elif tag == DIRICHLET and t_d is None:
                t_d = d
    if t_n is None or t_d is None:
        raise ValueError(f"vertex {corner_vertex} is not a tag-change corner")
    return mesh.vertices[v].copy(), np.column_stack([t_n, t_d])


def sample_corner_field(spaces, velocity_free, pressure, corner_vertex: int,
                        delta: float, n_r: int = 8, n_omega: int = 11) -> CornerSamples:
    """Evaluate a discrete (velocity, pressure) pair on an annular sector at
    a corner, rotated into the local frame used by the pencil analysis."""
    from .fem import FieldEvaluator

    origin, Q = corner_frame(spaces.mesh, corner_vertex)
    rr = np.linspace(delta / 4, delta, n_r)
    ww = np.linspace(0.05, np.pi / 2 - 0.05, n_omega)
    R, W = np.meshgrid(rr, ww, indexing="ij")
    r, om = R.ravel(), W.ravel()
    local = np.stack([r * np.cos(om), r * np.sin(om)], axis=1)
    pts = origin[None, :] + local @ Q.T
    ev = FieldEvaluator(spaces)
    u_full = spaces.expand(velocity_free)
    uv = ev.velocity(u_full, pts)
    qv = ev.pressure(pressure, pts)
    u_loc = uv @ Q
    return CornerSamples(r=r, omega=om, u1=u_loc[:, 0], u2=u_loc[:, 1], q=qv)
