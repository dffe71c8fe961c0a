import numpy as np
import pytest
import scipy.linalg

from nschannel import stokes
from nschannel.fem import (FieldEvaluator, assemble, collapsed_rule,
                           export_matrix_coo, inner_L2, inner_V,
                           interpolate_velocity, triangle_rule)
from nschannel.mesh import build_channel_mesh, refine


@pytest.fixture(scope="module")
def unit_square():
    return assemble(build_channel_mesh(1.0, 1.0, 4, 4))


def test_quadrature_rules_integrate_polynomials():
    lam5, w5 = triangle_rule(5)
    lam_hi, w_hi = collapsed_rule(10)
    # integrate x^a y^b over the reference triangle: a! b! / (a+b+2)!
    from math import factorial

    for a, b in [(0, 0), (2, 1), (3, 2), (1, 4), (5, 0)]:
        exact = 2.0 * factorial(a) * factorial(b) / factorial(a + b + 2)
        for lam, w in ((lam5, w5), (lam_hi, w_hi)):
            x, y = lam[:, 1], lam[:, 2]
            val = np.sum(w * x ** a * y ** b)  # weights normalized to area 1
            assert val == pytest.approx(exact, rel=1e-13)


def test_mass_of_constant_is_area(unit_square):
    sp = unit_square
    u = interpolate_velocity(sp, lambda x, y: (1.0, 0.0))
    ns = sp.n_scalar
    val = u[:ns] @ (sp.mass_scalar @ u[:ns]) + u[ns:] @ (sp.mass_scalar @ u[ns:])
    assert val == pytest.approx(1.0, abs=1e-12)


def test_stiffness_of_constant_is_zero(unit_square):
    sp = unit_square
    u = interpolate_velocity(sp, lambda x, y: (1.0, 0.0))
    ns = sp.n_scalar
    val = u[:ns] @ (sp.stiff_scalar @ u[:ns]) + u[ns:] @ (sp.stiff_scalar @ u[ns:])
    assert abs(val) < 1e-12


def test_stiffness_of_linear_shear(unit_square):
    sp = unit_square
    u = interpolate_velocity(sp, lambda x, y: (y, 0.0))
    ns = sp.n_scalar
    val = u[:ns] @ (sp.stiff_scalar @ u[:ns])
    assert val == pytest.approx(1.0, abs=1e-12)


def test_inner_products_spd_and_symmetric(unit_square):
    sp = unit_square
    rng = np.random.default_rng(0)
    for _ in range(5):
        u = rng.standard_normal(sp.n_free)
        v = rng.standard_normal(sp.n_free)
        assert inner_L2(sp, u, u) > 0
        rel = abs(inner_V(sp, u, v) - inner_V(sp, v, u))
        rel /= max(abs(inner_V(sp, u, v)), 1e-30)
        assert rel < 1e-13
    z = np.zeros(sp.n_free)
    assert inner_L2(sp, z, z) == 0.0


def test_dimension_mismatch_raises(unit_square):
    sp = unit_square
    with pytest.raises(ValueError):
        inner_L2(sp, np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        inner_V(sp, np.zeros(sp.n_free), np.zeros(sp.n_free + 1))


def test_dirichlet_dofs_sit_on_walls(unit_square):
    sp = unit_square
    ns = sp.n_scalar
    for d in sp.dirichlet_dofs:
        x, y = sp.dof_coords[d % ns]
        assert min(abs(y), abs(y - 1.0)) < 1e-14  # default tags: walls at y=0,1


def scalar_laplace_eigs(spc, k=6):
    Kd = spc.stiff_scalar[spc.free_scalar][:, spc.free_scalar].toarray()
    Md = spc.mass_scalar[spc.free_scalar][:, spc.free_scalar].toarray()
    w = scipy.linalg.eigh(Kd, Md, eigvals_only=True)
    return w[:k]


def test_scalar_laplace_eigenvalues_match_separation_of_variables():
    # oracle: eigenvalues (m pi / L)^2 + (n pi)^2, m >= 0, n >= 1, on the
    # channel with walls at y in {0,1} and free ends at x in {0,L}
    L = 3.0
    exact = sorted((m * np.pi / L) ** 2 + (n * np.pi) ** 2
                   for m in range(12) for n in range(1, 6))[:6]
    errs = []
    for nx, ny in [(12, 4), (24, 8)]:
        spc = assemble(build_channel_mesh(L, 1.0, nx, ny))
        got = scalar_laplace_eigs(spc, 6)
        errs.append((np.abs(got - np.array(exact)) / np.array(exact)).max())
    assert errs[0] < 0.02
    # at least second-order convergence under halving
    assert errs[1] <= errs[0] / 3.5


def test_inf_sup_constant_bounded_on_two_levels():
    betas = []
    for nx, ny in [(12, 4), (24, 8)]:
        spc = assemble(build_channel_mesh(3.0, 1.0, nx, ny))
        betas.append(stokes.inf_sup_constant(spc))
    for b in betas:
        assert b > 0.1
    assert 0.5 <= betas[0] / betas[1] <= 2.0


def test_divergence_matrix_annihilates_divfree_fields(unit_square):
    sp = unit_square
    u = interpolate_velocity(sp, lambda x, y: (x, -y))
    assert np.abs(sp.B_full @ u).max() < 1e-13


def test_field_evaluator_velocity_and_gradient(unit_square):
    sp = unit_square
    u = interpolate_velocity(sp, lambda x, y: (x * x + y, x - y * y))
    ev = FieldEvaluator(sp)
    pts = np.array([[0.31, 0.43], [0.77, 0.12], [0.5, 0.99]])
    vals = ev.velocity(u, pts)
    expect = np.column_stack([pts[:, 0] ** 2 + pts[:, 1], pts[:, 0] - pts[:, 1] ** 2])
    assert np.abs(vals - expect).max() < 1e-12
    g = ev.velocity_gradient(u, pts)
    for i, (x, y) in enumerate(pts):
        assert np.abs(g[i] - np.array([[2 * x, 1.0], [1.0, -2 * y]])).max() < 1e-11


def test_assemble_rejects_empty_and_refined_mesh_assembles():
    m = refine(build_channel_mesh(1.0, 1.0, 2, 2))
    spc = assemble(m)
    u = interpolate_velocity(spc, lambda x, y: (1.0, 0.0))
    ns = spc.n_scalar
    assert u[:ns] @ (spc.mass_scalar @ u[:ns]) == pytest.approx(1.0, abs=1e-12)


def test_matrix_coo_export(tmp_path, unit_square):
    p = tmp_path / "mass.txt"
    export_matrix_coo(unit_square.Mp, p)
    lines = p.read_text().strip().splitlines()
    n = unit_square.ndof_p
    assert lines[0] == f"% {n} {n} {unit_square.Mp.nnz}"
    i, j, v = lines[1].split()
    assert float(v) != 0.0


def test_operator_matrix_invariants(unit_square):
    sp = unit_square
    assert abs(sp.M - sp.M.T).max() <= 1e-15
    assert abs(sp.K - sp.K.T).max() <= 1e-15
    # K positive definite on the wall-constrained subspace (nonempty walls)
    import scipy.linalg
    scipy.linalg.cholesky(sp.K.toarray())
    # B has full row rank when the outflow part is nonempty
    sv = np.linalg.svd(sp.B.toarray(), compute_uv=False)
    assert sv.min() > 1e-10
