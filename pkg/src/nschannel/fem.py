"""Taylor-Hood (P2 velocity / P1 pressure) assembly on tagged channel meshes.

Builds the discrete velocity mass matrix (the L2 inner product), the
stiffness matrix (the gradient-gradient inner product, which is elliptic on
the wall-constrained subspace because the Dirichlet part is nonempty), the
divergence-constraint matrix, and the pressure mass matrix.  Velocity dofs
sitting on Dirichlet walls are eliminated; dofs on the do-nothing ends stay
free, which is exactly how the natural outflow condition enters a Galerkin
method.  Velocity vectors are stored with the two components stacked:
``[u_x-dofs; u_y-dofs]``.

All integrands are polynomial, so a degree-5 Gauss rule on triangles makes
every assembly integral exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .mesh import ChannelMesh, DIRICHLET


# --- quadrature on the reference triangle (barycentric points, weights sum to 1) ---

def triangle_rule(degree: int = 5):
    """Symmetric Gauss rules; degree 5 is the 7-point Radon rule."""
    if degree <= 1:
        pts = np.array([[1 / 3, 1 / 3, 1 / 3]])
        w = np.array([1.0])
    elif degree <= 2:
        pts = np.array([[2 / 3, 1 / 6, 1 / 6],
                        [1 / 6, 2 / 3, 1 / 6],
                        [1 / 6, 1 / 6, 2 / 3]])
        w = np.full(3, 1 / 3)
    elif degree <= 5:
        s15 = np.sqrt(15.0)
        a = (6 + s15) / 21
        b = (6 - s15) / 21
        wa = (155 + s15) / 1200
        wb = (155 - s15) / 1200
        pts = [[1 / 3, 1 / 3, 1 / 3]]
        for v in (a, b):
            pts += [[1 - 2 * v, v, v], [v, 1 - 2 * v, v], [v, v, 1 - 2 * v]]
        pts = np.array(pts)
        w = np.array([9 / 40, wa, wa, wa, wb, wb, wb])
    else:
        return collapsed_rule(degree // 2 + 2)
    return pts, w


def collapsed_rule(n: int):
    """Tensor Gauss rule mapped to the triangle (Duffy); exact to degree ~2n-3.

    Independent of the symmetric rules above; used as a brute-force
    quadrature oracle in tests.
    """
    x, wx = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1)
    wx = 0.5 * wx
    X, Y = np.meshgrid(x, x, indexing="ij")
    WX, WY = np.meshgrid(wx, wx, indexing="ij")
    xi = X.ravel()
    eta = (Y * (1 - X)).ravel()
    w = (WX * WY * (1 - X)).ravel() * 2.0  # reference triangle area 1/2, weights sum to 1
    lam = np.column_stack([1 - xi - eta, xi, eta])
    return lam, w


# --- P2 / P1 shape functions in barycentric coordinates ---

_DL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # grad of (L0, L1, L2) in (xi, eta)


def p2_values(lam: np.ndarray) -> np.ndarray:
    """(nq, 6): vertex functions then midpoints of edges (0,1), (1,2), (2,0)."""
    L0, L1, L2 = lam[:, 0], lam[:, 1], lam[:, 2]
    return np.column_stack([
        L0 * (2 * L0 - 1), L1 * (2 * L1 - 1), L2 * (2 * L2 - 1),
        4 * L0 * L1, 4 * L1 * L2, 4 * L2 * L0,
    ])


def p2_ref_grads(lam: np.ndarray) -> np.ndarray:
    """(nq, 6, 2) gradients in reference coordinates."""
    nq = lam.shape[0]
    g = np.zeros((nq, 6, 2))
    for i in range(3):
        g[:, i, :] = (4 * lam[:, i, None] - 1) * _DL[i]
    pairs = [(0, 1), (1, 2), (2, 0)]
    for k, (i, j) in enumerate(pairs):
        g[:, 3 + k, :] = 4 * (lam[:, i, None] * _DL[j] + lam[:, j, None] * _DL[i])
    return g


def p1_values(lam: np.ndarray) -> np.ndarray:
    return lam.copy()


@dataclass
class DiscreteSpaces:
    """Assembled operators of the discrete velocity/pressure pair.

    M, K, B act on free velocity vectors (Dirichlet dofs eliminated); the
    ``*_full`` scalar matrices act on single-component coefficient vectors
    over all P2 dofs and are kept for interpolation and quadrature work.
    """

    mesh: ChannelMesh
    M: sp.csr_matrix                 # velocity mass on free dofs
    K: sp.csr_matrix                 # velocity stiffness on free dofs
    B: sp.csr_matrix                 # divergence constraint, pressure x free velocity
    Mp: sp.csr_matrix                # pressure mass
    mass_scalar: sp.csr_matrix       # full single-component P2 mass
    stiff_scalar: sp.csr_matrix      # full single-component P2 stiffness
    B_full: sp.csr_matrix            # pressure x full stacked velocity
    dirichlet_dofs: np.ndarray       # velocity dof indices pinned to zero
    free_dofs: np.ndarray            # complementary velocity dof indices
    free_scalar: np.ndarray          # free single-component dofs
    dof_coords: np.ndarray           # (n_scalar, 2) coordinates of P2 dofs
    edges: np.ndarray                # (n_edges, 2) vertex pairs defining midpoint dofs
    ndof_v: int
    ndof_p: int

    @property
    def n_scalar(self):
        return self.dof_coords.shape[0]

    @property
    def n_free(self):
        return self.free_dofs.size

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        """Free velocity vector -> full stacked vector with zeros on the walls."""
        u = np.zeros(self.ndof_v)
        u[self.free_dofs] = u_free
        return u

    def restrict(self, u_full: np.ndarray) -> np.ndarray:
        return u_full[self.free_dofs]


class AssemblyError(ValueError):
    pass


def _scalar_dofs(mesh: ChannelMesh):
    """P2 dof layout: vertices first, then one dof per unique edge."""
    edge_id: dict[tuple[int, int], int] = {}
    tri_dofs = np.empty((mesh.n_triangles, 6), dtype=np.int64)
    nv = mesh.n_vertices
    pairs = [(0, 1), (1, 2), (2, 0)]
    edges = []
    for t, (a, b, c) in enumerate(mesh.triangles):
        vs = (int(a), int(b), int(c))
        tri_dofs[t, :3] = vs
        for k, (i, j) in enumerate(pairs):
            key = (min(vs[i], vs[j]), max(vs[i], vs[j]))
            if key not in edge_id:
                edge_id[key] = nv + len(edges)
                edges.append(key)
            tri_dofs[t, 3 + k] = edge_id[key]
    edges = np.array(edges, dtype=np.int64)
    mid_coords = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    dof_coords = np.vstack([mesh.vertices, mid_coords])
    return tri_dofs, edges, edge_id, dof_coords


def _element_geometry(mesh: ChannelMesh):
    v = mesh.vertices[mesh.triangles]            # (ne, 3, 2)
    J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=1)  # rows are edge vectors
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0):
        raise AssemblyError("mesh contains non-positively-oriented triangles")
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1]
    inv[:, 0, 1] = -J[:, 0, 1]
    inv[:, 1, 0] = -J[:, 1, 0]
    inv[:, 1, 1] = J[:, 0, 0]
    inv /= det[:, None, None]
    area = 0.5 * det
    return J, inv, area


def physical_grads(mesh: ChannelMesh, lam: np.ndarray):
    """(ne, nq, 6, 2) physical P2 gradients at the rule points."""
    _, Jinv, _ = _element_geometry(mesh)
    gref = p2_ref_grads(lam)                     # (nq, 6, 2) in (xi, eta)
    # x = v0 + J^T (xi, eta), so grad_x = J^{-1} grad_ref
    return np.einsum("qic,edc->eqid", gref, Jinv)


def assemble(mesh: ChannelMesh, quad_degree: int = 5) -> DiscreteSpaces:
    if mesh.n_triangles == 0:
        raise AssemblyError("empty mesh")
    if mesh.boundary_edges.shape[0] == 0:
        raise AssemblyError("mesh has no tagged boundary edges")

    tri_dofs, edges, edge_id, dof_coords = _scalar_dofs(mesh)
    ns = dof_coords.shape[0]
    lam, w = triangle_rule(quad_degree)
    N2 = p2_values(lam)
    N1 = p1_values(lam)
    _, Jinv, area = _element_geometry(mesh)
    G = physical_grads(mesh, lam)                # (ne, nq, 6, 2)
    wq = w[None, :] * area[:, None]              # (ne, nq)

    # scalar mass / stiffness
    Mloc = np.einsum("eq,qi,qj->eij", wq, N2, N2)
    Kloc = np.einsum("eq,eqid,eqjd->eij", wq, G, G)

    rows = np.repeat(tri_dofs, 6, axis=1).ravel()
    cols = np.tile(tri_dofs, (1, 6)).ravel()
    Ms = sp.coo_matrix((Mloc.ravel(), (rows, cols)), shape=(ns, ns)).tocsr()
    Ks = sp.coo_matrix((Kloc.ravel(), (rows, cols)), shape=(ns, ns)).tocsr()

    # divergence constraint: B[p, (c, j)] = integral psi_p d(phi_j)/dx_c
    npress = mesh.n_vertices
    tri_p = mesh.triangles
    prow = np.repeat(tri_p, 6, axis=1).ravel()
    bx = np.einsum("eq,qp,eqj->epj", wq, N1, G[:, :, :, 0]).ravel()
    by = np.einsum("eq,qp,eqj->epj", wq, N1, G[:, :, :, 1]).ravel()
    vcol = np.tile(tri_dofs, (1, 3)).ravel()
    Bx = sp.coo_matrix((bx, (prow, vcol)), shape=(npress, ns)).tocsr()
    By = sp.coo_matrix((by, (prow, vcol)), shape=(npress, ns)).tocsr()
    B_full = sp.hstack([Bx, By]).tocsr()

    # pressure mass
    Mp_loc = np.einsum("eq,qp,qr->epr", wq, N1, N1)
    prow2 = np.repeat(tri_p, 3, axis=1).ravel()
    pcol2 = np.tile(tri_p, (1, 3)).ravel()
    Mp = sp.coo_matrix((Mp_loc.ravel(), (prow2, pcol2)), shape=(npress, npress)).tocsr()

    # Dirichlet dofs: wall vertices and wall edge midpoints, both components
    dir_scalar = set()
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        if tag == DIRICHLET:
            dir_scalar.add(int(a))
            dir_scalar.add(int(b))
            key = (min(int(a), int(b)), max(int(a), int(b)))
            dir_scalar.add(edge_id[key])
    dir_scalar = np.array(sorted(dir_scalar), dtype=np.int64)
    free_scalar = np.setdiff1d(np.arange(ns), dir_scalar)
    dirichlet = np.concatenate([dir_scalar, dir_scalar + ns])
    free = np.concatenate([free_scalar, free_scalar + ns])

    Mff = Ms[free_scalar][:, free_scalar]
    Kff = Ks[free_scalar][:, free_scalar]
    M = sp.block_diag([Mff, Mff]).tocsr()
    K = sp.block_diag([Kff, Kff]).tocsr()
    Bf = sp.hstack([Bx[:, free_scalar], By[:, free_scalar]]).tocsr()

    return DiscreteSpaces(
        mesh=mesh, M=M, K=K, B=Bf, Mp=Mp,
        mass_scalar=Ms, stiff_scalar=Ks, B_full=B_full,
        dirichlet_dofs=dirichlet, free_dofs=free, free_scalar=free_scalar,
        dof_coords=dof_coords, edges=edges,
        ndof_v=2 * ns, ndof_p=npress,
    )


def inner_L2(spaces: DiscreteSpaces, u: np.ndarray, v: np.ndarray) -> float:
    if u.shape != (spaces.n_free,) or v.shape != (spaces.n_free,):
        raise ValueError(f"expected free velocity vectors of length {spaces.n_free}")
    return float(u @ (spaces.M @ v))


def inner_V(spaces: DiscreteSpaces, u: np.ndarray, v: np.ndarray) -> float:
    if u.shape != (spaces.n_free,) or v.shape != (spaces.n_free,):
        raise ValueError(f"expected free velocity vectors of length {spaces.n_free}")
    return float(u @ (spaces.K @ v))


def norm_L2(spaces, u):
    return np.sqrt(max(inner_L2(spaces, u, u), 0.0))


def norm_V(spaces, u):
    return np.sqrt(max(inner_V(spaces, u, u), 0.0))


def interpolate_velocity(spaces: DiscreteSpaces, fn) -> np.ndarray:
    """Nodal P2 interpolation of a callable (x, y) -> (u1, u2); full stacked vector."""
    vals = np.array([fn(x, y) for x, y in spaces.dof_coords], dtype=float)
    return np.concatenate([vals[:, 0], vals[:, 1]])


def interpolate_pressure(spaces: DiscreteSpaces, fn) -> np.ndarray:
    return np.array([fn(x, y) for x, y in spaces.mesh.vertices], dtype=float)


def export_matrix_coo(mat, path) -> None:
    """Coordinate-format text dump: header then 'row col value' lines."""
    coo = sp.coo_matrix(mat)
    with open(path, "w") as f:
        f.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {v:.17g}\n")


class FieldEvaluator:
    """Point evaluation of P2 velocity / P1 pressure fields on a channel mesh."""

    def __init__(self, spaces: DiscreteSpaces):
        self.spaces = spaces
        mesh = spaces.mesh
        v = mesh.vertices[mesh.triangles]
        self._centroids = v.mean(axis=1)
        self._tree = cKDTree(self._centroids)
        self._verts = v
        J, Jinv, _ = _element_geometry(mesh)
        self._Jinv = Jinv
        tri_dofs, _, _, _ = _scalar_dofs(mesh)
        self._tri_dofs = tri_dofs

    def locate(self, pts: np.ndarray, n_candidates: int = 12):
        """Triangle index and barycentric coordinates for each point."""
        pts = np.atleast_2d(pts)
        _, cand = self._tree.query(pts, k=min(n_candidates, self._centroids.shape[0]))
        cand = np.atleast_2d(cand)
        out_tri = np.full(pts.shape[0], -1, dtype=np.int64)
        out_lam = np.zeros((pts.shape[0], 3))
        for i, p in enumerate(pts):
            for t in cand[i]:
                d = p - self._verts[t, 0]
                xi = d @ self._Jinv[t]  # reference coords: (xi, eta) = J^{-T} (x - v0)
                lam = np.array([1 - xi[0] - xi[1], xi[0], xi[1]])
                if lam.min() >= -1e-10:
                    out_tri[i] = t
                    out_lam[i] = lam
                    break
            if out_tri[i] < 0:
                raise ValueError(f"point {p} not found in mesh")
        return out_tri, out_lam

    def velocity(self, u_full: np.ndarray, pts: np.ndarray) -> np.ndarray:
        ns = self.spaces.n_scalar
        tri, lam = self.locate(pts)
        N = p2_values(lam)
        dofs = self._tri_dofs[tri]
        ux = np.sum(N * u_full[dofs], axis=1)
        uy = np.sum(N * u_full[ns + dofs], axis=1)
        return np.column_stack([ux, uy])

    def velocity_gradient(self, u_full: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """(npts, 2, 2) with entry [i, c, d] = d u_c / d x_d."""
        ns = self.spaces.n_scalar
        tri, lam = self.locate(pts)
        gref = p2_ref_grads(lam)                       # (npts, 6, 2)
        g = np.einsum("pic,pdc->pid", gref, self._Jinv[tri])
        dofs = self._tri_dofs[tri]
        gx = np.einsum("pid,pi->pd", g, u_full[dofs])
        gy = np.einsum("pid,pi->pd", g, u_full[ns + dofs])
        return np.stack([gx, gy], axis=1)

    def pressure(self, p: np.ndarray, pts: np.ndarray) -> np.ndarray:
        tri, lam = self.locate(pts)
        vids = self.spaces.mesh.triangles[tri]
        return np.sum(lam * p[vids], axis=1)
