"""Triangulated rectangular channels with tagged walls and in/outflow ends.

The channel (0, length) x (0, height) is meshed structured: two triangles
per grid cell with the diagonal direction alternating checkerboard-style,
so the longest edge is the cell diagonal.  Boundary edges carry one of two
tags: ``dirichlet`` for fixed walls, ``neumann`` for the flat in/outflow
ends where the do-nothing condition acts.  Vertices where the two tag
types meet are recorded as corner points; on a rectangle with per-side
tagging these junctions are automatically right angles, and a tag change
in the middle of a straight side is rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

_SIDES = ("bottom", "top", "left", "right")
DEFAULT_TAGS = {"bottom": DIRICHLET, "top": DIRICHLET, "left": NEUMANN, "right": NEUMANN}


class MeshTaggingError(ValueError):
    """Boundary tagging violates the channel geometry rules."""


@dataclass
class ChannelMesh:
    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3), CCW
    boundary_edges: np.ndarray    # (nb, 2) vertex pairs
    boundary_tags: np.ndarray     # (nb,) strings in {dirichlet, neumann}
    corner_points: np.ndarray     # vertex indices where tag type changes
    h: float                      # max edge length
    length: float = 0.0
    height: float = 0.0

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * ((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
                      - (v[:, 2, 0] - v[:, 0, 0]) * (v[:, 1, 1] - v[:, 0, 1]))

    def dirichlet_edges(self) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == DIRICHLET]

    def neumann_edges(self) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == NEUMANN]


def _graded_axis(a: float, b: float, n: int, ratio: float) -> np.ndarray:
    """n+1 nodes on [a, b]; ratio > 1 shrinks cells geometrically toward both ends."""
    if ratio == 1.0 or n < 3:
        return np.linspace(a, b, n + 1)
    m = n // 2
    left = ratio ** np.arange(m)  # smallest cell at the boundary, growing inward
    middle = [ratio ** m] if n % 2 else []
    sizes = np.concatenate([left, middle, left[::-1]])
    nodes = np.concatenate([[0.0], np.cumsum(sizes / sizes.sum())])
    nodes[-1] = 1.0
    return a + (b - a) * nodes


def _resolve_tagger(gamma_spec, length, height):
    """Return a callable mapping an edge midpoint to a tag string."""
    if gamma_spec is None:
        gamma_spec = DEFAULT_TAGS
    if callable(gamma_spec):
        return gamma_spec
    if isinstance(gamma_spec, dict):
        tags = dict(DEFAULT_TAGS)
        for side, tag in gamma_spec.items():
            if side not in _SIDES:
                raise MeshTaggingError(f"unknown side {side!r}; expected one of {_SIDES}")
            if tag not in (DIRICHLET, NEUMANN):
                raise MeshTaggingError(f"unknown tag {tag!r} for side {side!r}")
            tags[side] = tag

        def tagger(x, y, tol=1e-12):
            if abs(y) < tol:
                return tags["bottom"]
            if abs(y - height) < tol:
                return tags["top"]
            if abs(x) < tol:
                return tags["left"]
            if abs(x - length) < tol:
                return tags["right"]
            raise MeshTaggingError(f"edge midpoint ({x}, {y}) not on the rectangle boundary")

        return tagger
    raise MeshTaggingError("gamma_spec must be None, a side->tag dict, or a callable")


def build_channel_mesh(length, height, nx, ny, gamma_spec=None, grading=1.0) -> ChannelMesh:
    """Structured triangle mesh of (0,length) x (0,height) with tagged boundary.

    ``gamma_spec`` assigns tags per side ({'bottom','top','left','right'} ->
    'dirichlet'|'neumann') or is a callable on edge midpoints.  The Dirichlet
    set must be nonempty, and the tag type may only change at rectangle
    corners (where the sides meet at a right angle).
    """
    if length <= 0 or height <= 0:
        raise ValueError("length and height must be positive")
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    if grading < 1.0:
        raise ValueError("grading ratio must be >= 1")

    xs = _graded_axis(0.0, length, nx, grading)
    ys = _graded_axis(0.0, height, ny, grading)

    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def gid(i, j):
        return i * (ny + 1) + j

    # two CCW triangles per cell, diagonal direction alternating checkerboard-style
    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = gid(i, j), gid(i + 1, j)
            v11, v01 = gid(i + 1, j + 1), gid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(v00, v10, v11), (v00, v11, v01)]
            else:
                tris += [(v00, v10, v01), (v10, v11, v01)]
    triangles = np.array(tris, dtype=np.int64)

    edges = []
    for i in range(nx):
        edges.append((gid(i, 0), gid(i + 1, 0)))        # bottom
        edges.append((gid(i, ny), gid(i + 1, ny)))      # top
    for j in range(ny):
        edges.append((gid(0, j), gid(0, j + 1)))        # left
        edges.append((gid(nx, j), gid(nx, j + 1)))      # right
    boundary_edges = np.array(edges, dtype=np.int64)

    tagger = _resolve_tagger(gamma_spec, length, height)
    mids = 0.5 * (vertices[boundary_edges[:, 0]] + vertices[boundary_edges[:, 1]])
    tags = np.array([tagger(x, y) for x, y in mids], dtype=object)
    for t in tags:
        if t not in (DIRICHLET, NEUMANN):
            raise MeshTaggingError(f"tagging rule returned unknown tag {t!r}")

    mesh = ChannelMesh(
        vertices=vertices,
        triangles=triangles,
        boundary_edges=boundary_edges,
        boundary_tags=tags,
        corner_points=np.empty(0, dtype=np.int64),
        h=0.0,
        length=float(length),
        height=float(height),
    )
    mesh.corner_points = _find_corners(mesh)
    mesh.h = _max_edge_length(mesh)
    _check_tagging(mesh)
    return mesh


def _max_edge_length(mesh: ChannelMesh) -> float:
    v = mesh.vertices[mesh.triangles]
    e = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]])
    return float(np.sqrt((e ** 2).sum(axis=-1)).max())


def _find_corners(mesh: ChannelMesh) -> np.ndarray:
    """Vertices incident to both a Dirichlet and a Neumann edge."""
    has_d = set(mesh.dirichlet_edges().ravel().tolist())
    has_n = set(mesh.neumann_edges().ravel().tolist())
    return np.array(sorted(has_d & has_n), dtype=np.int64)


def _check_tagging(mesh: ChannelMesh) -> None:
    if not np.any(mesh.boundary_tags == DIRICHLET):
        raise MeshTaggingError("Dirichlet part of the boundary must be nonempty")
    # At a tag junction the two incident boundary edges must be perpendicular.
    for v in mesh.corner_points:
        incident = np.nonzero((mesh.boundary_edges == v).any(axis=1))[0]
        dirs = []
        for e in incident:
            a, b = mesh.boundary_edges[e]
            d = mesh.vertices[b] - mesh.vertices[a]
            dirs.append(d / np.linalg.norm(d))
        for i in range(len(incident)):
            for j in range(i + 1, len(incident)):
                if mesh.boundary_tags[incident[i]] != mesh.boundary_tags[incident[j]]:
                    if abs(np.dot(dirs[i], dirs[j])) > 1e-12:
                        raise MeshTaggingError(
                            "boundary tag changes type along a straight segment at "
                            f"vertex {v}; Dirichlet/Neumann junctions must be right angles"
                        )


def refine(mesh: ChannelMesh) -> ChannelMesh:
    """Uniform refinement: each triangle splits into four, tags inherited."""
    if mesh.n_triangles == 0:
        raise ValueError("cannot refine an empty mesh")
    nv = mesh.n_vertices
    midpoint_id: dict[tuple[int, int], int] = {}
    new_points = []

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in midpoint_id:
            midpoint_id[key] = nv + len(new_points)
            new_points.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
        return midpoint_id[key]

    tris = []
    for a, b, c in mesh.triangles:
        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        tris += [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)]

    edges, tags = [], []
    for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags):
        m = mid(int(a), int(b))
        edges += [(a, m), (m, b)]
        tags += [t, t]

    out = ChannelMesh(
        vertices=np.vstack([mesh.vertices, np.array(new_points)]),
        triangles=np.array(tris, dtype=np.int64),
        boundary_edges=np.array(edges, dtype=np.int64),
        boundary_tags=np.array(tags, dtype=object),
        corner_points=np.empty(0, dtype=np.int64),
        h=0.0,
        length=mesh.length,
        height=mesh.height,
    )
    out.corner_points = _find_corners(out)
    out.h = _max_edge_length(out)
    _check_tagging(out)
    return out


def mesh_to_dict(mesh: ChannelMesh) -> dict:
    return {
        "schema": "channel-mesh@1",
        "vertices": [[float(x), float(y)] for x, y in mesh.vertices],
        "triangles": [[int(a), int(b), int(c)] for a, b, c in mesh.triangles],
        "boundary_edges": [
            {"v": [int(a), int(b)], "tag": str(t)}
            for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags)
        ],
        "corner_points": [int(v) for v in mesh.corner_points],
        "h": float(mesh.h),
        "length": float(mesh.length),
        "height": float(mesh.height),
    }


def mesh_from_dict(d: dict) -> ChannelMesh:
    edges = np.array([e["v"] for e in d["boundary_edges"]], dtype=np.int64)
    tags = np.array([e["tag"] for e in d["boundary_edges"]], dtype=object)
    return ChannelMesh(
        vertices=np.array(d["vertices"], dtype=float),
        triangles=np.array(d["triangles"], dtype=np.int64),
        boundary_edges=edges,
        boundary_tags=tags,
        corner_points=np.array(d["corner_points"], dtype=np.int64),
        h=float(d["h"]),
        length=float(d.get("length", 0.0)),
        height=float(d.get("height", 0.0)),
    )


def save_mesh_json(mesh: ChannelMesh, path) -> None:
    with open(path, "w") as f:
        json.dump(mesh_to_dict(mesh), f, indent=2, sort_keys=True)


def load_mesh_json(path) -> ChannelMesh:
    with open(path) as f:
        return mesh_from_dict(json.load(f))


def save_mesh_vtk(mesh: ChannelMesh, path, point_data=None) -> None:
    """Legacy-ASCII VTK unstructured grid; point_data maps name -> (nv,) or (nv,2)."""
    lines = [
        "# vtk DataFile Version 3.0",
        "channel mesh",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g} 0")
    nt = mesh.n_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, arr in point_data.items():
            arr = np.asarray(arr)
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(f"{v:.17g}" for v in arr)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{v[0]:.17g} {v[1]:.17g} 0" for v in arr)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
