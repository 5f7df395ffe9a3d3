"""Triangulated planar domains, boundary weights and boundary measures.

Meshes are conforming P1 triangulations with counterclockwise triangles. Boundary
edges are stored oriented so that the domain lies on their left; the unit outward
normal of an edge ``(i, j)`` is therefore the edge vector rotated clockwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidInputError
from .norms import NormSpec, norm_eval

DOMAINS = ("unit_square", "rectangle", "disk", "L_shape", "ellipse")


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    normals: np.ndarray
    edge_lengths: np.ndarray
    boundary_flags: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, triangles, boundary_edges=None) -> "Mesh":
        """Validate a triangulation and derive its oriented boundary.

        ``boundary_edges``, when given, must list exactly the edges owned by one
        triangle (in either orientation); normals are always recomputed.
        """
        V = np.ascontiguousarray(vertices, dtype=float)
        T = np.ascontiguousarray(triangles, dtype=np.int64)
        if V.ndim != 2 or V.shape[1] != 2 or T.ndim != 2 or T.shape[1] != 3:
            raise InvalidInputError("vertices must be (N, 2) and triangles (M, 3)")
        if len(T) == 0:
            raise InvalidInputError("mesh has no triangles")
        if T.min() < 0 or T.max() >= len(V):
            raise InvalidInputError("triangle index out of range")
        if len(np.unique(T)) != len(V):
            raise InvalidInputError("mesh has vertices not used by any triangle")
        areas = _signed_areas(V, T)
        if np.any(areas <= 0):
            raise InvalidInputError("triangles must be counterclockwise with positive area")

        local = ((0, 1), (1, 2), (2, 0))
        directed = np.concatenate([T[:, [i, j]] for i, j in local])
        key = np.sort(directed, axis=1)
        uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if counts.max() > 2:
            raise InvalidInputError("non-conforming mesh: an edge is shared by more than two triangles")
        # With every triangle CCW, a shared edge traversed twice in the same direction
        # means the two triangles overlap.
        if len(np.unique(directed, axis=0)) != len(directed):
            raise InvalidInputError("overlapping triangles across an edge")
        owned_once = counts[inverse] == 1
        bedges = directed[owned_once]
        owner = np.tile(np.arange(len(T)), 3)[owned_once]

        if boundary_edges is not None:
            given = np.sort(np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2), axis=1)
            found = np.sort(bedges, axis=1)
            gs = {tuple(e) for e in given.tolist()}
            fs = {tuple(e) for e in found.tolist()}
            if gs != fs or len(given) != len(found):
                raise InvalidInputError("listed boundary edges do not match the triangulation")

        # Sort boundary edges into loops for deterministic, readable output.
        bedges, owner = _order_loops(bedges, owner)

        d = V[bedges[:, 1]] - V[bedges[:, 0]]
        lengths = np.hypot(d[:, 0], d[:, 1])
        normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
        centroid = V[T[owner]].mean(axis=1)
        mid = 0.5 * (V[bedges[:, 0]] + V[bedges[:, 1]])
        if np.any(np.einsum("ij,ij->i", normals, mid - centroid) <= 0):
            raise InvalidInputError("boundary normal does not point outward")

        flags = np.zeros(len(V), dtype=bool)
        flags[bedges.ravel()] = True
        deg = np.bincount(bedges.ravel(), minlength=len(V))
        if np.any(deg[flags] != 2):
            raise InvalidInputError("boundary is not a disjoint union of closed loops")

        n = len(V)
        adj = coo_matrix((np.ones(len(uniq)), (uniq[:, 0], uniq[:, 1])), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise InvalidInputError("mesh is not connected")

        for arr in (V, T, bedges, normals, lengths, flags):
            arr.setflags(write=False)
        return cls(V, T, bedges, normals, lengths, flags)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    @cached_property
    def grad_phi(self) -> np.ndarray:
        """Gradients of the three P1 hat functions on every triangle, shape (M, 3, 2)."""
        P = self.vertices[self.triangles]
        # grad phi_a = rot(P_c - P_b) / (2|T|) for (a, b, c) cyclic.
        e = np.stack([P[:, 2] - P[:, 1], P[:, 0] - P[:, 2], P[:, 1] - P[:, 0]], axis=1)
        g = np.stack([-e[..., 1], e[..., 0]], axis=-1)
        return np.ascontiguousarray(g / (2.0 * self.triangle_areas)[:, None, None])

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_flags)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_flags)

    def max_edge_length(self) -> float:
        P = self.vertices[self.triangles]
        e = P - np.roll(P, 1, axis=1)
        return float(np.sqrt((e ** 2).sum(axis=-1)).max())


@dataclass(frozen=True, eq=False)
class BoundaryWeight:
    """Pointwise samples of beta at boundary vertices, piecewise linear along edges.

    ``values`` has one entry per mesh vertex; interior entries are zero and unused.
    """

    values: np.ndarray
    constant: float | None = None

    @classmethod
    def from_values(cls, mesh: Mesh, values, constant: float | None = None) -> "BoundaryWeight":
        vals = np.asarray(values, dtype=float)
        if vals.shape != (mesh.n_vertices,):
            raise InvalidInputError("boundary weight needs one value per mesh vertex")
        vals = np.where(mesh.boundary_flags, vals, 0.0)
        bv = vals[mesh.boundary_flags]
        if not np.all(np.isfinite(bv)) or np.any(bv <= 0):
            raise InvalidInputError("beta must be positive at every boundary vertex")
        vals.setflags(write=False)
        return cls(vals, constant)

    @classmethod
    def from_constant(cls, mesh: Mesh, c: float) -> "BoundaryWeight":
        return cls.from_values(mesh, np.full(mesh.n_vertices, float(c)), constant=float(c))

    @classmethod
    def from_function(cls, mesh: Mesh, f) -> "BoundaryWeight":
        x, y = mesh.vertices.T
        return cls.from_values(mesh, np.broadcast_to(f(x, y), x.shape).astype(float))

    def scaled(self, factor: float) -> "BoundaryWeight":
        const = None if self.constant is None else self.constant * factor
        out = self.values * factor
        out.setflags(write=False)
        return BoundaryWeight(out, const)


# -- measures ---------------------------------------------------------------

def area(mesh: Mesh) -> float:
    return float(mesh.triangle_areas.sum())


def edge_norm_factors(mesh: Mesh, spec: NormSpec) -> np.ndarray:
    """``F(nu_e)`` for every boundary edge."""
    return norm_eval(spec, mesh.normals)


def anisotropic_perimeter(mesh: Mesh, spec: NormSpec) -> float:
    return float(np.dot(edge_norm_factors(mesh, spec), mesh.edge_lengths))


def boundary_mass(mesh: Mesh, beta: BoundaryWeight, spec: NormSpec) -> float:
    """``m``: the integral of beta F(nu) over the boundary, exact for piecewise-linear beta."""
    bi = beta.values[mesh.boundary_edges[:, 0]]
    bj = beta.values[mesh.boundary_edges[:, 1]]
    return float(np.dot(0.5 * (bi + bj) * edge_norm_factors(mesh, spec), mesh.edge_lengths))


# -- generators -------------------------------------------------------------

def generate_mesh(domain: str, target_h: float, **dims) -> Mesh:
    """Structured triangulation of one of the built-in domains.

    ``dims``: ``width``/``height`` for ``rectangle``, ``r`` for ``disk``, ``a``/``b``
    (semi-axes) for ``ellipse``. Polygonal domains use split-square grids with at least
    four cells per side; curved ones use concentric rings, so the boundary is an
    inscribed polygon.
    """
    target_h = float(target_h)
    if not target_h > 0 or not math.isfinite(target_h):
        raise InvalidInputError("target_h must be positive")
    if domain == "unit_square":
        return _rectangle_mesh(1.0, 1.0, target_h)
    if domain == "rectangle":
        w, hgt = _positive(dims.get("width", 1.0)), _positive(dims.get("height", 1.0))
        return _rectangle_mesh(w, hgt, target_h)
    if domain == "L_shape":
        return _l_mesh(target_h)
    if domain == "disk":
        r = _positive(dims.get("r", 1.0))
        return _disk_mesh(r, r, target_h)
    if domain == "ellipse":
        a, b = _positive(dims.get("a", 1.0)), _positive(dims.get("b", 0.5))
        return _disk_mesh(a, b, target_h)
    raise InvalidInputError(f"unknown domain {domain!r}; expected one of {DOMAINS}")


def _positive(x) -> float:
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise InvalidInputError("domain dimensions must be positive")
    return x


def _check_size(n_triangles: int):
    if n_triangles < 4:
        raise InvalidInputError("target_h too large: fewer than 4 triangles")


def _grid(nx: int, ny: int, w: float, hgt: float, keep=None):
    xs = np.linspace(0.0, w, nx + 1)
    ys = np.linspace(0.0, hgt, ny + 1)
    idx = lambda i, j: j * (nx + 1) + i  # noqa: E731
    tris = []
    for j in range(ny):
        for i in range(nx):
            if keep is not None and not keep(i, j):
                continue
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    X, Y = np.meshgrid(xs, ys)
    V = np.column_stack([X.ravel(), Y.ravel()])
    T = np.array(tris, dtype=np.int64)
    used = np.unique(T)
    remap = np.full(len(V), -1)
    remap[used] = np.arange(len(used))
    return V[used], remap[T]


def _rectangle_mesh(w: float, hgt: float, h: float) -> Mesh:
    nx, ny = math.ceil(w / h - 1e-12), math.ceil(hgt / h - 1e-12)
    _check_size(2 * nx * ny)
    V, T = _grid(max(nx, 4), max(ny, 4), w, hgt)
    return Mesh.from_arrays(V, T)


def _l_mesh(h: float) -> Mesh:
    n = math.ceil(1.0 / h - 1e-12)
    _check_size(2 * n * n * 3 // 4)
    n = max(n, 4)
    n += n % 2
    half = n // 2
    V, T = _grid(n, n, 1.0, 1.0, keep=lambda i, j: i < half or j < half)
    return Mesh.from_arrays(V, T)


def _disk_mesh(a: float, b: float, h: float) -> Mesh:
    """Ring mesh of the unit disk mapped onto the ellipse with semi-axes a, b."""
    scale = max(a, b)
    hu = h / scale
    n_rings = math.ceil(1.0 / hu - 1e-12)
    if n_rings < 1 or 2 * math.pi / hu < 4:
        raise InvalidInputError("target_h too large: fewer than 4 triangles")
    n_rings = max(n_rings, 2)
    dr = 1.0 / n_rings
    pts = [np.zeros((1, 2))]
    rings = [np.array([0])]
    angles = [np.array([0.0])]
    start = 1
    for k in range(1, n_rings + 1):
        rk = k * dr
        nk = max(6, math.ceil(2.0 * math.pi * rk / (0.9 * min(dr, hu)) - 1e-12))
        th = 2.0 * math.pi * np.arange(nk) / nk
        pts.append(rk * np.column_stack([np.cos(th), np.sin(th)]))
        rings.append(np.arange(start, start + nk))
        angles.append(th)
        start += nk
    tris = []
    for k in range(1, n_rings + 1):
        inner, outer = rings[k - 1], rings[k]
        tin, tout = angles[k - 1], angles[k]
        if len(inner) == 1:
            for j in range(len(outer)):
                tris.append((inner[0], outer[j], outer[(j + 1) % len(outer)]))
            continue
        tris.extend(_zip_rings(inner, tin, outer, tout))
    V = np.concatenate(pts) * np.array([a, b])
    T = np.array(tris, dtype=np.int64)
    sa = _signed_areas(V, T)
    T[sa < 0] = T[sa < 0][:, [0, 2, 1]]
    return Mesh.from_arrays(V, T)


def _zip_rings(inner, tin, outer, tout):
    n1, n2 = len(inner), len(outer)
    nxt_in = np.append(tin[1:], 2.0 * math.pi)
    nxt_out = np.append(tout[1:], 2.0 * math.pi)
    i = j = 0
    out = []
    while i < n1 or j < n2:
        advance_inner = j == n2 or (i < n1 and nxt_in[i] <= nxt_out[j])
        if advance_inner:
            out.append((inner[i], inner[(i + 1) % n1], outer[j % n2]))
            i += 1
        else:
            out.append((inner[i % n1], outer[(j + 1) % n2], outer[j]))
            j += 1
    return out


def _signed_areas(V: np.ndarray, T: np.ndarray) -> np.ndarray:
    P = V[T]
    d1 = P[:, 1] - P[:, 0]
    d2 = P[:, 2] - P[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _order_loops(edges: np.ndarray, owner: np.ndarray):
    if len(edges) == 0:
        raise InvalidInputError("mesh has no boundary")
    nxt = {}
    for k, (i, _) in enumerate(edges.tolist()):
        if i in nxt:
            raise InvalidInputError("boundary is not a disjoint union of closed loops")
        nxt[i] = k
    seen = np.zeros(len(edges), dtype=bool)
    order = []
    for k0 in np.argsort(edges[:, 0], kind="stable"):
        k = int(k0)
        while not seen[k]:
            seen[k] = True
            order.append(k)
            k = nxt.get(int(edges[k, 1]), k)
    order = np.array(order)
    return edges[order], owner[order]


# -- plain-text mesh format -------------------------------------------------

def write_mesh(mesh: Mesh, path) -> None:
    """``NV NT NB`` header, then vertices, triangles (0-based, CCW) and boundary edges."""
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [f"{i} {j}" for i, j in mesh.boundary_edges.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    try:
        with open(path) as fh:
            tokens = fh.read().split()
    except OSError as exc:
        raise InvalidInputError(f"cannot read mesh file {path}: {exc}") from None
    try:
        nv, nt, nb = (int(t) for t in tokens[:3])
        pos = 3
        V = np.array(tokens[pos:pos + 2 * nv], dtype=float).reshape(nv, 2)
        pos += 2 * nv
        T = np.array(tokens[pos:pos + 3 * nt], dtype=np.int64).reshape(nt, 3)
        pos += 3 * nt
        B = np.array(tokens[pos:pos + 2 * nb], dtype=np.int64).reshape(nb, 2)
        pos += 2 * nb
    except (ValueError, IndexError):
        raise InvalidInputError(f"malformed mesh file {path}") from None
    if pos != len(tokens):
        raise InvalidInputError(f"malformed mesh file {path}: trailing data")
    return Mesh.from_arrays(V, T, B)
