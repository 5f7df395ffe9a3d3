"""P1 finite elements for the anisotropic energy ``E_F(u) = int F^2(grad u)``.

Gradients of P1 fields are constant per triangle, so ``E_F`` is integrated exactly.
Its gradient is the weak form of ``-2 Delta_F u``; the auxiliary problems (Dirichlet
data matching and F-harmonic extension) are convex minimizations of ``E_F`` solved
by damped Newton with an Armijo line search.
"""
from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import _kernels
from .errors import ConvergenceError, InvalidInputError
from .geometry import BoundaryWeight, Mesh, edge_norm_factors
from .norms import NormSpec

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200
# Roundoff exit: relative energy decrease and Newton decrement below STALL_RTOL for
# STALL_ITERS consecutive steps.
STALL_RTOL = 1e-12
STALL_ITERS = 3


@dataclass(frozen=True, eq=False)
class FemField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if np.shape(self.values) != (self.mesh.n_vertices,):
            raise InvalidInputError("field needs one coefficient per mesh vertex")

    @classmethod
    def from_function(cls, mesh: Mesh, f) -> "FemField":
        x, y = mesh.vertices.T
        return cls(mesh, np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape).copy())


@dataclass(frozen=True, eq=False)
class AssembledForms:
    """Mass matrix, weighted boundary matrix and weighted boundary load."""

    mass: sp.csr_matrix
    boundary: sp.csr_matrix
    boundary_load: np.ndarray


# -- assembly ---------------------------------------------------------------

_PATTERNS = weakref.WeakKeyDictionary()


def _pattern(mesh: Mesh):
    """CSR structure of P1 matrices on ``mesh`` and the slot of every local entry."""
    cached = _PATTERNS.get(mesh)
    if cached is None:
        t = mesh.triangles
        n = mesh.n_vertices
        rows = np.repeat(t[:, :, None], 3, axis=2).ravel()
        cols = np.repeat(t[:, None, :], 3, axis=1).ravel()
        keys, slot = np.unique(rows.astype(np.int64) * n + cols, return_inverse=True)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(keys // n, minlength=n))])
        cached = (indptr, (keys % n).astype(np.int32), slot.ravel(), len(keys))
        _PATTERNS[mesh] = cached
    return cached


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum per-triangle 3x3 blocks (flattened, 9 per triangle) into a CSR matrix."""
    indptr, indices, slot, nnz = _pattern(mesh)
    data = np.bincount(slot, weights=local, minlength=nnz)
    n = mesh.n_vertices
    return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(n, n))


def factor_spd(A):
    """Sparse LU of a symmetric positive-definite matrix, using its symmetric structure."""
    return splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options={"SymmetricMode": True})


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _assemble(mesh, (mesh.triangle_areas[:, None, None] * local[None]).ravel())


def stiffness_matrix(mesh: Mesh, A=None) -> sp.csr_matrix:
    """``K_ij = int grad phi_i . A grad phi_j`` (A defaults to the identity)."""
    A = np.eye(2) if A is None else np.asarray(A, dtype=float)
    g = mesh.grad_phi
    local = np.einsum("tak,kl,tbl->tab", g, A, g) * mesh.triangle_areas[:, None, None]
    return _assemble(mesh, (0.5 * (local + local.transpose(0, 2, 1))).ravel())


def assemble_forms(mesh: Mesh, beta: BoundaryWeight, spec: NormSpec) -> AssembledForms:
    """Exact boundary integrals for piecewise-linear beta times P1 traces."""
    e = mesh.boundary_edges
    i, j = e[:, 0], e[:, 1]
    bi, bj = beta.values[i], beta.values[j]
    s = mesh.edge_lengths * edge_norm_factors(mesh, spec)
    # int_e beta phi_a phi_b for linear beta on an edge of length L.
    dii = s * (3.0 * bi + bj) / 12.0
    djj = s * (bi + 3.0 * bj) / 12.0
    dij = s * (bi + bj) / 12.0
    n = mesh.n_vertices
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    B = sp.csr_matrix((np.concatenate([dii, djj, dij, dij]), (rows, cols)), shape=(n, n))
    load = np.bincount(np.concatenate([i, j]),
                       weights=np.concatenate([s * (2.0 * bi + bj) / 6.0, s * (bi + 2.0 * bj) / 6.0]),
                       minlength=n)
    return AssembledForms(mass_matrix(mesh), B, load)


# -- energy -----------------------------------------------------------------

def _values(u):
    return u.values if isinstance(u, FemField) else np.asarray(u, dtype=float)


def energy_values(spec: NormSpec, mesh: Mesh, u) -> float:
    return _kernels.energy(spec, mesh.triangles, mesh.grad_phi, mesh.triangle_areas, _values(u))


def energy(spec: NormSpec, u: FemField) -> float:
    """``E_F(u)``, exact for P1 fields."""
    return energy_values(spec, u.mesh, u.values)


def energy_gradient_values(spec: NormSpec, mesh: Mesh, u) -> np.ndarray:
    return _kernels.energy_gradient(spec, mesh.triangles, mesh.grad_phi, mesh.triangle_areas,
                                    _values(u), mesh.n_vertices)


def energy_gradient(spec: NormSpec, u: FemField) -> np.ndarray:
    """Exact gradient of :func:`energy` with respect to the vertex coefficients."""
    return energy_gradient_values(spec, u.mesh, u.values)


def energy_hessian_values(spec: NormSpec, mesh: Mesh, u, secant: bool = False) -> sp.csr_matrix:
    """Jacobian of the energy gradient; on triangles with zero gradient a fixed SPD stand-in.

    ``secant`` selects the Newton Jacobian of :func:`finsler_robin.norms.f2_derivatives`.
    """
    data = _kernels.hessian_data(spec, mesh.triangles, mesh.grad_phi, mesh.triangle_areas, _values(u),
                                 secant)
    local = data.reshape(-1, 3, 3)
    # Local blocks are symmetric up to rounding; symmetrize them exactly.
    return _assemble(mesh, (0.5 * (local + local.transpose(0, 2, 1))).ravel())


def energy_hessian(spec: NormSpec, u: FemField) -> sp.csr_matrix:
    return energy_hessian_values(spec, u.mesh, u.values)


def projection_constant(beta: BoundaryWeight, spec: NormSpec, mesh: Mesh, u) -> float:
    """``c = (1/m) int beta u F(nu)``; ``u - c`` has zero weighted boundary average."""
    load = assemble_forms(mesh, beta, spec).boundary_load
    return float(np.dot(load, _values(u)) / load.sum())


# -- convex solves ----------------------------------------------------------

@dataclass
class NewtonResult:
    values: np.ndarray
    iterations: int
    residual: float


def minimize_energy(spec: NormSpec, mesh: Mesh, free: np.ndarray, x0: np.ndarray,
                    load: np.ndarray | None = None, tol: float = NEWTON_TOL,
                    max_iter: int = NEWTON_MAX_ITER, cache: dict | None = None) -> NewtonResult:
    """Minimize ``E_F(u) - load . u`` over the ``free`` coefficients of ``u``.

    Coefficients outside ``free`` stay at their values in ``x0``. Stops when the
    sup-norm of the free gradient entries is at most ``tol``, or when the energy has
    stopped decreasing at roundoff level for ``STALL_ITERS`` steps with a negligible
    Newton decrement. The second exit is reached for smoothed-p norms with p < 2 when
    a triangle gradient sits on an axis: the energy is only C^(1,1/2) there and the
    gradient cannot be resolved further in double precision. When ``cache`` is a
    dict, the last Hessian factorization is left in ``cache["lu"]``.
    """
    u = np.array(x0, dtype=float)
    load = np.zeros_like(u) if load is None else np.asarray(load, dtype=float)
    idx = np.flatnonzero(free)

    def phi(x):
        return energy_values(spec, mesh, x) - np.dot(load, x)

    res = np.inf
    stalls = 0
    for it in range(max_iter + 1):
        r = (energy_gradient_values(spec, mesh, u) - load)[idx]
        res = float(np.abs(r).max()) if len(r) else 0.0
        if res <= tol:
            return NewtonResult(u, it, res)
        if it == max_iter:
            break
        H = energy_hessian_values(spec, mesh, u, secant=True)[idx][:, idx]
        try:
            lu = factor_spd(H)
            if cache is not None:
                cache["lu"] = lu
            d = -lu.solve(r)
            slope = float(np.dot(r, d))
            if not np.all(np.isfinite(d)) or slope >= 0:
                raise RuntimeError
        except RuntimeError:
            log.debug("Newton direction rejected; taking a gradient step")
            d = -r
            slope = -float(np.dot(r, r))
        phi0 = phi(u)
        floor = STALL_RTOL * (1.0 + abs(phi0))
        t = 1.0
        trial = u.copy()
        while True:
            trial[idx] = u[idx] + t * d
            phi1 = phi(trial)
            if phi1 <= phi0 + 1e-4 * t * slope + 1e-14 * abs(phi0):
                break
            t *= 0.5
            if t < 1e-14:
                if -slope <= floor:
                    log.info("Newton stopped at roundoff, residual %.3e", res)
                    return NewtonResult(u, it, res)
                raise ConvergenceError("line search stalled", res, it)
        stalls = stalls + 1 if phi0 - phi1 <= floor and -slope <= floor else 0
        u = trial
        if stalls >= STALL_ITERS:
            log.info("Newton stopped at roundoff, residual %.3e", res)
            return NewtonResult(u, it + 1, res)
    raise ConvergenceError("Newton iteration did not converge", res, max_iter)


def solve_dirichlet_matching(spec: NormSpec, u: FemField, tol: float = NEWTON_TOL,
                             max_iter: int = NEWTON_MAX_ITER) -> FemField:
    """``v`` with zero trace whose interior energy-gradient entries match those of ``u``.

    This is the discrete weak form of ``Delta_F v = Delta_F u``, ``v = 0`` on the boundary.
    """
    mesh = u.mesh
    g = energy_gradient(spec, u)
    free = ~mesh.boundary_flags
    x0 = np.where(free, u.values, 0.0)
    res = minimize_energy(spec, mesh, free, x0, load=np.where(free, g, 0.0),
                          tol=tol * (1.0 + np.abs(g).max()), max_iter=max_iter)
    v = FemField(mesh, res.values)
    eu, ev = energy(spec, u), energy(spec, v)
    if ev > eu + 1e-9 * (1.0 + eu):
        raise ConvergenceError(f"energy comparison violated: E(v)={ev!r} > E(u)={eu!r}",
                               res.residual, res.iterations)
    return v


def boundary_trace(mesh: Mesh, g) -> np.ndarray:
    """Full-length vector carrying boundary data ``g`` (per boundary vertex or per vertex)."""
    g = np.asarray(g, dtype=float)
    out = np.zeros(mesh.n_vertices)
    if g.shape == (mesh.n_vertices,):
        out[mesh.boundary_flags] = g[mesh.boundary_flags]
    elif g.shape == (len(mesh.boundary_vertices),):
        out[mesh.boundary_vertices] = g
    else:
        raise InvalidInputError("boundary data must have one value per boundary vertex")
    return out


def harmonic_extension(spec: NormSpec, mesh: Mesh, g, initial=None, tol: float = NEWTON_TOL,
                       max_iter: int = NEWTON_MAX_ITER, cache: dict | None = None) -> FemField:
    """Discrete F-harmonic field with trace ``g``: minimizer of ``E_F`` among fields with that trace.

    ``initial`` optionally supplies interior values to start Newton from; ``cache`` is
    passed to :func:`minimize_energy`.
    """
    x0 = boundary_trace(mesh, g)
    gb = x0[mesh.boundary_flags]
    free = ~mesh.boundary_flags
    if initial is not None:
        x0[free] = _values(initial)[free]
    elif len(gb):
        x0[free] = gb.mean()
    scale = 1.0 + np.abs(gb).max()
    res = minimize_energy(spec, mesh, free, x0, tol=tol * scale, max_iter=max_iter, cache=cache)
    return FemField(mesh, res.values)


def max_principle_violation(h: FemField) -> float:
    """How far ``h`` leaves the range of its boundary values (0 when the principle holds)."""
    gb = h.values[h.mesh.boundary_flags]
    return float(max(h.values.max() - gb.max(), gb.min() - h.values.min(), 0.0))
