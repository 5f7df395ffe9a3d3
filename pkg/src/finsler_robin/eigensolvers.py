"""Constrained Rayleigh-quotient minimization for the six spectral quantities.

All quantities minimize ``N(v) / v^T M v`` over P1 fields, where ``N`` is the
anisotropic energy, possibly plus a weighted boundary term, subject to linear
constraints or to F-harmonicity. ``N`` is 2-homogeneous, so its Hessian satisfies
``H(v) v = grad N(v)`` and ``dH[.] v = 0``. The lowest eigenvector of the frozen
pencil ``(H(v)/2, M)`` is then a fixed-point map whose linearization vanishes at
the minimizer, which gives fast local convergence. Quadratic norms need a single
linear eigensolve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, cg, eigsh, splu

from . import fem
from .errors import ConvergenceError, InvalidInputError
from .fem import FemField, boundary_trace
from .geometry import BoundaryWeight, Mesh, area, boundary_mass
from .norms import NormSpec, origin_hessian

log = logging.getLogger(__name__)

QUANTITIES = ("lambda_robin", "lambda_dirichlet", "sigma", "mu_neumann", "q_beta", "q_plain")
SEED = 0x5EED
DENSE_MAX = 300
INNER_MAX_ITER = 50


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 200
    restarts: int = 3
    seed: int = SEED
    agree_tol: float = 1e-6
    restart_tol: float = 1e-7
    q_max_iter: int = 1000
    q_window: int = 20
    q_stagnation: float = 1e-13
    restart_q_window: int = 10
    restart_q_stagnation: float = 1e-9


@dataclass(frozen=True, eq=False)
class EigenResult:
    quantity: str
    value: float
    minimizer: FemField
    iterations: int
    final_residual: float
    restarts_agree: bool
    restart_values: tuple = field(default=())


@dataclass
class CoreResult:
    value: float
    vector: np.ndarray
    iterations: int
    residual: float
    restarts_agree: bool = True
    restart_values: tuple = ()


class EnergyForm:
    """``N(v) = E_F(v) + v^T B v`` as a 2-homogeneous nonlinear form on vertex vectors."""

    def __init__(self, spec: NormSpec, mesh: Mesh, boundary: sp.spmatrix | None = None):
        self.spec = spec
        self.mesh = mesh
        self.B = boundary

    def value(self, v):
        out = fem.energy_values(self.spec, self.mesh, v)
        return out + float(v @ (self.B @ v)) if self.B is not None else out

    def gradient(self, v):
        out = fem.energy_gradient_values(self.spec, self.mesh, v)
        return out + 2.0 * (self.B @ v) if self.B is not None else out

    def hessian(self, v):
        # A Newton Jacobian; only the exact q gradient needs the true Hessian.
        H = fem.energy_hessian_values(self.spec, self.mesh, v, secant=True)
        return (H + 2.0 * self.B).tocsr() if self.B is not None else H


class _Reduced:
    """A nonlinear form seen through the free coefficients (the rest held at zero)."""

    def __init__(self, form, idx, n):
        self.form, self.idx, self.n = form, idx, n

    def _full(self, x):
        v = np.zeros(self.n)
        v[self.idx] = x
        return v

    def value(self, x):
        return self.form.value(self._full(x))

    def gradient(self, x):
        return self.form.gradient(self._full(x))[self.idx]

    def hessian(self, x):
        return self.form.hessian(self._full(x))[self.idx][:, self.idx].tocsc()


# -- linear building blocks -------------------------------------------------

def _as_constraints(constraints, n):
    if constraints is None:
        return np.zeros((0, n))
    C = np.atleast_2d(np.asarray(constraints, dtype=float))
    if C.shape[1] != n:
        raise InvalidInputError("constraint rows must match the problem size")
    return C


def _project(x, C):
    if len(C) == 0:
        return x
    return x - C.T @ np.linalg.solve(C @ C.T, C @ x)


def _mdot(M, x, y):
    return float(x @ (M @ y))


def _smallest_pair(K, M, C, v0=None):
    """Smallest eigenpair of ``K x = lam M x`` on ``{C x = 0}``."""
    n = K.shape[0]
    if n <= DENSE_MAX:
        Kd = K.toarray() if sp.issparse(K) else np.asarray(K, dtype=float)
        Md = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        Z = la.null_space(C) if len(C) else np.eye(n)
        w, V = la.eigh(Z.T @ Kd @ Z, Z.T @ Md @ Z, subset_by_index=[0, 0])
        return float(w[0]), Z @ V[:, 0]
    k = len(C)
    Ks = sp.csc_matrix(K)
    if k:
        Cs = sp.csr_matrix(C)
        L = sp.bmat([[Ks, Cs.T], [Cs, None]], format="csc")
    else:
        L = Ks
    lu = splu(L)

    def apply(y):
        rhs = np.concatenate([np.ravel(y), np.zeros(k)])
        return lu.solve(rhs)[:n]

    op = LinearOperator((n, n), matvec=apply, dtype=float)
    if v0 is None:
        v0 = np.random.default_rng(SEED).standard_normal(n)
    v0 = apply(M @ v0)
    w, V = eigsh(K, k=1, M=M, sigma=0.0, which="LM", OPinv=op, v0=v0, tol=0.0,
                 ncv=min(n - 1, 24), maxiter=5000)
    return float(w[0]), V[:, 0]


def _normalize(x, M):
    return x / np.sqrt(_mdot(M, x, x))


def _sign_fix(v, M):
    mean = float(np.sum(M @ v))
    if abs(mean) > 1e-8 * np.sqrt(max(_mdot(M, v, v), 1e-300)) * np.sqrt(float(np.sum(M))):
        return v if mean > 0 else -v
    return v if v[np.argmax(np.abs(v))] > 0 else -v


def _linear_residual(Kx, Mx, lam, C):
    r = Kx - lam * Mx
    if len(C):
        mu, *_ = np.linalg.lstsq(C.T, r, rcond=None)
        r = r - C.T @ mu
    return float(np.abs(r).max() / max(np.abs(Kx).max(), 1e-300))


# -- core -------------------------------------------------------------------

def solver_core(numerator, denominator, constraints=None, free=None, *, start=None,
                options: SolverOptions | None = None) -> CoreResult:
    """Minimize ``N(v) / v^T M v`` subject to ``C v = 0`` and ``v = 0`` off ``free``.

    ``numerator`` is either a symmetric matrix ``K`` (then ``N(v) = v^T K v`` and the
    result is an exact generalized eigensolve) or a 2-homogeneous form exposing
    ``value``, ``gradient`` and ``hessian``. Returned vectors live in the full space
    and have unit ``M``-norm.
    """
    opts = options or SolverOptions()
    M = sp.csr_matrix(denominator)
    n = M.shape[0]
    idx = np.arange(n) if free is None else np.flatnonzero(np.asarray(free, dtype=bool))
    C = _as_constraints(constraints, n)[:, idx]
    Mf = M[idx][:, idx].tocsr()

    def embed(x):
        v = np.zeros(n)
        v[idx] = x
        return v

    if not hasattr(numerator, "hessian"):
        K = sp.csr_matrix(numerator)
        Kf = K[idx][:, idx].tocsr()
        v0 = None if start is None else np.asarray(start, dtype=float)[idx]
        _, x = _smallest_pair(Kf, Mf, C, v0)
        x = _normalize(_project(x, C), Mf)
        Kx = Kf @ x
        lam = float(x @ Kx)
        res = _linear_residual(Kx, Mf @ x, lam, C)
        return CoreResult(lam, embed(x), 1, res, True, (lam,))

    form = _Reduced(numerator, idx, n)
    rng = np.random.default_rng(opts.seed)
    if start is None:
        K0 = 0.5 * numerator.hessian(np.zeros(n))[idx][:, idx]
        _, s0 = _smallest_pair(K0.tocsr(), Mf, C)
    else:
        s0 = np.asarray(start, dtype=float)[idx]
    starts = [s0] + [rng.standard_normal(len(idx)) for _ in range(opts.restarts)]
    runs = []
    for k, s in enumerate(starts):
        x = _normalize(_project(s, C), Mf)
        runs.append(_scf(form, Mf, C, x, opts, primary=(k == 0)))
    values = tuple(r[0] for r in runs)
    best = _pick(values, opts)
    if best != 0:
        # A restart found a lower minimum; finish it at the primary tolerance.
        lam, x, its, res = _scf(form, Mf, C, runs[best][1], opts, primary=True)
        runs[best] = (lam, x, runs[best][2] + its, res)
    lam, x, its, res = runs[best]
    spread = (max(values) - min(values)) / abs(min(values))
    return CoreResult(lam, embed(x), its, res, bool(spread <= opts.agree_tol), values)


def _pick(values, opts: SolverOptions) -> int:
    """The primary run unless a restart found a clearly lower value."""
    best = int(np.argmin(values))
    if values[best] < values[0] - opts.agree_tol * abs(values[0]):
        return best
    return 0


def _eigen_residual(form, Mf, C, x, lam):
    g = 0.5 * form.gradient(x)
    return _linear_residual(g, Mf @ x, lam, C)


def _scf(form, Mf, C, x, opts: SolverOptions, primary: bool):
    """Frozen-Hessian iteration with monotone inverse-iteration fallback."""
    # Restarts only probe for a lower minimum; the value error is quadratic in the residual.
    tol = opts.tol if primary else max(opts.tol, opts.restart_tol)
    R = form.value(x)
    res = _eigen_residual(form, Mf, C, x, R)
    stall, best_res = 0, res
    for it in range(1, opts.max_iter + 1):
        H = 0.5 * form.hessian(x)
        _, y = _smallest_pair(H, Mf, C, v0=x)
        y = _normalize(_project(y, C), Mf)
        if _mdot(Mf, y, x) < 0:
            y = -y
        Ry = form.value(y)
        if Ry > R * (1.0 + 1e-13):
            y = _inverse_step(form, Mf, C, x, R, opts)
            Ry = form.value(y)
        improvement = R - Ry
        if Ry <= R * (1.0 + 1e-13):
            x, R = y, Ry
        res = _eigen_residual(form, Mf, C, x, R)
        if res <= tol:
            return R, x, it, res
        # R reaches roundoff well before the residual does; stall only when both stop moving.
        stalled = improvement <= 1e-15 * abs(R) and res > 0.9 * best_res
        stall = stall + 1 if stalled else 0
        best_res = min(best_res, res)
        if stall >= 3:
            break
    if primary:
        raise ConvergenceError("Rayleigh-quotient iteration did not converge", res, it)
    log.info("restart stopped at residual %.3e", res)
    return R, x, it, res


def _inverse_step(form, Mf, C, x, R, opts: SolverOptions):
    """One nonlinear inverse iteration: minimize N(w)/2 - (Mx).w on ``{Cw = 0}``."""
    b = Mf @ x
    w = x / R
    k = len(C)

    def psi(z):
        return 0.5 * form.value(z) - float(b @ z)

    scale = max(np.abs(b).max(), 1e-300)
    for _ in range(INNER_MAX_ITER):
        g = 0.5 * form.gradient(w) - b
        pg = _project(g, C) if k else g
        if np.abs(pg).max() <= 1e-12 * scale:
            break
        H = 0.5 * form.hessian(w)
        L = sp.bmat([[H, sp.csr_matrix(C).T], [sp.csr_matrix(C), None]], format="csc") if k else H
        d = splu(L).solve(np.concatenate([-g, np.zeros(k)]))[: len(w)]
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -pg, -float(pg @ pg)
        t, p0 = 1.0, psi(w)
        while psi(w + t * d) > p0 + 1e-4 * t * slope + 1e-15 * abs(p0) and t > 1e-14:
            t *= 0.5
        w = w + t * d
        if t * np.abs(d).max() <= 1e-15 * np.abs(w).max():
            break
    return _normalize(_project(w, C), Mf)


# -- the spectral quantities ------------------------------------------------

def _numerator(spec: NormSpec, mesh: Mesh, B=None):
    if spec.is_quadratic:
        K = fem.stiffness_matrix(mesh, spec.matrix)
        return (K + B).tocsr() if B is not None else K
    return EnergyForm(spec, mesh, B)


def _finish(quantity, core: CoreResult, mesh: Mesh, M, numerator_value) -> EigenResult:
    v = _sign_fix(core.vector, M)
    value = numerator_value(v) / _mdot(M, v, v)
    return EigenResult(quantity, float(value), FemField(mesh, v), core.iterations,
                       core.residual, core.restarts_agree, core.restart_values)


def _quotient_numerator(spec, mesh, B):
    def value(v):
        out = fem.energy_values(spec, mesh, v)
        return out + float(v @ (B @ v)) if B is not None else out
    return value


def lambda_robin(mesh: Mesh, beta: BoundaryWeight, spec: NormSpec,
                 options: SolverOptions | None = None) -> EigenResult:
    """First Robin eigenvalue: min of ``(E_F(v) + int beta v^2 F(nu)) / int v^2``."""
    forms = fem.assemble_forms(mesh, beta, spec)
    core = solver_core(_numerator(spec, mesh, forms.boundary), forms.mass, options=options)
    out = _finish("lambda_robin", core, mesh, forms.mass,
                  _quotient_numerator(spec, mesh, forms.boundary))
    bound = boundary_mass(mesh, beta, spec) / area(mesh)
    if out.value > bound * (1.0 + 1e-10):
        raise ConvergenceError(f"Robin value {out.value!r} exceeds constant-field bound {bound!r}",
                               out.final_residual, out.iterations)
    return out


def lambda_dirichlet(mesh: Mesh, spec: NormSpec, options: SolverOptions | None = None) -> EigenResult:
    """First Dirichlet eigenvalue: min of ``E_F(v) / int v^2`` over fields vanishing on the boundary."""
    M = fem.mass_matrix(mesh)
    core = solver_core(_numerator(spec, mesh), M, free=~mesh.boundary_flags, options=options)
    return _finish("lambda_dirichlet", core, mesh, M, _quotient_numerator(spec, mesh, None))


def sigma(mesh: Mesh, beta: BoundaryWeight, spec: NormSpec,
          options: SolverOptions | None = None) -> EigenResult:
    """min ``E_F(v) / int v^2`` subject to ``int beta v F(nu) = 0``."""
    forms = fem.assemble_forms(mesh, beta, spec)
    core = solver_core(_numerator(spec, mesh), forms.mass, constraints=forms.boundary_load,
                       options=options)
    return _finish("sigma", core, mesh, forms.mass, _quotient_numerator(spec, mesh, None))


def mu_neumann(mesh: Mesh, spec: NormSpec, options: SolverOptions | None = None) -> EigenResult:
    """First nontrivial Neumann eigenvalue: min ``E_F(v) / int v^2`` over zero-mean fields."""
    M = fem.mass_matrix(mesh)
    core = solver_core(_numerator(spec, mesh), M, constraints=np.asarray(M.sum(axis=0)).ravel(),
                       options=options)
    return _finish("mu_neumann", core, mesh, M, _quotient_numerator(spec, mesh, None))


def q_value(mesh: Mesh, beta: BoundaryWeight, spec: NormSpec,
            options: SolverOptions | None = None) -> EigenResult:
    """min over discrete F-harmonic ``h`` of ``int beta h^2 F(nu) / int h^2``.

    The search runs over boundary traces ``g``; each trace is extended F-harmonically.
    """
    opts = options or SolverOptions()
    forms = fem.assemble_forms(mesh, beta, spec)
    M, B = forms.mass, forms.boundary
    bidx = mesh.boundary_vertices
    Bbb = B[bidx][:, bidx].toarray()
    if spec.is_quadratic:
        g, _ = _q_linear(mesh, spec.matrix, M, Bbb)
        h = _extend_linear(mesh, spec.matrix, g)
        iterations, residual, agree, values = 1, 0.0, True, ()
    else:
        g0 = _q_shape_start(mesh, 0.5 * origin_hessian(spec), M, Bbb)
        rng = np.random.default_rng(opts.seed)
        starts = [g0] + [rng.standard_normal(len(bidx)) for _ in range(opts.restarts)]
        runs = [_q_search(spec, mesh, M, Bbb, s, opts, primary=(k == 0)) for k, s in enumerate(starts)]
        values = tuple(r[0] for r in runs)
        _, h, iterations, residual = runs[_pick(values, opts)]
        agree = bool((max(values) - min(values)) / min(values) <= opts.agree_tol)
    h = _sign_fix(h / np.sqrt(_mdot(M, h, h)), M)
    value = float(h @ (B @ h)) / _mdot(M, h, h)
    if spec.is_quadratic:
        residual = _q_linear_residual(mesh, spec.matrix, M, Bbb, h[bidx], value)
        values = (value,)
    bound = boundary_mass(mesh, beta, spec) / area(mesh)
    if value > bound * (1.0 + 1e-10):
        raise ConvergenceError(f"q value {value!r} exceeds constant-field bound {bound!r}",
                               residual, iterations)
    return EigenResult("q_beta", value, FemField(mesh, h), iterations, residual, agree, values)


def q_plain(mesh: Mesh, beta: BoundaryWeight, spec: NormSpec,
            options: SolverOptions | None = None, q_beta: EigenResult | None = None) -> EigenResult:
    """``q_F(Omega) = q_F(beta, Omega) / beta`` for a constant weight."""
    if beta.constant is None:
        raise InvalidInputError("q_plain needs a constant boundary weight")
    q = q_beta or q_value(mesh, beta, spec, options)
    return EigenResult("q_plain", q.value / beta.constant, q.minimizer, q.iterations,
                       q.final_residual, q.restarts_agree, q.restart_values)


def _extension_operator(mesh: Mesh, A):
    """Dense ``X`` with interior values ``X g`` of the A-harmonic extension of trace ``g``."""
    K = fem.stiffness_matrix(mesh, A)
    bidx, iidx = mesh.boundary_vertices, mesh.interior_vertices
    if len(iidx) == 0:
        return np.zeros((0, len(bidx)))
    Kii = K[iidx][:, iidx].tocsc()
    Kib = K[iidx][:, bidx].toarray()
    return -splu(Kii).solve(Kib)


def _extend_linear(mesh, A, g):
    h = np.zeros(mesh.n_vertices)
    h[mesh.boundary_vertices] = g
    h[mesh.interior_vertices] = _extension_operator(mesh, A) @ g
    return h


def _trace_mass(mesh, M, X):
    bidx, iidx = mesh.boundary_vertices, mesh.interior_vertices
    Mbb = M[bidx][:, bidx].toarray()
    Mbi = M[bidx][:, iidx]
    Mii = M[iidx][:, iidx]
    MbiX = Mbi @ X
    Q = Mbb + MbiX + MbiX.T + X.T @ (Mii @ X)
    return 0.5 * (Q + Q.T)


def _q_linear(mesh, A, M, Bbb):
    X = _extension_operator(mesh, A)
    Q = _trace_mass(mesh, M, X)
    w, V = la.eigh(Bbb, Q, subset_by_index=[0, 0])
    return V[:, 0], float(w[0])


def _q_linear_residual(mesh, A, M, Bbb, g, q):
    X = _extension_operator(mesh, A)
    Q = _trace_mass(mesh, M, X)
    Bg = Bbb @ g
    return float(np.abs(Bg - q * (Q @ g)).max() / max(np.abs(Bg).max(), 1e-300))


def _q_shape_start(mesh, A, M, Bbb):
    """Lowest non-constant trace of the quadratic surrogate with matrix ``A``."""
    X = _extension_operator(mesh, A)
    Q = _trace_mass(mesh, M, X)
    _, V = la.eigh(Bbb, Q, subset_by_index=[0, 1])
    ones = np.ones(len(Bbb))
    for g in V.T:
        shape = g - ones * float(ones @ (Bbb @ g)) / float(ones @ (Bbb @ ones))
        if np.sqrt(shape @ (Bbb @ shape)) > 1e-6 * np.sqrt(g @ (Bbb @ g)):
            return shape
    return V[:, 1]


def _q_search(spec, mesh, M, Bbb, g, opts: SolverOptions, primary: bool):
    """Minimize ``g^T B g / |H(g)|_M^2`` over boundary traces ``g``.

    ``H`` is the discrete F-harmonic extension. It commutes with adding constants and
    is positively 1-homogeneous, so every trace is ``c + t s`` with a shape ``s`` of
    zero weighted mean and ``H(c + t s) = c + t H(s)``. For a fixed shape the best
    ``(c, t)`` solves a 2x2 generalized eigenproblem; L-BFGS then runs over shapes only.
    Working on shapes removes the curvature blow-up of ``H`` near constant traces.
    The gradient of ``|H(s)|_M^2`` uses the interior Hessian at ``H(s)`` (implicit
    function theorem). ``H`` is not differentiable where the extension is flat, so
    convergence is judged by stagnation of the quotient, not by a gradient threshold.
    """
    bidx, iidx = mesh.boundary_vertices, mesh.interior_vertices
    n = mesh.n_vertices
    L = la.cholesky(Bbb, lower=True)
    ones = np.ones(len(bidx))
    B1 = Bbb @ ones
    b11 = float(ones @ B1)
    M1 = np.asarray(M.sum(axis=1)).ravel()
    area_ = float(M1.sum())
    state = {"h": None, "s": None, "H_ib": None}
    cache = {}

    def extend(s):
        full = np.zeros(n)
        full[bidx] = s
        init = None
        if state["h"] is not None:
            # Tangent predictor from the previous extension and its factorization.
            init = state["h"].copy()
            init[bidx] = s
            if "lu" in cache and state["H_ib"] is not None:
                init[iidx] -= cache["lu"].solve(state["H_ib"] @ (s - state["s"]))
        h = fem.harmonic_extension(spec, mesh, full, initial=init, tol=min(opts.tol, 1e-12),
                                   cache=cache).values
        state["h"], state["s"] = h, s
        return h

    def adjoint(h, y):
        """``J^T y`` for the Jacobian ``J`` of the extension at the field ``h``."""
        H = fem.energy_hessian_values(spec, mesh, h)
        H_ii = H[iidx][:, iidx]
        state["H_ib"] = H[iidx][:, bidx]
        rhs = y[iidx]
        x = None
        if "lu" in cache:
            # The last Newton factorization is nearly current; it preconditions CG.
            op = LinearOperator(H_ii.shape, matvec=cache["lu"].solve, dtype=float)
            x, info = cg(H_ii, rhs, rtol=1e-13, atol=0.0, maxiter=30, M=op)
            if info != 0:
                x = None
        if x is None:
            cache["lu"] = fem.factor_spd(H_ii)
            x = cache["lu"].solve(rhs)
        return y[bidx] - H[bidx][:, iidx] @ x

    def pencil(s):
        hs = extend(s)
        Bs = Bbb @ s
        Bm = np.array([[b11, float(ones @ Bs)], [float(ones @ Bs), float(s @ Bs)]])
        Mh = M @ hs
        Mm = np.array([[area_, float(M1 @ hs)], [float(M1 @ hs), float(hs @ Mh)]])
        w, V = la.eigh(Bm, Mm)
        c, t = V[:, 0]
        return float(w[0]), c, t, hs

    def fun(z):
        s = la.solve_triangular(L, z, lower=True, trans="T")
        s = s - ones * float(B1 @ s) / b11
        q, c, t, hs = pencil(s)
        h = c + t * hs
        # eigh normalizes (c, t) so that |c + t H(s)|_M = 1.
        dq = 2.0 * t * (Bbb @ (c * ones + t * s)) - 2.0 * q * t * adjoint(hs, M @ h)
        dq = dq - B1 * float(ones @ dq) / b11
        return q, la.solve_triangular(L, dq, lower=True)

    history = []
    # Restarts only probe for a clearly lower minimum, so they stop earlier.
    window = opts.q_window if primary else opts.restart_q_window
    stagnation = opts.q_stagnation if primary else opts.restart_q_stagnation

    def settled():
        w = history[-window:]
        return len(w) == window and w[0] - w[-1] <= stagnation * abs(w[-1])

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))
        if settled():
            raise StopIteration

    z0 = L.T @ g
    z0 = z0 / np.linalg.norm(z0)
    out = minimize(fun, z0, jac=True, method="L-BFGS-B", callback=record,
                   options={"maxiter": opts.q_max_iter, "maxcor": 30, "ftol": 1e-16, "gtol": 1e-14})
    s = la.solve_triangular(L, out.x, lower=True, trans="T")
    s = s - ones * float(B1 @ s) / b11
    q, c, t, hs = pencil(s)
    h = c + t * hs
    g = c * ones + t * s
    Bg = Bbb @ g
    res = float(np.abs(Bg - q * adjoint(hs, M @ h)).max() / max(np.abs(Bg).max(), 1e-300))
    its = int(out.nit)
    if not (settled() or res <= opts.tol or out.success):
        if primary:
            raise ConvergenceError("q-value search did not converge", res, its)
        log.info("q restart stopped at residual %.3e", res)
    return q, h, its, res
