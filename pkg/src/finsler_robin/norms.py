"""Catalog of strongly convex, positively 1-homogeneous norms on the plane.

Three families are supported:

* ``euclidean``: ``F(xi) = |xi|``
* ``quadratic``: ``F(xi) = sqrt(xi . A xi)`` for a symmetric positive-definite ``A``
* ``smoothed-p``: ``F(xi) = ((1 - w) |xi|^p + w (|xi_1|^p + |xi_2|^p))^(1/p)``
  with blend weight ``w = 1 / (1 + eps)``

Every evaluator accepts a single 2-vector or an ``(N, 2)`` stack of vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InvalidInputError, NormDomainError

EUCLIDEAN = "euclidean"
QUADRATIC = "quadratic"
SMOOTHED_P = "smoothed-p"

KIND_CODES = {EUCLIDEAN: 0, QUADRATIC: 1, SMOOTHED_P: 2}

_N_DIRECTIONS = 4096
_BOUND_PAD = 1e-9
# Floor on |u_i| in the Hessian of smoothed-p norms with p < 2.
AXIS_FLOOR = 1e-8


@dataclass(frozen=True)
class NormSpec:
    """An admissible norm F together with growth constants ``a|xi| <= F(xi) <= b|xi|``.

    Build instances through :meth:`euclidean`, :meth:`quadratic`, :meth:`smoothed_p`
    or :meth:`from_dict`; those validate parameters and compute ``a`` and ``b``.
    """

    kind: str
    A: tuple = ((1.0, 0.0), (0.0, 1.0))
    p: float = 2.0
    eps: float = 0.0
    a: float = 1.0
    b: float = 1.0

    @classmethod
    def euclidean(cls) -> "NormSpec":
        return cls(kind=EUCLIDEAN, a=1.0, b=1.0)

    @classmethod
    def quadratic(cls, A) -> "NormSpec":
        A = np.asarray(A, dtype=float)
        if A.shape != (2, 2) or not np.all(np.isfinite(A)):
            raise InvalidInputError("quadratic norm needs a finite 2x2 matrix A")
        if abs(A[0, 1] - A[1, 0]) > 1e-12 * max(1.0, np.abs(A).max()):
            raise InvalidInputError("matrix A must be symmetric")
        A = 0.5 * (A + A.T)
        evals = np.linalg.eigvalsh(A)
        if evals[0] <= 0.0:
            raise InvalidInputError("matrix A must be positive definite")
        a = float(np.sqrt(evals[0])) - _BOUND_PAD
        b = float(np.sqrt(evals[1])) + _BOUND_PAD
        return cls(kind=QUADRATIC, A=tuple(map(tuple, A.tolist())), a=a, b=b)

    @classmethod
    def smoothed_p(cls, p: float, eps: float = 0.0) -> "NormSpec":
        p = float(p)
        eps = float(eps)
        if not p > 1.0 or not np.isfinite(p):
            raise InvalidInputError(f"smoothed-p norm needs p > 1, got {p}")
        if not eps >= 0.0 or not np.isfinite(eps):
            raise InvalidInputError(f"smoothed-p norm needs eps >= 0, got {eps}")
        probe = cls(kind=SMOOTHED_P, p=p, eps=eps)
        a, b = _sampled_bounds(probe)
        return cls(kind=SMOOTHED_P, p=p, eps=eps, a=a, b=b)

    @classmethod
    def from_dict(cls, d: dict) -> "NormSpec":
        """Build from a config mapping such as ``{"kind": "quadratic", "A": [[4, 0], [0, 1]]}``."""
        d = dict(d)
        kind = str(d.pop("kind", "")).strip().lower().replace("_", "-")
        try:
            if kind == EUCLIDEAN:
                spec = cls.euclidean()
            elif kind == QUADRATIC:
                spec = cls.quadratic(d.pop("A"))
            elif kind in (SMOOTHED_P, "smoothedp"):
                spec = cls.smoothed_p(d.pop("p"), d.pop("eps", 0.0))
            else:
                raise InvalidInputError(f"unknown norm kind {kind!r}")
        except KeyError as exc:
            raise InvalidInputError(f"norm {kind!r} is missing parameter {exc}") from None
        if d:
            raise InvalidInputError(f"unexpected norm parameters: {sorted(d)}")
        return spec

    @property
    def matrix(self) -> np.ndarray:
        """The matrix A of a quadratic norm (identity for the Euclidean norm)."""
        if self.kind == SMOOTHED_P:
            raise AttributeError("smoothed-p norms have no matrix")
        return np.array(self.A, dtype=float)

    @property
    def weight(self) -> float:
        return 1.0 / (1.0 + self.eps)

    @property
    def is_quadratic(self) -> bool:
        """True when F^2 is a quadratic form, so every Rayleigh quotient is linear."""
        return self.kind in (EUCLIDEAN, QUADRATIC)

    def kernel_params(self) -> tuple[int, np.ndarray]:
        """Integer kind code and flat parameter vector ``[A00, A01, A11, p, w]`` for compiled kernels."""
        A = np.array(self.A, dtype=float)
        return KIND_CODES[self.kind], np.array([A[0, 0], A[0, 1], A[1, 1], self.p, self.weight])

    def label(self) -> str:
        if self.kind == EUCLIDEAN:
            return EUCLIDEAN
        if self.kind == QUADRATIC:
            A = self.A
            return f"quadratic[{A[0][0]:g},{A[0][1]:g},{A[1][1]:g}]"
        return f"smoothed-p[p={self.p:g},eps={self.eps:g}]"


def _as_stack(xi):
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    xi = np.atleast_2d(xi)
    if xi.shape[-1] != 2:
        raise ValueError("norm arguments must be 2-vectors")
    return xi, single


def _axis_coefficient(spec: NormSpec, secant: bool) -> float:
    """Factor of ``w |u_i|^(p-2)`` in Hess G: ``p - 1``, or 1 for the secant Jacobian when p < 2.

    Along an axis component Newton on ``|x|^p`` maps ``x`` to ``x (p-2)/(p-1)``, which
    does not contract for p < 2. The secant curvature ``p |x|^(p-2)`` lands on 0 instead.
    """
    return 1.0 if secant and spec.p < 2.0 else spec.p - 1.0


def _unit_parts(spec: NormSpec, u: np.ndarray, secant: bool = False):
    """F, grad F and Hess F^2 at unit vectors ``u`` (rows); see :func:`f2_derivatives` for ``secant``."""
    n = u.shape[0]
    if spec.kind == EUCLIDEAN:
        f = np.ones(n)
        df = u.copy()
        h = np.broadcast_to(2.0 * np.eye(2), (n, 2, 2)).copy()
        return f, df, h
    if spec.kind == QUADRATIC:
        A = np.array(spec.A)
        Au = u @ A
        f = np.sqrt(np.einsum("ij,ij->i", u, Au))
        df = Au / f[:, None]
        h = np.broadcast_to(2.0 * A, (n, 2, 2)).copy()
        return f, df, h
    p, w = spec.p, spec.weight
    ab = np.abs(u)
    # |u| = 1 so the isotropic part of G is the constant (1 - w).
    G = (1.0 - w) + w * (ab[:, 0] ** p + ab[:, 1] ** p)
    dG = p * ((1.0 - w) * u + w * np.sign(u) * ab ** (p - 1.0))
    # For p < 2 the axis term |u_i|^(p-2) is unbounded; floor |u_i| so the Hessian
    # stays finite (it only enters Newton Jacobians, never a reported value).
    diag = w * _axis_coefficient(spec, secant) * (np.maximum(ab, AXIS_FLOOR) if p < 2.0 else ab) ** (p - 2.0)
    d2G = (1.0 - w) * (np.eye(2)[None] + (p - 2.0) * u[:, :, None] * u[:, None, :])
    d2G[:, 0, 0] += diag[:, 0]
    d2G[:, 1, 1] += diag[:, 1]
    d2G *= p
    f = G ** (1.0 / p)
    df = dG * (G ** (1.0 / p - 1.0) / p)[:, None]
    c1 = (2.0 / p) * (2.0 / p - 1.0) * G ** (2.0 / p - 2.0)
    c2 = (2.0 / p) * G ** (2.0 / p - 1.0)
    h = c1[:, None, None] * dG[:, :, None] * dG[:, None, :] + c2[:, None, None] * d2G
    return f, df, h


def norm_eval(spec: NormSpec, xi):
    """F(xi); ``F(0) = 0``."""
    xi, single = _as_stack(xi)
    r = np.hypot(xi[:, 0], xi[:, 1])
    out = np.zeros_like(r)
    nz = r > 0
    if np.any(nz):
        f, _, _ = _unit_parts(spec, xi[nz] / r[nz, None])
        out[nz] = r[nz] * f
    return float(out[0]) if single else out


def norm_grad(spec: NormSpec, xi):
    """F_xi(xi). It is 0-homogeneous and satisfies ``F_xi(xi) . xi = F(xi)``."""
    xi, single = _as_stack(xi)
    r = np.hypot(xi[:, 0], xi[:, 1])
    if np.any(r == 0):
        raise NormDomainError("F is not differentiable at the origin")
    _, df, _ = _unit_parts(spec, xi / r[:, None])
    return df[0] if single else df


def norm_hess_F2(spec: NormSpec, xi):
    """Hessian of F^2 at ``xi != 0``; symmetric positive definite and 0-homogeneous.

    For smoothed-p norms with p < 2 the true Hessian is unbounded on the axes; there
    the axis components are floored at ``AXIS_FLOOR``.
    """
    xi, single = _as_stack(xi)
    r = np.hypot(xi[:, 0], xi[:, 1])
    if np.any(r == 0):
        raise NormDomainError("F^2 has no Hessian at the origin")
    _, _, h = _unit_parts(spec, xi / r[:, None])
    return h[0] if single else h


def origin_hessian(spec: NormSpec) -> np.ndarray:
    """Stand-in for Hess F^2 at the origin, used only by Newton-type solvers.

    Hess F^2 is 0-homogeneous, hence bounded but discontinuous at 0; any SPD matrix
    is an acceptable Jacobian there. We average the values on the two diagonals,
    which stay clear of the axis singularity of smoothed-p norms with p < 2.
    """
    h = norm_hess_F2(spec, np.array([[1.0, 1.0], [1.0, -1.0]]))
    return 0.5 * (h[0] + h[1])


def f2_derivatives(spec: NormSpec, g: np.ndarray, secant: bool = False):
    """F^2, grad F^2 and Hess F^2 for a stack of gradients ``g`` (N, 2).

    Rows with ``g = 0`` get ``F^2 = 0``, ``grad F^2 = 0`` (the continuous extension of
    ``2 F F_xi``) and :func:`origin_hessian`. With ``secant`` the third output is a
    Newton Jacobian rather than the Hessian: for smoothed-p norms with p < 2 the axis
    terms use secant curvature. It is still SPD and equals the Hessian otherwise.
    """
    r = np.hypot(g[:, 0], g[:, 1])
    n = g.shape[0]
    f2 = np.zeros(n)
    df2 = np.zeros((n, 2))
    h = np.empty((n, 2, 2))
    h[:] = origin_hessian(spec)
    nz = r > 0
    if np.any(nz):
        rn = r[nz]
        f, df, hh = _unit_parts(spec, g[nz] / rn[:, None], secant)
        f2[nz] = (rn * f) ** 2
        df2[nz] = 2.0 * (rn * f)[:, None] * df
        h[nz] = hh
    return f2, df2, h


def _sampled_bounds(spec: NormSpec) -> tuple[float, float]:
    theta = np.linspace(0.0, 2.0 * np.pi, _N_DIRECTIONS, endpoint=False)
    vals = norm_eval(spec, np.column_stack([np.cos(theta), np.sin(theta)]))
    step = theta[1]

    def on_circle(t, sign):
        return sign * norm_eval(spec, np.array([np.cos(t), np.sin(t)]))

    lo = float(vals.min())
    hi = float(vals.max())
    for idx, sign in ((int(vals.argmin()), 1.0), (int(vals.argmax()), -1.0)):
        t0 = theta[idx]
        res = minimize_scalar(on_circle, bounds=(t0 - step, t0 + step), args=(sign,),
                              method="bounded", options={"xatol": 1e-12})
        if sign > 0:
            lo = min(lo, float(res.fun))
        else:
            hi = max(hi, float(-res.fun))
    return lo - _BOUND_PAD, hi + _BOUND_PAD
