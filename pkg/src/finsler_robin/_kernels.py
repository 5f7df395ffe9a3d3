"""Element loops for the anisotropic energy: value, gradient and Hessian entries.

Two interchangeable backends are provided. The numba backend fuses the norm
evaluation with the scatter over triangles; the numpy backend vectorizes over
triangles and scatters with ``bincount``. ``FINSLER_SPEC_NUMBA=0`` selects numpy;
otherwise numba is used when it can be imported.
"""
from __future__ import annotations

import functools
import math
import os

import numpy as np

from .norms import AXIS_FLOOR, NormSpec, _axis_coefficient, f2_derivatives, origin_hessian

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA and os.environ.get("FINSLER_SPEC_NUMBA", "1") != "0" else "numpy"


def set_backend(name: str) -> None:
    global BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    BACKEND = name


@functools.lru_cache(maxsize=64)
def _params(spec: NormSpec, secant: bool = False):
    kind, prm = spec.kernel_params()
    h0 = origin_hessian(spec)
    out = np.concatenate([prm, [h0[0, 0], h0[0, 1], h0[1, 1], _axis_coefficient(spec, secant)]])
    out.setflags(write=False)
    return kind, out


# -- numpy backend ----------------------------------------------------------

def _grads_np(tris, gphi, u):
    return np.einsum("ta,tak->tk", u[tris], gphi)


def energy_numpy(spec, tris, gphi, areas, u):
    f2, _, _ = f2_derivatives(spec, _grads_np(tris, gphi, u))
    return float(np.dot(areas, f2))


def energy_gradient_numpy(spec, tris, gphi, areas, u, nv):
    _, df2, _ = f2_derivatives(spec, _grads_np(tris, gphi, u))
    local = areas[:, None] * np.einsum("tk,tak->ta", df2, gphi)
    return np.bincount(tris.ravel(), weights=local.ravel(), minlength=nv)


def hessian_data_numpy(spec, tris, gphi, areas, u, secant=False):
    _, _, h = f2_derivatives(spec, _grads_np(tris, gphi, u), secant)
    local = np.einsum("tak,tkl,tbl->tab", gphi, h, gphi) * areas[:, None, None]
    return local.ravel()


# -- numba backend ----------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _f2_point(kind, prm, g0, g1):
        r = math.sqrt(g0 * g0 + g1 * g1)
        if r == 0.0:
            return 0.0, 0.0, 0.0, prm[5], prm[6], prm[7]
        if kind == 0:
            return r * r, 2.0 * g0, 2.0 * g1, 2.0, 0.0, 2.0
        if kind == 1:
            a00, a01, a11 = prm[0], prm[1], prm[2]
            A0 = a00 * g0 + a01 * g1
            A1 = a01 * g0 + a11 * g1
            return g0 * A0 + g1 * A1, 2.0 * A0, 2.0 * A1, 2.0 * a00, 2.0 * a01, 2.0 * a11
        p, w = prm[3], prm[4]
        u0, u1 = g0 / r, g1 / r
        b0, b1 = abs(u0), abs(u1)
        s0 = 1.0 if u0 > 0 else (-1.0 if u0 < 0 else 0.0)
        s1 = 1.0 if u1 > 0 else (-1.0 if u1 < 0 else 0.0)
        G = (1.0 - w) + w * (b0 ** p + b1 ** p)
        dG0 = p * ((1.0 - w) * u0 + w * s0 * b0 ** (p - 1.0))
        dG1 = p * ((1.0 - w) * u1 + w * s1 * b1 ** (p - 1.0))
        h0 = max(b0, AXIS_FLOOR) if p < 2.0 else b0
        h1 = max(b1, AXIS_FLOOR) if p < 2.0 else b1
        e00 = p * ((1.0 - w) * (1.0 + (p - 2.0) * u0 * u0) + w * prm[8] * h0 ** (p - 2.0))
        e01 = p * (1.0 - w) * (p - 2.0) * u0 * u1
        e11 = p * ((1.0 - w) * (1.0 + (p - 2.0) * u1 * u1) + w * prm[8] * h1 ** (p - 2.0))
        f = G ** (1.0 / p)
        c0 = G ** (1.0 / p - 1.0) / p
        rf = r * f
        c1 = (2.0 / p) * (2.0 / p - 1.0) * G ** (2.0 / p - 2.0)
        c2 = (2.0 / p) * G ** (2.0 / p - 1.0)
        return (rf * rf, 2.0 * rf * c0 * dG0, 2.0 * rf * c0 * dG1,
                c1 * dG0 * dG0 + c2 * e00, c1 * dG0 * dG1 + c2 * e01, c1 * dG1 * dG1 + c2 * e11)

    @njit(cache=True)
    def _f2_value(kind, prm, g0, g1):
        if kind == 0:
            return g0 * g0 + g1 * g1
        if kind == 1:
            return prm[0] * g0 * g0 + 2.0 * prm[1] * g0 * g1 + prm[2] * g1 * g1
        p, w = prm[3], prm[4]
        b0, b1 = abs(g0), abs(g1)
        r2 = g0 * g0 + g1 * g1
        G = (1.0 - w) * r2 ** (0.5 * p) + w * (b0 ** p + b1 ** p)
        return G ** (2.0 / p)

    @njit(cache=True)
    def _f2_grad(kind, prm, g0, g1):
        if kind == 0:
            return 2.0 * g0, 2.0 * g1
        if kind == 1:
            return 2.0 * (prm[0] * g0 + prm[1] * g1), 2.0 * (prm[1] * g0 + prm[2] * g1)
        r2 = g0 * g0 + g1 * g1
        if r2 == 0.0:
            return 0.0, 0.0
        p, w = prm[3], prm[4]
        b0, b1 = abs(g0), abs(g1)
        rq = (1.0 - w) * r2 ** (0.5 * p - 1.0)
        q0 = w * b0 ** (p - 1.0)
        q1 = w * b1 ** (p - 1.0)
        G = rq * r2 + q0 * b0 + q1 * b1
        # grad F^2 = (2/p) G^(2/p - 1) grad G and grad G = p (rq g + w sign(g) |g|^(p-1)).
        c = 2.0 * G ** (2.0 / p - 1.0)
        s0 = 1.0 if g0 > 0 else (-1.0 if g0 < 0 else 0.0)
        s1 = 1.0 if g1 > 0 else (-1.0 if g1 < 0 else 0.0)
        return c * (rq * g0 + s0 * q0), c * (rq * g1 + s1 * q1)

    @njit(cache=True)
    def _energy_nb(kind, prm, tris, gphi, areas, u):
        total = 0.0
        for t in range(tris.shape[0]):
            g0 = 0.0
            g1 = 0.0
            for a in range(3):
                ua = u[tris[t, a]]
                g0 += ua * gphi[t, a, 0]
                g1 += ua * gphi[t, a, 1]
            total += areas[t] * _f2_value(kind, prm, g0, g1)
        return total

    @njit(cache=True)
    def _energy_gradient_nb(kind, prm, tris, gphi, areas, u, out):
        for t in range(tris.shape[0]):
            g0 = 0.0
            g1 = 0.0
            for a in range(3):
                ua = u[tris[t, a]]
                g0 += ua * gphi[t, a, 0]
                g1 += ua * gphi[t, a, 1]
            d0, d1 = _f2_grad(kind, prm, g0, g1)
            d0 *= areas[t]
            d1 *= areas[t]
            for a in range(3):
                out[tris[t, a]] += d0 * gphi[t, a, 0] + d1 * gphi[t, a, 1]

    @njit(cache=True)
    def _hessian_data_nb(kind, prm, tris, gphi, areas, u, out):
        for t in range(tris.shape[0]):
            g0 = 0.0
            g1 = 0.0
            for a in range(3):
                ua = u[tris[t, a]]
                g0 += ua * gphi[t, a, 0]
                g1 += ua * gphi[t, a, 1]
            res = _f2_point(kind, prm, g0, g1)
            h00, h01, h11 = res[3], res[4], res[5]
            for a in range(3):
                pa0 = h00 * gphi[t, a, 0] + h01 * gphi[t, a, 1]
                pa1 = h01 * gphi[t, a, 0] + h11 * gphi[t, a, 1]
                for b in range(3):
                    out[9 * t + 3 * a + b] = areas[t] * (pa0 * gphi[t, b, 0] + pa1 * gphi[t, b, 1])


def energy_numba(spec, tris, gphi, areas, u):
    kind, prm = _params(spec)
    return float(_energy_nb(kind, prm, tris, gphi, areas, np.ascontiguousarray(u, dtype=float)))


def energy_gradient_numba(spec, tris, gphi, areas, u, nv):
    kind, prm = _params(spec)
    out = np.zeros(nv)
    _energy_gradient_nb(kind, prm, tris, gphi, areas, np.ascontiguousarray(u, dtype=float), out)
    return out


def hessian_data_numba(spec, tris, gphi, areas, u, secant=False):
    kind, prm = _params(spec, secant)
    out = np.empty(9 * len(tris))
    _hessian_data_nb(kind, prm, tris, gphi, areas, np.ascontiguousarray(u, dtype=float), out)
    return out


# -- dispatch ---------------------------------------------------------------

def energy(spec, tris, gphi, areas, u):
    if BACKEND == "numba":
        return energy_numba(spec, tris, gphi, areas, u)
    return energy_numpy(spec, tris, gphi, areas, u)


def energy_gradient(spec, tris, gphi, areas, u, nv):
    if BACKEND == "numba":
        return energy_gradient_numba(spec, tris, gphi, areas, u, nv)
    return energy_gradient_numpy(spec, tris, gphi, areas, u, nv)


def hessian_data(spec, tris, gphi, areas, u, secant=False):
    if BACKEND == "numba":
        return hessian_data_numba(spec, tris, gphi, areas, u, secant)
    return hessian_data_numpy(spec, tris, gphi, areas, u, secant)
