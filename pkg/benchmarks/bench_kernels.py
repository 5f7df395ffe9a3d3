"""Numba vs numpy element kernels.

Times the energy, gradient and Hessian-entry loops of both backends on meshes of
increasing size, checks that they agree, and reports one end-to-end Robin solve per
backend for scale (sparse factorizations dominate that number).

    python benchmarks/bench_kernels.py [--h 0.05 0.025 0.0125] [--repeat 20]
"""
import argparse
import time

import numpy as np

from finsler_robin import _kernels
from finsler_robin.eigensolvers import lambda_robin
from finsler_robin.geometry import BoundaryWeight, generate_mesh
from finsler_robin.norms import NormSpec


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, nargs="+", default=[0.05, 0.025, 0.0125])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--domain", default="disk")
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    spec = NormSpec.smoothed_p(3.0, 0.1)
    print(f"{'triangles':>10} {'kernel':>9} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max rel diff':>13}")
    for h in args.h:
        mesh = generate_mesh(args.domain, h)
        tri, gphi, areas = mesh.triangles, mesh.grad_phi, mesh.triangle_areas
        u = np.random.default_rng(0).standard_normal(mesh.n_vertices)
        nv = mesh.n_vertices
        cases = {
            "energy": (lambda: _kernels.energy_numpy(spec, tri, gphi, areas, u),
                       lambda: _kernels.energy_numba(spec, tri, gphi, areas, u)),
            "gradient": (lambda: _kernels.energy_gradient_numpy(spec, tri, gphi, areas, u, nv),
                         lambda: _kernels.energy_gradient_numba(spec, tri, gphi, areas, u, nv)),
            "hessian": (lambda: _kernels.hessian_data_numpy(spec, tri, gphi, areas, u),
                        lambda: _kernels.hessian_data_numba(spec, tri, gphi, areas, u)),
        }
        for name, (f_np, f_nb) in cases.items():
            a, b = np.asarray(f_np()), np.asarray(f_nb())  # also warms up the jit
            diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
            t_np = best_of(f_np, args.repeat)
            t_nb = best_of(f_nb, args.repeat)
            print(f"{mesh.n_triangles:>10} {name:>9} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} "
                  f"{t_np / t_nb:>8.1f} {diff:>13.2e}")

    mesh = generate_mesh(args.domain, args.h[0])
    beta = BoundaryWeight.from_constant(mesh, 1.0)
    for backend in ("numpy", "numba"):
        _kernels.set_backend(backend)
        t0 = time.perf_counter()
        r = lambda_robin(mesh, beta, spec)
        print(f"lambda_robin h={args.h[0]} backend={backend}: {r.value:.12g} in {time.perf_counter() - t0:.2f} s")


if __name__ == "__main__":
    main()
