"""Case matrices, inequality checks, beta sweeps and report emission.

A case is a domain, a mesh size, a norm and a boundary weight. For each case the
harness computes every spectral quantity on one shared mesh and records the
inequalities linking them. Records carry ``lhs``, ``rhs`` and ``slack = rhs - lhs``;
a record passes when ``slack >= -tol * (|lhs| + |rhs|)``.
"""
from __future__ import annotations

import logging
import math
import os
import re
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import eigensolvers as es
from . import fem
from .errors import ConvergenceError, InvalidInputError
from .geometry import (BoundaryWeight, Mesh, anisotropic_perimeter, area, boundary_mass,
                       generate_mesh, read_mesh)
from .norms import NormSpec

log = logging.getLogger(__name__)

INEQ_TOL = 1e-8
SWEEP_TOL = 0.02
QUANTITY_ORDER = ("lambda_robin", "lambda_dirichlet", "sigma", "mu_neumann", "q_beta", "q_plain")
INEQUALITY_ORDER = ("kutt_mi", "kutt_40i", "confr", "cont", "const_test", "cont1_lower", "cont1_upper")
DOMAIN_DIMS = {
    "unit_square": (),
    "rectangle": ("width", "height"),
    "disk": ("r",),
    "L_shape": (),
    "ellipse": ("a", "b"),
    "file": (),
}
MATRIX_DOMAINS = ("unit_square", "rectangle", "disk", "L_shape", "ellipse")


def fmt(x) -> str:
    """Numbers in reports: 12 significant digits."""
    if x is None:
        return "nan"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


# -- case description -------------------------------------------------------

_CALL = re.compile(r"^\s*(affine|segments)\s*\((.*)\)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class BetaSpec:
    """Boundary weight: ``constant``, ``affine`` (a0 + a1 x + a2 y) or ``segments``.

    ``segments(v1, ..., vk)`` splits the boundary into k equal angular sectors about
    the domain centroid, counted counterclockwise from the positive x direction, and
    assigns ``vj`` to boundary vertices in sector j.
    """

    kind: str
    params: tuple

    @classmethod
    def parse(cls, text) -> "BetaSpec":
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            return cls.constant(float(text))
        s = str(text).strip()
        m = _CALL.match(s)
        if m is None:
            try:
                return cls.constant(float(s))
            except ValueError:
                raise InvalidInputError(f"cannot parse beta specification {text!r}") from None
        try:
            vals = tuple(float(t) for t in m.group(2).split(",") if t.strip())
        except ValueError:
            raise InvalidInputError(f"non-numeric argument in beta specification {text!r}") from None
        kind = m.group(1).lower()
        if kind == "affine" and len(vals) != 3:
            raise InvalidInputError("affine beta needs exactly three coefficients a0, a1, a2")
        if kind == "segments" and not vals:
            raise InvalidInputError("segments beta needs at least one value")
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("beta parameters must be finite")
        return cls(kind, vals)

    @classmethod
    def constant(cls, c: float) -> "BetaSpec":
        if not (math.isfinite(c) and c > 0):
            raise InvalidInputError(f"constant beta must be positive, got {c}")
        return cls("constant", (float(c),))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or (self.kind == "segments" and len(set(self.params)) == 1)

    def label(self) -> str:
        if self.kind == "constant":
            return fmt(self.params[0])
        return f"{self.kind}({','.join(fmt(v) for v in self.params)})"

    def build(self, mesh: Mesh) -> BoundaryWeight:
        """Evaluate on ``mesh``; positivity is checked on its boundary vertices."""
        if self.kind == "constant":
            return BoundaryWeight.from_constant(mesh, self.params[0])
        x, y = mesh.vertices.T
        if self.kind == "affine":
            a0, a1, a2 = self.params
            return BoundaryWeight.from_values(mesh, a0 + a1 * x + a2 * y)
        w = mesh.triangle_areas
        cent = (w[:, None] * mesh.vertices[mesh.triangles].mean(axis=1)).sum(axis=0) / w.sum()
        theta = np.mod(np.arctan2(y - cent[1], x - cent[0]), 2.0 * np.pi)
        k = len(self.params)
        sector = np.minimum((theta / (2.0 * np.pi) * k).astype(int), k - 1)
        const = self.params[0] if len(set(self.params)) == 1 else None
        return BoundaryWeight.from_values(mesh, np.asarray(self.params)[sector], constant=const)


@dataclass(frozen=True)
class CaseSpec:
    domain: str
    h: float
    norm: NormSpec
    beta: BetaSpec
    dims: tuple = ()
    mesh_file: str | None = None

    def __post_init__(self):
        if (self.domain == "file") != (self.mesh_file is not None):
            raise InvalidInputError("a mesh file goes with domain 'file' and nothing else")
        if self.domain not in DOMAIN_DIMS:
            raise InvalidInputError(f"unknown domain {self.domain!r}")
        if not (math.isfinite(self.h) and self.h > 0):
            raise InvalidInputError("mesh size h must be positive")
        unknown = {k for k, _ in self.dims} - set(DOMAIN_DIMS[self.domain])
        if unknown:
            raise InvalidInputError(f"domain {self.domain!r} does not take {sorted(unknown)}")

    @property
    def key(self) -> str:
        dims = "".join(f",{k}={fmt(v)}" for k, v in self.dims)
        if self.mesh_file is not None:
            dims = f",path={self.mesh_file}"
        return f"{self.domain}{dims}|{self.norm.label()}|beta={self.beta.label()}|h={fmt(self.h)}"

    def mesh(self) -> Mesh:
        if self.mesh_file is not None:
            return read_mesh(self.mesh_file)
        return generate_mesh(self.domain, self.h, **dict(self.dims))


def default_dims(domain: str) -> tuple:
    return {"rectangle": (("width", 1.0), ("height", 2.0)), "disk": (("r", 1.0),),
            "ellipse": (("a", 1.0), ("b", 0.5))}.get(domain, ())


def default_matrix(hs=(0.05, 0.025)) -> list[CaseSpec]:
    """5 domains x 3 norms x 3 weights x mesh levels."""
    norms = (NormSpec.euclidean(), NormSpec.quadratic([[4.0, 0.0], [0.0, 1.0]]),
             NormSpec.smoothed_p(3.0, 0.1))
    betas = (BetaSpec.constant(1.0), BetaSpec.constant(10.0), BetaSpec.parse("affine(1,0.5,0)"))
    return [CaseSpec(d, h, n, b, default_dims(d))
            for d in MATRIX_DOMAINS for n in norms for b in betas for h in hs]


# -- records ----------------------------------------------------------------

@dataclass(frozen=True)
class QuantityRecord:
    name: str
    value: float | None
    iterations: int = 0
    final_residual: float | None = None
    restarts_agree: bool = False
    error: str | None = None

    @property
    def available(self) -> bool:
        return self.value is not None

    @classmethod
    def from_result(cls, r: es.EigenResult) -> "QuantityRecord":
        return cls(r.quantity, r.value, r.iterations, r.final_residual, r.restarts_agree)


@dataclass(frozen=True)
class InequalityRecord:
    name: str
    lhs: float | None
    rhs: float | None
    slack: float | None
    passed: bool
    skipped: bool = False

    @classmethod
    def compare(cls, name, lhs, rhs, tol=INEQ_TOL) -> "InequalityRecord":
        """Record ``lhs <= rhs``; skipped (and not passed) when either side is missing."""
        if lhs is None or rhs is None:
            return cls(name, lhs, rhs, None, False, True)
        lhs, rhs = float(lhs), float(rhs)
        slack = rhs - lhs
        return cls(name, lhs, rhs, slack, bool(slack >= -tol * (abs(lhs) + abs(rhs))))


@dataclass
class VerificationReport:
    case: CaseSpec
    area: float
    perimeter: float
    mass: float
    quantities: dict
    inequalities: list
    tol: float = INEQ_TOL

    @property
    def solver_failed(self) -> bool:
        return any(not q.available for q in self.quantities.values())

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.inequalities)

    def value(self, name):
        q = self.quantities.get(name)
        return None if q is None else q.value

    def to_text(self) -> str:
        c = self.case
        lines = [
            f"case = {c.key}",
            f"domain = {c.domain}",
            *(f"domain.{k} = {fmt(v)}" for k, v in c.dims),
            f"h = {fmt(c.h)}",
            f"norm = {c.norm.label()}",
            f"norm.a = {fmt(c.norm.a)}",
            f"norm.b = {fmt(c.norm.b)}",
            f"beta = {c.beta.label()}",
            f"area = {fmt(self.area)}",
            f"perimeter_F = {fmt(self.perimeter)}",
            f"boundary_mass = {fmt(self.mass)}",
            f"tolerance = {fmt(self.tol)}",
        ]
        for name in QUANTITY_ORDER:
            q = self.quantities.get(name)
            if q is None:
                continue
            lines.append(f"{name}.value = {fmt(q.value)}")
            if q.error is not None:
                lines.append(f"{name}.error = {q.error}")
                continue
            lines += [f"{name}.iterations = {q.iterations}",
                      f"{name}.final_residual = {fmt(q.final_residual)}",
                      f"{name}.restarts_agree = {fmt(q.restarts_agree)}"]
        for r in self.inequalities:
            status = "skipped" if r.skipped else ("pass" if r.passed else "fail")
            lines += [f"{r.name}.lhs = {fmt(r.lhs)}", f"{r.name}.rhs = {fmt(r.rhs)}",
                      f"{r.name}.slack = {fmt(r.slack)}", f"{r.name}.status = {status}"]
        lines.append(f"all_passed = {fmt(self.all_passed)}")
        return "\n".join(lines) + "\n"


def _inv(x):
    return None if x is None else 1.0 / x


def _add(*xs):
    return None if any(x is None for x in xs) else float(sum(xs))


def _sub(x, y):
    return None if x is None or y is None else x - y


def inequality_records(lam, lam_d, sig, mu, q, area_, mass, tol=INEQ_TOL) -> list:
    cmp = InequalityRecord.compare
    return [
        cmp("kutt_mi", _inv(lam), _add(_inv(sig), area_ / mass), tol),
        cmp("kutt_40i", _inv(lam), _add(_inv(lam_d), _inv(q)), tol),
        cmp("confr", sig, mu, tol),
        cmp("cont", q, mass / area_, tol),
        cmp("const_test", lam, mass / area_, tol),
        cmp("cont1_lower", _inv(lam_d), _inv(lam), tol),
        cmp("cont1_upper", _sub(_inv(lam), _inv(lam_d)), _inv(q), tol),
    ]


# -- verification -----------------------------------------------------------

def _attempt(name, fn):
    try:
        return fn()
    except ConvergenceError as exc:
        log.warning("%s unavailable: %s", name, exc)
        return QuantityRecord(name, None, exc.iterations, exc.residual, False, str(exc))


def compute_quantities(case: CaseSpec, mesh: Mesh, beta: BoundaryWeight, options=None) -> dict:
    spec = case.norm
    out = {}
    q_res = {}

    def run(name, fn):
        def go():
            r = fn()
            q_res[name] = r
            return QuantityRecord.from_result(r)
        out[name] = _attempt(name, go)

    run("lambda_robin", lambda: es.lambda_robin(mesh, beta, spec, options))
    run("lambda_dirichlet", lambda: es.lambda_dirichlet(mesh, spec, options))
    run("sigma", lambda: es.sigma(mesh, beta, spec, options))
    run("mu_neumann", lambda: es.mu_neumann(mesh, spec, options))
    run("q_beta", lambda: es.q_value(mesh, beta, spec, options))
    if beta.constant is not None and "q_beta" in q_res:
        run("q_plain", lambda: es.q_plain(mesh, beta, spec, options, q_beta=q_res["q_beta"]))
    return out


def verify_theorem(case: CaseSpec, options: es.SolverOptions | None = None,
                   tol: float = INEQ_TOL) -> VerificationReport:
    mesh = case.mesh()
    beta = case.beta.build(mesh)
    a = area(mesh)
    P = anisotropic_perimeter(mesh, case.norm)
    m = boundary_mass(mesh, beta, case.norm)
    qs = compute_quantities(case, mesh, beta, options)
    v = {k: r.value for k, r in qs.items()}
    recs = inequality_records(v["lambda_robin"], v["lambda_dirichlet"], v["sigma"],
                              v["mu_neumann"], v["q_beta"], a, m, tol)
    return VerificationReport(case, a, P, m, qs, recs, tol)


def _worker(args):
    case, options, tol = args
    return verify_theorem(case, options, tol)


def worker_count() -> int:
    env = os.environ.get("FINSLER_SPEC_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InvalidInputError("FINSLER_SPEC_THREADS must be a positive integer") from None
        if n < 1:
            raise InvalidInputError("FINSLER_SPEC_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


def run_matrix(cases, options=None, tol=INEQ_TOL, workers=None) -> list[VerificationReport]:
    """Verify every case; the result is sorted by case key whatever the completion order."""
    workers = worker_count() if workers is None else workers
    jobs = [(c, options, tol) for c in cases]
    if workers <= 1 or len(jobs) <= 1:
        reports = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            reports = list(pool.map(_worker, jobs))
    return sorted(reports, key=lambda r: r.case.key)


# -- beta sweep -------------------------------------------------------------

@dataclass
class SweepRecord:
    case: CaseSpec
    betas: tuple
    ratios: tuple
    upper: float
    lower: tuple
    s1_upper: list
    s1_lower: list
    extrapolated: float
    target: float
    relative_error: float
    within_tol: bool
    monotone: bool
    sigma: float
    tol: float = SWEEP_TOL

    @property
    def all_passed(self) -> bool:
        return self.within_tol and all(r.passed for r in self.s1_upper + self.s1_lower)

    def to_text(self) -> str:
        lines = [f"case = {self.case.key}", f"sigma = {fmt(self.sigma)}",
                 f"perimeter_over_area = {fmt(self.target)}"]
        for k, (b, y) in enumerate(zip(self.betas, self.ratios)):
            lines += [f"node{k}.beta = {fmt(b)}", f"node{k}.lambda_over_beta = {fmt(y)}",
                      f"node{k}.s1_upper.slack = {fmt(self.s1_upper[k].slack)}",
                      f"node{k}.s1_lower.slack = {fmt(self.s1_lower[k].slack)}",
                      f"node{k}.s1_upper.status = {'pass' if self.s1_upper[k].passed else 'fail'}",
                      f"node{k}.s1_lower.status = {'pass' if self.s1_lower[k].passed else 'fail'}"]
        lines += [f"extrapolated = {fmt(self.extrapolated)}",
                  f"relative_error = {fmt(self.relative_error)}",
                  f"tolerance = {fmt(self.tol)}",
                  f"within_tolerance = {fmt(self.within_tol)}",
                  f"monotone = {fmt(self.monotone)}",
                  f"all_passed = {fmt(self.all_passed)}"]
        return "\n".join(lines) + "\n"

    def to_dat(self) -> str:
        return "".join(f"{fmt(b)} {fmt(y)}\n" for b, y in zip(self.betas, self.ratios))


def richardson_zero(b_a, y_a, b_b, y_b) -> float:
    """Value at 0 of the line through ``(b_a, y_a)`` and ``(b_b, y_b)``."""
    return (b_a * y_b - b_b * y_a) / (b_a - b_b)


def beta_sweep(case: CaseSpec, betas, options=None, tol: float = SWEEP_TOL,
               ineq_tol: float = INEQ_TOL) -> SweepRecord:
    """lambda/beta along a decreasing grid of constant weights, with the two-sided bound.

    sigma does not depend on the size of a constant weight, so it is computed once.
    """
    betas = tuple(float(b) for b in betas)
    if len(betas) < 2:
        raise InvalidInputError("a sweep needs at least two beta values")
    if any(not (math.isfinite(b) and b > 0) for b in betas):
        raise InvalidInputError("sweep beta values must be positive")
    if any(b1 >= b0 for b0, b1 in zip(betas, betas[1:])):
        raise InvalidInputError("sweep beta grid must be strictly decreasing")
    if not case.beta.is_constant:
        raise InvalidInputError("beta sweeps need a constant boundary weight")
    mesh = case.mesh()
    spec = case.norm
    a = area(mesh)
    P = anisotropic_perimeter(mesh, spec)
    sig = es.sigma(mesh, BoundaryWeight.from_constant(mesh, 1.0), spec, options).value
    ratios = []
    for b in betas:
        ratios.append(es.lambda_robin(mesh, BoundaryWeight.from_constant(mesh, b), spec, options).value / b)
    upper = P / a
    lower = tuple(P * sig / (P * b + a * sig) for b in betas)
    s1u = [InequalityRecord.compare("s1_upper", y, upper, ineq_tol) for y in ratios]
    s1l = [InequalityRecord.compare("s1_lower", lo, y, ineq_tol) for lo, y in zip(lower, ratios)]
    s0 = richardson_zero(betas[-2], ratios[-2], betas[-1], ratios[-1])
    rel = abs(s0 - upper) / upper
    monotone = all(y1 >= y0 - 1e-8 * abs(y0) for y0, y1 in zip(ratios, ratios[1:]))
    if not monotone:
        log.warning("lambda/beta is not monotone along the sweep for %s", case.key)
    return SweepRecord(replace(case, beta=BetaSpec.constant(betas[0])), betas, tuple(ratios), upper, lower,
                       s1u, s1l, s0, upper, rel, bool(rel <= tol), monotone, sig, tol)


# -- proof machinery --------------------------------------------------------

@dataclass
class DecompositionRecord:
    case: CaseSpec
    order_violation: float
    energy_slack: float
    chain: tuple
    chain_bound: float
    inverse_lambda: float
    order_tol: float = 1e-8
    energy_tol: float = 1e-9

    @property
    def chain_monotone(self) -> bool:
        c = self.chain
        return all(c[k] <= c[k + 1] * (1.0 + 1e-8) for k in range(len(c) - 1))

    @property
    def passed(self) -> bool:
        return (self.order_violation <= self.order_tol and self.energy_slack >= -self.energy_tol
                and self.chain_monotone)

    def to_text(self) -> str:
        names = ("norm_u", "norm_v_plus_norm_h", "dirichlet_trace_bound", "energy_trace_bound")
        lines = [f"case = {self.case.key}",
                 f"order_violation = {fmt(self.order_violation)}",
                 f"energy_slack = {fmt(self.energy_slack)}"]
        lines += [f"chain.{n} = {fmt(c)}" for n, c in zip(names, self.chain)]
        lines += [f"chain_bound = {fmt(self.chain_bound)}",
                  f"inverse_lambda = {fmt(self.inverse_lambda)}",
                  f"passed = {fmt(self.passed)}"]
        return "\n".join(lines) + "\n"


def decomposition_check(case: CaseSpec, options=None) -> DecompositionRecord:
    """Split the Robin eigenfunction ``u`` as ``v + h`` and re-derive the quotient bound.

    ``v`` vanishes on the boundary with the same F-Laplacian as ``u``; ``h`` is the
    F-harmonic field with the trace of ``u``. The chain compares
    ``|u| <= |v| + |h| <= sqrt(E(v)/lam_D) + sqrt(b(h)/q) <= sqrt(E(u)/lam_D) + sqrt(b(u)/q)``.
    """
    mesh = case.mesh()
    spec = case.norm
    beta = case.beta.build(mesh)
    forms = fem.assemble_forms(mesh, beta, spec)
    M, B = forms.mass, forms.boundary
    rob = es.lambda_robin(mesh, beta, spec, options)
    lam_d = es.lambda_dirichlet(mesh, spec, options).value
    q = es.q_value(mesh, beta, spec, options).value
    u = rob.minimizer
    v = fem.solve_dirichlet_matching(spec, u)
    h = fem.harmonic_extension(spec, mesh, u.values)
    order = float(max(np.max(u.values - v.values - h.values), 0.0))
    Eu, Ev = fem.energy(spec, u), fem.energy(spec, v)

    def l2(x):
        return math.sqrt(max(float(x @ (M @ x)), 0.0))

    bu = float(u.values @ (B @ u.values))
    bh = float(h.values @ (B @ h.values))
    chain = (l2(u.values), l2(v.values) + l2(h.values),
             math.sqrt(Ev / lam_d) + math.sqrt(bh / q), math.sqrt(Eu / lam_d) + math.sqrt(bu / q))
    return DecompositionRecord(case, order, Eu - Ev, chain, 1.0 / lam_d + 1.0 / q,
                               l2(u.values) ** 2 / (Eu + bu))


# -- output -----------------------------------------------------------------

def write_atomic(path, text: str) -> None:
    """Write to a sibling temporary file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def summary_csv(reports) -> str:
    header = (["case"] + list(QUANTITY_ORDER) + [f"{n}.slack" for n in INEQUALITY_ORDER]
              + [f"{n}.pass" for n in INEQUALITY_ORDER] + ["all_passed"])
    rows = [",".join(header)]
    for r in reports:
        recs = {x.name: x for x in r.inequalities}
        cells = [f'"{r.case.key}"']
        cells += ["" if r.value(n) is None else fmt(r.value(n)) for n in QUANTITY_ORDER]
        cells += ["" if recs[n].slack is None else fmt(recs[n].slack) for n in INEQUALITY_ORDER]
        cells += ["skipped" if recs[n].skipped else fmt(recs[n].passed) for n in INEQUALITY_ORDER]
        cells.append(fmt(r.all_passed))
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def matrix_text(reports) -> str:
    return "\n".join(r.to_text() for r in reports)


__all__ = [
    "BetaSpec", "CaseSpec", "DecompositionRecord", "InequalityRecord", "QuantityRecord",
    "SweepRecord", "VerificationReport", "beta_sweep", "decomposition_check", "default_matrix",
    "inequality_records", "richardson_zero", "run_matrix", "summary_csv", "verify_theorem",
    "write_atomic",
]
