"""Command line: ``solve``, ``verify``, ``sweep`` and ``mesh-info``.

Every option can also come from a TOML file given with ``--config``; flags given on
the command line override the file. Exit codes: 0 success, 1 an inequality failed,
2 a solver did not converge, 3 invalid input.
"""
from __future__ import annotations

import argparse
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from . import eigensolvers as es
from . import harness as hz
from .errors import ConvergenceError, InvalidInputError, NormDomainError
from .geometry import anisotropic_perimeter, area, boundary_mass
from .harness import fmt
from .norms import NormSpec

EXIT_OK, EXIT_INEQUALITY, EXIT_NONCONVERGENCE, EXIT_INVALID = 0, 1, 2, 3
COMMANDS = ("solve", "verify", "sweep", "mesh-info")
FORMATS = ("text", "csv", "report")
DEFAULT_BETAS = (0.1, 0.01, 0.001)

# config keys, with the section.key spellings accepted in files
_SECTIONS = {
    "domain": {"name": "domain", "r": "r", "width": "width", "height": "height", "a": "a",
               "b": "b", "h": "h", "mesh": "mesh"},
    "norm": {"kind": "norm", "A": "A", "p": "p", "eps": "eps"},
    "beta": {"value": "beta", "betas": "betas"},
    "solver": {"tol": "tol", "agree_tol": "agree_tol", "ineq_tol": "ineq_tol",
               "restarts": "restarts", "sweep_tol": "sweep_tol"},
    "output": {"out": "out", "format": "format"},
}
_KEYS = ("domain", "r", "width", "height", "a", "b", "h", "mesh", "norm", "A", "p", "eps",
         "beta", "betas", "quantity", "tol", "agree_tol", "ineq_tol", "restarts", "sweep_tol",
         "out", "format", "matrix", "matrix_h")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    case: hz.CaseSpec | None
    quantity: str = "lambda_robin"
    options: es.SolverOptions = field(default_factory=es.SolverOptions)
    ineq_tol: float = hz.INEQ_TOL
    sweep_tol: float = hz.SWEEP_TOL
    betas: tuple = DEFAULT_BETAS
    out: Path | None = None
    format: str = "text"
    matrix: bool = False
    matrix_h: tuple = (0.05, 0.025)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, allow_abbrev=False)
    g = common.add_argument_group("case")
    g.add_argument("--config", help="TOML file with the same keys as the flags")
    g.add_argument("--domain", help="unit_square, rectangle, disk, L_shape, ellipse")
    g.add_argument("--mesh", help="read the mesh from a text file instead of generating it")
    g.add_argument("--r", type=float, help="disk radius")
    g.add_argument("--width", type=float, help="rectangle width")
    g.add_argument("--height", type=float, help="rectangle height")
    g.add_argument("--a", type=float, help="ellipse semi-axis along x")
    g.add_argument("--b", type=float, help="ellipse semi-axis along y")
    g.add_argument("--h", type=float, help="target mesh size")
    g.add_argument("--norm", help="euclidean, quadratic or smoothed-p")
    g.add_argument("--A", help="quadratic norm matrix: 'a11,a12,a21,a22' or 'a11,a12,a22'")
    g.add_argument("--p", type=float, help="smoothed-p exponent")
    g.add_argument("--eps", type=float, help="smoothed-p smoothing parameter")
    g.add_argument("--beta", help="1.0 | affine(a0,a1,a2) | segments(v1,v2,...)")
    s = common.add_argument_group("solver")
    s.add_argument("--tol", type=float, help="solver residual tolerance")
    s.add_argument("--agree-tol", dest="agree_tol", type=float, help="restart agreement tolerance")
    s.add_argument("--ineq-tol", dest="ineq_tol", type=float, help="relative inequality tolerance")
    s.add_argument("--sweep-tol", dest="sweep_tol", type=float, help="relative tolerance of the sweep limit")
    s.add_argument("--restarts", type=int, help="random restarts for nonlinear problems")
    o = common.add_argument_group("output")
    o.add_argument("--out", help="directory for report files")
    o.add_argument("--format", choices=FORMATS, help="stdout format")
    o.add_argument("-v", "--verbose", action="store_true", help="log solver progress")

    parser = _Parser(prog="finsler-robin", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("solve", parents=[common], allow_abbrev=False, help="compute one spectral quantity")
    p.add_argument("--quantity", choices=es.QUANTITIES + ("all",))
    p = sub.add_parser("verify", parents=[common], allow_abbrev=False, help="check every inequality on one case")
    p.add_argument("--matrix", action="store_true", default=None,
                   help="run the full case matrix instead of one case")
    p.add_argument("--matrix-h", dest="matrix_h", help="comma-separated mesh sizes for --matrix")
    p = sub.add_parser("sweep", parents=[common], allow_abbrev=False, help="lambda/beta along a decreasing beta grid")
    p.add_argument("--betas", help="comma-separated, strictly decreasing")
    sub.add_parser("mesh-info", parents=[common], allow_abbrev=False, help="print mesh measures")
    return parser


# -- config assembly --------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise InvalidInputError(f"cannot read config file {path}: {exc.strerror}") from None
    except tomli.TOMLDecodeError as exc:
        raise InvalidInputError(f"malformed config file {path}: {exc}") from None
    out = {}
    for key, val in raw.items():
        if isinstance(val, dict):
            names = _SECTIONS.get(key)
            if names is None:
                raise InvalidInputError(f"unknown config section [{key}]")
            for k, v in val.items():
                if k not in names:
                    raise InvalidInputError(f"unknown config key {key}.{k}")
                out[names[k]] = v
        elif key in _KEYS:
            out[key] = val
        else:
            raise InvalidInputError(f"unknown config key {key!r}")
    return out


def _numbers(text, what) -> list:
    if isinstance(text, (list, tuple)):
        flat = []
        for x in text:
            flat.extend(x if isinstance(x, (list, tuple)) else [x])
        items = flat
    elif isinstance(text, (int, float)):
        items = [text]
    else:
        items = [t for t in re.split(r"[,;\s]+", str(text).strip()) if t]
    try:
        return [float(x) for x in items]
    except (TypeError, ValueError):
        raise InvalidInputError(f"{what} must be a list of numbers, got {text!r}") from None


def _positive(val, name):
    try:
        x = float(val)
    except (TypeError, ValueError):
        raise InvalidInputError(f"{name} must be a number, got {val!r}") from None
    if not (math.isfinite(x) and x > 0):
        raise InvalidInputError(f"{name} must be positive, got {val!r}")
    return x


def _norm(cfg) -> NormSpec:
    kind = str(cfg.get("norm", "euclidean")).strip().lower().replace("_", "-")
    if kind == "quadratic":
        if "A" not in cfg:
            raise InvalidInputError("quadratic norm needs --A")
        vals = _numbers(cfg["A"], "A")
        if len(vals) == 3:
            vals = [vals[0], vals[1], vals[1], vals[2]]
        if len(vals) != 4:
            raise InvalidInputError("A needs 3 or 4 entries")
        return NormSpec.quadratic([vals[:2], vals[2:]])
    if kind in ("smoothed-p", "smoothedp"):
        if "p" not in cfg:
            raise InvalidInputError("smoothed-p norm needs --p")
        return NormSpec.smoothed_p(cfg["p"], cfg.get("eps", 0.0))
    if kind == "euclidean":
        return NormSpec.euclidean()
    raise InvalidInputError(f"unknown norm {kind!r}")


def _case(cfg) -> hz.CaseSpec:
    mesh_file = cfg.get("mesh")
    domain = "file" if mesh_file is not None else str(cfg.get("domain", "unit_square"))
    if domain == "file" and mesh_file is None:
        raise InvalidInputError("domain 'file' needs --mesh")
    if domain not in hz.DOMAIN_DIMS:
        raise InvalidInputError(f"unknown domain {domain!r}")
    dims = []
    defaults = dict(hz.default_dims(domain))
    for name in hz.DOMAIN_DIMS[domain]:
        val = cfg.get(name, defaults.get(name))
        dims.append((name, _positive(val, name)))
    stray = [k for k in ("r", "width", "height", "a", "b")
             if cfg.get(k) is not None and k not in hz.DOMAIN_DIMS[domain]]
    if stray:
        raise InvalidInputError(f"domain {domain!r} does not take {', '.join('--' + k for k in stray)}")
    h = _positive(cfg.get("h", 0.05), "h")
    return hz.CaseSpec(domain, h, _norm(cfg), hz.BetaSpec.parse(cfg.get("beta", 1.0)), tuple(dims),
                       None if mesh_file is None else str(mesh_file))


def make_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else {}
    for key in _KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    opts = {}
    for key in ("tol", "agree_tol"):
        if key in cfg:
            opts[key] = _positive(cfg[key], key)
    if "restarts" in cfg:
        r = cfg["restarts"]
        if not isinstance(r, int) or isinstance(r, bool) or r < 0:
            raise InvalidInputError("restarts must be a non-negative integer")
        opts["restarts"] = r
    betas = DEFAULT_BETAS
    if "betas" in cfg:
        betas = tuple(_numbers(cfg["betas"], "betas"))
        if any(b1 >= b0 for b0, b1 in zip(betas, betas[1:])):
            raise InvalidInputError("betas must be strictly decreasing")
        if any(not (math.isfinite(b) and b > 0) for b in betas):
            raise InvalidInputError("betas must be positive")
    matrix_h = (0.05, 0.025)
    if "matrix_h" in cfg:
        matrix_h = tuple(_positive(x, "matrix_h") for x in _numbers(cfg["matrix_h"], "matrix_h"))
    fmt_ = cfg.get("format", "text")
    if fmt_ not in FORMATS:
        raise InvalidInputError(f"format must be one of {', '.join(FORMATS)}")
    quantity = cfg.get("quantity", "lambda_robin")
    if quantity not in es.QUANTITIES + ("all",):
        raise InvalidInputError(f"unknown quantity {quantity!r}")
    matrix = bool(cfg.get("matrix", False))
    case = None if (args.command == "verify" and matrix) else _case(cfg)
    return RunConfig(
        command=args.command, case=case, quantity=quantity, options=es.SolverOptions(**opts),
        ineq_tol=_positive(cfg.get("ineq_tol", hz.INEQ_TOL), "ineq_tol"),
        sweep_tol=_positive(cfg.get("sweep_tol", hz.SWEEP_TOL), "sweep_tol"),
        betas=betas, out=None if cfg.get("out") is None else Path(cfg["out"]),
        format=fmt_, matrix=matrix, matrix_h=matrix_h)


# -- commands ---------------------------------------------------------------

_SOLVERS = {
    "lambda_robin": lambda m, b, s, o: es.lambda_robin(m, b, s, o),
    "lambda_dirichlet": lambda m, b, s, o: es.lambda_dirichlet(m, s, o),
    "sigma": lambda m, b, s, o: es.sigma(m, b, s, o),
    "mu_neumann": lambda m, b, s, o: es.mu_neumann(m, s, o),
    "q_beta": lambda m, b, s, o: es.q_value(m, b, s, o),
    "q_plain": lambda m, b, s, o: es.q_plain(m, b, s, o),
}


def _emit(cfg: RunConfig, text: str, csv: str | None, files: dict) -> None:
    sys.stdout.write(csv if cfg.format == "csv" and csv is not None else text)
    if cfg.out is not None:
        for name, body in files.items():
            hz.write_atomic(cfg.out / name, body)


def cmd_solve(cfg: RunConfig) -> int:
    case = cfg.case
    mesh = case.mesh()
    beta = case.beta.build(mesh)
    names = es.QUANTITIES if cfg.quantity == "all" else (cfg.quantity,)
    if "q_plain" in names and beta.constant is None:
        if cfg.quantity == "all":
            names = tuple(n for n in names if n != "q_plain")
        else:
            raise InvalidInputError("q_plain needs a constant beta")
    lines = [f"case = {case.key}"]
    rows = ["quantity,value,iterations,final_residual,restarts_agree"]
    status = EXIT_OK
    for name in names:
        try:
            r = _SOLVERS[name](mesh, beta, case.norm, cfg.options)
        except ConvergenceError as exc:
            lines.append(f"{name}.error = {exc}")
            rows.append(f"{name},,{exc.iterations},{fmt(exc.residual)},")
            status = EXIT_NONCONVERGENCE
            continue
        lines += [f"{name} = {fmt(r.value)}", f"{name}.iterations = {r.iterations}",
                  f"{name}.final_residual = {fmt(r.final_residual)}",
                  f"{name}.restarts_agree = {fmt(r.restarts_agree)}"]
        rows.append(f"{name},{fmt(r.value)},{r.iterations},{fmt(r.final_residual)},{fmt(r.restarts_agree)}")
    text = "\n".join(lines) + "\n"
    csv = "\n".join(rows) + "\n"
    _emit(cfg, text, csv, {"solve.txt": text, "solve.csv": csv})
    return status


def _verdict(reports) -> int:
    if any(r.solver_failed for r in reports):
        return EXIT_NONCONVERGENCE
    return EXIT_OK if all(r.all_passed for r in reports) else EXIT_INEQUALITY


def cmd_verify(cfg: RunConfig) -> int:
    if cfg.matrix:
        reports = hz.run_matrix(hz.default_matrix(cfg.matrix_h), cfg.options, cfg.ineq_tol)
        text = hz.matrix_text(reports)
        summary = "".join(f"{'pass' if r.all_passed else 'FAIL'} {r.case.key}\n" for r in reports)
        csv = hz.summary_csv(reports)
        sys.stdout.write(csv if cfg.format == "csv" else (text if cfg.format == "report" else summary))
        if cfg.out is not None:
            hz.write_atomic(cfg.out / "report.txt", text)
            hz.write_atomic(cfg.out / "summary.csv", csv)
        return _verdict(reports)
    report = hz.verify_theorem(cfg.case, cfg.options, cfg.ineq_tol)
    text = report.to_text()
    csv = hz.summary_csv([report])
    _emit(cfg, text, csv, {"report.txt": text, "summary.csv": csv})
    return _verdict([report])


def cmd_sweep(cfg: RunConfig) -> int:
    rec = hz.beta_sweep(cfg.case, cfg.betas, cfg.options, cfg.sweep_tol, cfg.ineq_tol)
    text = rec.to_text()
    _emit(cfg, text, rec.to_dat(), {"sweep.txt": text, "sweep.dat": rec.to_dat()})
    return EXIT_OK if rec.all_passed else EXIT_INEQUALITY


def cmd_mesh_info(cfg: RunConfig) -> int:
    case = cfg.case
    mesh = case.mesh()
    beta = case.beta.build(mesh)
    euclid = NormSpec.euclidean()
    rows = [("vertices", mesh.n_vertices), ("triangles", mesh.n_triangles),
            ("boundary_edges", len(mesh.boundary_edges)), ("max_edge", mesh.max_edge_length()),
            ("area", area(mesh)), ("perimeter", anisotropic_perimeter(mesh, euclid)),
            ("perimeter_F", anisotropic_perimeter(mesh, case.norm)),
            ("boundary_mass", boundary_mass(mesh, beta, case.norm))]
    text = f"case = {case.key}\n" + "".join(f"{k} = {fmt(v)}\n" for k, v in rows)
    csv = ",".join(k for k, _ in rows) + "\n" + ",".join(fmt(v) for _, v in rows) + "\n"
    _emit(cfg, text, csv, {"mesh-info.txt": text})
    return EXIT_OK


_COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "sweep": cmd_sweep, "mesh-info": cmd_mesh_info}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        return _COMMANDS[cfg.command](cfg)
    except (InvalidInputError, NormDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
