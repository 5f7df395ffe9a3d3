import math

import numpy as np
import pytest

from finsler_robin import eigensolvers as es
from finsler_robin import harness
from finsler_robin.errors import ConvergenceError, InvalidInputError
from finsler_robin.geometry import generate_mesh, write_mesh
from finsler_robin.harness import (BetaSpec, CaseSpec, InequalityRecord, beta_sweep,
                                   decomposition_check, default_matrix, fmt, inequality_records,
                                   richardson_zero, run_matrix, summary_csv, verify_theorem,
                                   write_atomic)
from finsler_robin.norms import NormSpec

EUC = NormSpec.euclidean()
DIAG41 = NormSpec.quadratic([[4.0, 0.0], [0.0, 1.0]])
SMOOTH = NormSpec.smoothed_p(3.0, 0.1)
FAST = es.SolverOptions(restarts=1)


# -- beta -------------------------------------------------------------------

@pytest.mark.parametrize("text, kind, params", [
    ("1", "constant", (1.0,)),
    (10, "constant", (10.0,)),
    (" 2.5 ", "constant", (2.5,)),
    ("affine(1,0.5,0)", "affine", (1.0, 0.5, 0.0)),
    ("AFFINE( 1 , -0.2 , 0.3 )", "affine", (1.0, -0.2, 0.3)),
    ("segments(1,2,3,4)", "segments", (1.0, 2.0, 3.0, 4.0)),
])
def test_beta_parse(text, kind, params):
    b = BetaSpec.parse(text)
    assert (b.kind, b.params) == (kind, params)


@pytest.mark.parametrize("text", ["0", "-1", "abc", "affine(1,2)", "affine(1,x,2)", "segments()",
                                  "nan", "affine(1,inf,0)", "cubic(1,2,3)", True])
def test_beta_parse_rejects(text):
    with pytest.raises(InvalidInputError):
        BetaSpec.parse(text)


def test_beta_build():
    mesh = generate_mesh("unit_square", 0.1)
    aff = BetaSpec.parse("affine(1,0.5,0)").build(mesh)
    b = mesh.boundary_vertices
    assert np.allclose(aff.values[b], 1.0 + 0.5 * mesh.vertices[b, 0])
    assert aff.constant is None
    with pytest.raises(InvalidInputError):
        BetaSpec.parse("affine(0,1,0)").build(mesh)  # zero on the left side
    assert BetaSpec.parse("segments(2,2)").build(mesh).constant == 2.0
    assert BetaSpec.parse("segments(2,2)").is_constant


def test_beta_segments_are_sectors():
    mesh = generate_mesh("disk", 0.1)
    w = BetaSpec.parse("segments(1,2,3,4)").build(mesh)
    b = mesh.boundary_vertices
    x, y = mesh.vertices[b].T
    theta = np.mod(np.arctan2(y, x), 2 * np.pi)
    inside = np.abs(np.mod(theta, np.pi / 2)) > 1e-9  # skip vertices on sector edges
    expected = 1.0 + np.floor(theta / (np.pi / 2))
    assert np.array_equal(w.values[b][inside], expected[inside])


def test_labels_and_keys():
    assert BetaSpec.parse("affine(1,0.5,0)").label() == "affine(1,0.5,0)"
    case = CaseSpec("rectangle", 0.05, SMOOTH, BetaSpec.constant(10.0), (("width", 1.0), ("height", 2.0)))
    assert case.key == "rectangle,width=1,height=2|smoothed-p[p=3,eps=0.1]|beta=10|h=0.05"
    assert fmt(None) == "nan" and fmt(True) == "true" and fmt(3) == "3"
    assert fmt(1.0 / 3.0) == "0.333333333333"


def test_case_validation(tmp_path):
    with pytest.raises(InvalidInputError):
        CaseSpec("hexagon", 0.1, EUC, BetaSpec.constant(1.0))
    with pytest.raises(InvalidInputError):
        CaseSpec("disk", 0.0, EUC, BetaSpec.constant(1.0))
    with pytest.raises(InvalidInputError):
        CaseSpec("disk", 0.1, EUC, BetaSpec.constant(1.0), (("width", 1.0),))
    with pytest.raises(InvalidInputError):
        CaseSpec("file", 0.1, EUC, BetaSpec.constant(1.0))
    path = tmp_path / "m.txt"
    write_mesh(generate_mesh("L_shape", 0.25), path)
    case = CaseSpec("file", 0.25, EUC, BetaSpec.constant(1.0), mesh_file=str(path))
    assert case.mesh().n_triangles == generate_mesh("L_shape", 0.25).n_triangles


def test_default_matrix():
    cases = default_matrix()
    assert len(cases) == 90
    assert len({c.key for c in cases}) == 90
    assert {c.domain for c in cases} == {"unit_square", "rectangle", "disk", "L_shape", "ellipse"}


# -- records ----------------------------------------------------------------

def test_inequality_record_semantics():
    r = InequalityRecord.compare("x", 1.0, 2.0)
    assert r.passed and r.slack == 1.0 and not r.skipped
    assert not InequalityRecord.compare("x", 2.0, 1.0).passed
    # Relative tolerance on the sum of magnitudes.
    assert InequalityRecord.compare("x", 1.0 + 1e-9, 1.0).passed
    assert not InequalityRecord.compare("x", 1.0 + 1e-7, 1.0).passed
    s = InequalityRecord.compare("x", None, 1.0)
    assert s.skipped and not s.passed and s.slack is None


def test_inequality_records_order_and_values():
    recs = inequality_records(2.0, 20.0, 10.0, 10.0, 3.0, 1.0, 4.0)
    assert tuple(r.name for r in recs) == harness.INEQUALITY_ORDER
    by = {r.name: r for r in recs}
    assert by["kutt_mi"].rhs == pytest.approx(0.1 + 0.25)
    assert by["kutt_40i"].rhs == pytest.approx(0.05 + 1.0 / 3.0)
    assert by["cont1_upper"].lhs == pytest.approx(0.5 - 0.05)
    assert not by["kutt_mi"].passed  # 1/2 > 0.35
    skipped = inequality_records(2.0, None, 10.0, 10.0, 3.0, 1.0, 4.0)
    assert [r.name for r in skipped if r.skipped] == ["kutt_40i", "cont1_lower", "cont1_upper"]


# -- verification -----------------------------------------------------------

@pytest.mark.parametrize("norm", [EUC, DIAG41, SMOOTH], ids=lambda s: s.label())
def test_verify_theorem_passes(norm):
    case = CaseSpec("disk", 0.1, norm, BetaSpec.parse("affine(1,0.5,0)"), (("r", 1.0),))
    rep = verify_theorem(case, FAST)
    assert rep.all_passed and not rep.solver_failed
    assert set(rep.quantities) == set(harness.QUANTITY_ORDER) - {"q_plain"}
    assert rep.area == pytest.approx(math.pi, rel=0.02)
    text = rep.to_text()
    assert text.endswith("all_passed = true\n")
    assert "kutt_mi.status = pass" in text


def test_q_plain_reported_for_constant_beta():
    case = CaseSpec("unit_square", 0.1, EUC, BetaSpec.constant(10.0))
    rep = verify_theorem(case)
    assert rep.value("q_plain") == pytest.approx(rep.value("q_beta") / 10.0)


def test_solver_failure_is_reported(monkeypatch):
    def broken(*args, **kwargs):
        raise ConvergenceError("no luck", 0.5, 7)

    monkeypatch.setattr(es, "lambda_dirichlet", broken)
    rep = verify_theorem(CaseSpec("unit_square", 0.2, EUC, BetaSpec.constant(1.0)))
    assert rep.solver_failed and not rep.all_passed
    q = rep.quantities["lambda_dirichlet"]
    assert q.value is None and q.iterations == 7 and "no luck" in q.error
    by = {r.name: r for r in rep.inequalities}
    assert by["kutt_40i"].skipped and by["kutt_mi"].passed
    text = rep.to_text()
    assert "lambda_dirichlet.value = nan" in text and "kutt_40i.status = skipped" in text


def test_run_matrix_order_and_workers():
    cases = [CaseSpec(d, 0.2, EUC, BetaSpec.constant(b), harness.default_dims(d))
             for d in ("unit_square", "disk", "L_shape") for b in (10.0, 1.0)]
    serial = run_matrix(cases, workers=1)
    keys = [r.case.key for r in serial]
    assert keys == sorted(keys)
    parallel = run_matrix(list(reversed(cases)), workers=2)
    assert [r.to_text() for r in parallel] == [r.to_text() for r in serial]


def test_worker_count(monkeypatch):
    monkeypatch.setenv("FINSLER_SPEC_THREADS", "3")
    assert harness.worker_count() == 3
    for bad in ("0", "two"):
        monkeypatch.setenv("FINSLER_SPEC_THREADS", bad)
        with pytest.raises(InvalidInputError):
            harness.worker_count()


# -- sweep ------------------------------------------------------------------

def test_richardson_zero():
    assert richardson_zero(2.0, 5.0, 1.0, 4.0) == pytest.approx(3.0)


def test_sweep_validation():
    case = CaseSpec("unit_square", 0.2, EUC, BetaSpec.constant(1.0))
    for betas in ([1.0], [1.0, 1.0], [0.1, 1.0], [1.0, -0.1], [1.0, float("nan")]):
        with pytest.raises(InvalidInputError):
            beta_sweep(case, betas)
    with pytest.raises(InvalidInputError):
        beta_sweep(CaseSpec("unit_square", 0.2, EUC, BetaSpec.parse("affine(1,1,0)")), [1.0, 0.1])


def test_sweep_euclidean_square():
    case = CaseSpec("unit_square", 0.1, EUC, BetaSpec.constant(1.0))
    rec = beta_sweep(case, [1e-1, 1e-2, 1e-3])
    assert rec.target == pytest.approx(4.0)
    assert rec.within_tol and rec.all_passed and rec.monotone
    assert rec.sigma == pytest.approx(math.pi ** 2, rel=0.02)
    assert len(rec.to_dat().splitlines()) == 3
    assert "within_tolerance = true" in rec.to_text()


# -- decomposition ----------------------------------------------------------

def test_decomposition_euclidean():
    case = CaseSpec("L_shape", 0.1, EUC, BetaSpec.parse("affine(1,0.5,0)"))
    rec = decomposition_check(case, FAST)
    assert rec.passed
    assert rec.order_violation <= 1e-8
    assert rec.energy_slack >= -1e-9
    assert rec.inverse_lambda <= rec.chain_bound * (1 + 1e-8)
    assert "passed = true" in rec.to_text()


def test_decomposition_nonlinear_order_fails():
    # u = v + h only for linear operators; for a nonlinear norm the vertexwise
    # bound u <= v + h is violated by a mesh-independent margin.
    case = CaseSpec("L_shape", 0.1, SMOOTH, BetaSpec.parse("affine(1,0.5,0)"))
    rec = decomposition_check(case, FAST)
    assert rec.order_violation > 1e-3
    assert rec.energy_slack >= -1e-9
    assert rec.chain[0] <= rec.chain[1] * (1 + 1e-8)
    assert rec.inverse_lambda <= rec.chain_bound * (1 + 1e-8)
    assert not rec.passed


# -- output -----------------------------------------------------------------

def test_write_atomic(tmp_path):
    path = tmp_path / "sub" / "out.txt"
    write_atomic(path, "a\n")
    write_atomic(path, "b\n")
    assert path.read_text() == "b\n"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]


def test_summary_csv():
    rep = verify_theorem(CaseSpec("unit_square", 0.2, EUC, BetaSpec.constant(1.0)))
    lines = summary_csv([rep]).splitlines()
    header = lines[0].split(",")
    assert header[0] == "case" and header[-1] == "all_passed"
    assert len(header) == 1 + 6 + 2 * 7 + 1
    cells = lines[1].split(",")
    assert cells[0] == f'"{rep.case.key}"' and cells[-1] == "true"
