import math

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from finsler_robin.eigensolvers import (EnergyForm, SolverOptions, lambda_dirichlet, lambda_robin,
                                        mu_neumann, q_plain, q_value, sigma, solver_core)
from finsler_robin.errors import ConvergenceError, InvalidInputError
from finsler_robin.fem import FemField, assemble_forms, energy, harmonic_extension, mass_matrix
from finsler_robin.geometry import BoundaryWeight, area, boundary_mass, generate_mesh
from finsler_robin.norms import NormSpec

import oracles

EUC = NormSpec.euclidean()
DIAG41 = NormSpec.quadratic([[4.0, 0.0], [0.0, 1.0]])
SMOOTH = NormSpec.smoothed_p(3.0, 0.1)
FAST = SolverOptions(restarts=1)


@pytest.fixture(scope="module")
def square():
    return generate_mesh("unit_square", 0.05)


def rate(errors, hs):
    return math.log(errors[0] / errors[1]) / math.log(hs[0] / hs[1])


# -- the core solver --------------------------------------------------------

def test_core_two_by_two():
    K = np.array([[2.0, 1.0], [1.0, 3.0]])
    M = np.eye(2)
    res = solver_core(K, M)
    assert res.value == pytest.approx((5.0 - math.sqrt(5.0)) / 2.0, rel=1e-14)
    assert res.vector @ res.vector == pytest.approx(1.0)
    assert res.residual < 1e-12


@pytest.mark.parametrize("n", [50, 400])
def test_core_dense_oracle(n):
    rng = np.random.default_rng(n)
    X = rng.standard_normal((n, n))
    K = X @ X.T + n * np.eye(n)
    D = np.diag(rng.uniform(1.0, 2.0, n))
    c = rng.standard_normal(n)
    res = solver_core(sp.csr_matrix(K), sp.csr_matrix(D), constraints=c)
    # Reference: restrict to the orthogonal complement of c.
    Q = la.null_space(c[None, :])
    ref = la.eigh(Q.T @ K @ Q, Q.T @ D @ Q, eigvals_only=True)[0]
    assert res.value == pytest.approx(ref, rel=1e-10)
    assert abs(c @ res.vector) < 1e-10 * np.abs(c).sum()


def test_core_nonlinear_matches_linear_for_quadratic_forms(square):
    M = mass_matrix(square)
    forms = assemble_forms(square, BoundaryWeight.from_constant(square, 1.0), EUC)
    lin = solver_core(_stiff(square, forms), M)
    non = solver_core(EnergyForm(EUC, square, forms.boundary), M)
    assert non.value == pytest.approx(lin.value, rel=1e-9)
    assert non.restarts_agree


def _stiff(mesh, forms):
    from finsler_robin.fem import stiffness_matrix
    return stiffness_matrix(mesh) + forms.boundary


def test_core_reports_nonconvergence(square):
    M = mass_matrix(square)
    with pytest.raises(ConvergenceError):
        solver_core(EnergyForm(SMOOTH, square), M, free=~square.boundary_flags,
                    options=SolverOptions(max_iter=1, restarts=0))


# -- oracles on the square ----------------------------------------------------

@pytest.mark.parametrize("beta, exact", [(1.0, oracles.LAMBDA_ROBIN_SQUARE_BETA_1),
                                         (10.0, oracles.LAMBDA_ROBIN_SQUARE_BETA_10)])
def test_robin_square(square, beta, exact):
    r = lambda_robin(square, BoundaryWeight.from_constant(square, beta), EUC)
    assert abs(r.value - exact) / exact < 5e-3
    assert r.final_residual < 1e-8
    assert r.value <= beta * 4.0  # constant test field


def test_dirichlet_square(square):
    r = lambda_dirichlet(square, EUC)
    assert abs(r.value - oracles.LAMBDA_DIRICHLET_SQUARE) / oracles.LAMBDA_DIRICHLET_SQUARE < 1e-2
    assert np.all(r.minimizer.values[square.boundary_vertices] == 0.0)


def test_sigma_and_mu(square):
    beta = BoundaryWeight.from_constant(square, 1.0)
    s = sigma(square, beta, EUC)
    assert abs(s.value - oracles.SIGMA_SQUARE) / oracles.SIGMA_SQUARE < 5e-3
    load = assemble_forms(square, beta, EUC).boundary_load
    assert abs(load @ s.minimizer.values) < 1e-10
    rect = generate_mesh("rectangle", 0.05, width=1.0, height=2.0)
    m = mu_neumann(rect, EUC)
    assert abs(m.value - oracles.MU_RECTANGLE_1x2) / oracles.MU_RECTANGLE_1x2 < 5e-3
    assert abs(mass_matrix(rect).sum(axis=0) @ m.minimizer.values) < 1e-10


def test_change_of_variables(square):
    # The quadratic norm diag(4, 1) on the unit square equals the Euclidean problem on [0, 1/2] x [0, 1].
    r = lambda_robin(square, BoundaryWeight.from_constant(square, 1.0), DIAG41)
    assert abs(r.value - oracles.MAPPED_ROBIN_DIAG41_BETA_1) / oracles.MAPPED_ROBIN_DIAG41_BETA_1 < 3e-3
    d = lambda_dirichlet(square, DIAG41)
    assert abs(d.value - oracles.MAPPED_DIRICHLET_DIAG41) / oracles.MAPPED_DIRICHLET_DIAG41 < 1e-2


def test_refinement_order():
    hs = (0.1, 0.05)
    errs = []
    for h in hs:
        mesh = generate_mesh("unit_square", h)
        r = lambda_robin(mesh, BoundaryWeight.from_constant(mesh, 1.0), EUC)
        errs.append(abs(r.value - oracles.LAMBDA_ROBIN_SQUARE_BETA_1))
    assert rate(errs, hs) >= 1.5


def test_large_beta_approaches_dirichlet(square):
    r = lambda_robin(square, BoundaryWeight.from_constant(square, 1e6), EUC)
    d = lambda_dirichlet(square, EUC)
    # The Dirichlet space is a subspace of the Robin one, so the Robin value lies below.
    assert r.value <= d.value * (1 + 1e-12)
    assert abs(r.value - d.value) / d.value < 0.02


# -- q ------------------------------------------------------------------------

def test_q_disk_constant_beta():
    mesh = generate_mesh("disk", 0.05)
    beta = BoundaryWeight.from_constant(mesh, 1.0)
    q = q_value(mesh, beta, EUC)
    # Constants nearly minimize: q is just below P / |Omega| of the inscribed polygon, about 2.
    ratio = boundary_mass(mesh, beta, EUC) / area(mesh)
    assert ratio * (1 - 1e-4) <= q.value <= ratio * (1 + 1e-12)
    assert abs(q.value - oracles.Q_DISK_CONSTANT_BETA) < 0.01
    assert q_plain(mesh, beta, EUC, q_beta=q).value == q.value


def test_q_disk_affine_beta():
    errs, hs = [], (0.1, 0.05)
    for h in hs:
        mesh = generate_mesh("disk", h)
        q = q_value(mesh, BoundaryWeight.from_function(mesh, lambda x, y: 1.0 + 0.5 * x), EUC)
        errs.append(abs(q.value - oracles.Q_DISK_AFFINE_BETA))
        assert q.final_residual < 1e-8
    assert errs[-1] / oracles.Q_DISK_AFFINE_BETA < 2e-3
    assert errs[-1] < errs[0]


@pytest.mark.parametrize("spec", [EUC, DIAG41, SMOOTH], ids=lambda s: s.label())
def test_q_scaling_and_minimality(spec):
    mesh = generate_mesh("disk", 0.1)
    beta = BoundaryWeight.from_function(mesh, lambda x, y: 1.0 + 0.5 * x)
    q = q_value(mesh, beta, spec, FAST)
    q3 = q_value(mesh, beta.scaled(3.0), spec, FAST)
    assert q3.value == pytest.approx(3.0 * q.value, rel=1e-6)
    # The reported minimizer is F-harmonic and reproduces the value.
    h = q.minimizer
    hb = harmonic_extension(spec, mesh, h.values)
    assert np.allclose(hb.values, h.values, atol=1e-7 * np.abs(h.values).max())
    forms = assemble_forms(mesh, beta, spec)
    quotient = (h.values @ forms.boundary @ h.values) / (h.values @ forms.mass @ h.values)
    assert quotient == pytest.approx(q.value, rel=1e-12)
    # No random harmonic field does better.
    rng = np.random.default_rng(11)
    for _ in range(5):
        g = rng.standard_normal(len(mesh.boundary_vertices))
        f = harmonic_extension(spec, mesh, g).values
        assert (f @ forms.boundary @ f) / (f @ forms.mass @ f) >= q.value * (1 - 1e-9)


def test_q_plain_needs_constant_beta():
    mesh = generate_mesh("disk", 0.2)
    with pytest.raises(InvalidInputError):
        q_plain(mesh, BoundaryWeight.from_function(mesh, lambda x, y: 2.0 + x), EUC)


# -- generic properties --------------------------------------------------------

@pytest.mark.parametrize("spec", [EUC, DIAG41, SMOOTH], ids=lambda s: s.label())
def test_robin_minimality_and_consistency(spec):
    mesh = generate_mesh("L_shape", 0.1)
    beta = BoundaryWeight.from_function(mesh, lambda x, y: 1.0 + 0.5 * x)
    r = lambda_robin(mesh, beta, spec, FAST)
    forms = assemble_forms(mesh, beta, spec)

    def quotient(v):
        return (energy(spec, FemField(mesh, v)) + v @ forms.boundary @ v) / (v @ forms.mass @ v)

    assert quotient(r.minimizer.values) == pytest.approx(r.value, rel=1e-12)
    assert r.minimizer.values.sum() > 0  # sign convention
    rng = np.random.default_rng(12)
    for _ in range(20):
        assert quotient(rng.standard_normal(mesh.n_vertices)) >= r.value
    assert quotient(np.ones(mesh.n_vertices)) >= r.value


def test_smoothed_p_chain(square):
    opts = FAST
    beta = BoundaryWeight.from_constant(square, 1.0)
    lr = lambda_robin(square, beta, SMOOTH, opts).value
    ld = lambda_dirichlet(square, SMOOTH, opts).value
    s = sigma(square, beta, SMOOTH, opts).value
    assert lr < ld
    assert lr < s  # constant beta: the sigma constraint excludes the Robin ground state sign
    assert lr <= boundary_mass(square, beta, SMOOTH) / area(square)


def test_deterministic():
    mesh = generate_mesh("disk", 0.1)
    beta = BoundaryWeight.from_constant(mesh, 1.0)
    a = sigma(mesh, beta, SMOOTH)
    b = sigma(mesh, beta, SMOOTH)
    assert a.value == b.value and a.restart_values == b.restart_values
    assert np.array_equal(a.minimizer.values, b.minimizer.values)
