import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyperrom.fom import Nonlinearity
from hyperrom.mesh_fem import (
    FEField,
    NonFiniteError,
    assemble_linear,
    assemble_nonlinear,
    build_space,
    lagrange_1d,
    project_l2,
    trace_at_points,
)

from conftest import fd_jacobian


def test_dof_counts():
    assert build_space(2, [(0, 1), (0, 1)], (2, 2), degree=1).ndof == 9
    q2 = build_space(2, [(0, 1), (0, 1)], (2, 2), degree=2)
    assert q2.ndof == 25
    assert q2.nquad == 4 * 16
    bl = build_space(2, [(-1.5, 1.5), (-1.5, 1.5)], (2, 2), degree=2, bc_kind="dirichlet")
    assert bl.ndof == 9  # 5x5 nodes minus the 16 on the boundary


def test_bad_arguments():
    with pytest.raises(ValueError):
        build_space(2, [(0, 1), (1, 1)], (2, 2))
    with pytest.raises(ValueError):
        build_space(2, [(0, 1), (0, 1)], (2, 2), bc_kind="robin")
    with pytest.raises(ValueError):
        build_space(2, [(0, 1), (0, 1)], (2, 2), degree=0)


def test_lagrange_partition_of_unity():
    x = np.linspace(0, 1, 17)
    for p in (1, 2, 3):
        v, d = lagrange_1d(p, x)
        np.testing.assert_allclose(v.sum(axis=1), 1.0, atol=1e-13)
        np.testing.assert_allclose(d.sum(axis=1), 0.0, atol=1e-11)
        np.testing.assert_allclose(lagrange_1d(p, np.linspace(0, 1, p + 1))[0], np.eye(p + 1), atol=1e-14)


def test_linear_mass_1d_by_hand():
    space = build_space(1, (0.0, 1.0), 2, degree=1)
    mass, stiffness = assemble_linear(space)
    # h = 1/2: element mass h/6 [[2, 1], [1, 2]], element stiffness [[1, -1], [-1, 1]] / h
    np.testing.assert_allclose(mass.toarray() * 12, [[2, 1, 0], [1, 4, 1], [0, 1, 2]], atol=1e-14)
    np.testing.assert_allclose(stiffness.toarray() / 2, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]], atol=1e-14)


def test_mass_measures_domain(unit_square_q2):
    mass, stiffness = assemble_linear(unit_square_q2)
    one = np.ones(unit_square_q2.ndof)
    assert one @ mass @ one == pytest.approx(1.0, rel=1e-13)
    assert np.abs(stiffness @ one).max() < 1e-12
    assert abs(mass - mass.T).max() < 1e-15
    assert np.linalg.eigvalsh(mass.toarray()).min() > 0


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_quadrature_exact_for_quadratics(a, b, c):
    space = build_space(2, [(0.0, 2.0), (-1.0, 1.0)], (3, 2), degree=2)
    x, y = space.quad_points.T
    exact = a * 8 / 3 * 2 + b * 2 * 2 / 3 + c * 0.0  # int x^2, int y^2, int xy over the box
    got = space.quad_weights @ (a * x**2 + b * y**2 + c * x * y)
    assert got == pytest.approx(exact, abs=1e-12)


def test_projection_reproduces_quadratics(unit_square_q2):
    f = lambda p: 1 + p[:, 0] - 2 * p[:, 1] ** 2 + 3 * p[:, 0] * p[:, 1]
    u = project_l2(unit_square_q2, f)
    np.testing.assert_allclose(u.coeffs, f(unit_square_q2.coords), atol=1e-12)
    np.testing.assert_allclose(unit_square_q2.eval_quad(u.coeffs), f(unit_square_q2.quad_points), atol=1e-12)


def test_gradient_evaluation(unit_square_q2):
    f = lambda p: p[:, 0] ** 2 + p[:, 0] * p[:, 1]
    c = f(unit_square_q2.coords)
    x, y = unit_square_q2.quad_points.T
    np.testing.assert_allclose(unit_square_q2.eval_quad(c, deriv=0), 2 * x + y, atol=1e-12)
    np.testing.assert_allclose(unit_square_q2.eval_quad(c, deriv=1), x, atol=1e-12)


def test_stiffness_energy_of_linear_field(unit_square_q2):
    _, stiffness = assemble_linear(unit_square_q2)
    c = 3 * unit_square_q2.coords[:, 0] - unit_square_q2.coords[:, 1]
    assert c @ stiffness @ c == pytest.approx(10.0, rel=1e-12)


def test_dirichlet_space_eliminates_boundary():
    space = build_space(2, [(-1.5, 1.5), (-1.5, 1.5)], (4, 4), degree=2, bc_kind="dirichlet")
    full = space.to_full(np.ones(space.ndof))
    assert np.all(full[space.boundary] == 0)
    assert space.ndof == 7 * 7


def test_field_length_checked(unit_square_q2):
    with pytest.raises(ValueError):
        FEField(unit_square_q2, np.zeros(3))


def test_trace_rows_sum_to_one(unit_square_q2, rng):
    pts = rng.uniform(0, 1, size=(30, 2))
    tr = trace_at_points(unit_square_q2, pts, gradient=True)
    np.testing.assert_allclose(np.asarray(tr.values.sum(axis=1)).ravel(), 1.0, atol=1e-13)
    f = lambda p: 2 + p[:, 0] * p[:, 1]
    c = f(unit_square_q2.coords)
    np.testing.assert_allclose(tr.evaluate(c), f(pts), atol=1e-13)
    np.testing.assert_allclose(tr.evaluate(c, deriv=0), pts[:, 1], atol=1e-12)


def test_trace_rejects_outside_points(unit_square_q2):
    with pytest.raises(ValueError):
        trace_at_points(unit_square_q2, [[1.5, 0.5]])


def test_trace_at_quadrature_points_matches_eval(unit_square_q2, rng):
    c = rng.normal(size=unit_square_q2.ndof)
    tr = trace_at_points(unit_square_q2, unit_square_q2.quad_points)
    np.testing.assert_allclose(tr.evaluate(c), unit_square_q2.eval_quad(c), atol=1e-12)


CUBIC = Nonlinearity("g", lambda u: u**3, lambda u: 3 * u**2)
FLUX = Nonlinearity("f", lambda u: u**2 / (u**2 + (1 - u) ** 2), lambda u: 2 * u * (1 - u) / (u**2 + (1 - u) ** 2) ** 2, 0)


@pytest.mark.parametrize("term", [CUBIC, FLUX], ids=["reaction", "flux"])
@pytest.mark.parametrize("bc", ["neumann", "dirichlet"])
def test_nonlinear_jacobian_matches_fd(term, bc, rng):
    space = build_space(2, [(0, 1), (0, 1)], (4, 4), degree=2, bc_kind=bc)
    c = rng.uniform(0.1, 0.9, size=space.ndof)
    vecs, jacs = assemble_nonlinear(space, c, [term], jacobian=True)
    fd = fd_jacobian(lambda x: assemble_nonlinear(space, x, [term])[0][term.name], c)
    J = jacs[term.name].toarray()
    assert np.linalg.norm(J - fd) / np.linalg.norm(J) < 1e-7


def test_reaction_vector_against_mass(unit_square_q2, rng):
    # g(u) = 2u: the vector is 2 M c exactly
    lin = Nonlinearity("g", lambda u: 2 * u, lambda u: 2 + 0 * u)
    c = rng.normal(size=unit_square_q2.ndof)
    mass, _ = assemble_linear(unit_square_q2)
    vecs, _ = assemble_nonlinear(unit_square_q2, c, [lin])
    np.testing.assert_allclose(vecs["g"], 2 * mass @ c, atol=1e-12)


def test_non_finite_nonlinearity_reported(unit_square_q2):
    bad = Nonlinearity("g", lambda u: np.full_like(u, np.nan), lambda u: u)
    with pytest.raises(NonFiniteError) as info:
        assemble_nonlinear(unit_square_q2, np.zeros(unit_square_q2.ndof), [bad])
    assert info.value.index == 0
