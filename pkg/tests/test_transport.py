import numpy as np
import pytest
from hypothesis import given, strategies as st

from gwtransport.flow import ConstantVelocity, downwind_order
from gwtransport.linalg import is_block_lower_triangular
from gwtransport.mesh import GridSpec, build_structured
from gwtransport.transport import (CHARACTERISTIC, INFLOW, OUTFLOW, AssemblyError, TransportCoeffs, assemble_dg,
                                   assemble_sdfem, classify_boundary, dispersion_tensor, mesh_peclet, omega_weights,
                                   overshoot_metric, penalty_gamma, sdfem_delta, solve_transport, upwind_value)
from gwtransport.transport.coeffs import zeta_coth
from gwtransport.transport.problem import TransportProblem, cell_order, discretize


def unit(n, m=None):
    return build_structured(GridSpec((1.0, 1.0), (n, m or n)))


# coefficients ---------------------------------------------------------------

def test_dispersion_zero_velocity():
    np.testing.assert_allclose(dispersion_tensor([0.0, 0.0], 0.3, 1e-3, 1e-4, 2e-9), 0.3 * 2e-9 * np.eye(2))


def test_dispersion_axis_aligned():
    np.testing.assert_allclose(dispersion_tensor([1.0, 0.0], 1.0, 1e-3, 1e-4, 0.0), np.diag([1e-3, 1e-4]), atol=1e-18)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 2 * np.pi))
def test_dispersion_eigenstructure(vx, vy, angle):
    v = np.array([vx, vy])
    nv = np.linalg.norm(v)
    theta, al, at, dm = 0.3, 1e-3, 1e-4, 2e-9
    D = dispersion_tensor(v, theta, al, at, dm)
    assert np.allclose(D, D.T, atol=0)
    expected = np.sort(theta * np.array([al * nv + dm, at * nv + dm]))
    np.testing.assert_allclose(np.linalg.eigvalsh(D), expected, atol=1e-12 * max(nv, 1))
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])
    np.testing.assert_allclose(np.linalg.eigvalsh(dispersion_tensor(R @ v, theta, al, at, dm)),
                               np.linalg.eigvalsh(D), atol=1e-12 * max(nv, 1))


def test_coefficient_validation():
    with pytest.raises(ValueError):
        TransportCoeffs(porosity=0.0)
    with pytest.raises(ValueError):
        TransportCoeffs(alpha_l=1e-4, alpha_t=1e-3)
    with pytest.raises(ValueError):
        TransportCoeffs(d_m=-1.0)


def test_omega_weights_examples():
    wm, wp, de = omega_weights(1.0, 1.0)
    assert (wm, wp, de) == (0.5, 0.5, 1.0)
    wm, wp, de = omega_weights(1.0, 3.0)
    assert (wm, wp, de) == (0.75, 0.25, 1.5)
    wm, wp, de = omega_weights(0.0, 0.0)
    assert (wm, wp, de) == (0.5, 0.5, 0.0)


def test_omega_weights_sum_to_one(rng):
    wm, wp, _ = omega_weights(rng.random(100), rng.random(100))
    np.testing.assert_allclose(wm + wp, 1.0, rtol=1e-15)


def test_penalty():
    assert penalty_gamma(10, 1.0, 1, 2, 0.1) == pytest.approx(200.0)
    assert penalty_gamma(10, 1.0, 2, 2, 0.1) == pytest.approx(600.0)
    assert penalty_gamma(10, 0.0, 1, 2, 0.1) == 0.0
    with pytest.raises(ValueError):
        penalty_gamma(10, 1.0, 1, 2, 0.0)


def test_upwind_value():
    assert upwind_value(2, 5, 1.0) == 2
    assert upwind_value(2, 5, -1.0) == 5
    assert upwind_value(2, 5, 0.0) == 2


def test_peclet_examples():
    c = TransportCoeffs(0.3, 1e-3, 1e-4, 0.0)
    assert mesh_peclet(1.0, 1.0, c) == pytest.approx(500.0)
    assert mesh_peclet(2.0, 0.1, TransportCoeffs(eps=0.01)) == pytest.approx(10.0)
    assert mesh_peclet(0.0, 0.1, TransportCoeffs(eps=0.01)) == 0.0
    assert mesh_peclet(1.0, 1.0, TransportCoeffs()) == np.inf


def test_sdfem_delta_examples():
    assert sdfem_delta(1.0, 1.0, 0.5) == 0.0
    assert sdfem_delta(1.0, 1.0, 1.0) == 0.0
    assert sdfem_delta(1.0, 1.0, 2.0) == pytest.approx(0.25)
    assert sdfem_delta(1.0, 0.0, 2.0) == 0.0
    assert zeta_coth(2.0) == pytest.approx(1 / np.tanh(2.0) - 0.5)
    assert float(zeta_coth(2.0)) == pytest.approx(0.5373, abs=1e-4)


def test_boundary_classification():
    np.testing.assert_array_equal(classify_boundary([-1.0, 1e-20, 2.0], 1.0), [INFLOW, CHARACTERISTIC, OUTFLOW])
    with pytest.raises(ValueError):
        classify_boundary([np.nan])


def test_overshoot_metric():
    assert overshoot_metric(-0.02, 1.05, 1.0) == pytest.approx(0.05)
    assert overshoot_metric(0.0, 1.0, 1.0) == 0.0
    assert overshoot_metric(-3.0, 90.0, 100.0) == pytest.approx(0.03)


# DG assembly ------------------------------------------------------------------

def test_dg_pure_diffusion_symmetric_pd():
    mesh = unit(3).adapt([0])
    sysm = assemble_dg(mesh, 2, ConstantVelocity([0.0, 0.0]), TransportCoeffs(eps=1.0), dirichlet_faces="all")
    a = sysm.matrix.toarray()
    assert np.abs(a - a.T).max() <= 1e-12 * np.abs(a).max()
    assert np.linalg.eigvalsh(0.5 * (a + a.T)).min() > 0


def test_dg_pure_convection_downwind_triangular():
    mesh = build_structured(GridSpec((4.0, 1.0), (4, 1)))
    v = ConstantVelocity([1.0, 0.0])
    sysm = assemble_dg(mesh, 1, v, TransportCoeffs(eps=0.0), downwind_order(mesh, v))
    assert is_block_lower_triangular(sysm.matrix)
    back = assemble_dg(mesh, 1, v, TransportCoeffs(eps=0.0), mesh.leaves[::-1])
    assert not is_block_lower_triangular(back.matrix)


@pytest.mark.parametrize("k", [1, 2])
def test_dg_constant_consistency(k):
    mesh = unit(4).adapt([5])
    c, mu = 3.0, 0.7
    coeffs = TransportCoeffs(eps=0.05, reaction=mu, source=mu * c, dirichlet=c)
    sysm = assemble_dg(mesh, k, ConstantVelocity([1.0, 0.4]), coeffs)
    r = sysm.matrix.matvec(np.full(sysm.n_dofs, c)) - sysm.rhs
    assert np.abs(r).max() <= 1e-11 * max(1.0, np.abs(sysm.rhs).max())


@pytest.mark.parametrize("method", ["dg", "sdfem"])
def test_linear_solution_reproduced(method):
    # u = 1 + x + 2y lies in every discrete space; consistency makes it the discrete solution
    mesh = unit(4) if method == "sdfem" else unit(4).adapt([2, 9])
    q = np.array([1.0, 0.5])
    exact = lambda x: 1.0 + x[..., 0] + 2.0 * x[..., 1]
    coeffs = TransportCoeffs(eps=0.1, source=q @ [1.0, 2.0], dirichlet=exact)
    problem = TransportProblem(mesh, ConstantVelocity(q), coeffs, dirichlet_faces="all")
    sysm = discretize(problem, mesh, method, 1)
    u, rep = solve_transport(sysm, reduction=1e-12)
    assert rep.converged
    pts = np.random.default_rng(0).random((30, 2))
    np.testing.assert_allclose(u.evaluate(pts), exact(pts), atol=1e-8)


def test_dg_upwind_mass_balance(rng):
    # D = 0, mu = 0, s = 0: summing all rows of A u gives the net outflow of u
    mesh = unit(4)
    q = np.array([1.0, 0.0])
    sysm = assemble_dg(mesh, 1, ConstantVelocity(q), TransportCoeffs(eps=0.0), dirichlet_faces="inflow")
    u = rng.standard_normal(sysm.n_dofs)
    lhs = sysm.matrix.matvec(u).sum()
    from gwtransport.transport import DiscreteField
    field = DiscreteField(mesh, sysm.layout, u)
    g = np.polynomial.legendre.leggauss(3)
    y = 0.5 * (g[0] + 1)
    outflow = 0.0
    for j in range(4):
        pts = np.column_stack([np.full(3, 1.0 - 1e-14), (j + y) / 4])
        outflow += 0.5 * g[1] @ field.evaluate(pts) / 4
    assert lhs == pytest.approx(outflow, abs=1e-10)


def test_dg_rejects_bad_order():
    mesh = unit(2)
    with pytest.raises(AssemblyError):
        assemble_dg(mesh, 1, ConstantVelocity([1.0, 0.0]), TransportCoeffs(eps=1.0), mesh.leaves[:3])
    with pytest.raises(AssemblyError):
        assemble_dg(mesh, 0, ConstantVelocity([1.0, 0.0]), TransportCoeffs(eps=1.0))


def test_downwind_solution_matches_geometric():
    mesh = unit(6).adapt([7, 20])
    v = ConstantVelocity([1.0, 0.3])
    problem = TransportProblem(mesh, v, TransportCoeffs(eps=1e-3, source=1.0), head=v)
    fields = []
    for ordering in ("geometric", "downwind", "random"):
        u, rep = solve_transport(discretize(problem, mesh, "dg", 2, ordering), reduction=1e-12)
        assert rep.converged
        fields.append(u.in_leaf_order())
    np.testing.assert_allclose(fields[1], fields[0], atol=1e-9)
    np.testing.assert_allclose(fields[2], fields[0], atol=1e-9)


def test_cell_order_variants():
    mesh = unit(3)
    assert np.array_equal(cell_order(mesh, "geometric"), mesh.leaves)
    assert np.array_equal(cell_order(mesh, "random", seed=4), cell_order(mesh, "random", seed=4))
    lex = cell_order(mesh, "lexicographic")
    x = mesh.cell_center(lex)
    assert np.all(np.diff(x[:, 1]) >= 0)
    with pytest.raises(ValueError):
        cell_order(mesh, "downwind")
    with pytest.raises(ValueError):
        cell_order(mesh, "spiral")


def test_non_convergence_reported():
    mesh = unit(8)
    problem = TransportProblem(mesh, ConstantVelocity([1.0, 0.2]), TransportCoeffs(eps=1e-3, source=1.0))
    _, rep = solve_transport(discretize(problem, mesh, "dg", 1), preconditioner=None, max_iter=1)
    assert not rep.converged


# SDFEM ------------------------------------------------------------------------

def _q1_1d(n, h):
    K = np.zeros((n + 1, n + 1)); M = np.zeros_like(K); C = np.zeros_like(K)
    for e in range(n):
        i = [e, e + 1]
        K[np.ix_(i, i)] += np.array([[1, -1], [-1, 1]]) / h
        M[np.ix_(i, i)] += np.array([[2, 1], [1, 2]]) * h / 6
        C[np.ix_(i, i)] += np.array([[-0.5, 0.5], [-0.5, 0.5]])   # (phi_i, phi_j')
    return K, M, C


@pytest.mark.parametrize("stabilize", [True, False])
def test_sdfem_matches_tensor_stencil(stabilize):
    # tensor-product oracle: eps (Kx My + Mx Ky) + Cx My + delta Kx My for q = (1, 0)
    nx, ny, eps = 8, 2, 1e-3
    L, H = 1.0, 0.25
    mesh = build_structured(GridSpec((L, H), (nx, ny)))
    hx, hy = L / nx, H / ny
    Kx, Mx, Cx = _q1_1d(nx, hx)
    Ky, My, _ = _q1_1d(ny, hy)
    h = np.hypot(hx, hy)
    delta = sdfem_delta(h, 1.0, 0.5 * h / eps) if stabilize else 0.0
    A = eps * (np.kron(My, Kx) + np.kron(Ky, Mx)) + np.kron(My, Cx) + delta * np.kron(My, Kx)
    sysm = assemble_sdfem(mesh, ConstantVelocity([1.0, 0.0]), TransportCoeffs(eps=eps), stabilize=stabilize)
    a = sysm.matrix.toarray()
    interior_x = [i + (nx + 1) * j for j in range(ny + 1) for i in range(2, nx)]
    np.testing.assert_allclose(a[interior_x], A[interior_x], atol=1e-12)


def test_sdfem_without_stabilisation_is_galerkin():
    mesh = unit(5)
    c = TransportCoeffs(eps=1.0)   # P < 1 everywhere: delta = 0
    v = ConstantVelocity([1.0, 0.5])
    a = assemble_sdfem(mesh, v, c).matrix.toarray()
    b = assemble_sdfem(mesh, v, c, stabilize=False).matrix.toarray()
    assert np.abs(a - b).max() <= 1e-14


def test_sdfem_constant_solution():
    mesh = unit(6)
    c, mu = 2.0, 0.3
    coeffs = TransportCoeffs(eps=1e-4, reaction=mu, source=mu * c, dirichlet=c)
    u, _ = solve_transport(assemble_sdfem(mesh, ConstantVelocity([1.0, 0.7]), coeffs), reduction=1e-12)
    np.testing.assert_allclose(u.coef, c, atol=1e-9)
