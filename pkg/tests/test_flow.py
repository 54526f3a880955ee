import numpy as np
import pytest
from hypothesis import given, strategies as st

from gwtransport.field import GeoStatParams, WellSpec, build_conductivity, sample_gaussian_field, well_rates
from gwtransport.flow import (ConstantVelocity, SingularSystemError, assemble_ccfv, assemble_fem_flow, darcy_direct,
                              downwind_order, harmonic_average, reconstruct_local_head, rt0_reconstruct, solve_ccfv,
                              solve_fem_flow)
from gwtransport.mesh import GridSpec, MeshError, build_structured

LEFT, RIGHT = 0, 1


def grid(n, m, L=1.0, H=1.0):
    return build_structured(GridSpec((L, H), (n, m)))


def test_harmonic_average():
    assert harmonic_average(2.0, 2.0) == 2.0
    assert harmonic_average(1.0, 3.0) == 1.5
    assert harmonic_average(1e-12, 1.0) == pytest.approx(2e-12, rel=1e-9)
    with pytest.raises(ValueError):
        harmonic_average(0.0, 1.0)


def test_two_cell_head():
    head = solve_ccfv(grid(2, 1), 1.0, dirichlet={LEFT: 1.0, RIGHT: 0.0})
    np.testing.assert_allclose(head.values, [0.75, 0.25], atol=1e-14)


def test_constant_dirichlet_gives_constant_head():
    mesh = grid(5, 4)
    k = np.exp(np.random.default_rng(0).standard_normal(20))
    head = solve_ccfv(mesh, k, dirichlet={s: 3.0 for s in range(4)})
    np.testing.assert_allclose(head.values, 3.0, atol=1e-13)
    np.testing.assert_allclose(head.face_flux, 0.0, atol=1e-12)


def test_ccfv_matches_dense_oracle():
    # independent dense two-point-flux assembly
    rng = np.random.default_rng(4)
    n, m = 4, 3
    mesh = grid(n, m, 4.0, 3.0)
    k = np.exp(rng.standard_normal(n * m))
    A = np.zeros((n * m, n * m))
    b = np.zeros(n * m)
    idx = lambda i, j: i + n * j
    for j in range(m):
        for i in range(n):
            c = idx(i, j)
            if i + 1 < n:
                t = 2 * k[c] * k[idx(i + 1, j)] / (k[c] + k[idx(i + 1, j)])
                A[c, c] += t; A[idx(i + 1, j), idx(i + 1, j)] += t
                A[c, idx(i + 1, j)] -= t; A[idx(i + 1, j), c] -= t
            if j + 1 < m:
                t = 2 * k[c] * k[idx(i, j + 1)] / (k[c] + k[idx(i, j + 1)])
                A[c, c] += t; A[idx(i, j + 1), idx(i, j + 1)] += t
                A[c, idx(i, j + 1)] -= t; A[idx(i, j + 1), c] -= t
        A[idx(0, j), idx(0, j)] += 2 * k[idx(0, j)]
        b[idx(0, j)] += 2 * k[idx(0, j)] * 2.0
        A[idx(n - 1, j), idx(n - 1, j)] += 2 * k[idx(n - 1, j)]
    head = solve_ccfv(mesh, k, dirichlet={LEFT: 2.0, RIGHT: 0.0})
    np.testing.assert_allclose(head.values, np.linalg.solve(A, b), rtol=1e-12)


def test_no_dirichlet_is_singular():
    with pytest.raises(SingularSystemError):
        assemble_ccfv(grid(2, 2), 1.0)
    with pytest.raises(SingularSystemError):
        assemble_fem_flow(grid(2, 2), 1.0)


def test_flow_needs_level0_mesh():
    with pytest.raises(MeshError):
        solve_ccfv(grid(2, 2).adapt([0]), 1.0, dirichlet={LEFT: 1.0})


def _heterogeneous(seed, wells=()):
    g = GridSpec((40.0, 40.0), (20, 20))
    y = sample_gaussian_field(GeoStatParams(corr_lengths=(6.0, 6.0), seed=seed), g)
    return build_structured(g), build_conductivity(y, g, wells)


@given(st.integers(0, 1000))
def test_ccfv_mass_balance(seed):
    wells = [WellSpec.point("injection", (10.5, 20.5), 1e-4), WellSpec.point("extraction", (30.5, 10.5), 5e-5)]
    mesh, k = _heterogeneous(seed, wells)
    head = solve_ccfv(mesh, k, wells, {LEFT: 100.0, RIGHT: 99.0})
    f = mesh.faces
    net = np.zeros(mesh.grid.n_cells)
    flux = head.face_flux * f.measure
    np.add.at(net, f.minus, flux)
    np.add.at(net, f.plus[:f.n_interior], -flux[:f.n_interior])
    inj, ext = well_rates(mesh.grid, wells)
    src = (inj - ext) * mesh.cell_volume(np.arange(mesh.grid.n_cells))
    scale = np.abs(flux).max()
    assert np.abs(net - src).max() <= 1e-10 * scale


def test_rt0_uniform_flux():
    mesh = grid(3, 2)
    f = mesh.faces
    flux = np.where(f.axis == 0, 0.7 * f.sign, 0.0)   # q = (0.7, 0) in face-normal form
    v = rt0_reconstruct(mesh, flux)
    np.testing.assert_allclose(v.a[:, 0], 0.7)
    np.testing.assert_allclose(v.b, 0.0)


def test_rt0_affine_single_cell():
    mesh = grid(1, 1)
    f = mesh.faces
    x = f.center[:, 0]
    flux = np.where(f.axis == 0, x * f.sign, 0.0)
    v = rt0_reconstruct(mesh, flux)
    np.testing.assert_allclose(v(np.array([[0.3, 0.5]])), [[0.3, 0.0]])
    np.testing.assert_allclose(v.divergence([0]), [1.0])


@given(st.integers(0, 1000))
def test_rt0_properties_without_wells(seed):
    mesh, k = _heterogeneous(seed)
    head = solve_ccfv(mesh, k, dirichlet={LEFT: 1.0, RIGHT: 0.0})
    v = rt0_reconstruct(mesh, head.face_flux)
    f = mesh.faces
    scale = np.abs(head.face_flux).max() / mesh.grid.spacing[0]
    assert np.abs(v.divergence(np.arange(mesh.grid.n_cells))).max() <= 1e-10 * scale
    inner = np.arange(f.n_interior)
    qm = np.einsum("fa,fa->f", v(f.center[inner], f.minus[inner]), f.normal[inner])
    qp = np.einsum("fa,fa->f", v(f.center[inner], f.plus[inner]), f.normal[inner])
    assert np.abs(qm - qp).max() <= 1e-12 * max(1.0, np.abs(qm).max())
    np.testing.assert_allclose(qm, head.face_flux[inner], atol=1e-12 * np.abs(qm).max())


def test_fem_constant_and_symmetric():
    mesh = grid(4, 4)
    k = np.exp(np.random.default_rng(1).standard_normal(16))
    sysm = assemble_fem_flow(mesh, k, dirichlet={LEFT: 2.0, RIGHT: 2.0})
    a = sysm.matrix.toarray()
    np.testing.assert_allclose(a, a.T, atol=1e-14)
    head = solve_fem_flow(mesh, k, dirichlet={LEFT: 2.0, RIGHT: 2.0})
    np.testing.assert_allclose(head.values, 2.0, atol=1e-10)


def test_fem_layered_column_matches_analytic():
    # K varies along x only: flux constant, head piecewise linear with slopes 1/K
    n = 8
    kx = np.array([1.0, 2.0, 0.5, 4.0, 1.0, 3.0, 0.25, 1.0])
    mesh = grid(n, 3, 8.0, 3.0)
    k = np.tile(kx, 3)
    head = solve_fem_flow(mesh, k, dirichlet={LEFT: 1.0, RIGHT: 0.0}, solver="direct")
    r = 1.0 / kx
    nodes = np.concatenate([[1.0], 1.0 - np.cumsum(r) / r.sum()])
    np.testing.assert_allclose(head.values.reshape(4, n + 1), np.tile(nodes, (4, 1)), atol=1e-10)


def test_darcy_direct_linear_and_constant():
    mesh = grid(3, 3)
    head = solve_fem_flow(mesh, 2.0, dirichlet={LEFT: 0.0, RIGHT: 1.0})
    np.testing.assert_allclose(darcy_direct(head, 2.0)(np.array([[0.4, 0.6]])), [[-2.0, 0.0]], atol=1e-10)
    flat = solve_fem_flow(mesh, 2.0, dirichlet={LEFT: 1.0, RIGHT: 1.0})
    np.testing.assert_allclose(darcy_direct(flat, 2.0)(np.array([[0.4, 0.6]])), 0.0, atol=1e-10)


def test_darcy_matches_finite_differences():
    mesh, k = _heterogeneous(7)
    head = solve_fem_flow(mesh, k, dirichlet={LEFT: 1.0, RIGHT: 0.0}, solver="direct")
    q = darcy_direct(head, k)
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(10):
        # stay inside a cell so the bilinear interpolant is smooth
        c = rng.integers(mesh.grid.n_cells)
        x = mesh.cell_lower([c])[0] + mesh.cell_size([c])[0] * rng.uniform(0.2, 0.8, 2)
        lo = mesh.cell_lower([c])[0]
        coef = q.coef[c]

        def phi(y):
            t = (y - lo) / mesh.grid.spacing
            return coef @ np.array([(1 - t[0]) * (1 - t[1]), t[0] * (1 - t[1]), (1 - t[0]) * t[1], t[0] * t[1]])

        g = np.array([(phi(x + h * e) - phi(x - h * e)) / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(q(x[None], [c])[0], -k.K[c] * g, atol=1e-8)


def test_local_head_trivial_cases():
    mesh = grid(1, 1)
    v = rt0_reconstruct(mesh, np.zeros(len(mesh.faces)))
    lh = reconstruct_local_head(mesh, v, 1.0, [5.0])
    a, b, c0 = lh.coefficients(0)
    assert np.all(a == 0) and np.all(b == 0) and c0 == 5.0
    f = mesh.faces
    v = rt0_reconstruct(mesh, np.where(f.axis == 0, -1.0 * f.sign, 0.0))
    lh = reconstruct_local_head(mesh, v, 1.0, [0.5])
    pts = np.random.default_rng(0).random((5, 2))
    np.testing.assert_allclose(lh(pts), pts[:, 0], atol=1e-14)
    with pytest.raises(ValueError):
        reconstruct_local_head(mesh, v, 0.0, [0.5])


@given(st.integers(0, 10_000))
def test_local_head_conditions(seed):
    rng = np.random.default_rng(seed)
    mesh = grid(2, 2)
    f = mesh.faces
    v = rt0_reconstruct(mesh, rng.standard_normal(len(f)))
    k = np.exp(rng.standard_normal(4))
    phi_c = rng.standard_normal(4)
    lh = reconstruct_local_head(mesh, v, k, phi_c)
    cells = np.arange(4)
    c = mesh.cell_center(cells)
    np.testing.assert_allclose(lh(c, cells), phi_c, atol=1e-12)
    h = mesh.cell_size(cells)
    for axis in range(2):
        for sgn in (-1.0, 1.0):
            x = c.copy()
            x[:, axis] += sgn * 0.5 * h[:, axis]
            grad = 2 * lh.A[:, axis] * (x[:, axis] - c[:, axis]) + lh.B[:, axis]
            np.testing.assert_allclose(-k * grad, v(x, cells)[:, axis], atol=1e-12)


def test_downwind_order_channel():
    mesh = grid(5, 1)
    v = ConstantVelocity([1.0, 0.0])
    assert downwind_order(mesh, v).tolist() == mesh.leaves.tolist()
    back = ConstantVelocity([-1.0, 0.0])
    assert downwind_order(mesh, back).tolist() == mesh.leaves[::-1].tolist()


@given(st.integers(0, 10_000), st.floats(-1e3, 1e3))
def test_downwind_order_permutation_and_shift(seed, shift):
    rng = np.random.default_rng(seed)
    mesh = grid(4, 4).adapt([rng.integers(16)])
    h = rng.integers(0, 5, mesh.n_leaves).astype(float)   # plenty of ties
    order = downwind_order(mesh, h)
    assert sorted(order.tolist()) == sorted(mesh.leaves.tolist())
    assert np.array_equal(order, downwind_order(mesh, h + np.round(shift)))
