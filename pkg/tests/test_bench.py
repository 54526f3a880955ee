import numpy as np
import pytest

from gwtransport.adapt import cell_peclet
from gwtransport.bench import (ExcludedRegionError, build_scenario, convergence_study,
                               forward2d_scenario, john_problem, l2_error, lopez_problem, solve_method)
from gwtransport.mesh import GridSpec, build_structured
from gwtransport.transport import DiscreteField
from gwtransport.fem_core import build_layout


def fd_derivatives(f, x, h):
    e = np.eye(2) * h
    grad = np.stack([(f(x + e[a]) - f(x - e[a])) / (2 * h) for a in range(2)], axis=-1)
    lap = sum((f(x + e[a]) - 2 * f(x) + f(x - e[a])) / h**2 for a in range(2))
    return grad, lap


def test_john_boundary_and_centre():
    p = john_problem(1e-5)
    t = np.linspace(0, 1, 21)
    for pts in (np.column_stack([t, 0 * t]), np.column_stack([t, 1 + 0 * t]),
                np.column_stack([0 * t, t]), np.column_stack([1 + 0 * t, t])):
        np.testing.assert_allclose(p.u(pts), 0.0, atol=1e-14)
    # P(1/2, 1/2) = 1/16, so u = (pi/2 + arctan(2 xi / sqrt(eps))) / pi
    centre = 0.5 + np.arctan(2 * 0.0625 / np.sqrt(1e-5)) / np.pi
    assert p.u(np.array([0.5, 0.5])) == pytest.approx(centre, abs=1e-12)
    assert centre == pytest.approx(0.99195, abs=1e-5)


@pytest.mark.parametrize("eps", [1.0, 1e-2])
def test_john_derivatives_and_source(eps, rng):
    p = john_problem(eps)
    x = rng.uniform(0.05, 0.95, (50, 2))
    g, lap = fd_derivatives(p.u, x, 1e-4)
    scale_g = np.abs(p.grad(x)).max()
    np.testing.assert_allclose(p.grad(x), g, atol=1e-5 * scale_g)
    np.testing.assert_allclose(p.laplacian(x), lap, atol=1e-5 * np.abs(p.laplacian(x)).max())
    strong = -eps * lap + g @ p.q + p.mu * p.u(x)
    scale = np.abs(p.source(x)).max()
    assert np.abs(strong - p.source(x)).max() <= 1e-6 * scale * max(1.0, 1 / eps)


def test_lopez_reference():
    p = lopez_problem(1e-5)
    s = np.linspace(0.01, 1.0, 30)
    # centre of the interior layer: both erfc branches meet at 1/2
    np.testing.assert_allclose(p.u(np.column_stack([s, s])), 0.5, atol=1e-12)
    np.testing.assert_allclose(p.u(np.column_stack([s + 0.05, 0 * s])), 1.0, atol=1e-3)
    np.testing.assert_allclose(p.u(np.column_stack([0 * s, s + 0.05])), 0.0, atol=1e-3)
    with pytest.raises(ExcludedRegionError):
        p.u(np.array([[1e-5, 1e-5]]))


def test_lopez_source_free_far_from_layer(rng):
    # away from the origin the expansion solves -eps lap u + q.grad u = 0 up to higher-order terms
    p = lopez_problem(1e-2)
    x = rng.uniform(0.3, 0.9, (40, 2))
    g, lap = fd_derivatives(p.u, x, 1e-4)
    res = -p.eps * lap + g @ p.q
    assert np.abs(res).max() <= 0.05 * np.abs(g @ p.q).max() + 1e-3


def test_l2_error_examples():
    mesh = build_structured(GridSpec((1.0, 1.0), (4, 4)))
    lay = build_layout(mesh, "dg", 1)
    zero = DiscreteField(mesh, lay, np.zeros(lay.n_dofs))
    assert l2_error(zero, lambda x: np.zeros(x.shape[:-1])) == 0.0
    assert l2_error(zero, lambda x: np.full(x.shape[:-1], 0.3)) == pytest.approx(0.3)
    one = DiscreteField(mesh, lay, np.ones(lay.n_dofs))
    skip = l2_error(one, lambda x: np.zeros(x.shape[:-1]), excluded=(np.zeros(2), 1e-3))
    assert skip == pytest.approx(np.sqrt(15 / 16))


def test_smooth_rates():
    p = john_problem(1.0)
    t1 = convergence_study(p, "dg", 1, levels=3, n0=4)
    t2 = convergence_study(p, "dg", 2, levels=3, n0=4)
    assert t1.rates()[-1] > 1.8 and t2.rates()[-1] > 2.7


@pytest.mark.parametrize("method", ["sdfem", "dg", "dg+l2"])
def test_errors_decrease_under_refinement(method):
    for p in (john_problem(1.0), lopez_problem(1e-5)):
        t = convergence_study(p, method, 1, levels=3, n0=4, ordering="geometric")
        e = [r.error for r in t.rows]
        assert all(b <= a for a, b in zip(e, e[1:]))


def test_projection_adds_error_on_layer_problem():
    p = john_problem(1e-5)
    dg = convergence_study(p, "dg", 1, levels=1, n0=32)
    l2 = convergence_study(p, "dg+l2", 1, levels=1, n0=32)
    assert l2.rows[0].error >= dg.rows[0].error


def test_study_csv(tmp_path):
    t = convergence_study(john_problem(1.0), "dg", 1, levels=2, n0=2)
    t.to_csv(tmp_path / "c.csv", tmp_path / "t.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0].startswith("L,h,DOF,error,rate") and len(lines) == 3


def test_adaptive_study_records_levels():
    from gwtransport.adapt import AdaptConfig
    t = convergence_study(lopez_problem(1e-5), "dg", 1, levels=3, n0=4, refinement="adaptive",
                          adapt_config=AdaptConfig(p_r=30, p_c=0))
    assert [r.level for r in t.rows] == [0, 1, 2]
    with pytest.raises(ValueError):
        convergence_study(lopez_problem(), "dg+l2", 1, levels=2, refinement="adaptive")


def test_adaptive_beats_global_on_lopez():
    from gwtransport.adapt import AdaptConfig
    p = lopez_problem(1e-5)
    glob = convergence_study(p, "dg", 1, levels=2, n0=4, ordering="geometric")
    ada = convergence_study(p, "dg", 1, levels=6, n0=4, refinement="adaptive",
                            adapt_config=AdaptConfig(p_r=30, p_c=0), ordering="geometric")
    target = glob.rows[-1].error
    reached = [r.dofs for r in ada.rows if r.error <= target]
    assert reached and min(reached) < glob.rows[-1].dofs


def test_scenario_parameters():
    s = forward2d_scenario("paper")
    assert s.grid.cells_per_axis == (100, 100) and s.grid.extents == (100.0, 100.0)
    assert (s.head_left, s.head_right) == (100.0, 99.5)
    assert (s.geostat.mean, s.geostat.variance, s.geostat.corr_lengths) == (-6.0, 1.0, (10.0, 10.0))
    w = s.wells[0]
    assert (w.kind, w.rate, w.concentration, w.duration) == ("injection", 5e-4, 1.0, 100.0)
    assert (s.alpha_l, s.alpha_t, s.d_m) == (1e-3, 1e-4, 2e-9)
    assert forward2d_scenario("desk").grid.cells_per_axis == (50, 50)


@pytest.fixture(scope="module")
def desk():
    return build_scenario(forward2d_scenario("desk", seed=0))


def test_scenario_peclet_order(desk):
    pe = cell_peclet(desk.mesh, desk.mesh.leaves, desk.problem)
    assert 1e2 <= pe.max() <= 1e4


def test_scenario_range_and_ordering(desk):
    p = desk.problem
    u, _, _, rep_dw = solve_method(p, p.mesh, "dg+l2", 1, ordering="downwind")
    lo, hi = u.extrema()
    assert -10 < lo and hi < 110 and hi > 50
    _, _, _, rep_rand = solve_method(p, p.mesh, "dg", 1, ordering="random")
    assert rep_dw.iterations < rep_rand.iterations
