import numpy as np
import pytest
from conftest import default_plant

from backstep import (CascadeState, SimConfig, TargetState, build_grid, mat_exp, simulate_closed_loop,
                      simulate_open_loop, simulate_target, synthesize_gains)
from backstep.errors import StepUnstable
from backstep.simulator import duhamel_X, exact_target_solution


def _l2(states):
    return np.array([np.sqrt(np.trapezoid((s.w if isinstance(s, TargetState) else s.u) ** 2, s.grid.nodes))
                     for s in states])


def _rate(times, values):
    return -np.polyfit(times, np.log(values), 1)[0]


@pytest.fixture(scope="module")
def grid():
    return build_grid(1.0, 0.3, 1 / 200)


def test_config_validation(grid):
    with pytest.raises(ValueError):
        SimConfig(dt=0.0, T=1.0, grid=grid)
    with pytest.raises(ValueError):
        SimConfig(dt=1e-3, T=1.0, grid=grid, scheme="rk4")
    assert SimConfig(dt=1e-3, T=0.5, grid=grid).steps == 500


def test_zero_closed_loop_stays_zero():
    p = default_plant()
    g = synthesize_gains(p, build_grid(p.l, p.xi, 0.02), [-1.0, -2.0])
    z = CascadeState.from_field(np.zeros(2), np.zeros(len(g.grid.nodes)), g.grid)
    tr = simulate_closed_loop(p, g, z, SimConfig(dt=1e-3, T=0.1, grid=g.grid, record_every=10))
    assert not np.any(tr.fields()) and not np.any(tr.controls) and not np.any(tr.X)


def test_heat_eigenmode_decay(grid):
    p = default_plant(lam=0.0)
    s0 = CascadeState.from_field(np.zeros(2), np.sin(np.pi * grid.nodes), grid)
    tr = simulate_open_loop(p, s0, SimConfig(dt=1e-4, T=0.3, grid=grid, record_every=50))
    assert _rate(tr.times, _l2(tr.states)) == pytest.approx(np.pi**2, rel=0.02)


def test_open_loop_growth(grid):
    p = default_plant()
    s0 = CascadeState.from_field(np.zeros(2), np.sin(np.pi * grid.nodes), grid)
    tr = simulate_open_loop(p, s0, SimConfig(dt=1e-4, T=0.5, grid=grid, record_every=50))
    sel = tr.times >= 0.1 - 1e-12
    assert -_rate(tr.times[sel], _l2(tr.states)[sel]) == pytest.approx(20 - np.pi**2, rel=0.02)
    assert tr.norm_H[-1] > tr.norm_H[0]


def test_decoupled_ode_when_field_is_zero(grid):
    p = default_plant(A=[[0.0, 1.0], [-1.0, 0.0]])
    X0 = np.array([1.0, 0.5])
    s0 = CascadeState.from_field(X0, np.zeros(len(grid.nodes)), grid)
    tr = simulate_open_loop(p, s0, SimConfig(dt=1e-3, T=1.0, grid=grid, record_every=100))
    assert not np.any(tr.fields())
    np.testing.assert_allclose(tr.X[-1], mat_exp(p.A, 1.0) @ X0, atol=1e-6)


def test_target_eigenmodes(grid):
    p = default_plant()
    for k in (1, 2):
        w0 = np.sin(k * np.pi * grid.nodes)
        tr = simulate_target(p, TargetState.from_field(np.zeros(2), w0, grid),
                             SimConfig(dt=1e-4, T=0.5 / k**2, grid=grid, record_every=50))
        exact = np.exp(-((k * np.pi) ** 2) * tr.times[-1]) * w0
        assert np.max(np.abs(tr.states[-1].w - exact)) <= 1e-3
        assert _rate(tr.times, _l2(tr.states)) == pytest.approx((k * np.pi) ** 2, rel=0.02)


def test_target_matches_fourier_oracle(grid):
    p = default_plant()
    w0 = grid.nodes * (1 - grid.nodes) * (1 + 2 * grid.nodes)
    tr = simulate_target(p, TargetState.from_field(np.zeros(2), w0, grid),
                         SimConfig(dt=1e-4, T=0.2, grid=grid, record_every=500))
    for s, t in zip(tr.states[1:], tr.times[1:]):
        assert np.max(np.abs(s.w - exact_target_solution(w0, grid.nodes, grid.nodes, t))) <= 1e-3


def test_fourier_oracle_examples():
    x = np.linspace(0, 1, 2001)
    w0 = np.sin(np.pi * x)
    assert exact_target_solution(w0, x, 0.5, 0.1) == pytest.approx(np.exp(-np.pi**2 * 0.1), rel=1e-6)
    np.testing.assert_allclose(exact_target_solution(x * (1 - x), x, x[::100], 0.0), (x * (1 - x))[::100],
                               atol=1e-5)
    k = np.arange(1, 101)
    coeff = np.where(k % 2 == 1, 8 / (k * np.pi) ** 3, 0.0)
    expected = np.sum(coeff * np.exp(-(k * np.pi) ** 2 * 0.1) * np.sin(k * np.pi * 0.5))
    assert exact_target_solution(x * (1 - x), x, 0.5, 0.1) == pytest.approx(expected, rel=1e-6)


def test_duhamel_examples():
    Acl = np.array([[0.0, 1.0], [-2.0, -3.0]])
    X0 = np.array([1.0, -1.0])
    np.testing.assert_allclose(duhamel_X(Acl, np.zeros(2), X0, lambda t: 0.0, 0.7), mat_exp(Acl, 0.7) @ X0)
    for t in (0.0, 0.3, 2.0):
        got = duhamel_X([[-1.0]], [1.0], [2.0], lambda s: 1.0, t)
        assert got[0] == pytest.approx(2 * np.exp(-t) + 1 - np.exp(-t), abs=1e-7)


def test_target_ode_follows_duhamel(grid):
    p = default_plant()
    K = np.array([[-2.0, -3.0]])
    w0 = np.sin(np.pi * grid.nodes)
    X0 = np.array([0.5, 0.0])
    tr = simulate_target(p, TargetState.from_field(X0, w0, grid),
                         SimConfig(dt=1e-4, T=0.5, grid=grid, record_every=100), K)
    Acl = p.A + p.B @ K
    flux = lambda t: np.pi * np.exp(-np.pi**2 * t)  # noqa: E731  w_x(0, t) for the sine mode
    np.testing.assert_allclose(tr.X[-1], duhamel_X(Acl, p.B, X0, flux, 0.5), atol=2e-4)


def test_implicit_and_lagged_coupling_agree():
    p = default_plant()
    g = synthesize_gains(p, build_grid(p.l, p.xi, 0.01), [-1.0, -2.0])
    from backstep import compatible_initial_state
    s0 = compatible_initial_state(g)
    runs = [simulate_closed_loop(p, g, s0, SimConfig(dt=1e-4, T=0.2, grid=g.grid, record_every=100,
                                                        coupling=c)) for c in ("lagged", "implicit")]
    np.testing.assert_allclose(runs[0].fields()[-1], runs[1].fields()[-1], atol=1e-3)


def test_blow_up_is_reported():
    p = default_plant(lam=400.0)
    grid = build_grid(1.0, 0.3, 0.05)
    g = synthesize_gains(p, grid, [-1.0, -2.0], feedback_sign=-1.0)
    s0 = CascadeState.from_field(np.zeros(2), np.sin(np.pi * grid.nodes), grid)
    with pytest.raises(StepUnstable):
        simulate_closed_loop(p, g, s0, SimConfig(dt=1e-3, T=5.0, grid=grid, record_every=100))
