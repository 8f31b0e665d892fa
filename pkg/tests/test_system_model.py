import numpy as np
import pytest
from conftest import default_plant
from hypothesis import given, settings
from hypothesis import strategies as st

from backstep import CascadeState, build_grid, norm_H, norm_Y, validate_plant
from backstep.errors import BadDimension, BadGeometry, ConfigError, NotControllable
from backstep.system_model import load_plant, plant_from_dict


def test_default_plant_is_valid():
    assert validate_plant(default_plant()).n == 2


def test_zero_input_matrix_is_not_controllable():
    with pytest.raises(NotControllable, match="NotControllable"):
        validate_plant(default_plant(B=[[0.0], [0.0]]))


@pytest.mark.parametrize("kw", [dict(xi=1.0), dict(xi=0.0), dict(l=-1.0), dict(lam=-1.0)])
def test_bad_geometry(kw):
    with pytest.raises(BadGeometry):
        validate_plant(default_plant(**kw))


def test_bad_dimension():
    with pytest.raises(BadDimension):
        validate_plant(default_plant(B=[[0.0], [1.0], [2.0]]))


def test_grid_exact_division():
    g = build_grid(1.0, 0.5, 0.25)
    np.testing.assert_allclose(g.nodes, [0, 0.25, 0.5, 0.75, 1.0], atol=1e-15)
    g = build_grid(1.0, 0.3, 0.1)
    assert (g.n1, g.n2) == (3, 7)
    assert g.h1 == pytest.approx(0.1) and g.h2 == pytest.approx(0.1)


def test_grid_rounding():
    g = build_grid(1.0, 0.33, 0.1)
    assert (g.n1, g.n2) == (3, 7)
    assert g.h1 == pytest.approx(0.11)
    assert g.h2 == pytest.approx(0.67 / 7) and g.h2 == pytest.approx(0.095714, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(xi=st.floats(0.01, 0.99), h=st.floats(0.001, 0.5))
def test_grid_keeps_xi_bitwise(xi, h):
    g = build_grid(1.0, xi, h)
    assert g.nodes[g.index_xi] == xi
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert g.n1 >= 2 and g.n2 >= 2
    assert np.all(np.diff(g.nodes) > 0)


def test_norms_of_simple_states():
    g = build_grid(1.0, 0.3, 0.01)
    zero = CascadeState.from_field(np.zeros(2), np.zeros(len(g.nodes)), g)
    assert norm_H(zero) == 0.0 and norm_Y(zero) == 0.0
    s = CascadeState.from_field(np.array([3.0, 4.0]), np.zeros(len(g.nodes)), g)
    assert norm_H(s) == 5.0


def test_norm_H_of_half_sine():
    g = build_grid(1.0, 0.5, 0.01)
    s = CascadeState(np.zeros(1), np.sin(np.pi * g.left / 0.5), np.zeros(g.n2 + 1), g)
    assert norm_H(s) == pytest.approx(np.sqrt(0.25), abs=1e-4)


_CUBIC = np.polynomial.Polynomial([0, 1, 0, -1])  # x (1 - x) (1 + x)
_L2 = (_CUBIC**2).integ()(1.0)
_SEMI = (_CUBIC.deriv() ** 2).integ()(1.0)


@pytest.mark.parametrize("norm, exact", [(norm_H, np.sqrt(_L2)), (norm_Y, np.sqrt(_L2 + _SEMI))])
def test_norms_converge_at_second_order(norm, exact):
    errs = []
    for h in (0.02, 0.01):
        g = build_grid(1.0, 0.3, h)
        errs.append(abs(norm(CascadeState.from_field(np.zeros(1), _CUBIC(g.nodes), g)) - exact))
    # the L2 part vanishes with f at both ends, so trapezoid is even fourth order there
    assert errs[0] / errs[1] >= 4.0 * 0.7


@settings(max_examples=40, deadline=None)
@given(c=st.floats(-50, 50).filter(lambda c: c == 0 or abs(c) > 1e-100), seed=st.integers(0, 2**32 - 1))
def test_norms_absolutely_homogeneous(c, seed):
    rng = np.random.default_rng(seed)
    g = build_grid(1.0, 0.4, 0.05)
    s = CascadeState.from_field(rng.standard_normal(2), np.r_[0, rng.standard_normal(len(g.nodes) - 2), 0], g)
    for norm in (norm_H, norm_Y):
        assert norm(s.scaled(c)) == pytest.approx(abs(c) * norm(s), rel=1e-12, abs=1e-300)


def test_state_shape_checked():
    g = build_grid(1.0, 0.3, 0.1)
    with pytest.raises(BadDimension):
        CascadeState(np.zeros(2), np.zeros(3), np.zeros(8), g)


def test_continuity_and_boundary_gaps():
    g = build_grid(1.0, 0.3, 0.1)
    s = CascadeState(np.zeros(1), np.r_[0.0, 1, 2, 3], np.r_[2.5, 0, 0, 0, 0, 0, 0, 0.1], g)
    assert s.continuity_gap == pytest.approx(0.5)
    assert s.boundary_gap == pytest.approx(0.1)


def test_plant_from_dict_and_yaml(tmp_path):
    d = {"A": [[0, 1], [0, 0]], "B": [[0], [1]], "lambda": 20, "l": 1, "xi": 0.3}
    p = plant_from_dict(d)
    assert p.lam == 20 and p.B.shape == (2, 1)
    with pytest.raises(ConfigError):
        plant_from_dict({"A": [[0]]})
    f = tmp_path / "p.yaml"
    f.write_text("plant:\n  A: [[0, 1], [0, 0]]\n  B: [[0], [1]]\n  lambda: 5\n  l: 2\n  xi: 0.5\n")
    assert load_plant(f).l == 2
