import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rgl.errors import CutLocusSuspected, TimeOutOfRange
from rgl.flow_models import curvature_at, metric_at, parse_model
from rgl.lfunction import (grad_l, l_bracket, l_tau, min_l, path_oracle, path_oracle_extrapolated,
                           solve_l, warm_l)
from rgl.lgeodesic import shoot

SPHERE = parse_model("sphere:2:1")
CIGAR = parse_model("cigar:1")


@settings(max_examples=15)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.floats(0.1, 2.0))
def test_flat_closed_form(q, tau):
    m = parse_model("flat:3")
    p = np.array([0.1, 0.0, -0.2])
    res = solve_l(m, p, q, tau)
    assert res.l_value == pytest.approx(oracles.flat_l(p, q, tau), rel=1e-9, abs=1e-12)
    np.testing.assert_allclose(res.gradient, oracles.flat_grad(p, q, tau), rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("q,chart", [((0.5, 0.0), 0), ((0.2, -0.7), 0), ((0.4, 0.3), 1)])
@pytest.mark.parametrize("tau", [0.3, 1.0])
def test_sphere_closed_form(q, chart, tau):
    res = solve_l(SPHERE, np.zeros(2), np.array(q), tau, q_chart=chart)
    qq = np.array(q, dtype=float)
    if chart == 1:
        qq = SPHERE.chart(1).transition(qq, SPHERE.chart(0))
    assert res.l_value == pytest.approx(oracles.sphere_l_at_chart_point(qq, tau), abs=1e-9)
    # the sphere has a second, longer branch the other way round
    assert len(res.branches) >= 2
    assert res.branches[0].l <= res.branches[1].l


def test_l_at_base_point_on_sphere():
    res = solve_l(SPHERE, np.zeros(2), np.zeros(2), 1.0)
    assert res.l_value == pytest.approx(1.0 - math.atan(math.sqrt(2.0)) / math.sqrt(2.0), abs=1e-10)


@pytest.mark.parametrize("name,q", [("cigar:1", (0.8, -0.4)), ("sphere:2:1", (0.6, 0.3)),
                                    ("cylinder:1", (0.3, 0.2, 0.5))])
def test_shooting_agrees_with_path_oracle(name, q):
    m = parse_model(name)
    p = np.zeros(m.dim)
    res = solve_l(m, p, np.array(q), 0.7)
    ext = path_oracle_extrapolated(m, p, np.array(q), 0.7)
    assert ext == pytest.approx(res.l_value, rel=1e-6)
    raw = path_oracle(m, p, np.array(q), 0.7, K=32)
    # the plain discretization is an upper bound up to O(K^-2)
    assert raw >= res.l_value - 1e-9
    assert raw == pytest.approx(res.l_value, rel=1e-3)


def test_gradient_matches_finite_differences():
    q = np.array([0.7, 0.5])
    tau = 0.8
    res = solve_l(CIGAR, np.zeros(2), q, tau)
    g = metric_at(CIGAR, q, tau)[0]
    h = 1e-4
    fd = np.array([(warm_l(CIGAR, res, q + h * e, tau).l_value - warm_l(CIGAR, res, q - h * e, tau).l_value)
                   / (2 * h) for e in np.eye(2)])
    # grad l is a vector; its covector g grad l is the differential
    np.testing.assert_allclose(g @ grad_l(CIGAR, np.zeros(2), q, tau), fd, rtol=1e-2)
    np.testing.assert_allclose(g @ res.gradient, fd, rtol=1e-6)


def test_l_tau_satisfies_evolution_identity():
    q = np.array([0.9, -0.2])
    tau = 0.6
    res = solve_l(CIGAR, np.zeros(2), q, tau)
    g = metric_at(CIGAR, q, tau)[0]
    R = curvature_at(CIGAR, q, tau).scalar
    gn2 = res.gradient @ g @ res.gradient
    lt = l_tau(CIGAR, np.zeros(2), q, tau, result=res)
    assert lt == pytest.approx(R / 2 - gn2 / 2 - res.l_value / (2 * tau), abs=1e-5)
    with pytest.raises(TimeOutOfRange):
        l_tau(CIGAR, np.zeros(2), q, tau, h=0.1)


def test_restriction_of_minimizer():
    tau = 1.2
    q = np.array([1.1, 0.4])
    res = solve_l(CIGAR, np.zeros(2), q, tau)
    geo = shoot(CIGAR, np.zeros(2), res.minimizer_v, tau, t_knots=[math.sqrt(0.5), math.sqrt(tau)])
    sub = solve_l(CIGAR, np.zeros(2), geo.x[0], 0.5)
    assert sub.l_value == pytest.approx(geo.energy[0] / (2 * math.sqrt(0.5)), abs=1e-8)


def test_min_l_values():
    for name in ["flat:2", "sphere:2:1", "cigar:1"]:
        m = parse_model(name)
        for tau in (0.5, 1.0):
            q, c, val = min_l(m, np.zeros(m.dim), tau)
            assert val <= m.dim / 2 + 1e-3
    _q, _c, val = min_l(SPHERE, np.zeros(2), 1.0)
    assert val == pytest.approx(1.0 - math.atan(math.sqrt(2.0)) / math.sqrt(2.0), abs=1e-8)


def test_l_bracket_contains_l():
    for q in ([0.4, 0.1], [1.5, -2.0]):
        res = solve_l(CIGAR, np.zeros(2), np.array(q), 0.9)
        lo, hi = l_bracket(CIGAR, np.zeros(2), np.array(q), 0.9)
        assert lo <= res.l_value <= hi


def test_determinism():
    a = solve_l(CIGAR, np.zeros(2), np.array([0.3, 1.2]), 0.4, seed=7)
    b = solve_l(CIGAR, np.zeros(2), np.array([0.3, 1.2]), 0.4, seed=7)
    assert a.l_value == b.l_value
    np.testing.assert_array_equal(a.minimizer_v, b.minimizer_v)


def test_antipode_is_flagged_as_cut_point():
    # every great circle reaches the antipode with the same energy
    with pytest.raises(CutLocusSuspected):
        grad_l(SPHERE, np.zeros(2), np.zeros(2), 0.5, q_chart=1)


def test_bad_time():
    with pytest.raises(TimeOutOfRange):
        solve_l(CIGAR, np.zeros(2), np.ones(2), 0.0)
