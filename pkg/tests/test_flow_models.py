import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rgl.errors import ConfigError, NonpositiveScale, OutOfChart, TimeOutOfRange
from rgl.flow_models import (canonical_point, curvature_at, embed_sphere, flow_residual, metric_at,
                             parse_model, rescale, to_chart)

MODELS = ["flat:2", "flat:3", "sphere:2:1", "sphere:3:1", "cylinder:1", "cigar:1"]


def test_parse_model_names_and_errors():
    assert parse_model("sphere:2:1").dim == 2
    assert parse_model("cylinder:1").dim == 3
    assert parse_model("cigar:1@2").scale == 2.0
    for bad in ["torus:2", "flat:1", "sphere:2:-1", "cigar:x", "flat:2@q"]:
        with pytest.raises(ConfigError):
            parse_model(bad)
    with pytest.raises(NonpositiveScale):
        rescale(parse_model("flat:2"), 0.0)


def test_sphere_metric_at_tau_one_is_three_round():
    # r0^2 + 2 (n - 1) tau = 3: three times the unit stereographic metric
    q = np.array([0.3, -0.4])
    g = metric_at(parse_model("sphere:2:1"), q, 1.0)[0]
    round_ = 4.0 / (1.0 + q @ q) ** 2
    np.testing.assert_allclose(g, 3.0 * round_ * np.eye(2), rtol=1e-14)


def test_cigar_metric_at_zero():
    q = np.array([1.0, 2.0])
    g = metric_at(parse_model("cigar:1"), q, 0.0)[0]
    np.testing.assert_allclose(g, np.eye(2) / 6.0, rtol=1e-14)


@pytest.mark.parametrize("name", MODELS)
def test_flow_residual_small(name):
    m = parse_model(name)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        x, c = canonical_point(m, rng.uniform(-3, 3, size=m.dim))
        worst = max(worst, flow_residual(m, x, rng.uniform(0.01, 2.0), 1e-3, chart=c))
    assert worst < 1e-6


def test_flow_residual_rejects_negative_time():
    with pytest.raises(TimeOutOfRange):
        flow_residual(parse_model("flat:2"), np.zeros(2), 1e-4, 1e-3)


@pytest.mark.parametrize("name", ["sphere:2:1", "cylinder:1", "cigar:1"])
def test_scalar_curvature_matches_ricci_trace(name):
    m = parse_model(name)
    x, c = canonical_point(m, np.full(m.dim, 0.4))
    g, ginv, _ = metric_at(m, x, 0.7, c)
    cp = curvature_at(m, x, 0.7, c)
    assert cp.scalar == pytest.approx(np.trace(ginv @ cp.ric), rel=1e-12)
    assert cp.scalar >= 0.0


@pytest.mark.parametrize("name", MODELS)
def test_rescale_relation(name):
    m = parse_model(name)
    a = 2.5
    ma = rescale(m, a)
    x, c = canonical_point(m, np.full(m.dim, 0.3))
    g = metric_at(m, x, a * 0.4, c)[0]
    ga = metric_at(ma, x, 0.4, c)[0]
    np.testing.assert_allclose(ga, g / a, rtol=1e-13)


def test_chart_transition_is_orientation_preserving_involution():
    m = parse_model("sphere:2:1")
    c0, c1 = m.chart(0), m.chart(1)
    x = np.array([0.7, -1.3])
    y = c0.transition(x, c1)
    np.testing.assert_allclose(c1.transition(y, c0), x, rtol=1e-14)
    d = c0.transition_jacobian(x, c1)
    assert np.linalg.det(d) > 0
    h = 1e-6
    fd = np.column_stack([(c0.transition(x + h * e, c1) - c0.transition(x - h * e, c1)) / (2 * h)
                          for e in np.eye(2)])
    np.testing.assert_allclose(d, fd, atol=1e-8)
    np.testing.assert_allclose(embed_sphere(x, 0), embed_sphere(y, 1), atol=1e-15)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-2, 2))
def test_cylinder_transition_keeps_line_coordinate(a, b, z):
    m = parse_model("cylinder:1")
    x = np.array([a, b, z])
    if a * a + b * b < 1e-6:
        return
    y = to_chart(m, x, 0, 1)
    assert y[2] == z
    np.testing.assert_allclose(to_chart(m, y, 1, 0), x, rtol=1e-12, atol=1e-12)


def test_metric_is_chart_invariant():
    m = parse_model("sphere:2:1")
    x = np.array([1.5, 0.2])
    y = to_chart(m, x, 0, 1)
    d = m.chart(0).transition_jacobian(x, m.chart(1))
    g0 = metric_at(m, x, 0.5, 0)[0]
    g1 = metric_at(m, y, 0.5, 1)[0]
    np.testing.assert_allclose(d.T @ g1 @ d, g0, rtol=1e-12, atol=1e-14)


def test_canonical_point_and_domain():
    m = parse_model("sphere:2:1")
    x, c = canonical_point(m, np.array([3.0, 0.0]))
    assert c == 1 and np.linalg.norm(x) <= 1.0
    with pytest.raises(OutOfChart):
        metric_at(m, np.array([50.0, 0.0]), 0.1, 0)
    with pytest.raises(TimeOutOfRange):
        metric_at(m, np.zeros(2), -0.1, 0)


def test_symmetry_classes():
    assert parse_model("flat:2").symmetry_at(np.zeros(2)) == "isotropic"
    assert parse_model("cylinder:1").symmetry_at(np.zeros(3)) == "axial"
    cig = parse_model("cigar:1")
    assert cig.symmetry_at(np.zeros(2)) == "isotropic"
    assert cig.symmetry_at(np.array([0.5, 0.0])) is None


def test_ricci_bounds():
    assert parse_model("sphere:2:1").ricci_upper_bound() == pytest.approx(1.0)
    assert parse_model("cigar:1").ricci_upper_bound() == pytest.approx(2.0)
    m = parse_model("cigar:1")
    # Ric = (R/2) g on a surface; R = 4 A / (A + r^2) peaks at the tip
    cp = curvature_at(m, np.zeros(2), 0.0)
    g = metric_at(m, np.zeros(2), 0.0)[0]
    np.testing.assert_allclose(cp.ric, 2.0 * g, rtol=1e-14)
