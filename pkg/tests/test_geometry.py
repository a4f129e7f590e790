import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from rgl.errors import BVPNoConvergence
from rgl.flow_models import parse_model
from rgl.geometry import geodesic_bvp, inner, norm, riemannian_distance, volume_density

CIGAR = parse_model("cigar:1")


def test_flat_distance_and_inner():
    m = parse_model("flat:3")
    assert riemannian_distance(m, [0, 0, 0], [1, 2, 2], 0.7) == pytest.approx(3.0)
    assert inner(m, np.zeros(3), 1.0, [1, 0, 0], [0, 1, 0]) == 0.0
    assert norm(m, np.zeros(3), 1.0, [3, 4, 0]) == pytest.approx(5.0)


def test_sphere_antipodal_distance():
    # radius sqrt(1 + 2 tau) = sqrt(3) at tau = 1
    m = parse_model("sphere:2:1")
    d = riemannian_distance(m, np.zeros(2), np.zeros(2), 1.0, chart1=0, chart2=1)
    assert d == pytest.approx(math.pi * math.sqrt(3.0), rel=1e-12)


def test_cylinder_distance_pythagoras():
    m = parse_model("cylinder:1")
    d = riemannian_distance(m, [0, 0, 0], [0, 0, 2.0], 0.5)
    assert d == pytest.approx(2.0)
    q = np.array([math.tan(0.25), 0.0, 1.0])  # quarter-angle 0.5 rad on S^2
    d = riemannian_distance(m, [0, 0, 0], q, 0.5)
    assert d == pytest.approx(math.hypot(math.sqrt(2.0) * 0.5, 1.0), rel=1e-12)


def test_volume_density_sphere():
    m = parse_model("sphere:2:1")
    assert volume_density(m, np.zeros(2), 0.5) == pytest.approx(4.0 * 2.0)


def test_cigar_radial_distance_is_asinh():
    assert riemannian_distance(CIGAR, [0, 0], [1, 0], 0.0) == pytest.approx(math.asinh(1.0), rel=1e-9)


@pytest.mark.parametrize("a,b,tau", [((-1, 0.5), (1.5, 1), 0.3), ((-2, -1), (1, 2), 1.0),
                                     ((2, 0), (-2, 0.05), 0.5), ((0.5, 0.5), (0.6, -0.8), 0.0)])
def test_cigar_distance_against_graph_oracle(a, b, tau):
    d = riemannian_distance(CIGAR, a, b, tau)
    g = oracles.cigar_graph_distance(a, b, tau)
    # the lattice path is never shorter and is within 1 % here
    assert d <= g * (1 + 1e-9)
    assert g <= d * 1.01


@given(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), st.tuples(st.floats(-2, 2), st.floats(-2, 2)),
       st.floats(0.0, 1.5))
def test_cigar_distance_symmetric(a, b, tau):
    d1 = riemannian_distance(CIGAR, a, b, tau)
    d2 = riemannian_distance(CIGAR, b, a, tau)
    assert d1 == pytest.approx(d2, rel=1e-7, abs=1e-9)


def test_cigar_triangle_inequality():
    pts = [(0.3, -1.0), (1.2, 0.8), (-1.5, 0.4)]
    d = lambda i, j: riemannian_distance(CIGAR, pts[i], pts[j], 0.4)
    assert d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9


def test_bvp_reports_failure():
    with pytest.raises(BVPNoConvergence) as info:
        geodesic_bvp(CIGAR, np.zeros(2), np.array([3.0, 0.0]), 0.3, max_iter=1)
    assert info.value.best_residual > 0
