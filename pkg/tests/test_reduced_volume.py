import math

import numpy as np
import pytest

import oracles
from rgl.flow_models import parse_model
from rgl.reduced_volume import (build_mask, difference_integral, gaussian_tail, integrand, lebedev14_subset,
                                lebedev26, make_grid, masked_sum, reduced_volume, reduced_volume_curve,
                                sphere_area)

TAUS = [0.25, 0.5, 1.0, 2.0]
# quadrature of the closed-form integrand up to the conjugate radius
SPHERE_V = [12.493305, 12.346527, 12.028215, 11.55574]
CYLINDER_V = [44.28761, 43.7673, 42.63891, 40.96403]


def test_frozen_values_match_oracle():
    np.testing.assert_allclose([oracles.sphere_reduced_volume(t) for t in TAUS], SPHERE_V, atol=1e-6)
    np.testing.assert_allclose([oracles.cylinder_reduced_volume(t) for t in TAUS], CYLINDER_V, atol=1e-5)


@pytest.mark.parametrize("deg", range(8))
def test_lebedev26_integrates_polynomials(deg):
    d, w = lebedev26()
    rng = np.random.default_rng(deg)
    for _ in range(3):
        a, b = rng.integers(0, deg + 1, size=2)
        c = deg - a - b
        if c < 0:
            continue
        f = d[:, 0] ** a * d[:, 1] ** b * d[:, 2] ** c
        # exact: 0 unless all even, else 2 G((a+1)/2) G((b+1)/2) G((c+1)/2) / G((deg+3)/2) / (4 pi)
        if a % 2 or b % 2 or c % 2:
            exact = 0.0
        else:
            g = math.gamma
            exact = 2 * g((a + 1) / 2) * g((b + 1) / 2) * g((c + 1) / 2) / g((deg + 3) / 2) / (4 * math.pi)
        assert float(w @ f) == pytest.approx(exact, abs=1e-14)


def test_lebedev14_subset_is_a_rule():
    d, _ = lebedev26()
    idx, w = lebedev14_subset()
    assert w.sum() == pytest.approx(1.0)
    assert float(w @ d[idx, 0] ** 2) == pytest.approx(1.0 / 3.0)


def test_gaussian_tail():
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    # int_{|x|>rho} 4 e^{-|x|^2} d^2x = 4 pi e^{-rho^2}
    assert gaussian_tail(2, 1.0) == pytest.approx(4 * math.pi * math.exp(-1.0), rel=1e-12)
    assert gaussian_tail(3, 6.0) < 1e-12 * (4 * math.pi) ** 1.5


@pytest.mark.parametrize("n", [2, 3])
def test_flat_rigidity(n):
    m = parse_model(f"flat:{n}")
    c = reduced_volume_curve(m, np.zeros(n), TAUS)
    np.testing.assert_allclose(c.values, (4 * math.pi) ** (n / 2), rtol=1e-10)
    assert np.all(c.errors < 1e-10)
    g = c.grid
    gauss = 2.0**n * np.exp(-np.sum(g.xi**2, axis=-1))
    np.testing.assert_allclose(g.Jt, np.broadcast_to(gauss, g.Jt.shape), rtol=1e-8)


def test_sphere_curve_against_oracle():
    c = reduced_volume_curve(parse_model("sphere:2:1"), np.zeros(2), TAUS)
    assert np.all(np.abs(c.values - SPHERE_V) <= c.errors)
    np.testing.assert_allclose(c.values, SPHERE_V, rtol=5e-4)
    assert c.strictly_decreasing() and np.all(c.values <= c.bound)


@pytest.mark.slow
def test_cylinder_curve_against_oracle():
    c = reduced_volume_curve(parse_model("cylinder:1"), np.zeros(3), TAUS)
    assert np.all(np.abs(c.values - CYLINDER_V) <= c.errors)
    np.testing.assert_allclose(c.values, CYLINDER_V, rtol=5e-4)


def test_cigar_curve_properties():
    c = reduced_volume_curve(parse_model("cigar:1"), np.zeros(2), TAUS)
    assert c.strictly_decreasing()
    assert np.all(c.values + c.errors <= 4 * math.pi)
    lines = c.to_csv().splitlines()
    assert lines[0] == "tau,V_tilde,err,bound_4pi_margin" and len(lines) == 5


def test_integrand_closed_form():
    # sphere at the origin: integrand = tau^-1 e^-l J with |v|_{g(0)} = 2 |v|_chart
    v = np.array([0.3, 0.0])
    val = integrand(parse_model("sphere:2:1"), np.zeros(2), v, 0.5)
    speed = 0.6
    exact = math.exp(-oracles.sphere_l_of_speed(speed, 0.5)) * oracles.sphere_J(speed, 0.5) / 0.5
    assert val == pytest.approx(exact, rel=1e-8)


def test_mask_is_antitone_and_radially_monotone():
    m = parse_model("sphere:2:1")
    g = build_mask(m, np.zeros(2), make_grid(m, np.zeros(2), n_radial=32), TAUS)
    mask = g.mask
    assert np.all(mask[1:] <= mask[:-1])
    assert np.all(mask[:, :, 1:] <= mask[:, :, :-1])
    # the conjugate radius pi / (sqrt 2 alpha) shrinks as tau grows
    for t, tau in enumerate(TAUS):
        rc = math.pi / (math.sqrt(2) * oracles.sphere_alpha(tau))
        on = g.radii[mask[t, 0]]
        assert on.max() < rc


def test_full_grid_matches_symmetric_grid():
    m = parse_model("cigar:1")
    p = np.zeros(2)
    a = reduced_volume(m, p, 1.0)[0]
    b = reduced_volume(m, p, 1.0, symmetry="none")[0]
    assert a == pytest.approx(b, rel=1e-10)


def test_difference_integral_on_sphere():
    m = parse_model("sphere:2:1")
    integral, *_ = difference_integral(m, np.zeros(2), 0.5, 1.0)
    dv = SPHERE_V[2] - SPHERE_V[1]
    assert dv + integral == pytest.approx(0.0, abs=0.01 * abs(dv))


def test_masked_sum_weights_cover_gaussian():
    m = parse_model("flat:2")
    g = build_mask(m, np.zeros(2), make_grid(m, np.zeros(2), symmetry="none"), [1.0])
    assert masked_sum(g, np.ones_like(g.Jt))[0] == pytest.approx(math.pi * 36.0, rel=1e-12)
