"""L-geodesics in the t = sqrt(s) parametrization, their L-energy, the
L-exponential map and its Jacobian.

Normalization: the L-geodesic of v starts with dgamma/dt = 2v at t = 0, so on
flat space exp(v) = p + 2 sqrt(tau) v and J(tau) = (2 sqrt(tau))^n.  The
Gaussian limit of tau^(-n/2) e^(-l) J is then 2^n exp(-|v|^2); substituting
v = w/2 gives the exp(-|w|^2/4) form with initial velocity w.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from . import _kernels as K
from .errors import BlowUp, OutOfChart, TimeOutOfRange
from .flow_models import FlowModel, metric_at, to_chart

RTOL = 1e-9
ATOL = 1e-12
MAX_STEPS = 1_000_000


@dataclass
class BatchShot:
    """Raw batched integration output; ``states`` is (batch, knots, dim)."""

    t: np.ndarray
    states: np.ndarray
    charts: np.ndarray
    status: np.ndarray
    n: int

    @property
    def x(self):
        return self.states[..., : self.n]

    @property
    def velocity(self):
        return self.states[..., self.n: 2 * self.n]

    @property
    def energy(self):
        return self.states[..., 2 * self.n]

    @property
    def dxdv(self):
        n = self.n
        return self.states[..., 2 * n + 1: 2 * n + 1 + n * n].reshape(self.states.shape[:-1] + (n, n))

    @property
    def dudv(self):
        n = self.n
        return self.states[..., 2 * n + 1 + n * n:].reshape(self.states.shape[:-1] + (n, n))


def shoot_batch(model: FlowModel, p, vs, t_knots, *, chart: int = 0, t0: float = 0.0,
                with_jacobi: bool = False, rtol: float = RTOL, atol: float = ATOL) -> BatchShot:
    """Integrate the L-geodesics of every row of ``vs`` from p (at t0) and
    record them at ``t_knots``.  Failed rows carry a nonzero status."""
    n = model.dim
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    b = vs.shape[0]
    dim = 2 * n + 1 + (2 * n * n if with_jacobi else 0)
    y0 = np.zeros((b, dim))
    y0[:, :n] = np.asarray(p, dtype=float)
    y0[:, n:2 * n] = 2.0 * vs
    if with_jacobi:
        y0[:, 2 * n + 1 + n * n:] = (2.0 * np.eye(n)).ravel()
    knots = np.ascontiguousarray(t_knots, dtype=float)
    status, states, charts = K.integrate_batch(
        model.kind, n, model.block, model.param_array, model.has_charts,
        np.full(b, chart, dtype=np.int64), y0, float(t0), knots,
        with_jacobi, K.MODE_L, 0.0, rtol, atol, MAX_STEPS)
    return BatchShot(knots, states, charts, status, n)


def geodesic_batch(model: FlowModel, q, ws, tau: float, *, chart: int = 0,
                   with_jacobi: bool = True, rtol: float = 1e-11, atol: float = 1e-13) -> BatchShot:
    """Ordinary g(tau)-geodesics from q with initial velocities ``ws`` over
    parameter [0, 1]; the energy slot accumulates the squared length."""
    n = model.dim
    ws = np.atleast_2d(np.asarray(ws, dtype=float))
    b = ws.shape[0]
    dim = 2 * n + 1 + (2 * n * n if with_jacobi else 0)
    y0 = np.zeros((b, dim))
    y0[:, :n] = np.asarray(q, dtype=float)
    y0[:, n:2 * n] = ws
    if with_jacobi:
        y0[:, 2 * n + 1 + n * n:] = np.eye(n).ravel()
    status, states, charts = K.integrate_batch(
        model.kind, n, model.block, model.param_array, model.has_charts,
        np.full(b, chart, dtype=np.int64), y0, 0.0, np.array([1.0]),
        with_jacobi, K.MODE_GEODESIC, float(tau), rtol, atol, MAX_STEPS)
    return BatchShot(np.array([1.0]), states, charts, status, n)


def orthonormal_det(model: FlowModel, x, tau: float, chart: int = 0) -> float:
    """sqrt(det g): the factor turning coordinate determinants into
    determinants with respect to g(tau)-orthonormal frames."""
    return metric_at(model, x, tau, chart)[2]


@dataclass
class LGeodesic:
    """A shot L-geodesic sampled at t-knots (t = sqrt(s))."""

    model: FlowModel
    base: np.ndarray
    base_chart: int
    v: np.ndarray
    eps: float
    t: np.ndarray
    charts: np.ndarray
    x: np.ndarray
    velocity: np.ndarray  # dgamma/dt
    energy: np.ndarray  # partial L-energy from t0 to each knot
    dxdv: np.ndarray | None = None
    dudv: np.ndarray | None = None
    J: np.ndarray | None = None

    @property
    def tau(self):
        return self.t**2

    @property
    def endpoint(self):
        return self.x[-1], int(self.charts[-1])

    def l_values(self):
        """Reduced length L / (2 sqrt(tau)) at each knot (tau > 0)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.energy / (2.0 * self.t)

    def speed(self):
        """|dgamma/dt| in g(s) at each knot."""
        out = np.empty(len(self.t))
        for i, (x, c, u) in enumerate(zip(self.x, self.charts, self.velocity)):
            g = metric_at(self.model, x, self.t[i] ** 2, int(c))[0]
            out[i] = np.sqrt(u @ g @ u)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.model.dim
        header = ["t", "chart_id"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)]
        header.append("partial_energy")
        if self.J is not None:
            header.append("J")
        w.writerow(header)
        for i in range(len(self.t)):
            row = [repr(float(self.t[i])), int(self.charts[i])]
            row += [repr(float(c)) for c in self.x[i]] + [repr(float(c)) for c in self.velocity[i]]
            row.append(repr(float(self.energy[i])))
            if self.J is not None:
                row.append(repr(float(self.J[i])))
            w.writerow(row)
        return buf.getvalue()


def _raise_status(status: int, what: str):
    if status == K.BLOWUP:
        raise BlowUp(f"{what}: step size underflow or divergence")
    if status == K.MAX_STEPS:
        raise BlowUp(f"{what}: step budget exhausted")


def shoot(model: FlowModel, p, v, tau_end: float, eps: float = 0.0, with_jacobi: bool = False, *,
          chart: int = 0, n_knots: int = 65, t_knots=None,
          rtol: float = RTOL, atol: float = ATOL) -> LGeodesic:
    """Shoot the L-geodesic with gamma(eps) = p and dgamma/dt = 2v at
    t = sqrt(eps), up to tau_end.

    With ``with_jacobi`` the Jacobi columns dx/dv are transported along and
    ``J`` holds the Jacobian of v -> gamma(tau) measured in g(eps)_p- and
    g(tau)-orthonormal frames.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if not model.chart(chart).contains(p):
        raise OutOfChart(f"{p} is outside chart {chart}")
    if not (0.0 <= eps < tau_end < model.time_horizon):
        raise TimeOutOfRange(f"need 0 <= eps < tau_end < T, got eps={eps}, tau_end={tau_end}")
    if not np.all(np.isfinite(v)):
        raise BlowUp("initial vector is not finite")
    t0 = np.sqrt(eps)
    if t_knots is None:
        t_knots = np.linspace(t0, np.sqrt(tau_end), n_knots)
    else:
        t_knots = np.asarray(t_knots, dtype=float)
    shot = shoot_batch(model, p, v[None, :], t_knots, chart=chart, t0=t0,
                       with_jacobi=with_jacobi, rtol=rtol, atol=atol)
    _raise_status(int(shot.status[0]), "shoot")
    geo = LGeodesic(model, p, chart, v, eps, t_knots, shot.charts[0], shot.x[0].copy(),
                    shot.velocity[0].copy(), shot.energy[0].copy())
    if with_jacobi:
        geo.dxdv = shot.dxdv[0].copy()
        geo.dudv = shot.dudv[0].copy()
        geo.J = jacobian_from_columns(model, p, chart, eps, geo.x, geo.charts, geo.t, geo.dxdv)
    return geo


def jacobian_from_columns(model, p, p_chart, eps, xs, charts, ts, dxdv):
    base = orthonormal_det(model, p, eps, p_chart)
    out = np.empty(len(ts))
    for i in range(len(ts)):
        out[i] = orthonormal_det(model, xs[i], ts[i] ** 2, int(charts[i])) * np.linalg.det(dxdv[i]) / base
    return out


def lexp(model: FlowModel, p, v, tau: float, *, chart: int = 0):
    """exp_p^{L,tau}(v) as (coords, chart)."""
    geo = shoot(model, p, v, tau, chart=chart, t_knots=np.array([np.sqrt(tau)]))
    return geo.endpoint


def jacobian(model: FlowModel, p, v, tau_grid, *, chart: int = 0) -> np.ndarray:
    """J(tau)(v) on ``tau_grid`` (positive, increasing)."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    geo = shoot(model, p, v, float(tau_grid[-1]), with_jacobi=True, chart=chart,
                t_knots=np.sqrt(tau_grid))
    return geo.J


def velocity_drift_bound(geo: LGeodesic, grad_bound: float, ric_bound: float):
    """Check |d|gamma'|/dt| <= 2 K t^2 + 2 C t |gamma'| a posteriori.

    K bounds |grad R| and C bounds |Ric| on the visited region.  The C-term
    comes from the time derivative of the metric in |gamma'|_{g(t^2)}.
    Returns the worst ratio of measured drift to the bound (<= 1 passes).
    """
    sp = geo.speed()
    t = geo.t
    # central differences at interior knots; the bound vanishes at t = 0
    d = np.gradient(sp, t)[1:-1]
    t, spi = t[1:-1], sp[1:-1]
    bound = 2.0 * grad_bound * t**2 + 2.0 * ric_bound * t * spi
    tiny = 1e-9 * max(1.0, float(np.max(sp)))
    return float(np.max((np.abs(d) - tiny) / np.maximum(bound, 1e-300)).clip(min=0.0))


@dataclass
class PointPath:
    """A curve sampled at increasing t-knots in a single chart.

    ``velocity`` (dx/dt samples) is optional; when given, the curve is
    interpolated by cubic Hermite pieces, otherwise by a cubic spline.
    """

    t: np.ndarray
    x: np.ndarray
    chart: int = 0
    velocity: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("knots must be strictly increasing")

    def interpolant(self):
        if self.velocity is not None:
            return CubicHermiteSpline(self.t, self.x, np.asarray(self.velocity, dtype=float), axis=0)
        return CubicSpline(self.t, self.x, axis=0)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


def l_energy(model: FlowModel, path: PointPath, a: float, b: float) -> float:
    """L_{a,b} = int_{sqrt a}^{sqrt b} (|gamma'|^2/2 + 2 R t^2) dt by composite
    Gauss quadrature over the path's knot intervals."""
    ta, tb = np.sqrt(a), np.sqrt(b)
    if ta < path.t[0] - 1e-12 or tb > path.t[-1] + 1e-12:
        raise ValueError("path does not cover [sqrt(a), sqrt(b)]")
    f = path.interpolant()
    df = f.derivative()
    edges = path.t[(path.t > ta) & (path.t < tb)]
    edges = np.concatenate([[ta], edges, [tb]])
    total = 0.0
    pa = model.param_array
    for lo, hi in zip(edges[:-1], edges[1:]):
        ts = 0.5 * (hi - lo) * _GL_X + 0.5 * (hi + lo)
        xs, us = f(ts), df(ts)
        for t, x, u, w in zip(ts, xs, us, _GL_W):
            if not model.chart(path.chart).contains(x):
                raise OutOfChart(f"path leaves chart {path.chart} at t={t}")
            phi, *_r, R, _dR, _hR, c_line = K.block_terms(model.kind, model.dim, model.block, pa,
                                                         np.ascontiguousarray(x[: model.block]), t * t)
            kb = model.block
            uu = np.exp(2.0 * phi) * float(u[:kb] @ u[:kb]) + c_line * float(u[kb:] @ u[kb:])
            total += 0.5 * (hi - lo) * w * (0.5 * uu + 2.0 * t * t * R)
    return float(total)


def endpoint_in_chart(model: FlowModel, x, chart: int, target: int):
    return to_chart(model, x, chart, target)
