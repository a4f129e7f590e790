"""Fixed-time Riemannian utilities: inner products, distances, volume density.

Distances on flat space, round spheres and the round cylinder are closed
forms.  The cigar has no convenient closed form, so its distance comes from a
geodesic boundary-value solve (multistart shooting plus Newton).
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .errors import BVPNoConvergence
from .flow_models import FlowModel, embed_sphere, metric_at, to_chart
from .lgeodesic import PointPath, geodesic_batch  # noqa: F401  (re-exported)

BVP_DIRECTIONS = 16
BVP_TOL = 1e-11


def inner(model: FlowModel, q, tau: float, u, w, chart: int = 0) -> float:
    """g(tau)_q(u, w) for chart vectors u and w."""
    g = metric_at(model, q, tau, chart)[0]
    return float(np.asarray(u, dtype=float) @ g @ np.asarray(w, dtype=float))


def norm(model: FlowModel, q, tau: float, u, chart: int = 0) -> float:
    return float(np.sqrt(inner(model, q, tau, u, u, chart)))


def volume_density(model: FlowModel, q, tau: float, chart: int = 0) -> float:
    """sqrt(det g(tau)) in chart coordinates."""
    return metric_at(model, q, tau, chart)[2]


def _sphere_radius(model: FlowModel, tau: float) -> float:
    a, r0 = model.params
    ns = model.dim if model.kind == K.SPHERE else 2
    return float(np.sqrt((r0 * r0 + 2.0 * (ns - 1) * a * tau) / a))


def _sphere_angle(y1, c1, y2, c2) -> float:
    e1, e2 = embed_sphere(y1, c1), embed_sphere(y2, c2)
    s = np.linalg.norm(e1 - e2)
    # chord length s = 2 sin(angle / 2), stable in every dimension
    return float(2.0 * np.arcsin(min(1.0, 0.5 * s)))


def riemannian_distance(model: FlowModel, q1, q2, tau: float, *, chart1: int = 0,
                        chart2: int = 0) -> float:
    """d_{g(tau)}(q1, q2)."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    metric_at(model, q1, tau, chart1)  # domain and time validation
    metric_at(model, q2, tau, chart2)
    a = model.scale
    if model.kind == K.FLAT:
        return float(np.linalg.norm(q1 - q2) / np.sqrt(a))
    if model.kind == K.SPHERE:
        return _sphere_radius(model, tau) * _sphere_angle(q1, chart1, q2, chart2)
    if model.kind == K.CYLINDER:
        k = model.block
        ang = _sphere_angle(q1[:k], chart1, q2[:k], chart2)
        dz = (q1[k:] - q2[k:]) / np.sqrt(a)
        return float(np.hypot(_sphere_radius(model, tau) * ang, np.linalg.norm(dz)))
    return geodesic_bvp(model, q1, q2, tau)[0]


def geodesic_bvp(model: FlowModel, q1, q2, tau: float, *, directions: int = BVP_DIRECTIONS,
                 max_iter: int = 40, tol: float = BVP_TOL):
    """Shortest g(tau)-geodesic from q1 to q2 (single-chart models).

    Newton on w -> exp_q1(w) - q2 from ``directions`` starting velocities
    (the straight chart ray and rotations of it, at a few lengths).  Returns
    (length, initial velocity) of the shortest converged solution.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    n = model.dim
    d0 = q2 - q1
    if np.linalg.norm(d0) == 0.0:
        return 0.0, np.zeros(n)
    # a geodesic on [0, 1] has speed equal to its length; start from the
    # g(tau)-length of the straight chart segment
    gx, gw = np.polynomial.legendre.leggauss(16)
    seg = sum(0.5 * wi * np.sqrt(d0 @ metric_at(model, q1 + 0.5 * (xi + 1.0) * d0, tau)[0] @ d0)
              for xi, wi in zip(gx, gw))
    d0 = d0 * seg / np.sqrt(d0 @ metric_at(model, q1, tau)[0] @ d0)
    seeds = [d0]
    rng = np.random.default_rng(12345)
    while len(seeds) < directions:
        theta = 2.0 * np.pi * len(seeds) / directions
        if n == 2:
            qmat = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        else:
            qmat, _ = np.linalg.qr(rng.normal(size=(n, n)))
        seeds.append((qmat @ d0) * (0.6 + 0.8 * rng.random()))
    w = np.array(seeds)
    best = (np.inf, None)
    best_res = np.inf
    active = np.ones(len(w), dtype=bool)
    res_norm = np.full(len(w), np.inf)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        shot = geodesic_batch(model, q1, w[idx], tau)
        for j, i in enumerate(idx):
            if shot.status[j] != K.OK:
                active[i] = False
                continue
            f = shot.x[j, -1] - q2
            r = float(np.linalg.norm(f))
            if r < tol * max(1.0, np.linalg.norm(q2)):
                length = float(np.sqrt(max(shot.energy[j, -1], 0.0)))
                if length < best[0]:
                    best = (length, w[i].copy())
                active[i] = False
                res_norm[i] = r
                continue
            try:
                step = np.linalg.solve(shot.dxdv[j, -1], f)
            except np.linalg.LinAlgError:
                active[i] = False
                continue
            lim = 0.5 * (1.0 + np.linalg.norm(w[i]))
            sn = np.linalg.norm(step)
            if sn > lim:
                step *= lim / sn
            w[i] -= step
            res_norm[i] = r
        best_res = min(best_res, float(np.min(res_norm)))
    if best[1] is None:
        raise BVPNoConvergence(f"geodesic BVP from {q1} to {q2} failed", best_res)
    return best


def chart_vector(model: FlowModel, x, chart: int, target: int, u):
    """Push a tangent vector at chart point x into another chart."""
    if chart == target:
        return np.asarray(u, dtype=float)
    d = model.chart(chart).transition_jacobian(x, model.chart(target))
    return d @ np.asarray(u, dtype=float)


def same_point_distance_chart(model: FlowModel, x1, c1, x2, c2) -> float:
    """Coordinate distance of two atlas points measured in the chart of x1."""
    return float(np.linalg.norm(np.asarray(x1) - to_chart(model, x2, c2, c1)))
