"""The reduced distance l(q, tau): multistart shooting, a direct
path-energy minimizer used as an independent oracle, spatial gradient,
tau-derivative and the global minimum over M.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import _kernels as kern
from ._rng import DEFAULT_SEED, stream
from .errors import (BVPNoConvergence, CutLocusSuspected, LineSearchFailure, OutOfChart,
                     TimeOutOfRange, ToleranceViolation)
from .flow_models import FlowModel, canonical_point, metric_at, to_chart
from .lgeodesic import ATOL, RTOL, shoot_batch

N_SEEDS = 32
NEWTON_MAX_ITER = 60
POSITION_TOL = 1e-10
BRANCH_GAP = 1e-6
CROSS_CHECK_RTOL = 1e-4


@dataclass
class Branch:
    v: np.ndarray
    energy: float
    l: float
    velocity: np.ndarray  # dgamma/dt at the endpoint, in the chart of q
    jacobian_det: float


@dataclass
class LResult:
    """Outcome of solving for l(q, tau)."""

    l_value: float
    minimizer_v: np.ndarray
    branches: list
    method: str
    tau: float
    q: np.ndarray
    q_chart: int
    p: np.ndarray
    p_chart: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def best(self) -> Branch:
        return self.branches[0]

    @property
    def branch_gap(self) -> float:
        if len(self.branches) < 2:
            return np.inf
        return self.branches[1].l - self.branches[0].l

    @property
    def gradient(self) -> np.ndarray:
        """gamma-dot(tau) = dgamma/ds of the minimizer, i.e. grad l."""
        return self.best.velocity / (2.0 * np.sqrt(self.tau))


def _validate(model: FlowModel, p, p_chart, q, q_chart, tau):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    for x, c in ((p, p_chart), (q, q_chart)):
        if not model.chart(c).contains(x):
            raise OutOfChart(f"{x} is outside chart {c} of {model.name}")
    if not (0.0 < tau < model.time_horizon):
        raise TimeOutOfRange(f"tau={tau} outside (0, {model.time_horizon})")
    return p, q


def ray_seed(model: FlowModel, p, p_chart, q, q_chart, tau) -> np.ndarray:
    """Flat-space guess (q - p) / (2 sqrt tau) in the chart of p."""
    try:
        qp = to_chart(model, q, q_chart, p_chart)
    except OutOfChart:
        return np.zeros(model.dim)
    if not np.all(np.isfinite(qp)) or np.linalg.norm(qp) > 1e6:
        return np.zeros(model.dim)
    return (qp - p) / (2.0 * np.sqrt(tau))


def multistart_seeds(model: FlowModel, p, p_chart, q, q_chart, tau, n_seeds, seed, extra=()):
    """Seeds: the chart ray at several lengths, its reversal, v = 0 and
    random perturbations drawn from a stream keyed by the problem."""
    n = model.dim
    ray = ray_seed(model, p, p_chart, q, q_chart, tau)
    out = [np.asarray(e, dtype=float) for e in extra]
    out += [ray, 0.5 * ray, 1.5 * ray, np.zeros(n), -ray, -2.0 * ray]
    rng = stream(seed, "solve_l", model.name, p, p_chart, q, q_chart, float(tau))
    scale = 0.5 + np.linalg.norm(ray)
    while len(out) < n_seeds:
        out.append(ray + scale * rng.normal(size=n))
    return np.array(out[:max(n_seeds, len(extra))])


def _to_charts(model, xs, charts, targets, dxdv=None, vel=None):
    """Express endpoints (and optionally dx/dv, velocity) in per-row target
    charts.  Rows whose transition fails are flagged in ``ok``."""
    xs = np.array(xs, dtype=float)
    dx = None if dxdv is None else np.array(dxdv, dtype=float)
    ve = None if vel is None else np.array(vel, dtype=float)
    ok = np.ones(len(xs), dtype=bool)
    for i in range(len(xs)):
        c, tgt = int(charts[i]), int(targets[i])
        if c == tgt:
            continue
        src, dst = model.chart(c), model.chart(tgt)
        y = xs[i, : src.block]
        if not np.all(np.isfinite(xs[i])) or float(y @ y) < 1e-300:
            ok[i] = False
            continue
        d = src.transition_jacobian(xs[i], dst)
        xs[i] = src.transition(xs[i], dst)
        if dx is not None:
            dx[i] = d @ dx[i]
        if ve is not None:
            ve[i] = d @ ve[i]
    return xs, dx, ve, ok


def newton_shoot(model: FlowModel, p, p_chart, q, q_chart, tau, seeds, *,
                 rtol=RTOL, atol=ATOL, max_iter=NEWTON_MAX_ITER, tol=POSITION_TOL):
    """Damped Newton on v -> exp^{L,tau}_p(v) - q for a batch of seeds.

    ``q`` is either one target point or one target per seed (rows), with
    ``q_chart`` a scalar or per-seed array.  Returns (converged mask, v,
    energy, endpoint velocity, det dx/dv, best residual per seed); endpoint
    quantities are expressed in the target chart.
    """
    v = np.array(seeds, dtype=float)
    b, n = v.shape
    q = np.asarray(q, dtype=float)
    qs = np.broadcast_to(q, (b, n)) if q.ndim == 1 else q
    qch = np.broadcast_to(np.asarray(q_chart, dtype=np.int64), (b,))
    knots = np.array([np.sqrt(tau)])
    lam = np.ones(b)
    res = np.full(b, np.inf)
    active = np.ones(b, dtype=bool)
    conv = np.zeros(b, dtype=bool)
    energy = np.full(b, np.nan)
    vel = np.full((b, n), np.nan)
    det = np.full(b, np.nan)
    step = np.zeros((b, n))
    thresh = tol * np.maximum(1.0, np.linalg.norm(qs, axis=1))
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        shot = shoot_batch(model, p, v[idx], knots, chart=p_chart, with_jacobi=True,
                           rtol=rtol, atol=atol)
        xs, dx, ve, ok = _to_charts(model, shot.x[:, -1], shot.charts[:, -1], qch[idx],
                                    shot.dxdv[:, -1], shot.velocity[:, -1])
        for j, i in enumerate(idx):
            good = ok[j] and shot.status[j] == kern.OK and np.all(np.isfinite(xs[j]))
            r = float(np.linalg.norm(xs[j] - qs[i])) if good else np.inf
            if not good or (r > res[i] and np.isfinite(res[i])):
                # reject: back off along the previous step
                if not np.isfinite(res[i]) or lam[i] < 1e-6:
                    active[i] = False
                    continue
                v[i] += lam[i] * step[i]
                lam[i] *= 0.5
                v[i] -= lam[i] * step[i]
                continue
            res[i] = r
            if r < thresh[i]:
                conv[i] = True
                active[i] = False
                energy[i] = shot.energy[j, -1]
                vel[i] = ve[j]
                det[i] = np.linalg.det(dx[j])
                continue
            try:
                s = np.linalg.solve(dx[j], xs[j] - qs[i])
            except np.linalg.LinAlgError:
                active[i] = False
                continue
            cap = 0.5 * (1.0 + np.linalg.norm(v[i]))
            sn = float(np.linalg.norm(s))
            if sn > cap:
                s *= cap / sn
            step[i] = s
            lam[i] = min(1.0, 2.0 * lam[i])
            v[i] -= lam[i] * s
    return conv, v, energy, vel, det, res


def _cluster(model, conv, v, energy, vel, det, tau):
    order = np.argsort(np.where(conv, energy, np.inf))
    branches = []
    for i in order:
        if not conv[i]:
            break
        if any(np.linalg.norm(v[i] - br.v) < 1e-6 * (1.0 + np.linalg.norm(br.v)) for br in branches):
            continue
        branches.append(Branch(v[i].copy(), float(energy[i]), float(energy[i] / (2.0 * np.sqrt(tau))),
                               vel[i].copy(), float(det[i])))
    return branches


def solve_l(model: FlowModel, p, q, tau: float, *, p_chart: int = 0, q_chart: int = 0,
            n_seeds: int = N_SEEDS, seeds=(), seed: int = DEFAULT_SEED,
            rtol: float = RTOL, atol: float = ATOL, tol: float = POSITION_TOL,
            cross_check: bool = False) -> LResult:
    """l(q, tau) = min over L-geodesics from p to q of L / (2 sqrt tau).

    All converged distinct shooting solutions are kept as branches sorted by
    energy.  ``seeds`` are tried first (warm starts); the remaining budget is
    filled by :func:`multistart_seeds`.  With ``cross_check`` the value is
    compared against :func:`path_oracle_extrapolated`.
    """
    p, q = _validate(model, p, p_chart, q, q_chart, tau)
    starts = multistart_seeds(model, p, p_chart, q, q_chart, tau, n_seeds, seed, extra=seeds)
    conv, v, energy, vel, det, res = newton_shoot(model, p, p_chart, q, q_chart, tau, starts,
                                                  rtol=rtol, atol=atol, tol=tol)
    if not np.any(conv):
        raise BVPNoConvergence(f"no seed reached {q} at tau={tau} on {model.name}",
                               float(np.min(res)))
    branches = _cluster(model, conv, v, energy, vel, det, tau)
    out = LResult(branches[0].l, branches[0].v.copy(), branches, "shooting", float(tau), q,
                  int(q_chart), p, int(p_chart),
                  {"seeds": len(starts), "converged": int(conv.sum()),
                   "max_residual": float(np.max(res[conv]))})
    if cross_check:
        ref = path_oracle_extrapolated(model, p, q, tau, p_chart=p_chart, q_chart=q_chart, seed=seed)
        out.diagnostics["path_oracle"] = ref
        scale = max(abs(out.l_value), 1e-8)
        if abs(ref - out.l_value) > CROSS_CHECK_RTOL * scale:
            raise ToleranceViolation(
                f"shooting l={out.l_value:.10g} vs path oracle {ref:.10g} at q={q}, tau={tau}")
    return out


def l_bracket(model: FlowModel, p, q, tau: float, *, p_chart: int = 0, q_chart: int = 0):
    """Lower and upper bounds for l(q, tau) in terms of d(p, q, 0) when
    Ric >= 0 and Ric <= C g (C = model.ricci_upper_bound())."""
    from .geometry import riemannian_distance

    d = riemannian_distance(model, p, q, 0.0, chart1=p_chart, chart2=q_chart)
    c_up = model.ricci_upper_bound()
    lo = d * d / (4.0 * tau)
    hi = np.exp(2.0 * c_up * tau) * d * d / (4.0 * tau) + model.dim * c_up * tau / 3.0
    return lo, hi


# ---------------------------------------------------------------- path oracle

def _oracle_chart(model: FlowModel, p, p_chart, q, q_chart):
    """A chart holding both endpoints, preferring the smaller coordinates."""
    if not model.has_charts:
        return np.asarray(p, float), np.asarray(q, float), p_chart
    best = None
    for c in (0, 1):
        try:
            pc = to_chart(model, p, p_chart, c)
            qc = to_chart(model, q, q_chart, c)
        except OutOfChart:
            continue
        k = model.block
        size = max(np.linalg.norm(pc[:k]), np.linalg.norm(qc[:k]))
        if best is None or size < best[0]:
            best = (size, pc, qc, c)
    if best is None:
        raise OutOfChart("no chart holds both endpoints")
    return best[1], best[2], best[3]


def _minimize_path(model: FlowModel, pc, qc, tau, K, inits):
    n = model.dim
    tk = np.linspace(0.0, np.sqrt(tau), K + 1)
    pa = model.param_array

    def fun(z):
        pts = np.empty((K + 1, n))
        pts[0], pts[-1] = pc, qc
        pts[1:-1] = z.reshape(K - 1, n)
        e, g = kern.path_energy(model.kind, n, model.block, pa, pts, tk)
        return e, g[1:-1].ravel()

    best = (np.inf, None)
    for z0 in inits:
        r = minimize(fun, np.ravel(z0), jac=True, method="L-BFGS-B",
                     options={"maxiter": 20000, "maxcor": 30, "ftol": 1e-15, "gtol": 1e-11})
        if np.isfinite(r.fun) and r.fun < best[0]:
            best = (float(r.fun), r.x.reshape(K - 1, n))
    if best[1] is None:
        raise LineSearchFailure("path energy minimization produced no finite value")
    pts = np.vstack([pc, best[1], qc])
    return best[0], pts


def _oracle_inits(model, pc, qc, tau, K, n_random, seed, key):
    lam = np.linspace(0.0, 1.0, K + 1)
    straight = pc[None, :] + lam[:, None] * (qc - pc)[None, :]
    inits = [straight[1:-1]]
    rng = stream(seed, "path_oracle", model.name, *key, float(tau), K)
    scale = 0.2 * (1.0 + np.linalg.norm(qc - pc))
    for _ in range(n_random):
        bump = np.sin(np.pi * lam[1:-1])[:, None] * rng.normal(size=(1, model.dim)) * scale
        inits.append(straight[1:-1] + bump)
    return inits


def _oracle(model, p, q, tau, K, p_chart, q_chart, n_random, seed):
    if K < 16:
        raise ValueError("path_oracle needs K >= 16")
    p, q = _validate(model, p, p_chart, q, q_chart, tau)
    pc, qc, _ = _oracle_chart(model, p, p_chart, q, q_chart)
    inits = _oracle_inits(model, pc, qc, tau, K, n_random, seed, (p, q))
    return _minimize_path(model, pc, qc, tau, K, inits), (pc, qc)


def path_oracle(model: FlowModel, p, q, tau: float, K: int = 64, *, p_chart: int = 0,
                q_chart: int = 0, n_random: int = 8, seed: int = DEFAULT_SEED) -> float:
    """min over piecewise-linear chart curves with K segments (uniform in
    t = sqrt s) of their L-energy, divided by 2 sqrt(tau).

    Quasi-Newton descent starts from the straight chart segment and from
    ``n_random`` randomly bent copies of it.
    """
    (e, _pts), _ = _oracle(model, p, q, tau, K, p_chart, q_chart, n_random, seed)
    return e / (2.0 * np.sqrt(tau))


def path_oracle_extrapolated(model: FlowModel, p, q, tau: float, K: int = 64, *, p_chart: int = 0,
                             q_chart: int = 0, n_random: int = 8,
                             seed: int = DEFAULT_SEED) -> float:
    """Richardson combination (4 o(2K) - o(K)) / 3 removing the O(K^-2)
    discretization error of the piecewise-linear oracle.  The 2K problem
    starts from the K optimum with midpoints inserted."""
    (e1, pts), (pc, qc) = _oracle(model, p, q, tau, K, p_chart, q_chart, n_random, seed)
    fine = np.empty((2 * K + 1, model.dim))
    fine[::2] = pts
    fine[1::2] = 0.5 * (pts[:-1] + pts[1:])
    e2, _ = _minimize_path(model, pc, qc, tau, 2 * K, [fine[1:-1]])
    return (4.0 * e2 - e1) / 3.0 / (2.0 * np.sqrt(tau))


# ---------------------------------------------------------------- derivatives

def grad_l(model: FlowModel, p, q, tau: float, *, p_chart: int = 0, q_chart: int = 0,
           result: LResult | None = None, **kw) -> np.ndarray:
    """grad l(q, tau) as a chart vector: the velocity d gamma / ds of the
    minimal L-geodesic at s = tau."""
    res = result if result is not None else solve_l(model, p, q, tau, p_chart=p_chart,
                                                    q_chart=q_chart, **kw)
    if res.branch_gap < BRANCH_GAP:
        raise CutLocusSuspected(f"branch gap {res.branch_gap:.3g} at q={res.q}, tau={tau}")
    return res.gradient


def warm_l(model: FlowModel, res: LResult, q, tau: float, *, q_chart: int | None = None,
           n_seeds: int = 4, **kw) -> LResult:
    """solve_l near a solved instance, seeded from its minimizer."""
    qc = res.q_chart if q_chart is None else q_chart
    return solve_l(model, res.p, q, tau, p_chart=res.p_chart, q_chart=qc,
                   seeds=[res.minimizer_v], n_seeds=n_seeds, **kw)


def l_tau(model: FlowModel, p, q, tau: float, h: float | None = None, *, p_chart: int = 0,
          q_chart: int = 0, result: LResult | None = None, **kw) -> float:
    """Central difference of l(q, .) at tau with step h (default 1e-3 tau)."""
    h = 1e-3 * tau if h is None else float(h)
    if h > 1e-3 * tau * (1 + 1e-12) or tau - h <= 0.0 or tau + h >= model.time_horizon:
        raise TimeOutOfRange(f"need h <= 1e-3 tau and tau +- h in (0, T); got tau={tau}, h={h}")
    res = result if result is not None else solve_l(model, p, q, tau, p_chart=p_chart,
                                                    q_chart=q_chart, **kw)
    up = warm_l(model, res, res.q, tau + h, **kw).l_value
    dn = warm_l(model, res, res.q, tau - h, **kw).l_value
    return (up - dn) / (2.0 * h)


# ---------------------------------------------------------------- min over M

def min_l(model: FlowModel, p, tau: float, *, p_chart: int = 0, n_random: int = 16,
          seed: int = DEFAULT_SEED, rtol: float = RTOL, atol: float = ATOL):
    """Minimize l(., tau) over M.

    Since every q is reached by a minimal L-geodesic, min_q l(q, tau) equals
    the minimum over v of L(gamma_v) / (2 sqrt tau); the latter is smooth in
    v with gradient (dx/dv)^T g(tau) gamma'(sqrt tau).  Multistart from v = 0
    (the base point) and ``n_random`` vectors with |v| <= 2, i.e. endpoints
    within about 4 sqrt(tau) of p.  Returns (q*, chart, l*).
    """
    p = np.asarray(p, dtype=float)
    if not (0.0 < tau < model.time_horizon):
        raise TimeOutOfRange(f"tau={tau} outside (0, {model.time_horizon})")
    n = model.dim
    knots = np.array([np.sqrt(tau)])
    e0 = np.sqrt(np.diag(metric_at(model, p, 0.0, p_chart)[0]))
    norm = 2.0 * np.sqrt(tau)

    def fun(v):
        shot = shoot_batch(model, p, v[None, :], knots, chart=p_chart, with_jacobi=True,
                           rtol=rtol, atol=atol)
        if shot.status[0] != kern.OK:
            return np.inf, np.zeros(n)
        x, c = shot.x[0, -1], int(shot.charts[0, -1])
        g = metric_at(model, x, tau, c)[0]
        grad = shot.dxdv[0, -1].T @ g @ shot.velocity[0, -1]
        return shot.energy[0, -1] / norm, grad / norm

    rng = stream(seed, "min_l", model.name, p, p_chart, float(tau))
    starts = [np.zeros(n)]
    for _ in range(n_random):
        d = rng.normal(size=n)
        d *= 2.0 * rng.random() ** (1.0 / n) / np.linalg.norm(d)
        starts.append(d / e0)
    best = (np.inf, None)
    for v0 in starts:
        r = minimize(fun, v0, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 500})
        if np.isfinite(r.fun) and r.fun < best[0]:
            best = (float(r.fun), r.x)
    if best[1] is None:
        raise BVPNoConvergence("min_l: every start failed")
    shot = shoot_batch(model, p, best[1][None, :], knots, chart=p_chart, rtol=rtol, atol=atol)
    x, c = canonical_point(model, shot.x[0, -1], int(shot.charts[0, -1]))
    return x, c, best[0]
