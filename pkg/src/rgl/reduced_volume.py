"""Reduced volume by quadrature over the tangent space at the base point.

With xi the initial vector measured in a g(0)_p-orthonormal frame, the
reduced volume is the integral over the injectivity domain of

    J~(tau)(xi) = tau^(-n/2) exp(-l(xi, tau)) J(tau)(xi),

where l(xi, tau) = L(gamma_xi) / (2 sqrt tau) along the shot geodesic and J is
the Jacobian of the L-exponential map (see :mod:`rgl.lgeodesic`).  On flat
space J~ = 2^n exp(-|xi|^2), integrating to (4 pi)^(n/2).

The domain is approximated by a per-node mask: a node is dropped once its
geodesic has passed a conjugate point (J <= 0) or once a competing L-geodesic
to the same endpoint is found to be cheaper.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammaincc

from . import _kernels as kern
from ._rng import DEFAULT_SEED, stream
from .flow_models import FlowModel, metric_at
from .lfunction import newton_shoot, ray_seed
from .lgeodesic import ATOL, RTOL, jacobian_from_columns, shoot_batch

log = logging.getLogger(__name__)

RHO_MAX = 6.0
N_RADIAL = 64
N_RADIAL_COARSE = 48
N_ANGULAR_2D = 128
N_POLAR_AXIAL = 16
N_POLAR_AXIAL_COARSE = 12
CHECK_EVERY = 4
CHECK_SEEDS = 6
BRANCH_MARGIN = 1e-6
DENSE_KNOTS = 32
PRUNE = 1e-12


# ---------------------------------------------------------------- sphere rules

def lebedev26():
    """26-point degree-7 rule on S^2: weights sum to 1 (multiply by 4 pi)."""
    pts, wts = [], []
    for i in range(3):
        for s in (1.0, -1.0):
            e = np.zeros(3)
            e[i] = s
            pts.append(e)
            wts.append(1.0 / 21.0)
    h = 1.0 / np.sqrt(2.0)
    for i in range(3):
        for j in range(i + 1, 3):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    e = np.zeros(3)
                    e[i], e[j] = si * h, sj * h
                    pts.append(e)
                    wts.append(4.0 / 105.0)
    c = 1.0 / np.sqrt(3.0)
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            for sz in (1.0, -1.0):
                pts.append(np.array([sx, sy, sz]) * c)
                wts.append(9.0 / 280.0)
    return np.array(pts), np.array(wts)


def lebedev14_subset():
    """Indices into :func:`lebedev26` and weights of the nested 14-point
    degree-5 rule (octahedron vertices plus cube corners)."""
    idx = np.r_[0:6, 18:26]
    w = np.r_[np.full(6, 1.0 / 15.0), np.full(8, 3.0 / 40.0)]
    return idx, w


def sphere_area(n: int) -> float:
    """Area of the unit sphere S^(n-1) in R^n."""
    return float(2.0 * np.pi ** (n / 2) / gamma_fn(n / 2))


def gaussian_tail(n: int, rho: float) -> float:
    """Mass of the majorant 2^n exp(-|xi|^2) outside the ball of radius rho."""
    return float(2.0**n * sphere_area(n) * 0.5 * gamma_fn(n / 2) * gammaincc(n / 2, rho * rho))


def _directions(n: int, symmetry: str, n_angular: int | None, n_polar: int):
    """Unit directions (D, n), weights (D,), and an optional nested subset
    (indices, weights) used for the angular error estimate."""
    area = sphere_area(n)
    if symmetry == "isotropic":
        d = np.zeros((1, n))
        d[0, 0] = 1.0
        return d, np.array([area]), None
    if symmetry == "axial":
        # the symmetry rotates the first two axes; the last is a reflection axis
        x, w = np.polynomial.legendre.leggauss(n_polar)
        ct = 0.5 * (x + 1.0)  # cos(theta) in [0, 1]
        d = np.zeros((n_polar, n))
        d[:, 0] = np.sqrt(1.0 - ct**2)
        d[:, n - 1] = ct
        return d, w * 0.5 * 2.0 * 2.0 * np.pi, None
    if n == 2:
        m = n_angular or N_ANGULAR_2D
        th = 2.0 * np.pi * np.arange(m) / m
        d = np.stack([np.cos(th), np.sin(th)], axis=1)
        sub = (np.arange(0, m, 2), np.full(m // 2, 2.0 * area / m))
        return d, np.full(m, area / m), sub
    if n == 3:
        d, w = lebedev26()
        idx, w14 = lebedev14_subset()
        return d, w * area, (idx, w14 * area)
    raise ValueError(f"no sphere rule for n={n}")


# ---------------------------------------------------------------- grid types

@dataclass
class TangentGrid:
    """Polar product grid on T_pM (g(0)_p-orthonormal coordinates).

    Node (d, i) is xi = r_i * directions[d] with weight
    dir_weights[d] * r_i^(n-1) * radial_weights[i].  After :func:`build_mask`
    the per-tau arrays have shape (T, D, R).
    """

    model: FlowModel
    base: np.ndarray
    base_chart: int
    symmetry: str
    directions: np.ndarray
    dir_weights: np.ndarray
    radii: np.ndarray
    radial_weights: np.ndarray
    rho_max: float
    frame: np.ndarray  # chart components of the orthonormal frame (diag)
    angular_subset: tuple | None = None
    taus: np.ndarray | None = None
    conjugate_free: np.ndarray | None = None
    minimal: np.ndarray | None = None
    l: np.ndarray | None = None
    J: np.ndarray | None = None
    Jt: np.ndarray | None = None
    R: np.ndarray | None = None
    gdot2: np.ndarray | None = None
    x: np.ndarray | None = None
    charts: np.ndarray | None = None
    gdot: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.model.dim

    @property
    def xi(self) -> np.ndarray:
        """Orthonormal node vectors, shape (D, R, n)."""
        return self.radii[None, :, None] * self.directions[:, None, :]

    @property
    def v_chart(self) -> np.ndarray:
        """Node vectors in chart components, shape (D, R, n)."""
        return self.xi * self.frame

    @property
    def weights(self) -> np.ndarray:
        n = self.n
        return self.dir_weights[:, None] * (self.radii ** (n - 1) * self.radial_weights)[None, :]

    @property
    def mask(self) -> np.ndarray:
        return self.conjugate_free & self.minimal


def make_grid(model: FlowModel, p, *, p_chart: int = 0, n_radial: int = N_RADIAL,
              rho_max: float = RHO_MAX, symmetry: str = "auto", n_angular: int | None = None,
              n_polar: int = N_POLAR_AXIAL) -> TangentGrid:
    """Node layout only.  ``symmetry='auto'`` uses the model's symmetry at p
    ('isotropic' evaluates one ray, 'axial' a polar Gauss rule in the
    symmetry-free angle) and otherwise the full angular rule."""
    p = np.asarray(p, dtype=float)
    n = model.dim
    if symmetry == "auto":
        symmetry = model.symmetry_at(p, p_chart) or "full"
    if symmetry == "none":
        symmetry = "full"
    dirs, dw, sub = _directions(n, symmetry, n_angular, n_polar)
    x, w = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * rho_max * (x + 1.0)
    rw = 0.5 * rho_max * w
    g0 = metric_at(model, p, 0.0, p_chart)[0]
    frame = 1.0 / np.sqrt(np.diag(g0))
    return TangentGrid(model, p, p_chart, symmetry, dirs, dw, r, rw, rho_max, frame, sub)


# ---------------------------------------------------------------- evaluation

def _shoot_grid(grid: TangentGrid, taus, rtol, atol):
    model = grid.model
    n = model.dim
    D, Rn = len(grid.directions), len(grid.radii)
    vs = grid.v_chart.reshape(D * Rn, n)
    t_main = np.sqrt(np.asarray(taus, dtype=float))
    t_dense = np.linspace(0.0, t_main[-1], DENSE_KNOTS + 1)[1:]
    knots = np.unique(np.concatenate([t_main, t_dense]))
    shot = shoot_batch(model, grid.base, vs, knots, chart=grid.base_chart, with_jacobi=True,
                       rtol=rtol, atol=atol)
    return shot, knots


def _jacobians(grid: TangentGrid, shot, knots):
    model = grid.model
    B = shot.states.shape[0]
    out = np.empty((B, len(knots)))
    base = metric_at(model, grid.base, 0.0, grid.base_chart)[2]
    xs = shot.x.reshape(-1, model.dim)
    ss = np.repeat(knots[None, :] ** 2, B, axis=0).ravel()
    e2, c_line, _R, _dR = kern.terms_batch(model.kind, model.dim, model.block, model.param_array,
                                           np.ascontiguousarray(xs), ss)
    k = model.block
    sqrtdet = np.sqrt(e2**k * c_line ** (model.dim - k))
    det = np.linalg.det(shot.dxdv.reshape(-1, model.dim, model.dim))
    out[:] = (sqrtdet * det / base).reshape(B, len(knots))
    return out


def integrand(model: FlowModel, p, v, tau: float, *, p_chart: int = 0, rtol: float = RTOL,
              atol: float = ATOL) -> float:
    """tau^(-n/2) exp(-l) J for the chart initial vector v (no mask)."""
    v = np.asarray(v, dtype=float)
    shot = shoot_batch(model, p, v[None, :], np.array([np.sqrt(tau)]), chart=p_chart,
                       with_jacobi=True, rtol=rtol, atol=atol)
    if shot.status[0] != kern.OK:
        from .errors import BlowUp

        raise BlowUp("integrand: shot failed")
    J = jacobian_from_columns(model, p, p_chart, 0.0, shot.x[0], shot.charts[0],
                              np.array([np.sqrt(tau)]), shot.dxdv[0])[0]
    l = shot.energy[0, -1] / (2.0 * np.sqrt(tau))
    return float(tau ** (-model.dim / 2) * np.exp(-l) * J)


def build_mask(model: FlowModel, p, grid: TangentGrid, tau_grid, *, check_every: int = CHECK_EVERY,
               n_check_seeds: int = CHECK_SEEDS, seed: int = DEFAULT_SEED, rtol: float = RTOL,
               atol: float = ATOL, inherit: TangentGrid | None = None) -> TangentGrid:
    """Shoot every node through ``tau_grid`` and fill the mask and the
    per-node data arrays of ``grid`` (returned).

    conjugate_free[t, d, i] is False once J <= 0 at any dense knot up to
    tau_t; minimal[t, d, i] is False when a branch check on a radial check
    node (every ``check_every``-th) finds a cheaper L-geodesic to the same
    endpoint.  A failed check switches off the whole stretch of the ray past
    the last passing check node, and the mask is made antitone in tau and
    monotone along each ray.

    With ``inherit`` (an already built grid on the same tau grid) no branch
    checks run: each ray is cut at the smallest branch-check cut radius of
    the two nearest rays of ``inherit``.
    """
    taus = np.asarray(tau_grid, dtype=float)
    if np.any(np.diff(taus) <= 0) or taus[0] <= 0:
        raise ValueError("tau grid must be positive and strictly increasing")
    n = model.dim
    D, Rn, T = len(grid.directions), len(grid.radii), len(taus)
    shot, knots = _shoot_grid(grid, taus, rtol, atol)
    bad = shot.status != kern.OK
    Jall = _jacobians(grid, shot, knots)
    Jall[bad] = -np.inf
    Jall[~np.isfinite(Jall)] = -np.inf
    tpos = np.searchsorted(knots, np.sqrt(taus))
    # running minimum of J over the dense knots
    run_min = np.minimum.accumulate(Jall, axis=1)
    cf = (run_min[:, tpos] > 0.0).T.reshape(T, D, Rn)

    s = np.sqrt(taus)
    energy = shot.energy[:, tpos].T.reshape(T, D, Rn)
    l = energy / (2.0 * s)[:, None, None]
    J = Jall[:, tpos].T.reshape(T, D, Rn)
    with np.errstate(invalid="ignore", over="ignore"):
        Jt = taus[:, None, None] ** (-n / 2) * np.exp(-l) * J
    x = np.transpose(shot.x[:, tpos], (1, 0, 2)).reshape(T, D, Rn, n)
    ch = shot.charts[:, tpos].T.reshape(T, D, Rn)
    vel = np.transpose(shot.velocity[:, tpos], (1, 0, 2)).reshape(T, D, Rn, n)
    gdot = vel / (2.0 * s)[:, None, None, None]
    ss = np.repeat(taus, D * Rn)
    e2, c_line, Rs, _dR = kern.terms_batch(model.kind, n, model.block, model.param_array,
                                           np.ascontiguousarray(np.nan_to_num(x).reshape(-1, n)), ss)
    k = model.block
    gd = gdot.reshape(-1, n)
    gdot2 = (e2 * np.sum(gd[:, :k] ** 2, axis=1) + c_line * np.sum(gd[:, k:] ** 2, axis=1))
    grid.taus = taus
    grid.conjugate_free = _monotone(cf)
    grid.l, grid.J, grid.Jt = l, J, Jt
    grid.R = Rs.reshape(T, D, Rn)
    grid.gdot2 = gdot2.reshape(T, D, Rn)
    grid.x, grid.charts, grid.gdot = x, ch, gdot
    grid.minimal = np.ones((T, D, Rn), dtype=bool)
    if inherit is None:
        _branch_checks(grid, check_every, n_check_seeds, seed, rtol, atol)
    else:
        _inherit_cuts(grid, inherit)
    grid.minimal = _monotone(grid.minimal)
    return grid


def cut_radii(grid: TangentGrid) -> np.ndarray:
    """Smallest radius switched off by branch checks, per (tau, ray)."""
    off = ~grid.minimal
    r = np.where(off, grid.radii[None, None, :], np.inf)
    return r.min(axis=2)


def _inherit_cuts(grid: TangentGrid, src: TangentGrid):
    if not np.array_equal(grid.taus, src.taus):
        raise ValueError("inherited mask needs the same tau grid")
    rc = cut_radii(src)
    cos = _fold(grid.directions, src.symmetry) @ src.directions.T
    near = np.argsort(-cos, axis=1)[:, : min(2, len(src.directions))]
    for d in range(len(grid.directions)):
        lim = rc[:, near[d]].min(axis=1)
        grid.minimal[:, d, :] = grid.radii[None, :] < lim[:, None]


def _fold(directions, symmetry):
    """Directions mapped into the fundamental domain of a reduced grid."""
    d = np.array(directions, dtype=float)
    if symmetry == "isotropic":
        out = np.zeros_like(d)
        out[:, 0] = 1.0
        return out
    if symmetry == "axial":
        n = d.shape[1]
        out = np.zeros_like(d)
        out[:, 0] = np.linalg.norm(d[:, : n - 1], axis=1)
        out[:, n - 1] = np.abs(d[:, n - 1])
        return out
    return d


def _monotone(m):
    """Antitone in tau, and once off along a ray, off further out."""
    m = np.logical_and.accumulate(m, axis=0)
    return np.logical_and.accumulate(m, axis=2)


def _branch_checks(grid: TangentGrid, check_every, n_seeds, seed, rtol, atol):
    model = grid.model
    n = model.dim
    T, D, Rn = grid.l.shape
    checks = np.arange(check_every - 1, Rn, check_every)
    w = grid.weights
    total = (4.0 * np.pi) ** (n / 2)
    vchart = grid.v_chart
    n_checked = 0
    n_flagged = 0
    for t in range(T):
        tau = grid.taus[t]
        on = grid.conjugate_free[t] & grid.minimal[t]
        cand = []
        for d in range(D):
            for i in checks:
                if not on[d, i]:
                    continue
                if abs(w[d, i] * grid.Jt[t, d, i]) < PRUNE * total:
                    continue
                cand.append((d, i))
        if not cand:
            continue
        seeds, targets, tch, owner = [], [], [], []
        for c, (d, i) in enumerate(cand):
            q, qc = grid.x[t, d, i], int(grid.charts[t, d, i])
            v0 = vchart[d, i]
            ray = ray_seed(model, grid.base, grid.base_chart, q, qc, tau)
            rng = stream(seed, "mask", model.name, grid.base, float(tau), int(d), int(i))
            cs = [ray, -v0, -ray]
            while len(cs) < n_seeds:
                cs.append(ray + (0.5 + np.linalg.norm(v0)) * rng.normal(size=n))
            for sv in cs[:n_seeds]:
                seeds.append(sv)
                targets.append(q)
                tch.append(qc)
                owner.append(c)
        conv, _v, energy, _vel, _det, _res = newton_shoot(
            model, grid.base, grid.base_chart, np.array(targets), np.array(tch), tau,
            np.array(seeds), rtol=rtol, atol=atol)
        n_checked += len(cand)
        best = np.full(len(cand), np.inf)
        for j, c in enumerate(owner):
            if conv[j]:
                best[c] = min(best[c], energy[j] / (2.0 * np.sqrt(tau)))
        for c, (d, i) in enumerate(cand):
            if best[c] < grid.l[t, d, i] - BRANCH_MARGIN:
                prev = checks[checks < i]
                start = prev[-1] + 1 if prev.size else 0
                grid.minimal[t:, d, start:] = False
                n_flagged += 1
        grid.minimal = _monotone(grid.minimal)
    grid.diagnostics["branch_checks"] = n_checked
    grid.diagnostics["branch_flags"] = n_flagged


# ---------------------------------------------------------------- integration

def masked_sum(grid: TangentGrid, values, *, directions=None, dir_weights=None):
    """Sum weights * mask * values over nodes, per tau (values (T, D, R))."""
    dw = grid.dir_weights if dir_weights is None else dir_weights
    sel = slice(None) if directions is None else directions
    rad = grid.radii ** (grid.n - 1) * grid.radial_weights
    vals = np.where(grid.mask, values, 0.0)[:, sel, :]
    return np.einsum("tdr,d,r->t", vals, dw, rad)


def _band(grid: TangentGrid):
    """Mass uncertainty from the mask boundary along each ray: the weighted
    integrand at the last node kept plus that of nodes switched off past it
    while J was still positive."""
    w = grid.weights
    out = np.zeros(len(grid.taus))
    for t in range(len(grid.taus)):
        m = grid.mask[t]
        for d in range(m.shape[0]):
            off = np.flatnonzero(~m[d])
            if off.size == 0:
                continue
            first = off[0]
            acc = 0.0
            if first > 0:
                acc += abs(w[d, first - 1] * grid.Jt[t, d, first - 1])
            pos = grid.conjugate_free[t, d, first:] & np.isfinite(grid.Jt[t, d, first:])
            acc += float(np.sum(np.abs(w[d, first:] * np.where(pos, grid.Jt[t, d, first:], 0.0))))
            out[t] += acc
    return out


@dataclass
class ReducedVolumeCurve:
    taus: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    model: str
    n: int
    components: dict = field(default_factory=dict)
    grid: TangentGrid | None = None

    @property
    def bound(self) -> float:
        return (4.0 * np.pi) ** (self.n / 2)

    def bound_margin(self):
        return self.bound - self.values

    def nonincreasing(self, factor: float = 2.0) -> bool:
        d = np.diff(self.values)
        tol = factor * (self.errors[1:] + self.errors[:-1])
        return bool(np.all(d <= tol))

    def strictly_decreasing(self, factor: float = 2.0) -> bool:
        d = np.diff(self.values)
        tol = factor * (self.errors[1:] + self.errors[:-1])
        return bool(np.all(-d > tol))

    def to_csv(self) -> str:
        lines = ["tau,V_tilde,err,bound_4pi_margin"]
        for t, v, e, m in zip(self.taus, self.values, self.errors, self.bound_margin()):
            lines.append(",".join(repr(float(c)) for c in (t, v, e, m)))
        return "\n".join(lines) + "\n"


def reduced_volume_curve(model: FlowModel, p, tau_grid, *, p_chart: int = 0,
                         n_radial: int = N_RADIAL, n_radial_coarse: int = N_RADIAL_COARSE,
                         rho_max: float = RHO_MAX, symmetry: str = "auto",
                         n_angular: int | None = None, seed: int = DEFAULT_SEED,
                         rtol: float = RTOL, atol: float = ATOL) -> ReducedVolumeCurve:
    """V~ on a tau grid with error bars.

    error = |V(n_radial) - V(n_radial_coarse)| (radial refinement)
          + angular refinement difference (nested subset or coarser polar rule)
          + Gaussian tail beyond rho_max + mask-boundary band.
    """
    p = np.asarray(p, dtype=float)
    taus = np.asarray(tau_grid, dtype=float)
    kw = dict(seed=seed, rtol=rtol, atol=atol)
    gkw = dict(p_chart=p_chart, rho_max=rho_max, symmetry=symmetry, n_angular=n_angular)
    fine = build_mask(model, p, make_grid(model, p, n_radial=n_radial, **gkw), taus, **kw)
    coarse = build_mask(model, p, make_grid(model, p, n_radial=n_radial_coarse, **gkw), taus,
                        inherit=fine, **kw)
    values = masked_sum(fine, fine.Jt)
    radial = np.abs(values - masked_sum(coarse, coarse.Jt))
    if fine.angular_subset is not None:
        idx, w = fine.angular_subset
        angular = np.abs(values - masked_sum(fine, fine.Jt, directions=idx, dir_weights=w))
    elif fine.symmetry == "axial":
        alt = build_mask(model, p, make_grid(model, p, n_radial=n_radial, n_polar=N_POLAR_AXIAL_COARSE,
                                             **gkw), taus, inherit=fine, **kw)
        angular = np.abs(values - masked_sum(alt, alt.Jt))
    else:
        angular = np.zeros_like(values)
    tail = np.full_like(values, gaussian_tail(model.dim, rho_max))
    band = _band(fine)
    errors = radial + angular + tail + band
    log.info("reduced volume %s: %s +- %s", model.name, values, errors)
    return ReducedVolumeCurve(taus, values, errors, model.name, model.dim,
                              {"radial": radial, "angular": angular, "tail": tail, "band": band},
                              fine)


def reduced_volume(model: FlowModel, p, tau: float, **kw):
    """(V~(tau), error estimate)."""
    c = reduced_volume_curve(model, p, [tau], **kw)
    return float(c.values[0]), float(c.errors[0])


def difference_integral(model: FlowModel, p, tau1: float, tau2: float, *, n_tau: int = 8,
                        p_chart: int = 0, n_radial: int = N_RADIAL, symmetry: str = "auto",
                        seed: int = DEFAULT_SEED, rtol: float = RTOL, atol: float = ATOL):
    """int_{tau1}^{tau2} int_M (l_tau - R + n/(2 tau)) tau^(-n/2) e^(-l) dq dtau,
    pushed forward to the tangent grid.  Along a smooth L-geodesic
    l_tau = R/2 - |gamma-dot|^2/2 - l/(2 tau) follows from the first
    variation formula and dL/dtau = sqrt(tau)(R + |gamma-dot|^2).
    Returns (integral, grid, tau nodes, tau weights)."""
    x, w = np.polynomial.legendre.leggauss(n_tau)
    tn = 0.5 * (tau2 - tau1) * (x + 1.0) + tau1
    tw = 0.5 * (tau2 - tau1) * w
    grid = build_mask(model, p, make_grid(model, p, p_chart=p_chart, n_radial=n_radial,
                                          symmetry=symmetry), tn, seed=seed, rtol=rtol, atol=atol)
    n = model.dim
    lt = grid.R / 2.0 - grid.gdot2 / 2.0 - grid.l / (2.0 * tn[:, None, None])
    f = (lt - grid.R + n / (2.0 * tn[:, None, None])) * grid.Jt
    per_tau = masked_sum(grid, f)
    return float(per_tau @ tw), grid, tn, tw
