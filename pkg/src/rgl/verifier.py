"""Named numerical checks of the reduced-geometry identities, inequalities
and rigidity statements, assembled into a machine-readable report.

Each check returns one record::

    {check_id, model, parameters, measured, threshold, status, passed,
     witness, runtime_s}

with status in {"pass", "fail", "not_applicable", "error"}.  Samples are
drawn from counter-based streams keyed by (seed, model, check), so a report
depends only on its configuration.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from ._rng import DEFAULT_SEED, stream
from .errors import ConfigError, CutLocusSuspected, InsufficientSamples, RGLError
from .flow_models import (NONNEG_CURVATURE_OPERATOR, FlowModel, canonical_point, curvature_at,
                          flow_residual, metric_at, parse_model, rescale, to_chart)
from .geometry import riemannian_distance
from .lfunction import BRANCH_GAP, l_bracket, min_l, path_oracle_extrapolated, solve_l, warm_l
from .lgeodesic import shoot, shoot_batch
from .reduced_volume import (ReducedVolumeCurve, build_mask, make_grid, masked_sum,
                             reduced_volume_curve)

log = logging.getLogger(__name__)

CHECK_IDS = (
    "flow_equation",
    "cross_method",
    "l_bracket",
    "velocity_bound",
    "restriction",
    "evolution_identity",
    "differential_inequalities",
    "derivative_estimates",
    "min_l",
    "d_l_bounds",
    "jacobian_limit",
    "reduced_volume",
    "pointwise_jacobian",
    "difference_formula",
    "weak_integral",
    "soliton_residual",
    "scaling",
)

BUMP_CENTER = 0.5
BUMP_RADIUS = 1.5

DEFAULT_CONFIG = {
    "seed": DEFAULT_SEED,
    "checks": list(CHECK_IDS),
    "base": None,
    "n_points": 50,
    "xi_max": 1.2,
    "tau_range": [0.25, 1.5],
    "tau_grid": [0.25, 0.5, 1.0, 2.0],
    "min_l_taus": [0.5, 1.0],
    "scales": [0.5, 2.0],
    "n_cross": 30,
    "n_pairs": 20,
    "n_triples": 20,
    "n_soliton": 10,
    "n_restriction": 5,
    "jacobian_limit_taus": [1e-2, 1e-3, 1e-4],
    "jacobian_limit_norms": [0.0, 0.5, 1.0, 1.5, 2.0],
    "weak_taus": [0.5, 1.0],
    "grid_radial": 64,
    "grid_angular": 128,
    "tol_ode": 1e-9,
    "tol_fd": 1e-11,
    "fd_space": 1e-4,
    "fd_time_rel": 1e-3,
    "thresholds": {
        "flow_residual": 1e-6,
        "identity": 1e-3,
        "inequality": 1e-2,
        "flat_equality": 1e-8,
        "fraction": 0.95,
        "linkage": 1e-6,
        "cross_method": 1e-4,
        "stability": 0.2,
        "lipschitz_slack": 1e-2,
        "min_l": 1e-3,
        "rescale": 0.05,
        "jacobian_limit": 5e-3,
        "pointwise": 1e-6,
        "pointwise_fraction": 0.99,
        "majorant": 1e-4,
        "flat_value": 5e-3,
        "flat_constancy": 1e-3,
        "difference": 1e-2,
        "weak": 1e-2,
        "soliton_flat": 1e-8,
        "soliton_min": 1e-2,
        "scaling_l": 1e-4,
        "restriction": 1e-6,
        "velocity_stability": 0.1,
    },
}


def merge_config(cfg: dict | None) -> dict:
    """Defaults overlaid with ``cfg``; unknown keys and check ids raise."""
    out = copy.deepcopy(DEFAULT_CONFIG)
    for key, val in (cfg or {}).items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "thresholds":
            for tk, tv in val.items():
                if tk not in out["thresholds"]:
                    raise ConfigError(f"unknown threshold {tk!r}")
                out["thresholds"][tk] = float(tv)
        else:
            out[key] = val
    bad = [c for c in out["checks"] if c not in CHECK_IDS]
    if bad:
        raise ConfigError(f"unknown check id(s): {bad}")
    return out


# ---------------------------------------------------------------- report

def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        f = float(x)
        if math.isfinite(f):
            return f
        return "nan" if math.isnan(f) else ("inf" if f > 0 else "-inf")
    return x


@dataclass
class CheckReport:
    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def failures(self):
        return [r for r in self.records if r["status"] in ("fail", "error")]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self, runtime: bool = True) -> dict:
        recs = []
        for r in self.records:
            r = dict(r)
            if not runtime:
                r.pop("runtime_s", None)
            recs.append(r)
        meta = dict(self.metadata)
        if not runtime:
            meta.pop("runtime_s", None)
        return _clean({"metadata": meta, "records": recs})

    def to_json(self, runtime: bool = True) -> str:
        return json.dumps(self.to_dict(runtime), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check_id", "model", "status", "summary"])
        for r in self.records:
            summary = ";".join(f"{k}={_fmt(v)}" for k, v in sorted(r["measured"].items())
                               if not isinstance(v, (list, dict)))
            w.writerow([r["check_id"], r["model"], r["status"], summary])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _record(check_id, model, parameters, measured, threshold, passed, witness=(), status=None):
    if status is None:
        status = "pass" if passed else "fail"
    return {"check_id": check_id, "model": model.name, "parameters": parameters,
            "measured": measured, "threshold": threshold, "status": status,
            "passed": None if status == "not_applicable" else bool(passed),
            "witness": list(witness)[:5]}


def _na(check_id, model, reason):
    return _record(check_id, model, {}, {"reason": reason}, {}, None, status="not_applicable")


# ---------------------------------------------------------------- sampling

@dataclass
class LocalData:
    """l and its derivatives at one sample point (q, tau)."""

    q: np.ndarray
    chart: int
    tau: float
    l: float
    grad: np.ndarray  # vector
    cov: np.ndarray  # covector dl
    gn2: float
    R: float
    l_tau: float
    l_tau_half: float
    lap: float
    hess: np.ndarray
    result: object = None


class ModelContext:
    """Per-model state shared by the checks: the base point, sample points
    and cached local data and reduced-volume curves."""

    def __init__(self, model: FlowModel, cfg: dict):
        self.model = model
        self.cfg = cfg
        self.seed = int(cfg["seed"])
        base = cfg.get("base")
        self.p = np.zeros(model.dim) if base is None else np.asarray(base, dtype=float)
        if self.p.shape != (model.dim,):
            raise ConfigError(f"base point {self.p} has wrong dimension for {model.name}")
        self.p_chart = 0
        self._local = None
        self._curve = None
        self._grids = {}
        self.rtol = float(cfg["tol_ode"])
        self.fd_rtol = float(cfg["tol_fd"])

    def rng(self, *key):
        return stream(self.seed, self.model.name, *key)

    def random_xi(self, rng, xi_max):
        n = self.model.dim
        d = rng.normal(size=n)
        d /= np.linalg.norm(d)
        return d * xi_max * rng.random() ** (1.0 / n)

    def to_chart_v(self, xi):
        g0 = metric_at(self.model, self.p, 0.0, self.p_chart)[0]
        return xi / np.sqrt(np.diag(g0))

    def sample_points(self, label, count, xi_max=None, tau_range=None, taus=None):
        """(q, chart, tau) reached by L-geodesics with |xi| <= xi_max."""
        xi_max = self.cfg["xi_max"] if xi_max is None else xi_max
        lo, hi = self.cfg["tau_range"] if tau_range is None else tau_range
        rng = self.rng("points", label)
        xis, ts = [], []
        for i in range(count):
            ts.append(float(taus[i]) if taus is not None else float(lo + (hi - lo) * rng.random()))
            xis.append(self.random_xi(rng, xi_max))
        return self.points_from_xi(xis, ts)

    def points_from_xi(self, xis, taus):
        pts = []
        for xi, tau in zip(xis, taus):
            geo = shoot(self.model, self.p, self.to_chart_v(xi), tau, chart=self.p_chart,
                        t_knots=np.array([np.sqrt(tau)]))
            x, c = canonical_point(self.model, *geo.endpoint)
            pts.append((x, c, float(tau)))
        return pts

    def solve(self, q, qc, tau, model=None, **kw):
        m = self.model if model is None else model
        return solve_l(m, self.p, q, tau, p_chart=self.p_chart, q_chart=qc, seed=self.seed,
                       rtol=kw.pop("rtol", self.rtol), atol=kw.pop("atol", 1e-3 * self.rtol), **kw)

    def local_data(self):
        if self._local is None:
            pts = self.sample_points("local", int(self.cfg["n_points"]))
            out = []
            for q, c, tau in pts:
                try:
                    out.append(self._local_at(q, c, tau))
                except CutLocusSuspected as exc:
                    out.append(exc)
                except RGLError as exc:
                    out.append(exc)
            self._local = out
        return self._local

    def usable_local(self):
        data = self.local_data()
        good = [d for d in data if isinstance(d, LocalData)]
        if len(good) < 0.8 * len(data):
            raise InsufficientSamples(f"only {len(good)} of {len(data)} sample points usable")
        return good

    def _local_at(self, q, qc, tau) -> LocalData:
        m = self.model
        n = m.dim
        rt = self.fd_rtol
        res = self.solve(q, qc, tau, rtol=rt, atol=1e-3 * rt, tol=1e-13)
        if res.branch_gap < BRANCH_GAP:
            raise CutLocusSuspected(f"branch gap {res.branch_gap:.3g}")
        g, ginv, _ = metric_at(m, q, tau, qc)
        cp = curvature_at(m, q, tau, qc)
        grad = res.gradient
        cov = g @ grad

        def warm(qq, tt):
            r = warm_l(m, res, qq, tt, q_chart=qc, n_seeds=2, rtol=rt, atol=1e-3 * rt, tol=1e-13,
                       seed=self.seed)
            return r

        ht = float(self.cfg["fd_time_rel"]) * tau
        lt_h = (warm(q, tau + ht).l_value - warm(q, tau - ht).l_value) / (2.0 * ht)
        lth = (warm(q, tau + ht / 2).l_value - warm(q, tau - ht / 2).l_value) / ht
        # Richardson removes the O(h^2) term of the central difference
        lt = (4.0 * lth - lt_h) / 3.0
        h = float(self.cfg["fd_space"])
        hess = np.zeros((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            rp, rm = warm(q + e, tau), warm(q - e, tau)
            # first differences of the exact gradient: the solver noise in l
            # enters as eps / h instead of eps / h^2
            gp = metric_at(m, q + e, tau, qc)[0] @ rp.gradient
            gm = metric_at(m, q - e, tau, qc)[0] @ rm.gradient
            hess[i, :] = (gp - gm) / (2.0 * h)
        hess = 0.5 * (hess + hess.T) - np.einsum("kij,k->ij", cp.christoffel, cov)
        lap = float(np.trace(ginv @ hess))
        return LocalData(q, qc, tau, res.l_value, grad, cov, float(grad @ g @ grad), cp.scalar,
                         lt, lth, lap, hess, res)

    def tau_grid(self, t1, t2, n_tau, symmetry, tn):
        """Tangent grid shot through the tau nodes tn (cached).  A full grid
        inherits its cuts from the symmetry-reduced one, which alone runs
        branch checks."""
        key = (t1, t2, n_tau, symmetry)
        if key not in self._grids:
            m = self.model
            gkw = dict(p_chart=self.p_chart, n_radial=int(self.cfg["grid_radial"]),
                       n_angular=int(self.cfg["grid_angular"]))
            bkw = dict(seed=self.seed, rtol=self.rtol, atol=1e-3 * self.rtol)
            inherit = None
            if symmetry == "none" and m.symmetry_at(self.p, self.p_chart) is not None:
                inherit = self.tau_grid(t1, t2, n_tau, "auto", tn)
            self._grids[key] = build_mask(m, self.p, make_grid(m, self.p, symmetry=symmetry, **gkw),
                                          tn, inherit=inherit, **bkw)
        return self._grids[key]

    def curve(self) -> ReducedVolumeCurve:
        if self._curve is None:
            self._curve = reduced_volume_curve(
                self.model, self.p, self.cfg["tau_grid"], p_chart=self.p_chart,
                n_radial=int(self.cfg["grid_radial"]),
                n_radial_coarse=max(16, int(0.75 * int(self.cfg["grid_radial"]))),
                n_angular=int(self.cfg["grid_angular"]), seed=self.seed, rtol=self.rtol,
                atol=1e-3 * self.rtol)
        return self._curve


# ---------------------------------------------------------------- checks

def check_flow_equation(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    rng = ctx.rng("flow")
    worst, rmin, wit = 0.0, np.inf, []
    for _ in range(100):
        x = rng.uniform(-3, 3, size=m.dim)
        x, c = canonical_point(m, x)
        tau = float(rng.uniform(2e-3, 2.0))
        r = flow_residual(m, x, tau, 1e-3, chart=c)
        R = curvature_at(m, x, tau, c).scalar
        worst = max(worst, r)
        rmin = min(rmin, R)
        if r >= th["flow_residual"]:
            wit.append({"q": x, "tau": tau, "residual": r})
    ok = worst < th["flow_residual"] and rmin >= -1e-14
    return _record("flow_equation", m, {"samples": 100, "h": 1e-3},
                   {"max_residual": worst, "min_R": rmin},
                   {"residual": th["flow_residual"], "R_min": 0.0}, ok, wit)


def check_cross_method(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    count = int(ctx.cfg["n_cross"])
    pts = ctx.sample_points("cross", count)
    worst, wit = 0.0, []
    for q, c, tau in pts:
        res = ctx.solve(q, c, tau)
        ref = path_oracle_extrapolated(m, ctx.p, q, tau, p_chart=ctx.p_chart, q_chart=c, seed=ctx.seed)
        rel = abs(ref - res.l_value) / max(abs(res.l_value), 1e-8)
        worst = max(worst, rel)
        if rel > th["cross_method"]:
            wit.append({"q": q, "chart": c, "tau": tau, "shooting": res.l_value, "oracle": ref})
    return _record("cross_method", m, {"instances": count, "K": 64},
                   {"max_relative_difference": worst}, {"relative": th["cross_method"]},
                   worst <= th["cross_method"], wit)


def check_l_bracket(ctx: ModelContext):
    m = ctx.model
    if m.ricci_lower_bound() != 0.0:
        return _na("l_bracket", m, "needs Ric >= 0")
    pts = ctx.sample_points("bracket", 20)
    wit = []
    lo_slack = hi_slack = np.inf
    for q, c, tau in pts:
        l = ctx.solve(q, c, tau).l_value
        lo, hi = l_bracket(m, ctx.p, q, tau, p_chart=ctx.p_chart, q_chart=c)
        tol = 1e-8 * max(1.0, l)
        lo_slack = min(lo_slack, l - lo)
        hi_slack = min(hi_slack, hi - l)
        if l < lo - tol or l > hi + tol:
            wit.append({"q": q, "tau": tau, "l": l, "lower": lo, "upper": hi})
    return _record("l_bracket", m, {"samples": len(pts), "C": m.ricci_upper_bound()},
                   {"min_lower_slack": lo_slack, "min_upper_slack": hi_slack},
                   {"slack": 0.0}, not wit, wit)


def check_velocity_bound(ctx: ModelContext):
    """A2 = max s|gamma-dot|^2 / (1 + 1/tau) along minimizers, stable under
    tightening the integrator tolerance."""
    m, th = ctx.model, ctx.cfg["thresholds"]
    pts = ctx.sample_points("velocity", 10)

    def a2(rtol):
        best = 0.0
        for q, c, tau in pts:
            res = ctx.solve(q, c, tau, rtol=rtol, atol=1e-3 * rtol)
            geo = shoot(m, ctx.p, res.minimizer_v, tau, chart=ctx.p_chart, n_knots=33,
                        rtol=rtol, atol=1e-3 * rtol)
            sg = geo.speed() ** 2 / 4.0  # s |dgamma/ds|^2 = |dgamma/dt|^2 / 4
            best = max(best, float(np.max(sg)) / (1.0 + 1.0 / tau))
        return best

    coarse, fine = a2(ctx.rtol), a2(ctx.rtol * 1e-2)
    rel = abs(coarse - fine) / max(fine, 1e-300)
    ok = math.isfinite(fine) and rel <= th["velocity_stability"]
    return _record("velocity_bound", m, {"samples": len(pts)},
                   {"A2": fine, "A2_loose": coarse, "relative_change": rel},
                   {"stability": th["velocity_stability"]}, ok)


def check_restriction(ctx: ModelContext):
    """Initial segments of minimizers are minimizers: l(gamma(tau'), tau')
    equals the partial energy over 2 sqrt(tau')."""
    m, th = ctx.model, ctx.cfg["thresholds"]
    pts = ctx.sample_points("restriction", int(ctx.cfg["n_restriction"]))
    worst, wit = 0.0, []
    for q, c, tau in pts:
        res = ctx.solve(q, c, tau)
        tp = 0.5 * tau
        geo = shoot(m, ctx.p, res.minimizer_v, tau, chart=ctx.p_chart,
                    t_knots=np.array([np.sqrt(tp), np.sqrt(tau)]))
        x, xc = canonical_point(m, geo.x[0], int(geo.charts[0]))
        partial = geo.energy[0] / (2.0 * np.sqrt(tp))
        sub = ctx.solve(x, xc, tp).l_value
        err = abs(sub - partial)
        worst = max(worst, err)
        if err > th["restriction"]:
            wit.append({"q": q, "tau": tau, "tau_prime": tp, "l": sub, "partial": partial})
    return _record("restriction", m, {"samples": len(pts), "tau_prime": "tau/2"},
                   {"max_abs_difference": worst}, {"abs": th["restriction"]},
                   worst <= th["restriction"], wit)


def _evolution_residual(d: LocalData):
    return d.l_tau - d.R / 2.0 + d.gn2 / 2.0 + d.l / (2.0 * d.tau)


def check_evolution_identity(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    try:
        data = ctx.usable_local()
    except InsufficientSamples as exc:
        return _record("evolution_identity", m, {}, {"error": str(exc)}, {}, False, status="error")
    res = np.array([abs(_evolution_residual(d)) for d in data])
    flat = m.kind == kern.FLAT
    tol = th["flat_equality"] if flat else th["identity"]
    frac = float(np.mean(res < tol))
    need = 1.0 if flat else th["fraction"]
    wit = [{"q": d.q, "tau": d.tau, "residual": r} for d, r in zip(data, res) if r >= tol]
    return _record("evolution_identity", m, {"samples": len(ctx.local_data()), "usable": len(data)},
                   {"max_residual": float(res.max()), "median_residual": float(np.median(res)),
                    "fraction_ok": frac},
                   {"residual": tol, "fraction": need}, frac >= need, wit)


def check_differential_inequalities(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    try:
        data = ctx.usable_local()
    except InsufficientSamples as exc:
        return _record("differential_inequalities", m, {}, {"error": str(exc)}, {}, False, status="error")
    n = m.dim
    a = np.array([d.l_tau - d.lap + d.gn2 - d.R + n / (2 * d.tau) for d in data])
    b = np.array([d.lap - d.gn2 / 2 + d.R / 2 + (d.l - n) / (2 * d.tau) for d in data])
    r = np.array([_evolution_residual(d) for d in data])
    link = float(np.max(np.abs(a + b - r)))
    flat = m.kind == kern.FLAT
    if flat:
        tol = th["flat_equality"]
        ok_pts = (np.abs(a) < tol) & (np.abs(b) < tol)
        need = 1.0
    else:
        tol = th["inequality"]
        ok_pts = (a >= -tol) & (b <= tol)
        need = th["fraction"]
    frac = float(np.mean(ok_pts))
    wit = [{"q": d.q, "tau": d.tau, "heat_slack": x, "elliptic_slack": y}
           for d, x, y, k in zip(data, a, b, ok_pts) if not k]
    return _record("differential_inequalities", m, {"samples": len(ctx.local_data()), "usable": len(data),
                                               "laplacian_step": ctx.cfg["fd_space"]},
                   {"min_heat_slack": float(a.min()), "max_elliptic_slack": float(b.max()),
                    "fraction_ok": frac, "linkage_error": link},
                   {"slack": tol, "fraction": need, "linkage": th["linkage"]},
                   frac >= need and link <= th["linkage"], wit)


def check_derivative_estimates(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    if m.curvature_class != NONNEG_CURVATURE_OPERATOR:
        return _na("derivative_estimates", m, "needs nonnegative curvature operator")
    try:
        data = [d for d in ctx.usable_local() if d.l > 1e-8]
    except InsufficientSamples as exc:
        return _record("derivative_estimates", m, {}, {"error": str(exc)}, {}, False, status="error")
    c_r = max(d.tau * d.R / d.l for d in data)
    c_g = max(d.tau * d.gn2 / d.l for d in data)
    c_t = max(d.tau * abs(d.l_tau) / d.l for d in data)
    c_th = max(d.tau * abs(d.l_tau_half) / d.l for d in data)
    stable = abs(c_t - c_th) <= th["stability"] * max(c_th, 1e-300)
    # Lipschitz form on nearby pairs; the pair gradients join the C estimate
    rng = ctx.rng("pairs")
    pairs = []
    for d in data[: int(ctx.cfg["n_pairs"])]:
        step = rng.normal(size=m.dim)
        step *= 0.05 * np.sqrt(d.tau) / np.linalg.norm(step)
        q2 = d.q + step
        r2 = ctx.solve(q2, d.chart, d.tau)
        g2 = metric_at(m, q2, d.tau, d.chart)[0]
        gr2 = r2.gradient
        if r2.l_value > 1e-8:
            c_g = max(c_g, d.tau * float(gr2 @ g2 @ gr2) / r2.l_value)
        dist = riemannian_distance(m, d.q, q2, d.tau, chart1=d.chart, chart2=d.chart)
        pairs.append((d, q2, r2.l_value, dist))
    wit = []
    lip_worst = 0.0
    for d, q2, l2, dist in pairs:
        lhs = abs(np.sqrt(d.l) - np.sqrt(l2))
        rhs = np.sqrt(c_g / (4 * d.tau)) * dist * (1 + th["lipschitz_slack"])
        lip_worst = max(lip_worst, lhs / rhs if rhs > 0 else np.inf)
        if lhs > rhs:
            wit.append({"kind": "lipschitz", "q1": d.q, "q2": q2, "tau": d.tau, "lhs": lhs, "rhs": rhs})
    # Harnack in tau at fixed q with C = the measured tau-constant
    harn_worst = 0.0
    for d in data[: int(ctx.cfg["n_pairs"])]:
        t2 = 1.5 * d.tau
        r2 = ctx.solve(d.q, d.chart, t2)
        ratio = r2.l_value / d.l
        up = (t2 / d.tau) ** c_t * (1 + th["lipschitz_slack"])
        lo = (d.tau / t2) ** c_t * (1 - th["lipschitz_slack"])
        harn_worst = max(harn_worst, ratio / up, lo / ratio)
        if not (lo <= ratio <= up):
            wit.append({"kind": "harnack", "q": d.q, "tau1": d.tau, "tau2": t2, "ratio": ratio,
                        "lower": lo, "upper": up})
    finite = all(math.isfinite(c) for c in (c_r, c_g, c_t))
    ok = finite and stable and not wit
    return _record("derivative_estimates", m, {"samples": len(data), "pairs": len(pairs)},
                   {"C_R": c_r, "C_grad": c_g, "C_tau": c_t, "C_tau_half_step": c_th,
                    "lipschitz_worst_ratio": lip_worst, "harnack_worst_ratio": harn_worst},
                   {"stability": th["stability"], "slack": th["lipschitz_slack"]}, ok, wit)


def check_min_l(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    vals, wit = {}, []
    for tau in ctx.cfg["min_l_taus"]:
        q, c, lstar = min_l(m, ctx.p, float(tau), p_chart=ctx.p_chart, seed=ctx.seed,
                            rtol=ctx.rtol, atol=1e-3 * ctx.rtol)
        vals[f"tau={tau:g}"] = lstar
        if lstar > m.dim / 2 + th["min_l"]:
            wit.append({"tau": tau, "q": q, "chart": c, "l": lstar})
    return _record("min_l", m, {"taus": ctx.cfg["min_l_taus"]}, {"min_l": vals},
                   {"bound": m.dim / 2, "slack": th["min_l"]}, not wit, wit)


def _dl_constants(ctx, model, triples, scale=1.0):
    c1, c2 = np.inf, -np.inf
    for (x, xc), (q, qc), tau in triples:
        t = tau / scale
        lx = ctx.solve(x, xc, t, model=model).l_value
        lq = ctx.solve(q, qc, t, model=model).l_value
        d = riemannian_distance(model, x, q, t, chart1=xc, chart2=qc)
        if d < 1e-8:
            continue
        for la, lb in ((lx, lq), (lq, lx)):
            c2 = max(c2, (lb - 2.0 * la) * t / d**2)
            c1 = min(c1, (lb + la + 1.0) * t / d**2)
    return c1, c2


def check_d_l_bounds(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    if m.curvature_class != NONNEG_CURVATURE_OPERATOR:
        return _na("d_l_bounds", m, "needs nonnegative curvature operator")
    nt = int(ctx.cfg["n_triples"])
    rng = ctx.rng("triples")
    taus = rng.uniform(*ctx.cfg["tau_range"], size=2 * nt)
    xmax = 1.5 * ctx.cfg["xi_max"]
    xq, xx = [], []
    for i in range(2 * nt):
        q = ctx.random_xi(rng, xmax)
        if i % 2 == 0:
            # both extremal ratios are attained near a common ray (x = q/2
            # for the upper constant, x = -q for the lower one on flat space)
            x = rng.uniform(-1.0, 1.0) * q + 0.1 * rng.normal(size=m.dim)
        else:
            x = ctx.random_xi(rng, xmax)
        xq.append(q)
        xx.append(x)
    a = ctx.points_from_xi(xx, taus)
    b = ctx.points_from_xi(xq, taus)
    triples = [((x[0], x[1]), (y[0], y[1]), t) for x, y, t in zip(a, b, taus)]
    c1, c2 = _dl_constants(ctx, m, triples[:nt])
    c1d, c2d = _dl_constants(ctx, m, triples[nt:])
    c1d, c2d = min(c1, c1d), max(c2, c2d)
    scale = float(ctx.cfg["scales"][-1]) if ctx.cfg["scales"] else 2.0
    c1s, c2s = _dl_constants(ctx, rescale(m, scale), triples[:nt], scale=scale)

    def rel(u, v):
        return abs(u - v) / max(abs(v), 1e-12)

    # C2 is reported as the smallest admissible positive constant
    c2p, c2dp, c2sp = (max(c, 1e-12) for c in (c2, c2d, c2s))
    stable = rel(c1d, c1) <= th["stability"] and rel(c2dp, c2p) <= th["stability"]
    invariant = rel(c1s, c1) <= th["rescale"] and rel(c2sp, c2p) <= th["rescale"]
    ok = c1 > 0 and math.isfinite(c2) and stable and invariant
    return _record("d_l_bounds", m, {"triples": nt, "rescale": scale},
                   {"C1": c1, "C2": c2p, "C2_raw": c2, "C1_doubled": c1d, "C2_doubled": c2dp,
                    "C1_rescaled": c1s, "C2_rescaled": c2sp},
                   {"stability": th["stability"], "rescale": th["rescale"]}, ok)


def jacobian_limit_value(model: FlowModel, p, xi, taus, *, p_chart=0, rtol=1e-11):
    """Polynomial (in tau) extrapolation of J~(tau)(xi) to tau = 0; xi in
    g(0)_p-orthonormal components."""
    g0 = metric_at(model, p, 0.0, p_chart)[0]
    v = np.asarray(xi, dtype=float) / np.sqrt(np.diag(g0))
    taus = np.sort(np.asarray(taus, dtype=float))
    geo = shoot(model, p, v, float(taus[-1]), with_jacobi=True, chart=p_chart,
                t_knots=np.sqrt(taus), rtol=rtol, atol=1e-3 * rtol)
    l = geo.energy / (2.0 * geo.t)
    jt = taus ** (-model.dim / 2) * np.exp(-l) * geo.J
    coef = np.polyfit(taus, jt, len(taus) - 1)
    return float(coef[-1]), jt


def check_jacobian_limit(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    n = m.dim
    dirs = [np.eye(n)[0]]
    if m.symmetry_at(ctx.p) != "isotropic":
        dirs.append(np.eye(n)[n - 1])
        dirs.append(np.ones(n) / np.sqrt(n))
    worst, wit, vals = 0.0, [], []
    for d in dirs:
        for r in ctx.cfg["jacobian_limit_norms"]:
            xi = float(r) * d
            lim, _ = jacobian_limit_value(m, ctx.p, xi, ctx.cfg["jacobian_limit_taus"],
                                          p_chart=ctx.p_chart, rtol=ctx.fd_rtol)
            exact = 2.0**n * np.exp(-float(xi @ xi))
            rel = abs(lim - exact) / exact
            worst = max(worst, rel)
            vals.append({"xi": xi, "limit": lim, "gaussian": exact})
            if rel > th["jacobian_limit"]:
                wit.append({"xi": xi, "limit": lim, "gaussian": exact})
    return _record("jacobian_limit", m, {"taus": ctx.cfg["jacobian_limit_taus"],
                                         "norms": ctx.cfg["jacobian_limit_norms"]},
                   {"max_relative_error": worst, "values": vals},
                   {"relative": th["jacobian_limit"]}, worst <= th["jacobian_limit"], wit)


def check_reduced_volume(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    c = ctx.curve()
    bound = c.bound
    within = bool(np.all(c.values <= bound + c.errors))
    mono = c.nonincreasing()
    strict = c.strictly_decreasing()
    measured = {"taus": c.taus, "values": c.values, "errors": c.errors, "bound": bound,
                "nonincreasing": mono, "strictly_decreasing": strict}
    if m.kind == kern.FLAT:
        dev = float(np.max(np.abs(c.values - bound)) / bound)
        spread = float((c.values.max() - c.values.min()) / bound)
        measured.update({"max_relative_deviation": dev, "relative_spread": spread})
        ok = dev <= th["flat_value"] and spread <= th["flat_constancy"]
        thr = {"value": th["flat_value"], "constancy": th["flat_constancy"]}
    else:
        ok = within and mono and strict
        thr = {"error_factor": 2.0}
    return _record("reduced_volume", m, {"grid_radial": ctx.cfg["grid_radial"],
                                         "symmetry": c.grid.symmetry}, measured, thr, ok)


def check_pointwise_jacobian(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    g = ctx.curve().grid
    n = m.dim
    on = g.mask[1:]
    a, b = g.Jt[:-1], g.Jt[1:]
    okm = b <= a * (1 + th["pointwise"])
    frac = float(np.mean(okm[on])) if on.any() else 1.0
    xi2 = np.sum(g.xi**2, axis=-1)
    gauss = 2.0**n * np.exp(-xi2)[None]
    major = g.Jt <= gauss * (1 + th["majorant"]) + 1e-300
    major_frac = float(np.mean(major[g.mask])) if g.mask.any() else 1.0
    measured = {"fraction_monotone": frac, "majorant_fraction": major_frac,
                "nodes_on": int(on.sum())}
    if m.kind == kern.FLAT:
        gb = np.broadcast_to(gauss, g.Jt.shape)
        dev = float(np.max(np.abs(g.Jt - gb)[g.mask] / gb[g.mask]))
        measured["max_relative_deviation_from_gaussian"] = dev
        ok = frac == 1.0 and dev <= th["pointwise"]
    else:
        ok = frac >= th["pointwise_fraction"] and major_frac >= th["pointwise_fraction"]
    return _record("pointwise_jacobian", m, {"taus": list(g.taus)}, measured,
                   {"relative": th["pointwise"], "fraction": th["pointwise_fraction"]}, ok)


def _tau_pair(ctx):
    t1, t2 = (float(t) for t in ctx.cfg["weak_taus"])
    return t1, t2


def _vdiff(ctx, t1, t2):
    c = ctx.curve()
    taus = list(c.taus)
    if t1 in taus and t2 in taus:
        i, j = taus.index(t1), taus.index(t2)
        return c.values[j] - c.values[i], c.errors[i] + c.errors[j]
    cc = reduced_volume_curve(ctx.model, ctx.p, [t1, t2], p_chart=ctx.p_chart, seed=ctx.seed,
                              rtol=ctx.rtol, atol=1e-3 * ctx.rtol)
    return cc.values[1] - cc.values[0], cc.errors[0] + cc.errors[1]


def _tau_grid_integral(ctx, t1, t2, integrand, symmetry="auto", n_tau=8):
    """Gauss-Legendre tau quadrature of the masked tangent sums of
    integrand(grid, tau nodes), which returns (values, |values|)."""
    x, w = np.polynomial.legendre.leggauss(n_tau)
    tn = 0.5 * (t2 - t1) * (x + 1.0) + t1
    tw = 0.5 * (t2 - t1) * w
    grid = ctx.tau_grid(t1, t2, n_tau, symmetry, tn)
    vals, absvals = integrand(grid, tn)
    return (float(masked_sum(grid, vals) @ tw), float(masked_sum(grid, absvals) @ tw))


def _heat_parts(grid, tn):
    n = grid.n
    t = tn[:, None, None]
    l_tau = grid.R / 2.0 - grid.gdot2 / 2.0 - grid.l / (2.0 * t)
    return l_tau, grid.gdot2, grid.R, n / (2.0 * t)


def check_difference_formula(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    t1, t2 = _tau_pair(ctx)

    def f(grid, tn):
        l_tau, _g2, R, nt = _heat_parts(grid, tn)
        v = (l_tau - R + nt) * grid.J * np.exp(-grid.l) * tn[:, None, None] ** (-grid.n / 2)
        return v, np.abs(v)

    integral, _ = _tau_grid_integral(ctx, t1, t2, f)
    dv, err = _vdiff(ctx, t1, t2)
    total = dv + integral
    if m.kind == kern.FLAT:
        scale = (4 * np.pi) ** (m.dim / 2)
        ok = abs(total) <= 1e-6 * scale
        thr = {"absolute": 1e-6 * scale}
    else:
        scale = abs(dv)
        ok = abs(total) <= th["difference"] * scale
        thr = {"relative": th["difference"]}
    return _record("difference_formula", m, {"tau1": t1, "tau2": t2, "tau_nodes": 8},
                   {"V_difference": dv, "integral": integral, "sum": total,
                    "relative": abs(total) / max(scale, 1e-300), "curve_error": err}, thr, ok)


def bump(center, radius):
    """phi = (1 - |x - c|^2 / r^2)^4 on the chart ball, 0 outside; returns
    callables for phi and its chart gradient (vectorized over (..., n))."""
    c = np.asarray(center, dtype=float)

    def phi(x):
        s = 1.0 - np.sum((x - c) ** 2, axis=-1) / radius**2
        return np.where(s > 0, s**4, 0.0)

    def dphi(x):
        s = 1.0 - np.sum((x - c) ** 2, axis=-1) / radius**2
        return np.where((s > 0)[..., None], (4.0 * s**3)[..., None] * (-2.0 * (x - c) / radius**2), 0.0)

    return phi, dphi


def _in_base_chart(grid, ctx):
    """Endpoints and gamma-dot re-expressed in the chart of p."""
    m = ctx.model
    x = grid.x.copy()
    gd = grid.gdot.copy()
    if m.has_charts:
        other = grid.charts != ctx.p_chart
        for idx in zip(*np.nonzero(other & np.all(np.isfinite(x), axis=-1))):
            src = m.chart(int(grid.charts[idx]))
            y = x[idx][: src.block]
            if float(y @ y) < 1e-300:
                x[idx] = np.inf
                continue
            d = src.transition_jacobian(x[idx], m.chart(ctx.p_chart))
            x[idx] = src.transition(x[idx], m.chart(ctx.p_chart))
            gd[idx] = d @ gd[idx]
    return x, gd


def check_weak_integral(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    t1, t2 = _tau_pair(ctx)
    n = m.dim

    def gaussian_phi(grid, tn):
        l_tau, g2, R, nt = _heat_parts(grid, tn)
        phi = tn[:, None, None] ** (-n / 2) * np.exp(-grid.l)
        # grad phi = -phi grad l, so grad l . grad phi = -|grad l|^2 phi
        v = -g2 * phi + (l_tau + g2 - R + nt) * phi
        return v * grid.J, np.abs(v * grid.J)

    igauss, _ = _tau_grid_integral(ctx, t1, t2, gaussian_phi)
    dv, err = _vdiff(ctx, t1, t2)
    rel313 = abs(igauss + dv) / max(abs(dv), 1e-300)

    center = np.zeros(n)
    center[0] = BUMP_CENTER
    phi, dphi = bump(center, BUMP_RADIUS)

    def bump_heat(grid, tn):
        l_tau, g2, R, nt = _heat_parts(grid, tn)
        x, gd = _in_base_chart(grid, ctx)
        xs = np.where(np.isfinite(x), x, 1e6)
        ph = phi(xs)
        v = np.einsum("tdri,tdri->tdr", gd, dphi(xs)) + (l_tau + g2 - R + nt) * ph
        v = np.nan_to_num(v * grid.J)
        return v, np.abs(v)

    heat, heat_abs = _tau_grid_integral(ctx, t1, t2, bump_heat, symmetry="none")

    def bump_elliptic(grid, tn):
        _l_tau, g2, R, _nt = _heat_parts(grid, tn)
        x, gd = _in_base_chart(grid, ctx)
        xs = np.where(np.isfinite(x), x, 1e6)
        ph = phi(xs)
        t = tn[:, None, None]
        v = -np.einsum("tdri,tdri->tdr", gd, dphi(xs)) + ph * (-g2 / 2 + R / 2 + (grid.l - n) / (2 * t))
        v = np.nan_to_num(v * grid.J)
        return v, np.abs(v)

    # a one-point "tau integral" of unit length gives the fixed-tau integral
    ell, ell_abs = _tau_grid_integral(ctx, t2 - 0.5, t2 + 0.5, bump_elliptic, symmetry="none", n_tau=1)
    if m.kind == kern.FLAT:
        okgauss = abs(igauss) <= 1e-6 * (4 * np.pi) ** (n / 2)
    else:
        okgauss = rel313 <= th["weak"]
    ok_heat = heat >= -th["weak"] * heat_abs
    ok_ell = ell <= th["weak"] * ell_abs
    return _record("weak_integral", m,
                   {"tau1": t1, "tau2": t2, "bump_center": center, "bump_radius": BUMP_RADIUS},
                   {"gaussian_weight_integral": igauss, "V_tau1_minus_V_tau2": -dv, "relative_gaussian": rel313,
                    "bump_heat": heat, "bump_heat_scale": heat_abs,
                    "bump_elliptic": ell, "bump_elliptic_scale": ell_abs, "curve_error": err},
                   {"relative": th["weak"]}, okgauss and ok_heat and ok_ell)


def soliton_values(model: FlowModel, d: LocalData, tau0: float = 0.0):
    """(operator-norm residual of Ric - g/(2(tau - tau0)) + Hess f, and
    v = tau (2 lap f - |grad f|^2 + R) + f - n) for f = l."""
    g, ginv, _ = metric_at(model, d.q, d.tau, d.chart)
    ric = curvature_at(model, d.q, d.tau, d.chart).ric
    mtx = ric - g / (2.0 * (d.tau - tau0)) + d.hess
    s = 1.0 / np.sqrt(np.diag(g))
    res = float(np.max(np.abs(np.linalg.eigvalsh(mtx * np.outer(s, s)))))
    lap = float(np.trace(ginv @ d.hess))
    v = d.tau * (2.0 * lap - d.gn2 + d.R) + d.l - model.dim
    return res, v


def check_soliton_residual(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    try:
        data = ctx.usable_local()[: int(ctx.cfg["n_soliton"])]
    except InsufficientSamples as exc:
        return _record("soliton_residual", m, {}, {"error": str(exc)}, {}, False, status="error")
    vals = [soliton_values(m, d) for d in data]
    res = np.array([r for r, _ in vals])
    vs = np.array([v for _, v in vals])
    tol = th["soliton_flat"]
    # the v-identity must vanish wherever the soliton equation holds
    linked = bool(np.all(np.abs(vs[res < tol]) < tol)) if np.any(res < tol) else True
    measured = {"max_residual": float(res.max()), "min_residual": float(res.min()),
                "max_abs_v": float(np.abs(vs).max()), "linkage": linked}
    if m.kind == kern.FLAT:
        ok = res.max() < tol and np.abs(vs).max() < tol
        thr = {"residual": tol, "v": tol}
    else:
        ok = res.max() > th["soliton_min"] and linked
        thr = {"residual_above": th["soliton_min"]}
    return _record("soliton_residual", m, {"f": "l", "tau0": 0.0, "samples": len(data)},
                   measured, thr, ok)


def check_scaling(ctx: ModelContext):
    m, th = ctx.model, ctx.cfg["thresholds"]
    data = [d for d in ctx.local_data() if isinstance(d, LocalData)][:10]
    worst_l, wit = 0.0, []
    vol = {}
    ok_v = True
    c = ctx.curve()
    for a in ctx.cfg["scales"]:
        ma = rescale(m, float(a))
        for d in data:
            la = ctx.solve(d.q, d.chart, d.tau / a, model=ma).l_value
            rel = abs(la - d.l) / max(abs(d.l), 1e-8)
            worst_l = max(worst_l, rel)
            if rel > th["scaling_l"]:
                wit.append({"scale": a, "q": d.q, "tau": d.tau, "l": d.l, "l_rescaled": la})
        ca = reduced_volume_curve(ma, ctx.p, c.taus / a, p_chart=ctx.p_chart,
                                  n_radial=int(ctx.cfg["grid_radial"]),
                                  n_radial_coarse=max(16, int(0.75 * int(ctx.cfg["grid_radial"]))),
                                  n_angular=int(ctx.cfg["grid_angular"]), seed=ctx.seed,
                                  rtol=ctx.rtol, atol=1e-3 * ctx.rtol)
        diff = np.abs(ca.values - c.values)
        allowed = ca.errors + c.errors
        vol[f"a={a:g}"] = {"max_difference": float(diff.max()), "allowed": allowed}
        if np.any(diff > allowed):
            ok_v = False
            wit.append({"scale": a, "V": c.values, "V_rescaled": ca.values})
    return _record("scaling", m, {"scales": ctx.cfg["scales"], "l_samples": len(data)},
                   {"max_relative_l": worst_l, "volume": vol},
                   {"l_relative": th["scaling_l"], "volume": "combined error bars"},
                   worst_l <= th["scaling_l"] and ok_v, wit)


CHECKS = {
    "flow_equation": check_flow_equation,
    "cross_method": check_cross_method,
    "l_bracket": check_l_bracket,
    "velocity_bound": check_velocity_bound,
    "restriction": check_restriction,
    "evolution_identity": check_evolution_identity,
    "differential_inequalities": check_differential_inequalities,
    "derivative_estimates": check_derivative_estimates,
    "min_l": check_min_l,
    "d_l_bounds": check_d_l_bounds,
    "jacobian_limit": check_jacobian_limit,
    "reduced_volume": check_reduced_volume,
    "pointwise_jacobian": check_pointwise_jacobian,
    "difference_formula": check_difference_formula,
    "weak_integral": check_weak_integral,
    "soliton_residual": check_soliton_residual,
    "scaling": check_scaling,
}


def run_check(check_id: str, ctx: ModelContext) -> dict:
    t0 = time.perf_counter()
    try:
        rec = CHECKS[check_id](ctx)
    except RGLError as exc:
        rec = _record(check_id, ctx.model, {}, {"error": f"{type(exc).__name__}: {exc}"}, {}, False,
                      status="error")
    rec["runtime_s"] = time.perf_counter() - t0
    log.info("%s %s: %s (%.1fs)", ctx.model.name, check_id, rec["status"], rec["runtime_s"])
    return rec


def run_suite(models, config: dict | None = None) -> CheckReport:
    """Run every enabled check on every model (strings or FlowModel)."""
    cfg = merge_config(config)
    t0 = time.perf_counter()
    parsed = [parse_model(m) if isinstance(m, str) else m for m in models]
    report = CheckReport(metadata={"seed": cfg["seed"], "config": cfg,
                                   "models": [m.name for m in parsed]})
    for model in parsed:
        ctx = ModelContext(model, cfg)
        for cid in CHECK_IDS:
            if cid in cfg["checks"]:
                report.records.append(run_check(cid, ctx))
    report.metadata["runtime_s"] = time.perf_counter() - t0
    report.metadata["failures"] = len(report.failures)
    return report
