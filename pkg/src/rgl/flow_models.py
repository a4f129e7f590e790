"""Explicit complete solutions of the backward Ricci flow dg/dtau = 2 Ric.

Models are immutable; every evaluator is a pure function of the model,
a chart point and a time.  Built-ins are ``flat(n)``, ``sphere(n, r0)``,
``cylinder(r0)`` (round S^2 x R) and ``cigar(a0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import _kernels as K
from .errors import ConfigError, NonpositiveScale, OutOfChart, TimeOutOfRange

NONNEG_CURVATURE_OPERATOR = "nonneg_curvature_operator"
BOUNDED_SECTIONAL = "bounded_sectional"

# stereographic chart domains: coordinate radius at most this
STEREO_DOMAIN_RADIUS = 10.0
SWITCH_RADIUS = 2.0


@dataclass(frozen=True)
class Chart:
    """A coordinate chart.  ``block`` is the number of leading coordinates on
    which the stereographic transition acts (0 for a global chart); the
    transition is y -> S y / |y|^2 with S negating the last block
    coordinate, which keeps both charts equally oriented."""

    chart_id: int
    dim: int
    block: int = 0
    domain_radius: float = np.inf

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,) or not np.all(np.isfinite(x)):
            return False
        return float(np.linalg.norm(x[: self.block])) <= self.domain_radius

    def transition(self, x, target: "Chart"):
        """Coordinates of the chart point ``x`` in ``target``."""
        x = np.array(x, dtype=float)
        if target.chart_id == self.chart_id:
            return x
        y = x[: self.block]
        r2 = float(y @ y)
        if r2 == 0.0:
            raise OutOfChart(f"point {x} is the pole of chart {target.chart_id}")
        x[: self.block] = y / r2
        x[self.block - 1] = -x[self.block - 1]
        return x

    def transition_jacobian(self, x, target: "Chart"):
        x = np.asarray(x, dtype=float)
        d = np.eye(self.dim)
        if target.chart_id == self.chart_id:
            return d
        y = x[: self.block]
        r2 = float(y @ y)
        d[: self.block, : self.block] = np.eye(self.block) / r2 - 2.0 * np.outer(y, y) / r2**2
        d[self.block - 1, :] *= -1.0
        return d


@dataclass(frozen=True)
class CurvaturePack:
    ric: np.ndarray
    scalar: float
    grad_scalar: np.ndarray
    christoffel: np.ndarray  # christoffel[k, i, j] = Gamma^k_ij


@dataclass(frozen=True)
class FlowModel:
    name: str
    dim: int
    kind: int
    block: int
    params: tuple  # (scale a, model parameter)
    curvature_class: str
    time_horizon: float = np.inf
    atlas: tuple = field(default=(), compare=False)

    @property
    def has_charts(self) -> bool:
        return len(self.atlas) > 1

    @property
    def scale(self) -> float:
        return self.params[0]

    @property
    def param_array(self) -> np.ndarray:
        return np.array(self.params, dtype=float)

    def chart(self, chart_id: int) -> Chart:
        try:
            return self.atlas[chart_id]
        except IndexError:
            raise OutOfChart(f"{self.name} has no chart {chart_id}") from None

    def spec_string(self) -> str:
        return self.name

    def ricci_upper_bound(self) -> float:
        """Sup of the Ricci eigenvalues (w.r.t. g) over M x [0, T)."""
        a, c = self.params
        if self.kind == K.FLAT:
            return 0.0
        if self.kind == K.SPHERE:
            return a * (self.dim - 1) / c**2
        if self.kind == K.CYLINDER:
            return a / c**2
        return 2.0 * a

    def ricci_lower_bound(self) -> float:
        """c >= 0 with Ric >= -c g; zero for every built-in model."""
        return 0.0

    def symmetry_at(self, x, chart: int = 0):
        """'isotropic' when every rotation of T_pM (w.r.t. g(0)_p) is induced
        by an isometry fixing p for all tau, 'axial' for rotations of the
        first two orthonormal directions only, else None."""
        x = np.asarray(x, dtype=float)
        if self.kind in (K.FLAT, K.SPHERE):
            return "isotropic"
        if self.kind == K.CYLINDER:
            return "axial"
        if np.allclose(x, 0.0, atol=1e-14):
            return "isotropic"
        return None


def _atlas(dim: int, block: int, stereo: bool) -> tuple:
    if not stereo:
        return (Chart(0, dim),)
    return (Chart(0, dim, block, STEREO_DOMAIN_RADIUS), Chart(1, dim, block, STEREO_DOMAIN_RADIUS))


def flat(n: int = 2) -> FlowModel:
    n = int(n)
    if n < 2:
        raise ConfigError("flat model needs n >= 2")
    return FlowModel(f"flat:{n}", n, K.FLAT, n, (1.0, 0.0), BOUNDED_SECTIONAL, atlas=_atlas(n, n, False))


def sphere(n: int = 2, r0: float = 1.0) -> FlowModel:
    n, r0 = int(n), float(r0)
    if n < 2 or r0 <= 0:
        raise ConfigError("sphere model needs n >= 2 and r0 > 0")
    return FlowModel(f"sphere:{n}:{r0:g}", n, K.SPHERE, n, (1.0, r0), NONNEG_CURVATURE_OPERATOR,
                     atlas=_atlas(n, n, True))


def cylinder(r0: float = 1.0) -> FlowModel:
    r0 = float(r0)
    if r0 <= 0:
        raise ConfigError("cylinder model needs r0 > 0")
    return FlowModel(f"cylinder:{r0:g}", 3, K.CYLINDER, 2, (1.0, r0), NONNEG_CURVATURE_OPERATOR,
                     atlas=_atlas(3, 2, True))


def cigar(a0: float = 1.0) -> FlowModel:
    a0 = float(a0)
    if a0 <= 0:
        raise ConfigError("cigar model needs a0 > 0")
    return FlowModel(f"cigar:{a0:g}", 2, K.CIGAR, 2, (1.0, a0), NONNEG_CURVATURE_OPERATOR,
                     atlas=_atlas(2, 2, False))


_BUILDERS: dict[str, tuple[Callable, tuple]] = {
    "flat": (flat, (int,)),
    "sphere": (sphere, (int, float)),
    "cylinder": (cylinder, (float,)),
    "cigar": (cigar, (float,)),
}


def parse_model(text: str) -> FlowModel:
    """Parse ``flat:n``, ``sphere:n:r0``, ``cylinder:r0`` or ``cigar:a0``.

    An optional ``@a`` suffix applies :func:`rescale`, e.g. ``cigar:1@2``.
    """
    text = text.strip()
    scale = None
    if "@" in text:
        text, scale_text = text.split("@", 1)
        try:
            scale = float(scale_text)
        except ValueError:
            raise ConfigError(f"bad scale in model string {text!r}") from None
    head, *rest = text.split(":")
    if head not in _BUILDERS:
        raise ConfigError(f"unknown model {head!r}; expected one of {sorted(_BUILDERS)}")
    builder, types = _BUILDERS[head]
    if len(rest) > len(types):
        raise ConfigError(f"too many parameters for {head}: {text!r}")
    try:
        args = [tp(v) for tp, v in zip(types, rest)]
    except ValueError:
        raise ConfigError(f"bad parameters in model string {text!r}") from None
    model = builder(*args)
    if scale is not None:
        model = rescale(model, scale)
    return model


def rescale(model: FlowModel, a: float) -> FlowModel:
    """The parabolically rescaled flow g_a(tau) = g(a tau) / a."""
    a = float(a)
    if not a > 0:
        raise NonpositiveScale(f"scale must be positive, got {a}")
    base = model.name.split("@")[0]
    new_scale = model.params[0] * a
    name = base if new_scale == 1.0 else f"{base}@{new_scale:g}"
    return replace(model, name=name, params=(new_scale, model.params[1]),
                   time_horizon=model.time_horizon / a)


def _check(model: FlowModel, x, tau: float, chart: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not model.chart(chart).contains(x):
        raise OutOfChart(f"{x} is outside chart {chart} of {model.name}")
    if not (0.0 <= tau < model.time_horizon):
        raise TimeOutOfRange(f"tau={tau} outside [0, {model.time_horizon})")
    return x


def _terms(model: FlowModel, x, tau: float):
    return K.block_terms(model.kind, model.dim, model.block, model.param_array,
                         np.ascontiguousarray(x[: model.block]), float(tau))


def _metric(model: FlowModel, x, tau: float) -> np.ndarray:
    phi, *_rest, c_line = _terms(model, x, tau)
    k = model.block
    diag = np.full(model.dim, c_line)
    diag[:k] = np.exp(2.0 * phi)
    return np.diag(diag)


def metric_at(model: FlowModel, x, tau: float, chart: int = 0):
    """Return (g, g^-1, sqrt(det g)) at chart point x and time tau."""
    x = _check(model, x, tau, chart)
    g = _metric(model, x, tau)
    d = np.diag(g)
    return g, np.diag(1.0 / d), float(np.sqrt(np.prod(d)))


def curvature_at(model: FlowModel, x, tau: float, chart: int = 0) -> CurvaturePack:
    x = _check(model, x, tau, chart)
    phi, dphi, _h, m, _dm, R, dR, _hR, _c = _terms(model, x, tau)
    n, k = model.dim, model.block
    ric = np.zeros((n, n))
    ric[:k, :k] = m * np.exp(2.0 * phi) * np.eye(k)
    grad = np.zeros(n)
    grad[:k] = dR
    gam = np.zeros((n, n, n))
    eye = np.eye(k)
    gam[:k, :k, :k] = (np.einsum("ab,c->abc", eye, dphi) + np.einsum("ac,b->abc", eye, dphi)
                       - np.einsum("bc,a->abc", eye, dphi))
    return CurvaturePack(ric=ric, scalar=float(R), grad_scalar=grad, christoffel=gam)


def flow_residual(model: FlowModel, x, tau: float, h: float = 1e-3, chart: int = 0) -> float:
    """g(tau)-operator norm of dg/dtau - 2 Ric, with dg/dtau from the
    fourth-order central stencil at tau +- h, tau +- 2h."""
    if tau - 2.0 * h < 0.0 or tau + 2.0 * h >= model.time_horizon:
        raise TimeOutOfRange(f"tau +- 2h = {tau} +- {2 * h} leaves [0, T)")
    x = _check(model, x, tau, chart)
    gm = [_metric(model, x, tau + j * h) for j in (-2, -1, 1, 2)]
    dg = (gm[0] - 8.0 * gm[1] + 8.0 * gm[2] - gm[3]) / (12.0 * h)
    ric = curvature_at(model, x, tau, chart).ric
    g = _metric(model, x, tau)
    s = 1.0 / np.sqrt(np.diag(g))
    t = (dg - 2.0 * ric) * np.outer(s, s)
    return float(np.max(np.abs(np.linalg.eigvalsh(t))))


def canonical_point(model: FlowModel, x, chart: int = 0):
    """Re-express (x, chart) in the chart where the block radius is <= 1."""
    x = np.asarray(x, dtype=float)
    if not model.has_charts:
        return x, chart
    if np.linalg.norm(x[: model.block]) <= 1.0:
        return x, chart
    other = 1 - chart
    return model.chart(chart).transition(x, model.chart(other)), other


def to_chart(model: FlowModel, x, chart: int, target: int) -> np.ndarray:
    if chart == target:
        return np.asarray(x, dtype=float)
    return model.chart(chart).transition(x, model.chart(target))


def embed_sphere(y, chart: int) -> np.ndarray:
    """Unit-sphere point for stereographic block coordinates y."""
    y = np.array(y, dtype=float)
    r2 = float(y @ y)
    if chart == 0:
        return np.append(2.0 * y, 1.0 - r2) / (1.0 + r2)
    y[-1] = -y[-1]
    return np.append(2.0 * y, r2 - 1.0) / (1.0 + r2)
