"""Homothetic rescaling g_r = e^{2r} g and the growth estimates it interacts with.

Scaling a metric by e^{2r} multiplies curvature by e^{-2r} and slows unit
speed geodesics by e^r; the map h(x, v) = (x, e^{-r} v) conjugates the two
geodesic flows with the time change s(t) = e^r t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import InsufficientSamples, NotUnstable, RiccatiLabError, UnsupportedModel
from .integrator import DEFAULT_CONFIG, IntegratorConfig, _steps, _Track, advance_orbit, initial_state
from .lyapunov import unstable_seed
from .models import (ChartModel, FlatTorus, MetricModel, RoundSphere, SurfaceOfRevolution, SyntheticProfile,
                     TangentVector)

CURVATURE_CHECK_TOL = 1e-9


@dataclass(frozen=True)
class ScaledModel:
    """``base`` with its metric multiplied by e^{2r}; ``model`` is the rescaled chart model."""

    base: ChartModel
    r: float
    model: ChartModel
    checked_samples: int = 0
    max_curvature_defect: float = 0.0

    def lift(self, theta: TangentVector) -> TangentVector:
        """h(x, v) = (x, e^{-r} v): unit vectors of the base to unit vectors of the scaled metric."""
        return TangentVector(np.array(theta.point, float), math.exp(-self.r) * np.asarray(theta.v, float), theta.t0)


def _random_points(model: ChartModel, rng: np.random.Generator, n: int) -> np.ndarray:
    box = model.default_box()
    return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((n, model.dim))


def scale_metric(base: MetricModel, r: float, samples: int = 100, seed: int = 0) -> ScaledModel:
    """Rescale a chart model's metric by e^{2r}, checking g and K on random points.

    Frame-based profiles have no chart to rescale; use :func:`scale_profile`.
    """
    if not base.chart:
        raise UnsupportedModel(f"{base.name} is frame-based; rescale its profile with scale_profile")
    r = float(r)
    scaled = base.with_log_scale(r)
    rng = np.random.default_rng(seed)
    s2 = math.exp(2.0 * r)
    worst = 0.0
    for p in _random_points(base, rng, samples):
        g_err = np.abs(scaled.metric(p) - s2 * base.metric(p)).max() / max(1.0, np.abs(s2 * base.metric(p)).max())
        k_err = abs(scaled.gauss(p) * s2 - base.gauss(p))
        worst = max(worst, k_err)
        if g_err > 1e-12 or k_err > CURVATURE_CHECK_TOL:
            raise RiccatiLabError(f"rescaled {base.name} fails the scaling check at {p.tolist()}")
    return ScaledModel(base, r, scaled, samples, worst)


def scale_profile(profile: SyntheticProfile, r: float) -> SyntheticProfile:
    """The profile seen along the rescaled orbit: e^{-2r} R(e^{-r} t)."""
    return profile.rescaled(r)


def _periods(model: ChartModel) -> np.ndarray:
    """Coordinate periods (0 for non-periodic coordinates)."""
    P = np.zeros(model.dim)
    if isinstance(model, FlatTorus):
        P[:] = 1.0
    elif isinstance(model, (RoundSphere, SurfaceOfRevolution)):
        P[1] = 2.0 * math.pi
    return P


def _wrapped_diff(a, b, P) -> np.ndarray:
    d = np.asarray(a, float) - np.asarray(b, float)
    per = P > 0
    d[per] = (d[per] + 0.5 * P[per]) % P[per] - 0.5 * P[per]
    return d


def homothety_conjugacy_residual(model: ChartModel, r: float, theta: TangentVector, t_grid: Sequence[float],
                                 config: IntegratorConfig = DEFAULT_CONFIG) -> float:
    """max over t of |x_M(t) - x_{M_r}(e^r t)| + |e^{-r} v_M(t) - v_{M_r}(e^r t)| in the chart.

    The rescaled flow runs with steps e^r times longer, so both sides take
    the same number of steps.
    """
    sm = scale_metric(model, r, samples=8)
    P = _periods(model)
    er = math.exp(r)
    cfg_r = replace(config, dt=config.dt * er)
    a = initial_state(model, theta)
    b = initial_state(sm.model, sm.lift(theta))
    t_prev = 0.0
    worst = 0.0
    for t in sorted(float(x) for x in t_grid):
        if t > t_prev:
            a = advance_orbit(model, a, t - t_prev, config)
            b = advance_orbit(sm.model, b, er * (t - t_prev), cfg_r)
            t_prev = t
        dx = np.linalg.norm(_wrapped_diff(a.point, b.point, P))
        dv = np.linalg.norm(a.velocity / er - b.velocity)
        worst = max(worst, float(dx + dv))
    return worst


# -- reparametrizations ---------------------------------------------------

@dataclass(frozen=True)
class ReparametrizationProbe:
    """Samples (t, s(t)) of a time change and a claimed slope ``a`` for s(t) >= a t."""

    t: np.ndarray
    s: np.ndarray
    a: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if t.ndim != 1 or t.shape != s.shape:
            raise ValueError("t and s must be 1-d arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("t must be strictly increasing")
        if np.any(np.diff(s) < 0):
            raise ValueError("s must be monotone")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)

    @classmethod
    def from_function(cls, fn, t0: float = 1.0, t1: float = 1e4, per_decade: int = 10, a: float = 1.0):
        t = geometric_grid(t0, t1, per_decade)
        return cls(t, np.array([fn(x) for x in t]), a)

    def compose_homothety(self, r0: float) -> ReparametrizationProbe:
        """u(s(t)) with u(t) = e^{r0} t; slope becomes e^{r0} a."""
        return ReparametrizationProbe(self.t, math.exp(r0) * self.s, math.exp(r0) * self.a)


def geometric_grid(t0: float, t1: float, per_decade: int = 10) -> np.ndarray:
    n = max(2, int(round(per_decade * math.log10(t1 / t0))) + 1)
    return np.geomspace(t0, t1, n)


def reparametrization_ratio(probe: ReparametrizationProbe, tol: float = 1e-12) -> tuple[float, float, bool]:
    """(min, max) of s(t)/t over the trailing half of the samples, and whether s(t) >= a t."""
    t, s = probe.t, probe.s
    if len(t) < 10:
        raise InsufficientSamples(f"need at least 10 samples, got {len(t)}")
    if not (t[0] > 0 and t[-1] >= 10.0 * t[0]):
        raise InsufficientSamples("samples must span at least a decade of positive t")
    ratio = s[len(t) // 2:] / t[len(t) // 2:]
    holds = bool(np.all(s >= probe.a * t - tol * np.maximum(1.0, probe.a * t)))
    return float(ratio.min()), float(ratio.max()), holds


# -- growth of unstable vectors --------------------------------------------

@dataclass
class GrowthRecord:
    t: np.ndarray
    norms: np.ndarray  # Sasaki norm of d phi^t (eta)
    eta_norm: float
    C: float
    lam: float
    c: float
    lower_slack: np.ndarray  # relative: (|d phi eta| - C lam^-t |eta|) / |d phi eta|
    upper_slack: np.ndarray  # relative: (e^{ct} sqrt(1+c^2) |eta| - |d phi eta|) / |d phi eta|
    exponent: float
    pinch_gap: float  # log of upper / lower envelope at the final time
    unstable_defect: float
    extra: dict = field(default_factory=dict)

    @property
    def min_lower_slack(self) -> float:
        return float(self.lower_slack.min())

    @property
    def min_upper_slack(self) -> float:
        return float(self.upper_slack.min())

    def as_dict(self) -> dict:
        return {
            "C": self.C, "lambda": self.lam, "c": self.c, "exponent": self.exponent,
            "min_lower_slack": self.min_lower_slack, "min_upper_slack": self.min_upper_slack,
            "pinch_gap": self.pinch_gap, "unstable_defect": self.unstable_defect,
            "T": float(self.t[-1]),
        }


def growth_estimate_check(model: MetricModel, theta: TangentVector, eta=None, T: float = 10.0,
                          C: float | None = None, lam: float | None = None, n_grid: int = 101,
                          config: IntegratorConfig = DEFAULT_CONFIG, limit_tol: float = 1e-10) -> GrowthRecord:
    """Compare |d phi^t eta| with C lam^{-t} |eta| and e^{ct} sqrt(1 + c^2) |eta|.

    ``eta`` is a normal Jacobi pair (x, y) of length 2(n-1) or just x, in
    which case y = U_u x. ``C=None`` calibrates C at t = 0; ``lam=None``
    uses e^{-c}. The exponent is the least-squares log-slope over the
    trailing half of the grid.
    """
    m = model.normal_dim
    c = model.bounds()["c"]
    lam = math.exp(-c) if lam is None else float(lam)
    U = unstable_seed(model, theta, config, limit_tol).U0
    if eta is None:
        eta = np.zeros(m)
        eta[0] = 1.0
    eta = np.asarray(eta, dtype=float).ravel()
    if eta.size == m:
        eta = np.concatenate([eta, U @ eta])
    if eta.size != 2 * m:
        raise ValueError(f"eta must have {m} or {2 * m} components")
    x, y = eta[:m], eta[m:]
    eta_norm = float(np.linalg.norm(eta))
    defect = float(np.linalg.norm(y - U @ x)) / eta_norm
    if defect > 1e-6:
        raise NotUnstable(f"eta is {defect:.3e} away from the unstable subspace")

    t = np.linspace(0.0, T, n_grid)
    steps = _steps(T / (n_grid - 1), config.dt)
    dt = (T / (n_grid - 1)) / steps
    tr = _Track(model, theta, dt, 1, config)
    J = x.reshape(m, 1).copy()
    Jp = y.reshape(m, 1).copy()
    norms = np.empty(n_grid)
    norms[0] = eta_norm
    for i in range(1, n_grid):
        K.jacobi_sweep(tr.take(steps), dt, J, Jp)
        norms[i] = math.sqrt(float((J**2).sum() + (Jp**2).sum()))
    if C is None:
        C = norms[0] / eta_norm
    lower = C * lam ** (-t) * eta_norm
    upper = np.exp(c * t) * math.sqrt(1.0 + c * c) * eta_norm
    tail = t >= 0.5 * T
    exponent = float(np.polyfit(t[tail], np.log(norms[tail]), 1)[0])
    pinch = math.log(math.sqrt(1.0 + c * c) / C) + (c + math.log(lam)) * T
    return GrowthRecord(t, norms, eta_norm, float(C), lam, c, (norms - lower) / norms, (upper - norms) / norms,
                        exponent, pinch, defect)
