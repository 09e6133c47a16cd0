"""Model catalog and pointwise geometry.

Chart models (flat torus, hyperbolic half-plane, round sphere, surfaces of
revolution) carry analytic metric, Christoffel symbols and curvature.
Frame-based models (synthetic profiles and constant-curvature spaces) only
supply the curvature endomorphism R(t) along an orbit; every orbit-level
quantity in the lab depends on R(t) alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import _kernels as K
from .errors import DegenerateInput, DomainError, FrameDrift, UnsupportedModel

FRAME_TOL = 1e-8


@dataclass(frozen=True)
class TangentVector:
    """A point of the unit tangent bundle.

    Chart models use ``point`` and ``v`` (chart components). Frame-based models
    have no chart; an orbit is labelled by its phase ``t0`` along the profile.
    """

    point: np.ndarray | None = None
    v: np.ndarray | None = None
    t0: float = 0.0

    @classmethod
    def phase(cls, t0: float = 0.0) -> TangentVector:
        return cls(None, None, float(t0))

    def as_dict(self) -> dict[str, Any]:
        if self.point is None:
            return {"t0": self.t0}
        return {"point": [float(a) for a in self.point], "v": [float(a) for a in self.v]}


@dataclass(frozen=True)
class CurvatureEndomorphism:
    matrix: np.ndarray
    t: float


class MetricModel:
    """Common interface of every catalog entry."""

    name: str = "model"
    dim: int = 2
    chart: bool = False

    @property
    def normal_dim(self) -> int:
        return self.dim - 1

    def curvature_range(self) -> tuple[float, float]:
        """(inf K, sup K) over the model (sampled for synthetic profiles)."""
        raise NotImplementedError

    def bounds(self) -> dict[str, float]:
        """c, b with -c^2 <= K <= -b^2 (b = 0 unless K is negative bounded away from 0)."""
        kmin, kmax = self.curvature_range()
        return {"c": math.sqrt(max(0.0, -kmin)), "b": math.sqrt(max(0.0, -kmax))}

    @property
    def nonpositive(self) -> bool:
        """K <= 0 everywhere: no conjugate and no focal points."""
        return self.curvature_range()[1] <= 0.0

    def params(self) -> dict[str, Any]:
        return {}

    def describe(self) -> dict[str, Any]:
        return {"name": self.name, "params": self.params()}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{self.name}({args})"


class ChartModel(MetricModel):
    chart = True
    kind: int = K.TORUS

    def __init__(self, dim: int, log_scale: float = 0.0, prm_extra: Sequence[float] = (0.0, 0.0, 0.0)):
        self.dim = int(dim)
        self.log_scale = float(log_scale)
        self._prm = np.array([self.log_scale, *prm_extra], dtype=float)
        self._prm.setflags(write=False)

    @property
    def prm(self) -> np.ndarray:
        return self._prm

    # -- pointwise geometry ---------------------------------------------
    def check_point(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.dim,):
            raise DomainError(f"{self.name}: expected {self.dim} chart coordinates, got shape {p.shape}")
        if not K.in_domain(self.kind, self._prm, p, True):
            raise DomainError(f"{self.name}: point {p.tolist()} outside the chart domain")
        return p

    def metric(self, p) -> np.ndarray:
        p = self.check_point(p)
        g = np.empty((self.dim, self.dim))
        K.metric_into(self.kind, self._prm, p, g)
        return g

    def christoffel(self, p) -> np.ndarray:
        p = self.check_point(p)
        G = np.empty((self.dim,) * 3)
        K.christoffel_into(self.kind, self._prm, p, G)
        return G

    def gauss(self, p) -> float:
        return float(K.gauss_curvature(self.kind, self._prm, self.check_point(p)))

    def riemann(self, p) -> np.ndarray:
        """Fully covariant R_{abcd} with K(v, w) = R(v, w, v, w) / |v ^ w|^2."""
        g = self.metric(p)
        k = self.gauss(p)
        return k * (np.einsum("ac,bd->abcd", g, g) - np.einsum("ad,bc->abcd", g, g))

    def volume_density(self, p) -> float:
        return float(math.sqrt(np.linalg.det(self.metric(p))))

    def volume_density_bound(self, box: np.ndarray) -> float:
        """Upper bound of sqrt(det g) over a coordinate box (rows: [lo, hi])."""
        raise NotImplementedError

    def default_box(self) -> np.ndarray:
        raise NotImplementedError

    def to_unit(self, p, v) -> TangentVector:
        p = self.check_point(p)
        v = np.asarray(v, dtype=float)
        g = self.metric(p)
        nv = math.sqrt(float(v @ g @ v))
        if not nv > 0.0:
            raise DegenerateInput("zero velocity")
        return TangentVector(p, v / nv)

    def with_log_scale(self, r: float) -> ChartModel:
        """Same model with metric multiplied by exp(2r)."""
        raise NotImplementedError


class FlatTorus(ChartModel):
    name = "FlatTorus"
    kind = K.TORUS

    def __init__(self, n: int = 2, log_scale: float = 0.0):
        if n < 2:
            raise ValueError("FlatTorus needs n >= 2")
        super().__init__(n, log_scale)

    def params(self):
        return {"n": self.dim, "log_scale": self.log_scale}

    def curvature_range(self):
        return 0.0, 0.0

    def check_point(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.dim,) or not np.all(np.isfinite(p)):
            raise DomainError(f"FlatTorus: bad point {p!r}")
        return p - np.floor(p)

    def volume_density_bound(self, box):
        return math.exp(self.dim * self.log_scale)

    def default_box(self):
        return np.array([[0.0, 1.0]] * self.dim)

    def with_log_scale(self, r):
        return FlatTorus(self.dim, self.log_scale + r)


class HyperbolicPlane(ChartModel):
    """Upper half-plane, g = (dx^2 + dy^2) / y^2, K = -1."""

    name = "HyperbolicPlane"
    kind = K.HALF_PLANE

    def __init__(self, log_scale: float = 0.0):
        super().__init__(2, log_scale)

    def params(self):
        return {"log_scale": self.log_scale}

    def curvature_range(self):
        k = -math.exp(-2.0 * self.log_scale)
        return k, k

    def volume_density_bound(self, box):
        return math.exp(2.0 * self.log_scale) / box[1, 0] ** 2

    def default_box(self):
        return np.array([[-1.0, 1.0], [1.0, 2.0]])

    def with_log_scale(self, r):
        return HyperbolicPlane(self.log_scale + r)


class RoundSphere(ChartModel):
    """Sphere of the given radius in the colatitude/longitude chart (theta, phi)."""

    name = "RoundSphere"
    kind = K.SPHERE

    def __init__(self, radius: float = 1.0):
        if not radius > 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        super().__init__(2, math.log(radius))

    def params(self):
        return {"radius": self.radius}

    def curvature_range(self):
        k = 1.0 / self.radius**2
        return k, k

    def volume_density_bound(self, box):
        lo, hi = box[0]
        s = 1.0 if lo <= math.pi / 2 <= hi else max(math.sin(lo), math.sin(hi))
        return self.radius**2 * s

    def default_box(self):
        return np.array([[math.pi / 4, 3 * math.pi / 4], [0.0, 2 * math.pi]])

    def with_log_scale(self, r):
        return RoundSphere(self.radius * math.exp(r))


_PROFILES = {"cosh": K.PROFILE_COSH, "pinched": K.PROFILE_PINCHED}


class SurfaceOfRevolution(ChartModel):
    """g = du^2 + f(u)^2 dv^2, K = -f''/f.

    Profiles: ``cosh`` (f = cosh u, K = -1) and ``pinched``
    (f = cosh u + eps cosh 2u, K between -4 and -1).
    """

    name = "SurfaceOfRevolution"
    kind = K.REVOLUTION

    def __init__(self, profile: str = "pinched", eps: float = 0.1, u_max: float = 150.0,
                 log_scale: float = 0.0):
        if profile not in _PROFILES:
            raise ValueError(f"unknown profile {profile!r}; choose from {sorted(_PROFILES)}")
        if eps < 0:
            raise ValueError("eps must be non-negative")
        self.profile = profile
        self.eps = float(eps)
        self.u_max = float(u_max)
        super().__init__(2, log_scale, (_PROFILES[profile], self.eps, self.u_max))

    def params(self):
        return {"profile": self.profile, "eps": self.eps, "u_max": self.u_max, "log_scale": self.log_scale}

    def f(self, u: float) -> tuple[float, float, float]:
        return K.profile_values(_PROFILES[self.profile], self.eps, float(u))

    def curvature_range(self):
        s = math.exp(-2.0 * self.log_scale)
        if self.profile == "cosh" or self.eps == 0.0:
            return -s, -s
        # -f''/f is monotone in |u|: value at the waist and the 4x limit
        at0 = -(1 + 4 * self.eps) / (1 + self.eps)
        return -4.0 * s, at0 * s

    def volume_density_bound(self, box):
        lo, hi = box[0]
        far = max(abs(lo), abs(hi))
        return math.exp(2.0 * self.log_scale) * self.f(far)[0]

    def default_box(self):
        return np.array([[-1.0, 1.0], [0.0, 2 * math.pi]])

    def with_log_scale(self, r):
        return SurfaceOfRevolution(self.profile, self.eps, self.u_max, self.log_scale + r)


class SyntheticProfile(MetricModel):
    """Prescribed curvature endomorphism along a single orbit.

    R(t) = const + sum_k (C_k cos(w_k t) + S_k sin(w_k t)), symmetric
    (dim-1) x (dim-1) matrices.
    """

    name = "SyntheticProfile"

    def __init__(self, dim: int, const, terms: Sequence[tuple[float, Any, Any]] = (),
                 k_range: tuple[float, float] | None = None):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = int(dim)
        m = self.dim - 1
        self.const = _sym(const, m)
        self.terms = tuple((float(w), _sym(c, m), _sym(s, m)) for w, c, s in terms)
        self._k_range = k_range

    @classmethod
    def scalar(cls, dim: int, mean: float, terms: Sequence[tuple[float, float, float]] = ()):
        """R(t) = (mean + sum a cos(w t) + b sin(w t)) I."""
        eye = np.eye(dim - 1)
        return cls(dim, mean * eye, [(w, a * eye, b * eye) for w, a, b in terms])

    def params(self):
        return {
            "dim": self.dim,
            "const": self.const.tolist(),
            "terms": [[w, c.tolist(), s.tolist()] for w, c, s in self.terms],
        }

    def sample(self, t) -> np.ndarray:
        """R at each time in ``t``; shape (len(t), m, m)."""
        t = np.asarray(t, dtype=float).reshape(-1)
        out = np.broadcast_to(self.const, (t.size,) + self.const.shape).copy()
        for w, c, s in self.terms:
            out += np.cos(w * t)[:, None, None] * c + np.sin(w * t)[:, None, None] * s
        return out

    def at(self, t: float) -> np.ndarray:
        return self.sample([t])[0]

    def curvature_range(self):
        if self._k_range is not None:
            return self._k_range
        if not self.terms:
            ev = np.linalg.eigvalsh(self.const)
            return float(ev[0]), float(ev[-1])
        wmin = min(abs(w) for w, _, _ in self.terms if w != 0) if any(w != 0 for w, _, _ in self.terms) else 1.0
        span = 4 * math.pi / wmin
        ev = np.linalg.eigvalsh(self.sample(np.linspace(0.0, span, 8193)))
        return float(ev[:, 0].min()), float(ev[:, -1].max())

    def rescaled(self, r: float) -> SyntheticProfile:
        """Profile seen by unit-speed geodesics after g -> exp(2r) g: exp(-2r) R(exp(-r) t)."""
        a = math.exp(-2.0 * r)
        kr = None if self._k_range is None else (a * self._k_range[0], a * self._k_range[1])
        return SyntheticProfile(self.dim, a * self.const,
                                [(w * math.exp(-r), a * c, a * s) for w, c, s in self.terms], kr)


class ConstantCurvatureSpace(SyntheticProfile):
    """Space form of dimension n and curvature K, realized through R(t) = K I."""

    name = "ConstantCurvatureSpace"

    def __init__(self, n: int = 3, K: float = -1.0):
        self.K = float(K)
        super().__init__(n, self.K * np.eye(n - 1), (), (self.K, self.K))

    def params(self):
        return {"n": self.dim, "K": self.K}

    def rescaled(self, r):
        return ConstantCurvatureSpace(self.dim, self.K * math.exp(-2.0 * r))


def _sym(a, m: int) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 0:
        a = a * np.eye(m)
    if a.shape != (m, m):
        raise ValueError(f"expected a {m}x{m} matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("curvature matrices must be symmetric")
    a = 0.5 * (a + a.T)
    a.setflags(write=False)
    return a


def random_profile(rng: np.random.Generator, dim: int = 2, k_min: float = -4.0, k_max: float = -1.0,
                   harmonics: int = 3, period: float | None = None) -> SyntheticProfile:
    """Random trigonometric profile whose R(t) has every eigenvalue in [k_min, k_max].

    R(t) = Q diag(d_i(t)) Q^T with a fixed random rotation Q and
    d_i(t) = mid + half * s_i(t), |s_i| <= 1. With ``period`` the frequencies
    are integer multiples of 2 pi / period, so R is exactly periodic.
    """
    m = dim - 1
    mid, half = 0.5 * (k_min + k_max), 0.5 * (k_max - k_min)
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    if period is None:
        freqs = rng.uniform(0.3, 2.0, size=harmonics)
    else:
        freqs = 2 * math.pi / period * np.arange(1, harmonics + 1)
    amps = rng.uniform(0.2, 1.0, size=(m, harmonics))
    amps /= amps.sum(axis=1, keepdims=True)
    phases = rng.uniform(0.0, 2 * math.pi, size=(m, harmonics))
    terms = []
    for h, w in enumerate(freqs):
        # a cos(wt + p) = a cos p cos wt - a sin p sin wt
        c = q @ np.diag(half * amps[:, h] * np.cos(phases[:, h])) @ q.T
        s = q @ np.diag(-half * amps[:, h] * np.sin(phases[:, h])) @ q.T
        terms.append((float(w), c, s))
    return SyntheticProfile(dim, mid * np.eye(m), terms, (k_min, k_max))


# -- pointwise operations ----------------------------------------------------

def _require_chart(model: MetricModel) -> ChartModel:
    if not model.chart:
        raise UnsupportedModel(f"{model.name} is frame-based and has no chart")
    return model  # type: ignore[return-value]


def metric_tensor(model: MetricModel, p) -> np.ndarray:
    return _require_chart(model).metric(p)


def christoffel(model: MetricModel, p) -> np.ndarray:
    """Gamma[k, i, j] = Gamma^k_{ij}."""
    return _require_chart(model).christoffel(p)


def sectional_curvature(model: MetricModel, p, v, w) -> float:
    m = _require_chart(model)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    g = m.metric(p)
    vv, ww, vw = v @ g @ v, w @ g @ w, v @ g @ w
    area2 = vv * ww - vw * vw
    if not vv > 0 or not ww > 0 or area2 <= 1e-10 * vv * ww:
        raise DegenerateInput("v and w are (numerically) linearly dependent")
    # g-orthonormalize first; dividing by a small area^2 amplifies cancellation
    e1 = v / math.sqrt(vv)
    w = w - (w @ g @ e1) * e1
    e2 = w / math.sqrt(w @ g @ w)
    return float(np.einsum("abcd,a,b,c,d->", m.riemann(p), e1, e2, e1, e2))


def orthonormal_frame(model: ChartModel, p, v) -> np.ndarray:
    """Rows E_1..E_{n-1} completing the unit vector v to a g-orthonormal basis."""
    g = model.metric(p)
    v = np.asarray(v, dtype=float)
    basis = [v / math.sqrt(v @ g @ v)]
    for e in np.eye(model.dim):
        w = e.copy()
        for b in basis:
            w -= (w @ g @ b) * b
        nw = math.sqrt(max(w @ g @ w, 0.0))
        if nw > 1e-8:
            basis.append(w / nw)
        if len(basis) == model.dim:
            break
    return np.array(basis[1:])


def endomorphism_at(model: ChartModel, p, v, frame) -> np.ndarray:
    n = model.dim
    y = np.concatenate([np.asarray(p, float), np.asarray(v, float), np.asarray(frame, float).ravel()])
    out = np.empty((n - 1, n - 1))
    K.endomorphism_into(model.kind, model.prm, n, y, np.empty((n, n)), out)
    return out


def ricci_along(model: MetricModel, theta: TangentVector) -> float:
    """Ric(x, v) = tr R / (n - 1) for a g-orthonormal frame normal to v."""
    if model.chart:
        frame = orthonormal_frame(model, theta.point, theta.v)
        R = endomorphism_at(model, theta.point, theta.v, frame)
    else:
        R = model.at(theta.t0)
    return float(np.trace(R) / model.normal_dim)


def frame_defect(model: ChartModel, point, velocity, frame) -> float:
    """Max deviation of the Gram matrix of {v, E_i} from the identity."""
    basis = np.vstack([velocity, frame])
    gram = basis @ model.metric(point) @ basis.T
    return float(np.abs(gram - np.eye(model.dim)).max())


def curvature_endomorphism(model: MetricModel, orbit) -> CurvatureEndomorphism:
    """R(t) in the orbit's parallel frame (the prescribed R(t) for frame-based models)."""
    if not model.chart:
        return CurvatureEndomorphism(model.at(orbit.t), float(orbit.t))
    drift = frame_defect(model, orbit.point, orbit.velocity, orbit.frame)
    if drift > FRAME_TOL:
        raise FrameDrift(f"frame orthonormality defect {drift:.3e} exceeds {FRAME_TOL:g}")
    return CurvatureEndomorphism(endomorphism_at(model, orbit.point, orbit.velocity, orbit.frame), float(orbit.t))


# -- catalog ---------------------------------------------------------------

CATALOG: dict[str, dict[str, Any]] = {
    "FlatTorus": {"params": {"n": 2, "log_scale": 0.0}, "curvature": "K = 0"},
    "HyperbolicPlane": {"params": {"log_scale": 0.0}, "curvature": "K = -1 (half-plane chart)"},
    "RoundSphere": {"params": {"radius": 1.0}, "curvature": "K = 1/radius^2 (colatitude chart)"},
    "SurfaceOfRevolution": {
        "params": {"profile": "pinched", "eps": 0.1, "u_max": 150.0, "log_scale": 0.0},
        "curvature": "K = -f''/f; cosh: -1, pinched: in [-4, -1]",
    },
    "ConstantCurvatureSpace": {"params": {"n": 3, "K": -1.0}, "curvature": "R(t) = K I (frame-based)"},
    "SyntheticProfile": {
        "params": {"dim": 2, "const": [[-1.0]], "terms": [[1.0, [[0.0]], [[-0.5]]]]},
        "curvature": "R(t) = const + sum C cos(wt) + S sin(wt) (frame-based)",
    },
    "RandomProfile": {
        "params": {"dim": 2, "k_min": -4.0, "k_max": -1.0, "harmonics": 3, "seed": 0, "period": None},
        "curvature": "random trigonometric R(t) with eigenvalues in [k_min, k_max]",
    },
}


def build_model(name: str, params: Mapping[str, Any] | None = None) -> MetricModel:
    """Instantiate a catalog model from its name and parameter map."""
    p = dict(params or {})
    if name == "FlatTorus":
        return FlatTorus(int(p.pop("n", 2)), float(p.pop("log_scale", 0.0)), **_no_extra(name, p))
    if name == "HyperbolicPlane":
        return HyperbolicPlane(float(p.pop("log_scale", 0.0)), **_no_extra(name, p))
    if name == "RoundSphere":
        return RoundSphere(float(p.pop("radius", 1.0)), **_no_extra(name, p))
    if name == "SurfaceOfRevolution":
        return SurfaceOfRevolution(str(p.pop("profile", "pinched")), float(p.pop("eps", 0.1)),
                                   float(p.pop("u_max", 150.0)), float(p.pop("log_scale", 0.0)),
                                   **_no_extra(name, p))
    if name == "ConstantCurvatureSpace":
        return ConstantCurvatureSpace(int(p.pop("n", 3)), float(p.pop("K", -1.0)), **_no_extra(name, p))
    if name == "SyntheticProfile":
        dim = int(p.pop("dim"))
        const = p.pop("const")
        terms = [(w, c, s) for w, c, s in p.pop("terms", [])]
        return SyntheticProfile(dim, const, terms, **_no_extra(name, p))
    if name == "RandomProfile":
        rng = np.random.default_rng(int(p.pop("seed", 0)))
        period = p.pop("period", None)
        return random_profile(rng, int(p.pop("dim", 2)), float(p.pop("k_min", -4.0)),
                              float(p.pop("k_max", -1.0)), int(p.pop("harmonics", 3)),
                              None if period is None else float(period), **_no_extra(name, p))
    raise KeyError(f"unknown model {name!r}; catalog: {sorted(CATALOG)}")


def _no_extra(name: str, rest: dict) -> dict:
    if rest:
        raise TypeError(f"{name}: unexpected parameters {sorted(rest)}")
    return {}
