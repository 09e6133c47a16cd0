"""Geodesic flow, parallel frames, Jacobi fields and Riccati solutions.

Everything downstream of the geodesic is driven by curvature samples R(t)
taken at every half step of an RK4 integration, so frame-based and chart
models share one Jacobi/Riccati code path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import _kernels as K
from .errors import ConjugatePointError, DomainExit, NoConvergence
from .models import ChartModel, MetricModel, TangentVector, orthonormal_frame


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    method: str = "RK4"
    frame_reortho_every: int = 100
    blowup_threshold: float = 1e6
    symmetrize_each_step: bool = True
    chunk_steps: int = 16384

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.blowup_threshold > 0:
            raise ValueError("blowup_threshold must be positive")
        if self.method != "RK4":
            raise ValueError("only the classical RK4 method is available")
        if self.chunk_steps < 1:
            raise ValueError("chunk_steps must be >= 1")


DEFAULT_CONFIG = IntegratorConfig()


@dataclass
class OrbitState:
    """Flow state phi^t(theta) with its parallel frame and in-flight Jacobi data."""

    t: float
    point: np.ndarray | None
    velocity: np.ndarray | None
    frame: np.ndarray | None
    Y: np.ndarray | None = None
    Yp: np.ndarray | None = None
    U: np.ndarray | None = None

    def packed(self) -> np.ndarray:
        return np.concatenate([self.point, self.velocity, self.frame.ravel()])


@dataclass(frozen=True)
class ConjugatePointDetected:
    """Riccati blow-up: t_star is the refined pole time inside ``bracket``."""

    t_star: float
    bracket: tuple[float, float]


@dataclass(frozen=True)
class Provenance:
    kind: str  # "UnstableLimit" | "StableLimit" | "InitialValue"
    T_final: float | None = None
    residual: float | None = None
    history: tuple[tuple[float, float], ...] = ()
    decay_exponent: float | None = None
    extrapolated: bool = False


@dataclass(frozen=True)
class RiccatiSolution:
    U0: np.ndarray
    provenance: Provenance


def initial_state(model: MetricModel, theta: TangentVector, Y=None, Yp=None, U=None) -> OrbitState:
    if model.chart:
        unit = model.to_unit(theta.point, theta.v)
        frame = orthonormal_frame(model, unit.point, unit.v)
        return OrbitState(0.0, unit.point, unit.v, frame, Y, Yp, U)
    return OrbitState(float(theta.t0), None, None, None, Y, Yp, U)


class _Track:
    """Curvature samples along one time direction of an orbit.

    ``sign = -1`` follows the reversed geodesic (x, -v), whose endomorphism
    equals R(-s) because R(-v, E)(-v) = R(v, E)v.
    """

    def __init__(self, model: MetricModel, theta: TangentVector, dt: float, sign: int = 1,
                 config: IntegratorConfig = DEFAULT_CONFIG, recenter: bool = True,
                 state: OrbitState | None = None):
        self.model = model
        self.dt = float(dt)
        self.sign = 1 if sign >= 0 else -1
        self.config = config
        self.recenter = recenter
        self.m = model.normal_dim
        self.k = 0  # RK4 steps of size dt taken so far
        if model.chart:
            st = state if state is not None else initial_state(model, theta)
            y = st.packed().astype(float)
            if self.sign < 0:
                y[model.dim:2 * model.dim] *= -1.0
            self.y = y
            self.t0 = st.t
        else:
            self.y = None
            self.t0 = float(state.t if state is not None else theta.t0)

    def snapshot(self):
        return (self.k, None if self.y is None else self.y.copy())

    def restore(self, snap) -> None:
        self.k = snap[0]
        if snap[1] is not None:
            self.y = snap[1].copy()

    def _sweep(self, nsteps: int, Rs: np.ndarray) -> None:
        m = self.model
        done = K.geodesic_sweep(m.kind, m.prm, m.dim, self.y, 0.5 * self.dt, 2 * nsteps, 2 * self.k,
                                self.config.frame_reortho_every, self.recenter, Rs)
        if done < 2 * nsteps:
            t = self.t0 + self.sign * (self.k + done / 2.0) * self.dt
            self.k += done // 2
            raise DomainExit(t)
        self.k += nsteps

    def take(self, nsteps: int) -> np.ndarray:
        """R at the 2*nsteps+1 half-step nodes of the next ``nsteps`` steps."""
        if self.model.chart:
            Rs = np.empty((2 * nsteps + 1, self.m, self.m))
            self._sweep(nsteps, Rs)
            return Rs
        t = self.t0 + self.sign * self.dt * (self.k + 0.5 * np.arange(2 * nsteps + 1))
        self.k += nsteps
        return self.model.sample(t)

    def skip(self, nsteps: int) -> None:
        if self.model.chart:
            self._sweep(nsteps, np.empty((0, self.m, self.m)))
        else:
            self.k += nsteps

    def chunks(self, nsteps: int) -> Iterator[np.ndarray]:
        C = self.config.chunk_steps
        left = nsteps
        while left > 0:
            L = min(C, left)
            yield self.take(L)
            left -= L

    def state(self) -> OrbitState:
        t = self.t0 + self.sign * self.k * self.dt
        if not self.model.chart:
            return OrbitState(t, None, None, None)
        n = self.model.dim
        y = self.y.copy()
        if self.sign < 0:
            y[n:2 * n] *= -1.0
        return OrbitState(t, y[:n], y[n:2 * n], y[2 * n:].reshape(n - 1, n))


class _ReplayTrack:
    """A track with checkpoints, replayed segment by segment in reverse order.

    Integrating the flow back and then forward again would amplify round-off
    along the unstable direction; replaying the stored segments reproduces
    the original samples bit for bit.
    """

    def __init__(self, model, theta, dt, sign, config):
        self.track = _Track(model, theta, dt, sign, config)
        self.C = config.chunk_steps
        self.checkpoints = [self.track.snapshot()]

    def reversed_chunks(self, N: int) -> Iterator[np.ndarray]:
        nseg = -(-N // self.C)
        while len(self.checkpoints) < nseg:
            self.track.restore(self.checkpoints[-1])
            self.track.skip(self.C)
            self.checkpoints.append(self.track.snapshot())
        for j in reversed(range(nseg)):
            L = min(self.C, N - j * self.C)
            self.track.restore(self.checkpoints[j])
            yield np.ascontiguousarray(self.track.take(L)[::-1])


def _steps(T: float, dt: float) -> int:
    return max(1, int(round(T / dt)))


def _refine_pole(U: np.ndarray, t_k: float, dt: float) -> ConjugatePointDetected:
    # near a pole the most negative eigenvalue behaves like 1/(t - t*)
    lam = float(np.linalg.eigvalsh(U)[0]) if np.all(np.isfinite(U)) else 0.0
    t_star = t_k + 0.5 * dt
    if lam < 0:
        t_star = min(max(t_k - 1.0 / lam, t_k), t_k + dt)
    return ConjugatePointDetected(t_star, (t_k, t_k + dt))


class _RiccatiRunner:
    """Feeds curvature chunks to the Riccati kernel and keeps running integrals."""

    def __init__(self, U, dt, config, rec_every=0, max_records=0, t_start=0.0):
        self.U = np.array(U, dtype=float)
        self.m = self.U.shape[0]
        self.dt = dt
        self.config = config
        self.acc = np.zeros(3)
        self.k = 0
        self.t_start = t_start
        self.rec_every = rec_every
        self.rec_U = np.empty((max_records, self.m, self.m))
        self.rec_acc = np.empty((max_records, 3))
        self.nrec = 0
        self.blowup: ConjugatePointDetected | None = None

    def feed(self, Rs: np.ndarray) -> bool:
        if self.blowup is not None:
            return False
        cap = self.rec_U.shape[0] - self.nrec
        idx, nrec = K.riccati_sweep(Rs, self.dt, self.U, self.config.blowup_threshold,
                                    self.config.symmetrize_each_step, self.k,
                                    self.rec_every if cap > 0 else 0,
                                    self.rec_U[self.nrec:], self.rec_acc[self.nrec:], self.acc)
        self.nrec += nrec
        if idx >= 0:
            self.k += idx
            self.blowup = _refine_pole(self.U, self.t_start + self.k * self.dt, self.dt)
            return False
        self.k += (Rs.shape[0] - 1) // 2
        return True

    @property
    def t(self) -> float:
        return self.t_start + self.k * self.dt


SEED_STEPS = 100


def _seeded_riccati(chunks: Iterator[np.ndarray], m: int, dt: float, config: IntegratorConfig,
                    runner_kwargs=None) -> _RiccatiRunner:
    """Riccati solution of the Jacobi tensor with Y = 0, Y' = I at the first sample.

    The first SEED_STEPS steps are integrated as a Jacobi equation, after which
    U = Y' Y^{-1} is handed to the Riccati integrator.
    """
    runner = None
    for Rs in chunks:
        if runner is None:
            s = min(SEED_STEPS, (Rs.shape[0] - 1) // 2)
            Y = np.zeros((m, m))
            Yp = np.eye(m)
            K.jacobi_sweep(np.ascontiguousarray(Rs[:2 * s + 1]), dt, Y, Yp)
            runner = _RiccatiRunner(Yp @ np.linalg.inv(Y), dt, config, t_start=s * dt, **(runner_kwargs or {}))
            Rs = np.ascontiguousarray(Rs[2 * s:])
            if Rs.shape[0] < 3:
                continue
        if not runner.feed(Rs):
            break
    return runner


# -- operations --------------------------------------------------------------

def advance_orbit(model: MetricModel, state: OrbitState, duration: float,
                  config: IntegratorConfig = DEFAULT_CONFIG) -> OrbitState:
    """Flow ``state`` forward by ``duration`` (steps of at most config.dt).

    Position, unit velocity and the parallel frame follow the geodesic ODE;
    Y, Y' and U, when present, follow the Jacobi and Riccati equations.
    """
    N = _steps(duration, config.dt)
    h = duration / N
    tr = _Track(model, TangentVector(), h, 1, config, recenter=False, state=state)
    Y = None if state.Y is None else np.array(state.Y, dtype=float, ndmin=2)
    Yp = None if state.Yp is None else np.array(state.Yp, dtype=float, ndmin=2)
    U = None if state.U is None else np.array(state.U, dtype=float)
    runner = None if U is None else _RiccatiRunner(U, h, config, t_start=state.t)
    for Rs in tr.chunks(N):
        if Y is not None:
            K.jacobi_sweep(Rs, h, Y, Yp)
        if runner is not None and not runner.feed(Rs):
            raise ConjugatePointError(runner.blowup)
    new = tr.state()
    new.t = state.t + duration
    return replace(new, Y=Y, Yp=Yp, U=None if runner is None else runner.U)


def integrate_jacobi(model: MetricModel, theta: TangentVector, Y0, Yp0, T: float,
                     config: IntegratorConfig = DEFAULT_CONFIG) -> tuple[np.ndarray, np.ndarray]:
    """Solve Y'' + R(t) Y = 0 along the orbit of theta from t=0 to T."""
    Y = np.array(Y0, dtype=float, ndmin=2).copy()
    Yp = np.array(Yp0, dtype=float, ndmin=2).copy()
    tr = _Track(model, theta, config.dt, 1, config)
    for Rs in tr.chunks(_steps(T, config.dt)):
        K.jacobi_sweep(Rs, config.dt, Y, Yp)
    return Y, Yp


def integrate_riccati(model: MetricModel, theta: TangentVector, U0, T: float,
                      config: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray | ConjugatePointDetected:
    """Solve U' + U^2 + R = 0 from U(0) = U0 to T.

    ``U0=None`` seeds from the Jacobi tensor with Y(0) = 0, Y'(0) = I. A
    blow-up (conjugate point) is returned, not raised.
    """
    tr = _Track(model, theta, config.dt, 1, config)
    N = _steps(T, config.dt)
    if U0 is None:
        runner = _seeded_riccati(tr.chunks(N), model.normal_dim, config.dt, config)
    else:
        runner = _RiccatiRunner(np.array(U0, dtype=float, ndmin=2), config.dt, config)
        for Rs in tr.chunks(N):
            if not runner.feed(Rs):
                break
    if runner.blowup is not None:
        return runner.blowup
    return runner.U.copy()


def _limit_riccati(model, theta, tol, config, sign, T0, T_max) -> RiccatiSolution:
    replay = _ReplayTrack(model, theta, config.dt, sign, config)
    m = model.normal_dim
    kind = "UnstableLimit" if sign < 0 else "StableLimit"
    T = float(T0)
    prev = None
    history: list[tuple[float, float]] = []
    while True:
        N = _steps(T, config.dt)
        runner = _seeded_riccati(replay.reversed_chunks(N), m, config.dt, config)
        if runner.blowup is not None:
            b = runner.blowup
            # report the pole on the orbit's own clock (seed sits at -T for the unstable case)
            t_star = sign * (T - b.t_star)
            raise ConjugatePointError(ConjugatePointDetected(t_star, tuple(sorted(sign * (T - x) for x in b.bracket))))
        U = runner.U if sign < 0 else -runner.U
        U = 0.5 * (U + U.T)
        if prev is not None:
            res = float(np.linalg.norm(U - prev))
            history.append((T, res))
            if res < tol:
                return RiccatiSolution(U, Provenance(kind, T, res, tuple(history)))
        if 2 * T > T_max or _hopeless(history, tol, T_max):
            p = _decay_exponent(history)
            if prev is None:
                raise NoConvergence(T, math.inf, math.nan, U, U, history)
            extra = U + (U - prev) / (2.0**p - 1.0) if math.isfinite(p) and p > 0 else U
            raise NoConvergence(T, history[-1][1], p, U, extra, history)
        prev = U
        T *= 2.0


def _hopeless(history, tol: float, T_max: float) -> bool:
    """Stop early on a steady power-law decay that cannot reach tol by T_max."""
    if len(history) < 3:
        return False
    (_, a), (_, b), (T, c) = history[-3:]
    if min(a, b, c) <= 0.0:
        return False
    p1, p2 = math.log2(a / b), math.log2(b / c)
    if not (0.5 < p2 < 3.0 and abs(p1 - p2) < 0.05 * p2):
        return False
    return T * (c / tol) ** (1.0 / p2) > T_max


def _decay_exponent(history) -> float:
    if len(history) < 2:
        return math.nan
    (_, a), (_, b) = history[-2], history[-1]
    if b == 0.0:
        return math.inf
    if a == 0.0:
        return math.nan
    return math.log2(a / b)


def unstable_riccati(model: MetricModel, theta: TangentVector, tol: float = 1e-8,
                     config: IntegratorConfig = DEFAULT_CONFIG, T0: float = 8.0,
                     T_max: float = 2.0**15) -> RiccatiSolution:
    """U_u(0) = Y'(0) Y(0)^{-1} for the Jacobi tensor with Y(-T) = 0, Y'(-T) = I.

    T doubles from ``T0`` until successive values differ by less than ``tol``
    in Frobenius norm; raises NoConvergence past ``T_max`` and
    ConjugatePointError on blow-up.
    """
    return _limit_riccati(model, theta, tol, config, -1, T0, T_max)


def stable_riccati(model: MetricModel, theta: TangentVector, tol: float = 1e-8,
                   config: IntegratorConfig = DEFAULT_CONFIG, T0: float = 8.0,
                   T_max: float = 2.0**15) -> RiccatiSolution:
    """Mirror of :func:`unstable_riccati` with Y(+T) = 0."""
    return _limit_riccati(model, theta, tol, config, 1, T0, T_max)


def push_tangent(model: MetricModel, theta: TangentVector, J0, Jp0, T: float,
                 config: IntegratorConfig = DEFAULT_CONFIG) -> tuple[np.ndarray, np.ndarray, float]:
    """d(phi^T)(xi) for xi = (J0, J0') in the parallel frame, with its Sasaki norm."""
    J = np.asarray(J0, dtype=float).reshape(-1, 1)
    Jp = np.asarray(Jp0, dtype=float).reshape(-1, 1)
    Y, Yp = integrate_jacobi(model, theta, J, Jp, T, config)
    J, Jp = Y[:, 0], Yp[:, 0]
    return J, Jp, float(math.sqrt(J @ J + Jp @ Jp))
