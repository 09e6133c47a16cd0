"""Lyapunov exponents, Ricci averages and the rigidity diagnostics built on them.

One forward pass along an orbit integrates the unstable Riccati solution,
the Ricci integral and (optionally) the QR-renormalized Jacobi pair flow, so
every number in a :class:`LyapunovReport` comes from the same samples.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from . import _kernels as K
from .errors import (ConjugatePointError, NoConvergence, PeriodMapDivergence, Undetermined)
from .integrator import (DEFAULT_CONFIG, IntegratorConfig, _RiccatiRunner, _steps, _Track,
                         unstable_riccati)
from .models import MetricModel, SyntheticProfile, TangentVector

CHAIN_TOL = 1e-3
EQUALITY_TOL = 1e-4
SCALAR_TOL = 1e-3
MAX_RECORDS = 4096
QR_BURN_IN = 0.1


@dataclass(frozen=True)
class BirkhoffEstimate:
    value: float
    horizon: float
    window_values: tuple[float, float, float, float]
    converged: bool
    tol: float

    @property
    def spread(self) -> float:
        return max(self.window_values) - min(self.window_values)


def _birkhoff(windows, T, tol) -> BirkhoffEstimate:
    w = tuple(float(x) for x in windows)
    return BirkhoffEstimate(w[-1], float(T), w, bool(max(w) - min(w) < tol), float(tol))


@dataclass
class _Pass:
    T: float
    dt: float
    chi_windows: list[float]
    ricci_windows: list[float]
    rec_t: np.ndarray
    rec_ricci: np.ndarray  # running averages (1/t) int Ric
    rec_U: np.ndarray | None
    U_end: np.ndarray | None
    exponents: list[float] | None
    chi_qr_window: float | None = None


def _forward_pass(model: MetricModel, theta: TangentVector, T: float, config: IntegratorConfig,
                  U0=None, qr: bool = False, max_records: int = MAX_RECORDS) -> _Pass:
    dt = config.dt
    m = model.normal_dim
    N = _steps(T, dt)
    rec_every = max(1, -(-N // max_records))
    tr = _Track(model, theta, dt, 1, config)
    runner = None
    if U0 is not None:
        runner = _RiccatiRunner(np.array(U0, float, ndmin=2), dt, config, rec_every, N // rec_every + 1)
    steps_per_qr = max(1, int(round(1.0 / dt)))
    Z = np.eye(2 * m)
    logsum = np.zeros(2 * m)
    qr_count = 0
    ric_cum = 0.0
    rec_ric: list[float] = []
    chi_w: list[float] = []
    ric_w: list[float] = []
    done = 0
    quarters = [int(round(j * N / 4)) for j in range(1, 5)]
    # QR exponents are measured after a burn-in so the start-up alignment of
    # the basis with the splitting does not bias them by O(1/T)
    burn = int(round(QR_BURN_IN * N))
    bounds = sorted(set(quarters) | ({burn} if burn > 0 else set()))
    log_burn = np.zeros(2 * m)
    acc_burn = 0.0
    C = config.chunk_steps
    for b in bounds:
        while done < b:
            L = min(C, b - done)
            Rs = tr.take(L)
            trR = np.trace(Rs, axis1=1, axis2=2)
            inc = dt / 6.0 * (trR[0:-1:2] + 4.0 * trR[1::2] + trR[2::2])
            cum = ric_cum + np.cumsum(inc)
            idx = np.arange(done + 1, done + L + 1)
            rec_ric.extend(cum[idx % rec_every == 0].tolist())
            ric_cum = float(cum[-1])
            if runner is not None and not runner.feed(Rs):
                raise ConjugatePointError(runner.blowup)
            if qr:
                qr_count = K.qr_sweep(Rs, dt, Z, steps_per_qr, qr_count, logsum)
            done += L
        if qr and done == burn:
            if qr_count:
                K.qr_renormalize(Z, logsum)
                qr_count = 0
            log_burn = logsum.copy()
        if runner is not None and done == burn:
            acc_burn = float(runner.acc[0])
        if done not in quarters:
            continue
        t = done * dt
        ric_w.append(ric_cum / t / m)
        if runner is not None:
            chi_w.append(runner.acc[0] / t)
    exponents = None
    if qr:
        if qr_count:
            K.qr_renormalize(Z, logsum)
        exponents = sorted(((logsum - log_burn) / ((N - burn) * dt)).tolist(), reverse=True)
    n_rec = len(rec_ric)
    rec_t = rec_every * dt * np.arange(1, n_rec + 1)
    rec_ricci = np.asarray(rec_ric) / rec_t / m
    rec_U = None
    if runner is not None:
        rec_U = np.concatenate([np.array(U0, float, ndmin=2)[None], runner.rec_U[:runner.nrec]])
    chi_win = None if runner is None else (float(runner.acc[0]) - acc_burn) / ((N - burn) * dt)
    return _Pass(N * dt, dt, chi_w, ric_w, rec_t, rec_ricci, rec_U,
                 None if runner is None else runner.U.copy(), exponents, chi_win)


def _gamma_proxies(p: _Pass) -> tuple[float, float]:
    """max / min of the running Ricci averages over the trailing half-horizon."""
    tail = p.rec_ricci[p.rec_t >= 0.5 * p.T - 1e-12]
    vals = np.append(tail, p.ricci_windows[-1])
    return float(vals.max()), float(vals.min())


@dataclass(frozen=True)
class UnstableSeed:
    U0: np.ndarray
    provenance: str
    T_final: float
    residual: float
    slow_rate: bool
    decay_exponent: float | None


def unstable_seed(model: MetricModel, theta: TangentVector, config: IntegratorConfig = DEFAULT_CONFIG,
                  limit_tol: float = 1e-8, T_max: float = 2.0**15) -> UnstableSeed:
    """U_u(0), falling back to the rate-extrapolated limit in the polynomial (flat) regime."""
    try:
        sol = unstable_riccati(model, theta, limit_tol, config, T_max=T_max)
    except NoConvergence as exc:
        if not exc.polynomial_rate:
            raise
        return UnstableSeed(np.asarray(exc.U_extrapolated), "UnstableLimit(extrapolated)", exc.T_max,
                            exc.residual, True, exc.decay_exponent)
    pv = sol.provenance
    return UnstableSeed(sol.U0, pv.kind, pv.T_final, pv.residual, False, None)


# -- orbit averages ------------------------------------------------------------

def chi_plus_riccati(model: MetricModel, theta: TangentVector, T: float, tol: float = 1e-3,
                     config: IntegratorConfig = DEFAULT_CONFIG, seed: UnstableSeed | None = None,
                     limit_tol: float = 1e-8, T_max: float = 2.0**15) -> BirkhoffEstimate:
    """(1/T) int_0^T tr U_u(s) ds along the orbit of theta."""
    seed = seed or unstable_seed(model, theta, config, limit_tol, T_max)
    p = _forward_pass(model, theta, T, config, U0=seed.U0)
    return _birkhoff(p.chi_windows, p.T, tol)


def chi_spectrum_qr(model: MetricModel, theta: TangentVector, T: float,
                    config: IntegratorConfig = DEFAULT_CONFIG) -> list[float]:
    """Exponents of (J, J') with QR re-orthonormalization every time unit, descending."""
    return _forward_pass(model, theta, T, config, qr=True).exponents


@dataclass(frozen=True)
class RicciAverages:
    gamma_plus: float
    gamma_minus: float
    average: BirkhoffEstimate

    @property
    def converged(self) -> bool:
        return self.gamma_plus - self.gamma_minus < self.average.tol


def ricci_averages(model: MetricModel, theta: TangentVector, T: float, tol: float = 1e-4,
                   config: IntegratorConfig = DEFAULT_CONFIG) -> RicciAverages:
    """Finite-horizon proxies for the upper and lower Ricci averages."""
    p = _forward_pass(model, theta, T, config)
    gp, gm = _gamma_proxies(p)
    return RicciAverages(gp, gm, _birkhoff(p.ricci_windows, p.T, tol))


@dataclass(frozen=True)
class TraceInequalities:
    eigen_in_range: bool
    focal_slack: float | None  # c tr U - tr U^2, checked only for eigenvalues in [0, c]
    cs_slack: float  # (n-1) tr U^2 - (tr U)^2
    focal_ok: bool | None
    cs_ok: bool
    scalar: bool


def pointwise_trace_inequalities(U, c: float, atol: float = 1e-12) -> TraceInequalities:
    U = np.array(U, dtype=float, ndmin=2)
    m = U.shape[0]
    ev = np.linalg.eigvalsh(0.5 * (U + U.T))
    trU = float(ev.sum())
    trU2 = float((ev**2).sum())
    in_range = bool(ev[0] >= -atol and ev[-1] <= c + atol)
    focal = c * trU - trU2 if in_range else None
    cs = m * trU2 - trU * trU
    scale = max(1.0, trU * trU)
    return TraceInequalities(in_range, focal, cs, None if focal is None else focal >= -atol * scale,
                             cs >= -atol * scale, bool(abs(cs) <= 1e-12 * scale))


@dataclass(frozen=True)
class ChainCheck:
    c: float
    lower_applicable: bool
    lower_bound: float | None
    lower_gap: float | None
    lower_ok: bool | None
    upper_applicable: bool
    upper_bound: float | None
    upper_gap: float | None
    upper_ok: bool | None
    equality: bool
    strict: bool
    tol: float
    note: str = ""

    @property
    def violated(self) -> bool:
        return self.lower_ok is False or self.upper_ok is False


@dataclass(frozen=True)
class RigidityRecord:
    lambda_hat: float
    max_dev: float
    scalar: bool
    sqrt_ricci_gap: float | None
    tol: float


@dataclass
class LyapunovReport:
    model: dict[str, Any]
    theta: dict[str, Any]
    n: int
    T: float
    dt: float
    chi_plus_riccati: BirkhoffEstimate
    chi_spectrum_qr: list[float] | None
    chi_qr_window: float | None  # Riccati average over the QR measurement window
    ricci_avg: BirkhoffEstimate
    gamma_plus: float
    gamma_minus: float
    bounds: dict[str, float]
    nonpositive: bool
    unstable: UnstableSeed
    trace_checks: dict[str, Any] = field(default_factory=dict)
    chain_check: ChainCheck | None = None
    level_class: dict[str, bool | None] = field(default_factory=dict)
    rigidity: RigidityRecord | None = None
    _U_records: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "model": self.model,
            "theta": self.theta,
            "n": self.n,
            "T": self.T,
            "dt": self.dt,
            "chi_plus_riccati": asdict(self.chi_plus_riccati),
            "chi_spectrum_qr": self.chi_spectrum_qr,
            "chi_qr_window": self.chi_qr_window,
            "ricci_avg": asdict(self.ricci_avg),
            "gamma_plus": self.gamma_plus,
            "gamma_minus": self.gamma_minus,
            "bounds": dict(self.bounds),
            "nonpositive": self.nonpositive,
            "unstable": {
                "U0": np.asarray(self.unstable.U0).tolist(),
                "provenance": self.unstable.provenance,
                "T_final": self.unstable.T_final,
                "residual": self.unstable.residual,
                "slow_rate": self.unstable.slow_rate,
                "decay_exponent": self.unstable.decay_exponent,
            },
            "trace_checks": self.trace_checks,
            "chain_check": None if self.chain_check is None else asdict(self.chain_check),
            "level_class": dict(self.level_class),
            "rigidity": None if self.rigidity is None else asdict(self.rigidity),
        }
        return d


def analyze_orbit(model: MetricModel, theta: TangentVector, T: float, tol: float = 1e-3,
                  config: IntegratorConfig = DEFAULT_CONFIG, limit_tol: float = 1e-8,
                  T_max: float = 2.0**15, qr: bool = True) -> LyapunovReport:
    """Single-pass orbit analysis: chi+ (Riccati and QR), Ricci averages, pointwise traces."""
    seed = unstable_seed(model, theta, config, limit_tol, T_max)
    p = _forward_pass(model, theta, T, config, U0=seed.U0, qr=qr)
    gp, gm = _gamma_proxies(p)
    bounds = model.bounds()
    rep = LyapunovReport(
        model=model.describe(),
        theta=theta.as_dict(),
        n=model.dim,
        T=p.T,
        dt=p.dt,
        chi_plus_riccati=_birkhoff(p.chi_windows, p.T, tol),
        chi_spectrum_qr=p.exponents,
        chi_qr_window=p.chi_qr_window if qr else None,
        ricci_avg=_birkhoff(p.ricci_windows, p.T, tol),
        gamma_plus=gp,
        gamma_minus=gm,
        bounds=bounds,
        nonpositive=model.nonpositive,
        unstable=seed,
        _U_records=p.rec_U,
    )
    checks = [pointwise_trace_inequalities(U, bounds["c"]) for U in p.rec_U]
    focal = [c.focal_slack for c in checks if c.focal_slack is not None]
    rep.trace_checks = {
        "samples": len(checks),
        "eigen_in_range_fraction": sum(c.eigen_in_range for c in checks) / len(checks),
        "min_focal_slack": min(focal) if focal else None,
        "min_cs_slack": min(c.cs_slack for c in checks),
    }
    return rep


def check_inequality_chain(report: LyapunovReport, tol: float = CHAIN_TOL,
                           eq_tol: float = EQUALITY_TOL) -> ChainCheck:
    """-(n-1) G+/c <= chi+ <= (n-1) sqrt(-G-), each side only where it applies.

    The upper bound needs no conjugate points (an unstable solution exists
    along the orbit); the lower bound additionally needs no focal points
    (K <= 0) and c > 0.
    """
    m = report.n - 1
    chi = report.chi_plus_riccati.value
    c = report.bounds["c"]
    notes = []
    upper_app = report.gamma_minus <= 0.0
    if upper_app:
        ub = m * math.sqrt(-report.gamma_minus)
        ug = ub - chi
        uok = ug >= -tol
    else:
        ub = ug = uok = None
        notes.append("upper: positive Ricci average")
    lower_app = report.nonpositive and c > 0.0
    if lower_app:
        lb = -m * report.gamma_plus / c
        lg = chi - lb
        lok = lg >= -tol
    else:
        lb = lg = lok = None
        notes.append("lower: inapplicable (c = 0)" if c == 0.0 else "lower: focal points possible")
    equality = bool(upper_app and abs(ug) < eq_tol)
    strict = bool(upper_app and ug > 10 * tol)
    chk = ChainCheck(c, lower_app, lb, lg, lok, upper_app, ub, ug, uok, equality, strict, tol, "; ".join(notes))
    report.chain_check = chk
    return chk


def classify_level_set(report: LyapunovReport, alpha: float, tol: float | None = None) -> bool:
    """chi+ = alpha (n-1) within tol; raises Undetermined on a non-converged estimate."""
    est = report.chi_plus_riccati
    tol = est.tol if tol is None else tol
    if not est.converged:
        raise Undetermined(f"chi+ windows spread {est.spread:.3e} >= {est.tol:g}")
    ok = abs(est.value - alpha * (report.n - 1)) < tol
    report.level_class[f"{alpha:g}"] = bool(ok)
    return bool(ok)


def rigidity_test(report: LyapunovReport, tol: float = SCALAR_TOL) -> RigidityRecord:
    """Is U_u(t) the same multiple of the identity all along the orbit?

    lambda_hat is the time average of tr U/(n-1); max_dev the largest
    Frobenius distance of the sampled U(t) from lambda_hat I.
    """
    m = report.n - 1
    lam = report.chi_plus_riccati.value / m
    U = report._U_records
    dev = float(np.sqrt(((U - lam * np.eye(m)) ** 2).sum(axis=(1, 2))).max())
    ric = report.ricci_avg.value
    gap = abs(lam - math.sqrt(-ric)) if ric <= 0 else None
    rec = RigidityRecord(lam, dev, bool(dev < tol), gap, tol)
    report.rigidity = rec
    return rec


# -- periodic orbits ---------------------------------------------------------

@dataclass(frozen=True)
class PeriodicProfile:
    profile: SyntheticProfile
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("period must be positive")
        t = np.linspace(0.0, self.tau, 257)
        err = np.abs(self.profile.sample(t + self.tau) - self.profile.sample(t)).max()
        if err >= 1e-12:
            raise ValueError(f"profile is not {self.tau:g}-periodic (max defect {err:.2e})")


@dataclass(frozen=True)
class PeriodicResult:
    U_fixed: np.ndarray
    iterations: int
    fixed_point_residual: float
    chi_period: float
    chi_long: float
    T_long: float
    discrepancy: float


def period_map(profile: SyntheticProfile, tau: float, U, config: IntegratorConfig, t0: float = 0.0):
    """Riccati flow over one period; returns (U(t0 + tau), int tr U)."""
    runner = _RiccatiRunner(np.array(U, float, ndmin=2), config.dt, config)
    tr = _Track(profile, TangentVector.phase(t0), config.dt, 1, config)
    for Rs in tr.chunks(_steps(tau, config.dt)):
        if not runner.feed(Rs):
            raise ConjugatePointError(runner.blowup)
    return runner.U.copy(), float(runner.acc[0])


def periodic_orbit_analysis(pp: PeriodicProfile, tol: float = 1e-10,
                            config: IntegratorConfig = DEFAULT_CONFIG, T_long: float = 1000.0,
                            max_iter: int = 200, t0: float = 0.0) -> PeriodicResult:
    """Per-period chi+ from the fixed point of the period map, against the long-horizon value.

    ``t0`` is the phase of the orbit; the long horizon is rounded up to a
    whole number of periods.
    """
    N = max(1, int(round(pp.tau / config.dt)))
    cfg = replace(config, dt=pp.tau / N)
    prof = pp.profile
    m = prof.normal_dim
    U = prof.bounds()["c"] * np.eye(m)
    for it in range(1, max_iter + 1):
        try:
            U1, _ = period_map(prof, pp.tau, U, cfg, t0)
        except ConjugatePointError as exc:
            raise PeriodMapDivergence(f"blow-up during period map iteration {it}") from exc
        res = float(np.linalg.norm(U1 - U))
        U = U1
        if not np.all(np.isfinite(U)):
            break
        if res < tol:
            break
    else:
        raise PeriodMapDivergence(f"period map did not settle in {max_iter} iterations (residual {res:.3e})")
    if not res < tol:
        raise PeriodMapDivergence("period map iteration diverged")
    _, integral = period_map(prof, pp.tau, U, cfg, t0)
    chi_period = integral / pp.tau
    periods = max(1, math.ceil(T_long / pp.tau))
    Tl = periods * pp.tau
    chi_long = chi_plus_riccati(prof, TangentVector.phase(t0), Tl, config=cfg).value
    return PeriodicResult(U, it, res, chi_period, chi_long, Tl, abs(chi_period - chi_long))
