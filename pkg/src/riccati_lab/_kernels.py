"""Compiled inner loops.

Chart models are dispatched by an integer ``kind`` and a float parameter
vector ``prm``::

    prm[0]  log scale r (metric multiplied by exp(2r))
    prm[1]  surface-of-revolution profile code
    prm[2]  profile parameter
    prm[3]  |u| bound of the surface-of-revolution chart

A geodesic state is a flat vector ``y = [x (n), v (n), E_0 (n), ..., E_{n-2} (n)]``.
Curvature samples ``Rs`` along an orbit are taken at every half step, so an
RK4 step of size ``dt`` on the Riccati/Jacobi side reads ``Rs[2k], Rs[2k+1],
Rs[2k+2]``.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

TORUS = 0
HALF_PLANE = 1
SPHERE = 2
REVOLUTION = 3

PROFILE_COSH = 0
PROFILE_PINCHED = 1

# recentering windows for the long-horizon sampling mode
_Y_LO, _Y_HI = 0.1, 10.0
_SIN_LO = 0.5
_SIN_EXIT = 1e-6


@njit(cache=True)
def profile_values(code, eps, u):
    """f, f', f'' of a surface-of-revolution profile."""
    if code == PROFILE_COSH:
        c = math.cosh(u)
        return c, math.sinh(u), c
    c1 = math.cosh(u)
    c2 = math.cosh(2.0 * u)
    return c1 + eps * c2, math.sinh(u) + 2.0 * eps * math.sinh(2.0 * u), c1 + 4.0 * eps * c2


@njit(cache=True)
def metric_into(kind, prm, x, g):
    n = x.shape[0]
    s = math.exp(2.0 * prm[0])
    for i in range(n):
        for j in range(n):
            g[i, j] = 0.0
    if kind == TORUS:
        for i in range(n):
            g[i, i] = s
    elif kind == HALF_PLANE:
        w = s / (x[1] * x[1])
        g[0, 0] = w
        g[1, 1] = w
    elif kind == SPHERE:
        sn = math.sin(x[0])
        g[0, 0] = s
        g[1, 1] = s * sn * sn
    else:
        f, _, _ = profile_values(int(prm[1]), prm[2], x[0])
        g[0, 0] = s
        g[1, 1] = s * f * f


@njit(cache=True)
def christoffel_into(kind, prm, x, G):
    """G[k, i, j] = Gamma^k_{ij}; unaffected by the constant scale."""
    n = x.shape[0]
    for k in range(n):
        for i in range(n):
            for j in range(n):
                G[k, i, j] = 0.0
    if kind == TORUS:
        return
    if kind == HALF_PLANE:
        iy = 1.0 / x[1]
        G[0, 0, 1] = -iy
        G[0, 1, 0] = -iy
        G[1, 0, 0] = iy
        G[1, 1, 1] = -iy
    elif kind == SPHERE:
        sn = math.sin(x[0])
        cs = math.cos(x[0])
        G[0, 1, 1] = -sn * cs
        G[1, 0, 1] = cs / sn
        G[1, 1, 0] = cs / sn
    else:
        f, fp, _ = profile_values(int(prm[1]), prm[2], x[0])
        G[0, 1, 1] = -f * fp
        G[1, 0, 1] = fp / f
        G[1, 1, 0] = fp / f


@njit(cache=True)
def gauss_curvature(kind, prm, x):
    """Sectional curvature at x (every chart model is flat or two-dimensional)."""
    s = math.exp(-2.0 * prm[0])
    if kind == TORUS:
        return 0.0
    if kind == HALF_PLANE:
        return -s
    if kind == SPHERE:
        return s
    f, _, fpp = profile_values(int(prm[1]), prm[2], x[0])
    return -s * fpp / f


@njit(cache=True)
def in_domain(kind, prm, x, strict_sphere):
    for i in range(x.shape[0]):
        if not math.isfinite(x[i]):
            return False
    if kind == HALF_PLANE:
        return x[1] > 0.0
    if kind == SPHERE:
        if not (0.0 < x[0] < math.pi):
            return False
        if strict_sphere:
            return math.sin(x[0]) > _SIN_EXIT
        return True
    if kind == REVOLUTION:
        return abs(x[0]) <= prm[3]
    return True


@njit(cache=True)
def _ip(g, a, b):
    n = a.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            acc += g[i, j] * a[i] * b[j]
    return acc


@njit(cache=True)
def rhs(kind, prm, n, y, out, G):
    x = y[:n]
    christoffel_into(kind, prm, x, G)
    for k in range(n):
        out[k] = y[n + k]
        acc = 0.0
        if kind != TORUS:
            for i in range(n):
                for j in range(n):
                    acc += G[k, i, j] * y[n + i] * y[n + j]
        out[n + k] = -acc
    for a in range(n - 1):
        off = 2 * n + a * n
        for k in range(n):
            acc = 0.0
            if kind != TORUS:
                for i in range(n):
                    for j in range(n):
                        acc += G[k, i, j] * y[n + i] * y[off + j]
            out[off + k] = -acc


@njit(cache=True)
def rk4_step(kind, prm, n, y, h, k1, k2, k3, k4, tmp, G):
    size = y.shape[0]
    rhs(kind, prm, n, y, k1, G)
    for i in range(size):
        tmp[i] = y[i] + 0.5 * h * k1[i]
    rhs(kind, prm, n, tmp, k2, G)
    for i in range(size):
        tmp[i] = y[i] + 0.5 * h * k2[i]
    rhs(kind, prm, n, tmp, k3, G)
    for i in range(size):
        tmp[i] = y[i] + h * k3[i]
    rhs(kind, prm, n, tmp, k4, G)
    for i in range(size):
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def normalize_state(kind, prm, n, y, g, full):
    """Restore unit speed; with ``full`` also Gram-Schmidt the frame against v."""
    metric_into(kind, prm, y[:n], g)
    v = y[n:2 * n]
    nv = math.sqrt(_ip(g, v, v))
    for i in range(n):
        v[i] /= nv
    if not full:
        return
    for a in range(n - 1):
        e = y[2 * n + a * n: 2 * n + (a + 1) * n]
        c = _ip(g, e, v)
        for i in range(n):
            e[i] -= c * v[i]
        for b in range(a):
            f = y[2 * n + b * n: 2 * n + (b + 1) * n]
            c = _ip(g, e, f)
            for i in range(n):
                e[i] -= c * f[i]
        ne = math.sqrt(_ip(g, e, e))
        for i in range(n):
            e[i] /= ne


@njit(cache=True)
def wrap(kind, n, y):
    if kind == TORUS:
        for i in range(n):
            y[i] -= math.floor(y[i])
    elif kind == SPHERE or kind == REVOLUTION:
        y[1] -= 2.0 * math.pi * math.floor(y[1] / (2.0 * math.pi))


@njit(cache=True)
def _sphere_to_r3(th, ph, a, b, out):
    # chart vector (a, b) at (th, ph) as an R^3 vector
    st, ct, sp, cp = math.sin(th), math.cos(th), math.sin(ph), math.cos(ph)
    out[0] = a * ct * cp - b * st * sp
    out[1] = a * ct * sp + b * st * cp
    out[2] = -a * st


@njit(cache=True)
def recenter(kind, n, y):
    """Move the state by an isometry into a well-conditioned part of the chart.

    Curvature samples are isometry invariant; positions are not preserved.
    """
    if kind == HALF_PLANE:
        yy = y[1]
        if _Y_LO <= yy <= _Y_HI:
            return
        y[0] = 0.0
        y[1] = 1.0
        for i in range(n, y.shape[0]):
            y[i] /= yy
    elif kind == SPHERE:
        if math.sin(y[0]) >= _SIN_LO:
            return
        th, ph = y[0], y[1]
        p = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])
        # rotation (X, Y, Z) -> (Z, Y, -X) carries both poles to the equator
        q = np.array([p[2], p[1], -p[0]])
        th2 = math.acos(min(1.0, max(-1.0, q[2])))
        ph2 = math.atan2(q[1], q[0])
        st2, ct2 = math.sin(th2), math.cos(th2)
        sp2, cp2 = math.sin(ph2), math.cos(ph2)
        w = np.empty(3)
        for a in range((y.shape[0] - n) // n):
            off = n + a * n
            _sphere_to_r3(th, ph, y[off], y[off + 1], w)
            wr0, wr1, wr2 = w[2], w[1], -w[0]
            y[off] = wr0 * ct2 * cp2 + wr1 * ct2 * sp2 - wr2 * st2
            y[off + 1] = (-wr0 * sp2 + wr1 * cp2) / st2
        y[0] = th2
        y[1] = ph2


@njit(cache=True)
def endomorphism_into(kind, prm, n, y, g, out):
    """R_ab = <R(v, E_a) v, E_b> = K (g(v,v) g(E_a,E_b) - g(v,E_a) g(v,E_b))."""
    m = n - 1
    if kind == TORUS:
        for a in range(m):
            for b in range(m):
                out[a, b] = 0.0
        return
    metric_into(kind, prm, y[:n], g)
    K = gauss_curvature(kind, prm, y[:n])
    v = y[n:2 * n]
    vv = _ip(g, v, v)
    for a in range(m):
        ea = y[2 * n + a * n: 2 * n + (a + 1) * n]
        for b in range(a, m):
            eb = y[2 * n + b * n: 2 * n + (b + 1) * n]
            val = K * (vv * _ip(g, ea, eb) - _ip(g, v, ea) * _ip(g, v, eb))
            out[a, b] = val
            out[b, a] = val


@njit(cache=True)
def geodesic_sweep(kind, prm, n, y, h, nsteps, step0, reortho_every, do_recenter, Rs):
    """Advance ``nsteps`` RK4 steps of size h, writing R at each node into Rs.

    Returns the number of steps completed; fewer than ``nsteps`` means the
    orbit left the chart domain (y holds the last in-domain state).
    """
    size = y.shape[0]
    k1 = np.empty(size)
    k2 = np.empty(size)
    k3 = np.empty(size)
    k4 = np.empty(size)
    tmp = np.empty(size)
    G = np.empty((n, n, n))
    g = np.empty((n, n))
    prev = np.empty(size)
    if Rs.shape[0] > 0:
        endomorphism_into(kind, prm, n, y, g, Rs[0])
    for s in range(nsteps):
        prev[:] = y
        rk4_step(kind, prm, n, y, h, k1, k2, k3, k4, tmp, G)
        if not in_domain(kind, prm, y[:n], not do_recenter):
            y[:] = prev
            return s
        full = reortho_every > 0 and (step0 + s + 1) % reortho_every == 0
        normalize_state(kind, prm, n, y, g, full)
        wrap(kind, n, y)
        if do_recenter:
            recenter(kind, n, y)
        if Rs.shape[0] > 0:
            endomorphism_into(kind, prm, n, y, g, Rs[s + 1])
    return nsteps


@njit(cache=True)
def _riccati_f(U, R, out):
    # out = -U U - R
    m = U.shape[0]
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for k in range(m):
                acc += U[i, k] * U[k, j]
            out[i, j] = -acc - R[i, j]


@njit(cache=True)
def _tr(A):
    acc = 0.0
    for i in range(A.shape[0]):
        acc += A[i, i]
    return acc


@njit(cache=True)
def _fro2(A):
    acc = 0.0
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            acc += A[i, j] * A[i, j]
    return acc


@njit(cache=True)
def riccati_sweep(Rs, dt, U, threshold, symmetrize, step_offset, rec_every, rec_U, rec_acc, acc):
    """RK4 for U' = -U^2 - R over (len(Rs)-1)//2 steps.

    ``acc`` carries running integrals [int tr U, int tr R, int tr U^2]. Every
    ``rec_every`` global steps U and acc are recorded. Returns
    (steps completed before a blow-up or -1, records written). A blow-up is
    either a non-finite/over-threshold step (U left at the last good state) or
    an eigenvalue below -1/dt, i.e. a pole within the next step.
    """
    N = (Rs.shape[0] - 1) // 2
    m = U.shape[0]
    k1 = np.empty((m, m))
    k2 = np.empty((m, m))
    k3 = np.empty((m, m))
    k4 = np.empty((m, m))
    U2 = np.empty((m, m))
    U3 = np.empty((m, m))
    U4 = np.empty((m, m))
    Un = np.empty((m, m))
    nrec = 0
    for k in range(N):
        R0 = Rs[2 * k]
        Rm = Rs[2 * k + 1]
        R1 = Rs[2 * k + 2]
        _riccati_f(U, R0, k1)
        for i in range(m):
            for j in range(m):
                U2[i, j] = U[i, j] + 0.5 * dt * k1[i, j]
        _riccati_f(U2, Rm, k2)
        for i in range(m):
            for j in range(m):
                U3[i, j] = U[i, j] + 0.5 * dt * k2[i, j]
        _riccati_f(U3, Rm, k3)
        for i in range(m):
            for j in range(m):
                U4[i, j] = U[i, j] + dt * k3[i, j]
        _riccati_f(U4, R1, k4)
        bad = False
        for i in range(m):
            for j in range(m):
                Un[i, j] = U[i, j] + dt / 6.0 * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
                if not math.isfinite(Un[i, j]):
                    bad = True
        if symmetrize:
            for i in range(m):
                for j in range(i + 1, m):
                    a = 0.5 * (Un[i, j] + Un[j, i])
                    Un[i, j] = a
                    Un[j, i] = a
        nrm = math.sqrt(_fro2(Un))
        if bad or nrm > threshold:
            return k, nrec
        near_pole = False
        if nrm * dt > 1.0:
            # a pole lies within one step once the most negative eigenvalue passes -1/dt
            near_pole = np.linalg.eigvalsh(Un)[0] * dt < -1.0
        acc[0] += dt / 6.0 * (_tr(U) + 2.0 * _tr(U2) + 2.0 * _tr(U3) + _tr(U4))
        acc[1] += dt / 6.0 * (_tr(R0) + 4.0 * _tr(Rm) + _tr(R1))
        acc[2] += dt / 6.0 * (_fro2(U) + 2.0 * _fro2(U2) + 2.0 * _fro2(U3) + _fro2(U4))
        U[:, :] = Un
        if rec_every > 0 and (step_offset + k + 1) % rec_every == 0:
            rec_U[nrec, :, :] = U
            rec_acc[nrec, :] = acc
            nrec += 1
        if near_pole:
            return k + 1, nrec
    return -1, nrec


@njit(cache=True)
def _jacobi_f(Y, Yp, R, dY, dYp):
    m = R.shape[0]
    c = Y.shape[1]
    for i in range(m):
        for j in range(c):
            dY[i, j] = Yp[i, j]
            acc = 0.0
            for k in range(m):
                acc += R[i, k] * Y[k, j]
            dYp[i, j] = -acc


@njit(cache=True)
def jacobi_sweep(Rs, dt, Y, Yp):
    """RK4 for Y'' + R Y = 0 (Y may have any number of columns)."""
    N = (Rs.shape[0] - 1) // 2
    m, c = Y.shape
    a1 = np.empty((m, c))
    b1 = np.empty((m, c))
    a2 = np.empty((m, c))
    b2 = np.empty((m, c))
    a3 = np.empty((m, c))
    b3 = np.empty((m, c))
    a4 = np.empty((m, c))
    b4 = np.empty((m, c))
    Yt = np.empty((m, c))
    Ypt = np.empty((m, c))
    for k in range(N):
        _jacobi_f(Y, Yp, Rs[2 * k], a1, b1)
        for i in range(m):
            for j in range(c):
                Yt[i, j] = Y[i, j] + 0.5 * dt * a1[i, j]
                Ypt[i, j] = Yp[i, j] + 0.5 * dt * b1[i, j]
        _jacobi_f(Yt, Ypt, Rs[2 * k + 1], a2, b2)
        for i in range(m):
            for j in range(c):
                Yt[i, j] = Y[i, j] + 0.5 * dt * a2[i, j]
                Ypt[i, j] = Yp[i, j] + 0.5 * dt * b2[i, j]
        _jacobi_f(Yt, Ypt, Rs[2 * k + 1], a3, b3)
        for i in range(m):
            for j in range(c):
                Yt[i, j] = Y[i, j] + dt * a3[i, j]
                Ypt[i, j] = Yp[i, j] + dt * b3[i, j]
        _jacobi_f(Yt, Ypt, Rs[2 * k + 2], a4, b4)
        for i in range(m):
            for j in range(c):
                Y[i, j] += dt / 6.0 * (a1[i, j] + 2.0 * a2[i, j] + 2.0 * a3[i, j] + a4[i, j])
                Yp[i, j] += dt / 6.0 * (b1[i, j] + 2.0 * b2[i, j] + 2.0 * b3[i, j] + b4[i, j])


@njit(cache=True)
def qr_renormalize(Z, logsum):
    Q, Rr = np.linalg.qr(Z)
    d = Z.shape[0]
    for i in range(d):
        r = Rr[i, i]
        logsum[i] += math.log(abs(r))
        if r < 0.0:
            for j in range(d):
                Q[j, i] = -Q[j, i]
    Z[:, :] = Q


@njit(cache=True)
def qr_sweep(Rs, dt, Z, steps_per_qr, counter, logsum):
    """Propagate the Jacobi pair basis Z = [J; J'] with periodic QR.

    ``counter`` is the number of steps since the last QR, carried across
    calls; returns the updated counter.
    """
    N = (Rs.shape[0] - 1) // 2
    m = Rs.shape[1]
    Y = np.ascontiguousarray(Z[:m, :])
    Yp = np.ascontiguousarray(Z[m:, :])
    k = 0
    while k < N:
        seg = min(steps_per_qr - counter, N - k)
        jacobi_sweep(Rs[2 * k: 2 * (k + seg) + 1], dt, Y, Yp)
        k += seg
        counter += seg
        if counter == steps_per_qr:
            Z[:m, :] = Y
            Z[m:, :] = Yp
            qr_renormalize(Z, logsum)
            Y[:, :] = Z[:m, :]
            Yp[:, :] = Z[m:, :]
            counter = 0
    Z[:m, :] = Y
    Z[m:, :] = Yp
    return counter
