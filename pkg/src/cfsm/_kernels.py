"""Compiled inner loops for ridge streams.

Each kernel mirrors a generic Python loop in :mod:`cfsm.csvrg` or
:mod:`cfsm.baselines` and consumes the same pre-drawn indices, so the two
routes agree to rounding. Ridge gradients are written out inline:
``grad f_j(x) = 2 (a_j^T x - b_j) a_j + 2 lam x``.
"""

import math

import numpy as np
from numba import njit

# step rules understood by the kernels
STEP_THEORETICAL, STEP_PRACTICAL = 0, 1


@njit(cache=True, nogil=True)
def _project(x, kind, lo, hi, center, radius):
    if kind == 1:
        for k in range(x.shape[0]):
            if x[k] < lo[k]:
                x[k] = lo[k]
            elif x[k] > hi[k]:
                x[k] = hi[k]
    elif kind == 2:
        s = 0.0
        for k in range(x.shape[0]):
            d = x[k] - center[k]
            s += d * d
        norm = math.sqrt(s)
        if norm > radius:
            f = radius / norm
            for k in range(x.shape[0]):
                x[k] = center[k] + (x[k] - center[k]) * f


@njit(cache=True, nogil=True)
def _resid(A, b, j, x):
    s = 0.0
    for k in range(x.shape[0]):
        s += A[j, k] * x[k]
    return s - b[j]


@njit(cache=True, nogil=True)
def ridge_fum(A, b, lam, i, us, x_init, x_prev, agg, beta, step_rule, mu, base_step,
              kind, lo, hi, center, radius):
    d = x_init.shape[0]
    T = us.shape[0]
    x = x_init.copy()
    acc = np.zeros(d)
    g = np.empty(d)
    w_old = 1.0 - 1.0 / i
    w_new = 1.0 / i
    for t in range(T):
        u = us[t] - 1
        ru = _resid(A, b, u, x)
        rp = _resid(A, b, u, x_prev)
        rn = _resid(A, b, i - 1, x)
        for k in range(d):
            gu = 2.0 * ru * A[u, k] + 2.0 * lam * x[k]
            gp = 2.0 * rp * A[u, k] + 2.0 * lam * x_prev[k]
            gn = 2.0 * rn * A[i - 1, k] + 2.0 * lam * x[k]
            g[k] = w_old * (gu - gp + agg[k]) + w_new * gn
        if step_rule == 0:
            gamma = 4.0 / (mu * (t + beta))
        else:
            gamma = base_step / (i * (t + 1.0))
        for k in range(d):
            x[k] = x[k] - gamma * g[k]
        _project(x, kind, lo, hi, center, radius)
        wt = t + beta - 1.0
        for k in range(d):
            acc[k] += wt * x[k]
    Z = T * (T - 1) / 2.0 + T * (beta - 1.0)
    if Z == 0.0:
        return x
    return acc / Z


@njit(cache=True, nogil=True)
def ridge_sgd(A, b, lam, js, x_init, gamma, kind, lo, hi, center, radius):
    d = x_init.shape[0]
    T = js.shape[0]
    x = x_init.copy()
    acc = np.zeros(d)
    for t in range(T):
        j = js[t] - 1
        r = _resid(A, b, j, x)
        step = gamma / (t + 1.0)
        for k in range(d):
            x[k] = x[k] - step * (2.0 * r * A[j, k] + 2.0 * lam * x[k])
        _project(x, kind, lo, hi, center, radius)
        for k in range(d):
            acc[k] += x[k]
    return acc / T


@njit(cache=True, nogil=True)
def _full_grad(A, b, lam, i, x, out):
    d = x.shape[0]
    for k in range(d):
        out[k] = 0.0
    for j in range(i):
        r = _resid(A, b, j, x)
        for k in range(d):
            out[k] += 2.0 * r * A[j, k]
    for k in range(d):
        out[k] = out[k] / i + 2.0 * lam * x[k]


@njit(cache=True, nogil=True)
def ridge_svrg(A, b, lam, i, js, x_init, step, kind, lo, hi, center, radius):
    d = x_init.shape[0]
    outer, inner = js.shape
    snap = x_init.copy()
    full = np.empty(d)
    v = np.empty(d)
    for s in range(outer):
        _full_grad(A, b, lam, i, snap, full)
        if inner == 0:
            for k in range(d):
                snap[k] = snap[k] - step * full[k]
            _project(snap, kind, lo, hi, center, radius)
            continue
        x = snap.copy()
        for m in range(inner):
            j = js[s, m] - 1
            rx = _resid(A, b, j, x)
            rs = _resid(A, b, j, snap)
            for k in range(d):
                gx = 2.0 * rx * A[j, k] + 2.0 * lam * x[k]
                gs = 2.0 * rs * A[j, k] + 2.0 * lam * snap[k]
                v[k] = gx - gs + full[k]
            for k in range(d):
                x[k] = x[k] - step * v[k]
            _project(x, kind, lo, hi, center, radius)
        snap = x
    return snap


@njit(cache=True, nogil=True)
def ridge_katyusha(A, b, lam, i, js, x_init, step, sigma, tau1, tau2, kind, lo, hi, center, radius):
    d = x_init.shape[0]
    outer, inner = js.shape
    snap = x_init.copy()
    y = x_init.copy()
    z = x_init.copy()
    full = np.empty(d)
    g = np.empty(d)
    xk = np.empty(d)
    acc = np.empty(d)
    if tau1 > 0.0:
        a = step / tau1
    else:
        a = 0.0
    ratio = 1.0 + a * sigma
    for s in range(outer):
        _full_grad(A, b, lam, i, snap, full)
        if inner == 0:
            for k in range(d):
                snap[k] = snap[k] - step * full[k]
            _project(snap, kind, lo, hi, center, radius)
            continue
        wsum = 0.0
        for k in range(d):
            acc[k] = 0.0
        for m in range(inner):
            for k in range(d):
                xk[k] = tau1 * z[k] + tau2 * snap[k] + (1.0 - tau1 - tau2) * y[k]
            j = js[s, m] - 1
            rx = _resid(A, b, j, xk)
            rs = _resid(A, b, j, snap)
            for k in range(d):
                gx = 2.0 * rx * A[j, k] + 2.0 * lam * xk[k]
                gs = 2.0 * rs * A[j, k] + 2.0 * lam * snap[k]
                g[k] = gx - gs + full[k]
            for k in range(d):
                z[k] = z[k] - a * g[k]
            _project(z, kind, lo, hi, center, radius)
            for k in range(d):
                y[k] = xk[k] - step * g[k]
            _project(y, kind, lo, hi, center, radius)
            w = ratio ** (m - (inner - 1))
            wsum += w
            for k in range(d):
                acc[k] += w * y[k]
        if tau1 > 0.0:
            snap = acc / wsum
        else:
            snap = y.copy()
    return snap
