"""Numba implementations of the hot integration kernels.

Replicas are independent, so the batch dimension parallelizes with prange
and every replica's arithmetic stays sequential (reproducible regardless of
thread count).  Mode values sin(k x), cos(k x) come from the angle-addition
recurrence: one sin/cos pair per particle per force evaluation.
"""

from __future__ import annotations

import math

import numba
import numpy as np
from numba import njit, prange

TWO_PI = 2.0 * math.pi


@njit(cache=True, inline="always")
def _force_row(x, dense_amps, c1, s1, ck_acc, sk_acc, out):
    N = x.shape[0]
    kmax = dense_amps.shape[0]
    if kmax == 0:
        for i in range(N):
            out[i] = 0.0
        return
    for m in range(kmax):
        ck_acc[m] = 0.0
        sk_acc[m] = 0.0
    for j in range(N):
        c = math.cos(x[j])
        s = math.sin(x[j])
        c1[j] = c
        s1[j] = s
        ck = c
        sk = s
        ck_acc[0] += ck
        sk_acc[0] += sk
        for m in range(1, kmax):
            ck_new = ck * c - sk * s
            sk_new = sk * c + ck * s
            ck = ck_new
            sk = sk_new
            ck_acc[m] += ck
            sk_acc[m] += sk
    scale = 1.0 / (N - 1)
    for i in range(N):
        c = c1[i]
        s = s1[i]
        ck = c
        sk = s
        acc = dense_amps[0] * (sk * ck_acc[0] - ck * sk_acc[0])
        for m in range(1, kmax):
            ck_new = ck * c - sk * s
            sk_new = sk * c + ck * s
            ck = ck_new
            sk = sk_new
            acc += dense_amps[m] * (sk * ck_acc[m] - ck * sk_acc[m])
        out[i] = acc * scale


@njit(cache=True, parallel=True)
def spectral_force(x, dense_amps, out):
    R, N = x.shape
    kmax = dense_amps.shape[0]
    for r in prange(R):
        c1 = np.empty(N)
        s1 = np.empty(N)
        ca = np.empty(kmax)
        sa = np.empty(kmax)
        _force_row(x[r], dense_amps, c1, s1, ca, sa, out[r])


@njit(cache=True, parallel=True)
def integrate_rk4(x, v, dense_amps, dt, nsteps, snap, out_x, out_v):
    R, N = x.shape
    kmax = dense_amps.shape[0]
    half = 0.5 * dt
    sixth = dt / 6.0
    for r in prange(R):
        xr = x[r].copy()
        vr = v[r].copy()
        c1 = np.empty(N)
        s1 = np.empty(N)
        ca = np.empty(kmax)
        sa = np.empty(kmax)
        xs = np.empty(N)
        f1 = np.empty(N)
        f2 = np.empty(N)
        f3 = np.empty(N)
        f4 = np.empty(N)
        p = 0
        if snap[p] == 0:
            for i in range(N):
                out_x[p, r, i] = xr[i]
                out_v[p, r, i] = vr[i]
            p += 1
        for step in range(1, nsteps + 1):
            _force_row(xr, dense_amps, c1, s1, ca, sa, f1)
            for i in range(N):
                xs[i] = xr[i] + half * vr[i]
            _force_row(xs, dense_amps, c1, s1, ca, sa, f2)
            for i in range(N):
                xs[i] = xr[i] + half * (vr[i] + half * f1[i])
            _force_row(xs, dense_amps, c1, s1, ca, sa, f3)
            for i in range(N):
                xs[i] = xr[i] + dt * (vr[i] + half * f2[i])
            _force_row(xs, dense_amps, c1, s1, ca, sa, f4)
            for i in range(N):
                xn = xr[i] + dt * vr[i] + (dt * dt / 6.0) * (f1[i] + f2[i] + f3[i])
                xr[i] = xn - TWO_PI * math.floor(xn / TWO_PI)
                vr[i] = vr[i] + sixth * (f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i])
            if p < snap.shape[0] and snap[p] == step:
                for i in range(N):
                    out_x[p, r, i] = xr[i]
                    out_v[p, r, i] = vr[i]
                p += 1


@njit(cache=True, parallel=True)
def integrate_vv(x, v, dense_amps, dt, nsteps, snap, out_x, out_v):
    R, N = x.shape
    kmax = dense_amps.shape[0]
    half = 0.5 * dt
    for r in prange(R):
        xr = x[r].copy()
        vr = v[r].copy()
        c1 = np.empty(N)
        s1 = np.empty(N)
        ca = np.empty(kmax)
        sa = np.empty(kmax)
        f = np.empty(N)
        p = 0
        if snap[p] == 0:
            for i in range(N):
                out_x[p, r, i] = xr[i]
                out_v[p, r, i] = vr[i]
            p += 1
        _force_row(xr, dense_amps, c1, s1, ca, sa, f)
        for step in range(1, nsteps + 1):
            for i in range(N):
                vr[i] = vr[i] + half * f[i]
                xn = xr[i] + dt * vr[i]
                xr[i] = xn - TWO_PI * math.floor(xn / TWO_PI)
            _force_row(xr, dense_amps, c1, s1, ca, sa, f)
            for i in range(N):
                vr[i] = vr[i] + half * f[i]
            if p < snap.shape[0] and snap[p] == step:
                for i in range(N):
                    out_x[p, r, i] = xr[i]
                    out_v[p, r, i] = vr[i]
                p += 1
