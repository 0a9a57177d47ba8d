"""Pure-numpy reference implementations of the integration kernels.

Vectorized over the replica axis; used when numba is unavailable or
disabled, and as the ground truth in backend-equivalence tests.
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def _forces(x: np.ndarray, dense_amps: np.ndarray) -> np.ndarray:
    # x: (R, N); sum_{j != i} sin(k(x_i - x_j)) = sin(kx_i) C_k - cos(kx_i) S_k
    R, N = x.shape
    out = np.zeros_like(x)
    for km1 in range(dense_amps.size):
        a = dense_amps[km1]
        if a == 0.0:
            continue
        k = km1 + 1
        s = np.sin(k * x)
        c = np.cos(k * x)
        C = c.sum(axis=1, keepdims=True)
        S = s.sum(axis=1, keepdims=True)
        out += a * (s * C - c * S)
    return out / (N - 1)


def spectral_force(x: np.ndarray, dense_amps: np.ndarray, out: np.ndarray) -> None:
    out[...] = _forces(x, dense_amps)


def spectral_force_exact(x: np.ndarray, dense_amps: np.ndarray) -> np.ndarray:
    """Spectral forces with exactly-rounded (fsum) mode reductions.

    The per-mode sums are order-independent, so the result is bitwise
    invariant under particle permutations.  Slow; intended for tests.
    """
    R, N = x.shape
    out = np.zeros_like(x)
    for km1 in range(dense_amps.size):
        a = dense_amps[km1]
        if a == 0.0:
            continue
        k = km1 + 1
        s = np.sin(k * x)
        c = np.cos(k * x)
        for r in range(R):
            C = math.fsum(c[r])
            S = math.fsum(s[r])
            out[r] += a * (s[r] * C - c[r] * S)
    return out / (N - 1)


def _wrap(x: np.ndarray) -> np.ndarray:
    return x - TWO_PI * np.floor(x / TWO_PI)


def integrate_rk4(x, v, dense_amps, dt, nsteps, snap, out_x, out_v):
    half = 0.5 * dt
    p = 0
    if snap[p] == 0:
        out_x[p] = x
        out_v[p] = v
        p += 1
    for step in range(1, nsteps + 1):
        f1 = _forces(x, dense_amps)
        f2 = _forces(x + half * v, dense_amps)
        f3 = _forces(x + half * (v + half * f1), dense_amps)
        f4 = _forces(x + dt * (v + half * f2), dense_amps)
        x = _wrap(x + dt * v + (dt * dt / 6.0) * (f1 + f2 + f3))
        v = v + (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        if p < snap.size and snap[p] == step:
            out_x[p] = x
            out_v[p] = v
            p += 1


def integrate_vv(x, v, dense_amps, dt, nsteps, snap, out_x, out_v):
    half = 0.5 * dt
    p = 0
    if snap[p] == 0:
        out_x[p] = x
        out_v[p] = v
        p += 1
    f = _forces(x, dense_amps)
    for step in range(1, nsteps + 1):
        vh = v + half * f
        x = _wrap(x + dt * vh)
        f = _forces(x, dense_amps)
        v = vh + half * f
        if p < snap.size and snap[p] == step:
            out_x[p] = x
            out_v[p] = v
            p += 1


def integrate_em(x, v, dense_amps, dt, noise, snap, out_x, out_v):
    p = 0
    if snap[p] == 0:
        out_x[p] = x
        out_v[p] = v
        p += 1
    nsteps = noise.shape[1]
    for step in range(1, nsteps + 1):
        f = _forces(x, dense_amps)
        x = _wrap(x + dt * v)
        v = v + dt * f + noise[:, step - 1, :]
        if p < snap.size and snap[p] == step:
            out_x[p] = x
            out_v[p] = v
            p += 1
