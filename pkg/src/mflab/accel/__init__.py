"""Backend selection for the hot integration kernels.

The numba backend is used when available; set ``MFLAB_NO_NUMBA=1`` to force
the pure-numpy fallback.  Both backends implement the same operations with
identical semantics (agreement is tested to 1e-12 relative); within one
backend results are bitwise reproducible for a fixed seed.
"""

from __future__ import annotations

import os

import numpy as np

from . import plain

_want_numba = os.environ.get("MFLAB_NO_NUMBA", "").strip() not in ("1", "true", "yes")

if _want_numba:
    try:
        from . import jit as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - exercised only without numba
        _impl = plain
        BACKEND = "numpy"
else:
    _impl = plain
    BACKEND = "numpy"

__all__ = ["BACKEND", "integrate", "integrate_em", "spectral_force", "set_threads"]


def _dense_amplitudes(wavenumbers, amplitudes) -> np.ndarray:
    """Amplitude table indexed by wavenumber-1; zeros for absent modes."""
    ks = np.asarray(wavenumbers, dtype=np.int64)
    if ks.size == 0:
        return np.zeros(0, dtype=np.float64)
    dense = np.zeros(int(ks.max()), dtype=np.float64)
    dense[ks - 1] = np.asarray(amplitudes, dtype=np.float64)
    return dense


def spectral_force(x: np.ndarray, wavenumbers, amplitudes) -> np.ndarray:
    """Mean-field forces for a batch of configurations x of shape (R, N)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    dense = _dense_amplitudes(wavenumbers, amplitudes)
    out = np.empty_like(x)
    _impl.spectral_force(x, dense, out)
    return out


def integrate(x, v, wavenumbers, amplitudes, dt: float, nsteps: int, snap_steps,
              method: str = "rk4"):
    """Integrate a batch (R, N) for nsteps of size dt, recording snapshots.

    snap_steps: sorted step indices (0 = initial state) at which to record.
    Returns (xs, vs) of shape (S, R, N).  dt may be negative (backward flow).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    snap = np.asarray(snap_steps, dtype=np.int64)
    if snap.size == 0 or np.any(np.diff(snap) <= 0):
        raise ValueError("snap_steps must be nonempty strictly increasing")
    if snap[0] < 0 or snap[-1] > nsteps:
        raise ValueError("snap_steps outside [0, nsteps]")
    dense = _dense_amplitudes(wavenumbers, amplitudes)
    R, N = x.shape
    out_x = np.empty((snap.size, R, N), dtype=np.float64)
    out_v = np.empty((snap.size, R, N), dtype=np.float64)
    if method == "rk4":
        _impl.integrate_rk4(x.copy(), v.copy(), dense, float(dt), int(nsteps), snap, out_x, out_v)
    elif method == "velocity_verlet":
        _impl.integrate_vv(x.copy(), v.copy(), dense, float(dt), int(nsteps), snap, out_x, out_v)
    else:
        raise ValueError(f"unknown deterministic method {method!r}")
    return out_x, out_v


def integrate_em(x, v, wavenumbers, amplitudes, dt: float, noise, snap_steps):
    """Euler-Maruyama with pre-drawn velocity noise of shape (R, nsteps, N).

    The noise entries are already scaled by sqrt(2 sigma dt).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    nsteps = noise.shape[1]
    snap = np.asarray(snap_steps, dtype=np.int64)
    if snap.size == 0 or np.any(np.diff(snap) <= 0):
        raise ValueError("snap_steps must be nonempty strictly increasing")
    if snap[0] < 0 or snap[-1] > nsteps:
        raise ValueError("snap_steps outside [0, nsteps]")
    dense = _dense_amplitudes(wavenumbers, amplitudes)
    R, N = x.shape
    out_x = np.empty((snap.size, R, N), dtype=np.float64)
    out_v = np.empty((snap.size, R, N), dtype=np.float64)
    plain.integrate_em(x.copy(), v.copy(), dense, float(dt), noise, snap, out_x, out_v)
    return out_x, out_v


def set_threads(n: int) -> None:
    """Limit backend parallelism (numba threads); no-op on the numpy path."""
    if BACKEND == "numba" and n > 0:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
