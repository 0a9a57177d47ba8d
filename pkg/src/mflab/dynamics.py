"""N-particle dynamics: pairwise and pseudo-spectral forces, time stepping,
flow maps, and conservation diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import accel
from .accel import plain as _plain
from .core import TWO_PI, TrigKernel, kernel_eval, kernel_potential, wrap_angle

__all__ = [
    "ParticleEnsemble",
    "IntegratorSpec",
    "force_direct",
    "force_spectral",
    "step",
    "flow_map",
    "diagnostics",
]


@dataclass(frozen=True)
class ParticleEnsemble:
    """State of N particles at one time; positions wrapped to [0, 2*pi)."""

    x: np.ndarray
    v: np.ndarray
    t: float = 0.0
    replica_id: int = 0
    seed: int = 0

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        v = np.ascontiguousarray(self.v, dtype=np.float64)
        if x.ndim != 1 or v.shape != x.shape:
            raise ValueError("x and v must be equal-length 1-d arrays")
        if x.size < 2:
            raise ValueError("need N >= 2 particles")
        object.__setattr__(self, "x", wrap_angle(x))
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class IntegratorSpec:
    """Time-stepping choice.  Deterministic methods require sigma = 0;
    euler_maruyama is mandatory for sigma > 0.  Backward runs are
    deterministic only."""

    method: str = "rk4"
    dt: float = 1e-3
    direction: str = "forward"

    def __post_init__(self):
        if self.method not in ("rk4", "velocity_verlet", "euler_maruyama"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def validate_sigma(self, sigma: float) -> None:
        if sigma > 0 and self.method != "euler_maruyama":
            raise ValueError("sigma > 0 requires euler_maruyama")
        if sigma == 0 and self.method == "euler_maruyama":
            raise ValueError("euler_maruyama requires sigma > 0")
        if sigma > 0 and self.direction == "backward":
            raise ValueError("backward integration requires sigma = 0")


def force_direct(ens: ParticleEnsemble, kernel: TrigKernel, chunk: int = 512) -> np.ndarray:
    """O(N^2) pairwise forces a_i = (1/(N-1)) sum_{j != i} K(x_i - x_j).

    The oracle for the spectral path; row-chunked to bound memory.
    """
    x = ens.x
    n = x.size
    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        diff = x[lo:hi, None] - x[None, :]
        vals = kernel_eval(kernel, diff)
        out[lo:hi] = vals.sum(axis=1)  # j = i contributes K(0) = 0
    return out / (n - 1)


def force_spectral(ens: ParticleEnsemble, kernel: TrigKernel,
                   exact_reduction: bool = False) -> np.ndarray:
    """O(N * modes) forces via mode sums C_k = sum_j cos(k x_j),
    S_k = sum_j sin(k x_j).

    With ``exact_reduction`` the mode sums use exactly-rounded summation,
    making the result bitwise invariant under particle permutation.
    """
    if ens.n < 2:
        raise ValueError("need N >= 2 particles")
    x2d = ens.x[None, :]
    if exact_reduction:
        from .accel import _dense_amplitudes

        dense = _dense_amplitudes(kernel.wavenumbers, kernel.amplitudes)
        return _plain.spectral_force_exact(x2d, dense)[0]
    return accel.spectral_force(x2d, kernel.wavenumbers, kernel.amplitudes)[0]


def _check_steps(duration: float, dt: float) -> int:
    steps = duration / dt
    n = int(round(steps))
    if n < 1 or abs(steps - n) > 1e-9 * max(1.0, n):
        raise ValueError(f"duration {duration} is not an integer multiple of dt {dt}")
    return n


def step(ens: ParticleEnsemble, kernel: TrigKernel, spec: IntegratorSpec,
         rng: np.random.Generator | None = None, sigma: float = 0.0) -> ParticleEnsemble:
    """One time step of size spec.dt (signed by direction)."""
    spec.validate_sigma(sigma)
    dt = spec.dt if spec.direction == "forward" else -spec.dt
    x2d = ens.x[None, :]
    v2d = ens.v[None, :]
    snap = np.array([1], dtype=np.int64)
    if spec.method == "euler_maruyama":
        if rng is None:
            raise ValueError("euler_maruyama needs an RNG")
        noise = rng.standard_normal((1, 1, ens.n)) * math.sqrt(2.0 * sigma * spec.dt)
        xs, vs = accel.integrate_em(x2d, v2d, kernel.wavenumbers, kernel.amplitudes,
                                    dt, noise, snap)
    else:
        xs, vs = accel.integrate(x2d, v2d, kernel.wavenumbers, kernel.amplitudes,
                                 dt, 1, snap, method=spec.method)
    return replace(ens, x=xs[0, 0], v=vs[0, 0], t=ens.t + dt)


def flow_map(points, t0: float, t1: float, kernel: TrigKernel,
             spec: IntegratorSpec, sigma: float = 0.0):
    """Transport one N-particle configuration from t0 to t1 under the full
    interacting flow (t1 < t0 allowed).  Deterministic flows only.

    points: (x, v) arrays, or a batch of configurations as (R, N) arrays.
    Returns arrays of the same shape.
    """
    if sigma > 0:
        raise ValueError("flow_map requires sigma = 0")
    if spec.method == "euler_maruyama":
        raise ValueError("flow_map requires a deterministic method")
    x, v = points
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    squeeze = np.asarray(points[0]).ndim == 1
    if t1 == t0:
        return (x[0], v[0]) if squeeze else (x.copy(), v.copy())
    duration = t1 - t0
    nsteps = _check_steps(abs(duration), spec.dt)
    dt = math.copysign(spec.dt, duration)
    snap = np.array([nsteps], dtype=np.int64)
    xs, vs = accel.integrate(x, v, kernel.wavenumbers, kernel.amplitudes,
                             dt, nsteps, snap, method=spec.method)
    if squeeze:
        return xs[0, 0], vs[0, 0]
    return xs[0], vs[0]


def diagnostics(ens: ParticleEnsemble, kernel: TrigKernel) -> tuple[float, float]:
    """(energy, momentum) with energy = sum v_i^2/2
    + (1/(2(N-1))) sum_{i != j} W(x_i - x_j), K = -W'."""
    n = ens.n
    kinetic = 0.5 * float(np.sum(ens.v * ens.v))
    potential = 0.0
    if not kernel.is_zero:
        diff = ens.x[:, None] - ens.x[None, :]
        w = kernel_potential(kernel, diff)
        np.fill_diagonal(w, 0.0)
        potential = float(np.sum(w)) / (2.0 * (n - 1))
    momentum = float(np.sum(ens.v))
    return kinetic + potential, momentum
