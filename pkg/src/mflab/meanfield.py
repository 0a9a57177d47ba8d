"""The limiting mean-field reference used in all error measurements.

Two flavors: the analytic steady state (uniform in x, so the mean-field
force vanishes for mean-zero kernels and f(t) = f0 exactly), and an
M-particle oracle for perturbed initial data, simulated once and cached at
the requested observation times.  The Vlasov PDE is never discretized on a
grid; the particle oracle's own O(1/M) bias is estimated from an auxiliary
half-size run and reported as a systematic band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import accel
from .core import DensityModel, TrigKernel, wrap_angle
from .dynamics import IntegratorSpec
from .seeding import replica_seed

__all__ = ["MeanFieldReference", "build_reference", "weak_reference_moment"]


@dataclass
class MeanFieldReference:
    model: DensityModel
    kernel: TrigKernel
    times: tuple[float, ...] = ()
    oracle_states: dict = field(default_factory=dict, repr=False)
    aux_states: dict = field(default_factory=dict, repr=False)
    oracle_m: int = 0
    seed: int = 0

    @property
    def analytic(self) -> bool:
        return self.model.kind == "analytic_steady"

    def expect(self, psi, t: float = 0.0) -> tuple[float, float]:
        """int psi f(t) with uncertainty (0 for the analytic reference)."""
        if self.analytic:
            return self.model.expect(psi), 0.0
        key = self._time_key(t)
        x, v = self.oracle_states[key]
        vals = np.asarray(psi(x, v), dtype=np.float64)
        mean = float(vals.mean())
        stat = float(vals.std(ddof=1) / math.sqrt(vals.size))
        xa, va = self.aux_states[key]
        vals_a = np.asarray(psi(xa, va), dtype=np.float64)
        band = abs(mean - float(vals_a.mean()))
        return mean, math.hypot(stat, band)

    def _time_key(self, t: float) -> float:
        for tt in self.oracle_states:
            if abs(tt - t) <= 1e-9:
                return tt
        raise KeyError(f"time {t} not cached in the oracle (have {sorted(self.oracle_states)})")


def _simulate_oracle(model: DensityModel, kernel: TrigKernel, m: int, seed: int,
                     times, spec: IntegratorSpec) -> dict:
    rng = np.random.default_rng(seed)
    x, v = model.sample(m, rng)
    times = sorted(set(float(t) for t in times) | {0.0})
    steps = []
    for t in times:
        s = t / spec.dt
        n = int(round(s))
        if abs(s - n) > 1e-9 * max(1, n):
            raise ValueError(f"observation time {t} not a multiple of dt {spec.dt}")
        steps.append(n)
    snap = np.asarray(steps, dtype=np.int64)
    xs, vs = accel.integrate(x[None, :], v[None, :], kernel.wavenumbers,
                             kernel.amplitudes, spec.dt, int(snap[-1]) if snap[-1] > 0 else 0,
                             snap if snap[-1] > 0 else np.array([0], dtype=np.int64),
                             method=spec.method)
    out = {}
    for i, t in enumerate(times[: xs.shape[0]]):
        out[t] = (xs[i, 0], vs[i, 0])
    return out


def build_reference(model: DensityModel, kernel: TrigKernel, times=(),
                    spec: IntegratorSpec | None = None, seed: int = 0,
                    max_n: int = 0) -> MeanFieldReference:
    """Build the reference; analytic models return immediately.

    For perturbed_oracle models, M = model.oracle_size interacting particles
    are sampled i.i.d. from f0 and simulated once, caching states at the
    requested times, plus an independent M/2 auxiliary run for the bias band.
    Requires M >= 100 * max_n when a particle-count grid is supplied.
    """
    if model.kind == "analytic_steady":
        return MeanFieldReference(model=model, kernel=kernel, times=tuple(times))
    m = model.oracle_size
    if m < 2:
        raise ValueError("perturbed_oracle needs oracle_size >= 2")
    if max_n and m < 100 * max_n:
        raise ValueError(f"oracle_size {m} below floor 100 * max(N grid) = {100 * max_n}")
    spec = spec or IntegratorSpec()
    main = _simulate_oracle(model, kernel, m, replica_seed(seed, 1_000_003), times, spec)
    aux = _simulate_oracle(model, kernel, max(m // 2, 2), replica_seed(seed, 2_000_003),
                           times, spec)
    return MeanFieldReference(model=model, kernel=kernel, times=tuple(times),
                              oracle_states=main, aux_states=aux, oracle_m=m, seed=seed)


def weak_reference_moment(ref: MeanFieldReference, psi, m: int, t: float = 0.0) -> tuple[float, float]:
    """(int psi f(t))^m with delta-method uncertainty (zero for analytic)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    value, unc = ref.expect(psi, t)
    moment = value ** m
    return moment, abs(m * value ** (m - 1)) * unc
