"""Phase space, interaction kernels, and analytic density models.

Everything lives on the torus [0, 2*pi) in position and on the real line in
velocity.  Kernels are finite sine series (odd, mean zero by construction),
so potentials, convolutions against the shipped densities, and spectral
mollification all have closed forms within the class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * math.pi

__all__ = [
    "TWO_PI",
    "PhaseConfig",
    "TrigKernel",
    "DensityModel",
    "InteractionObservable",
    "wrap_angle",
    "smooth_kernel",
    "rough_kernel",
    "zero_kernel",
    "kernel_eval",
    "kernel_potential",
    "kernel_mollify",
    "kernel_complement",
    "kernel_l2_norm",
    "torus_nodes",
    "velocity_nodes",
    "density_expect",
    "vf_eval",
]


def wrap_angle(x):
    """Wrap positions to [0, 2*pi)."""
    return np.asarray(x) - TWO_PI * np.floor(np.asarray(x) / TWO_PI)


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


@dataclass(frozen=True)
class PhaseConfig:
    """Global phase-space and time-horizon parameters.

    v1 is one-dimensional: position on the 2*pi torus, scalar velocity.
    ``sigma`` is the velocity diffusion coefficient (0 = deterministic).
    """

    spatial_dim: int = 1
    torus_length: float = TWO_PI
    sigma: float = 0.0
    horizon: float = 0.5

    def __post_init__(self):
        if self.spatial_dim != 1:
            raise ValueError("only spatial_dim=1 is supported")
        if not math.isclose(self.torus_length, TWO_PI, rel_tol=1e-12):
            raise ValueError("torus_length must be 2*pi")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.horizon <= 0:
            raise ValueError("horizon must be > 0")


@dataclass(frozen=True)
class TrigKernel:
    """Interaction force K(x) = sum_k a_k sin(k x).

    Odd and mean-zero on the torus by construction.  ``delta`` records the
    Gaussian spectral mollification width already applied to the amplitudes
    (0 means unmollified).
    """

    wavenumbers: tuple[int, ...]
    amplitudes: tuple[float, ...]
    regularity: str = "smooth"
    sobolev_s: float | None = None
    delta: float = 0.0

    def __post_init__(self):
        if len(self.wavenumbers) != len(self.amplitudes):
            raise ValueError("wavenumbers and amplitudes must have equal length")
        if any(k <= 0 or int(k) != k for k in self.wavenumbers):
            raise ValueError("wavenumbers must be positive integers")
        if len(set(self.wavenumbers)) != len(self.wavenumbers):
            raise ValueError("duplicate wavenumbers")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")

    @property
    def k_array(self) -> np.ndarray:
        return np.asarray(self.wavenumbers, dtype=np.int64)

    @property
    def a_array(self) -> np.ndarray:
        return np.asarray(self.amplitudes, dtype=np.float64)

    @property
    def is_zero(self) -> bool:
        return len(self.wavenumbers) == 0 or all(a == 0.0 for a in self.amplitudes)

    def label(self) -> str:
        """Comma-free identifier (labels end up in CSV fields)."""
        if self.regularity == "rough":
            tag = f"rough(s={self.sobolev_s:g};kmax={max(self.wavenumbers)})"
        elif self.is_zero:
            tag = "zero"
        else:
            tag = "smooth(" + ";".join(f"{a:g}" for a in self.amplitudes) + ")"
        if self.delta > 0:
            tag += f";delta={self.delta:g}"
        return tag


def smooth_kernel(amplitudes) -> TrigKernel:
    """Kernel with modes 1..len(amplitudes)."""
    amps = tuple(float(a) for a in amplitudes)
    return TrigKernel(tuple(range(1, len(amps) + 1)), amps, regularity="smooth")


def zero_kernel() -> TrigKernel:
    return TrigKernel((), (), regularity="smooth")


def rough_kernel(s: float, max_mode: int = 128, sign_seed: int = 7) -> TrigKernel:
    """Kernel emulating H^s regularity: a_k = sign_k * k^-(s + 0.55).

    The 0.55 offset keeps the discrete norms stable while staying as close
    as the finite series allows to the H^s boundary.  Signs are a fixed
    pseudo-random pattern derived from ``sign_seed``.
    """
    if s <= 0:
        raise ValueError("s must be > 0")
    ks = tuple(range(1, max_mode + 1))
    amps = []
    for k in ks:
        sign = 1.0 if (_splitmix64(k ^ (sign_seed * 0x9E3779B9)) >> 63) == 0 else -1.0
        amps.append(sign * k ** -(s + 0.55))
    return TrigKernel(ks, tuple(amps), regularity="rough", sobolev_s=float(s))


def kernel_eval(kernel: TrigKernel, x):
    """Force K(x) = sum_k a_k sin(k x); periodic in x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x, dtype=np.float64)
    for k, a in zip(kernel.wavenumbers, kernel.amplitudes):
        out = out + a * np.sin(k * x)
    return out


def kernel_potential(kernel: TrigKernel, x):
    """Potential W with K = -W', i.e. W(x) = sum_k (a_k / k) cos(k x)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x, dtype=np.float64)
    for k, a in zip(kernel.wavenumbers, kernel.amplitudes):
        out = out + (a / k) * np.cos(k * x)
    return out


def kernel_mollify(kernel: TrigKernel, delta: float) -> TrigKernel:
    """Gaussian spectral damping: a_k -> a_k * exp(-(delta*k)^2 / 2).

    Equals convolution with a Gaussian mollifier of width delta, exactly
    representable inside the trigonometric class.  delta = 0 is the identity.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if delta == 0.0:
        return kernel
    amps = tuple(
        a * math.exp(-((delta * k) ** 2) / 2.0)
        for k, a in zip(kernel.wavenumbers, kernel.amplitudes)
    )
    return replace(kernel, amplitudes=amps, delta=delta)


def kernel_complement(kernel: TrigKernel, delta: float) -> TrigKernel:
    """The remainder K - K_delta in the same mode basis."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    amps = tuple(
        a * (1.0 - math.exp(-((delta * k) ** 2) / 2.0))
        for k, a in zip(kernel.wavenumbers, kernel.amplitudes)
    )
    return replace(kernel, amplitudes=amps, delta=delta)


def kernel_l2_norm(kernel: TrigKernel) -> float:
    """L2 norm over the torus; int sin^2(kx) dx = pi for every mode."""
    return math.sqrt(math.pi * sum(a * a for a in kernel.amplitudes))


# --- quadrature -------------------------------------------------------------


def torus_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform (trapezoid) nodes on [0, 2*pi); spectrally accurate for
    periodic integrands."""
    nodes = np.arange(n) * (TWO_PI / n)
    weights = np.full(n, TWO_PI / n)
    return nodes, weights


def velocity_nodes(n: int, vmax: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on the truncated velocity interval [-vmax, vmax]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return x * vmax, w * vmax


# --- density models ---------------------------------------------------------


@dataclass(frozen=True)
class DensityModel:
    """Mean-field density f(x, v) = rho(x) * g(v).

    kinds:
      analytic_steady  - rho uniform; a steady Vlasov state for mean-zero K.
      perturbed_oracle - rho(x) = (1 + eps cos(mode x)) / 2pi at t=0; the
                         time-evolved reference is an M-particle oracle
                         (see the meanfield module).

    profiles: gaussian(theta) or cosine_bump(halfwidth).
    """

    kind: str = "analytic_steady"
    profile: str = "gaussian"
    theta: float = 1.0
    bump_halfwidth: float = 4.0
    eps: float = 0.0
    mode: int = 1
    oracle_size: int = 0
    nx: int = 256
    nv: int = 200

    def __post_init__(self):
        if self.kind not in ("analytic_steady", "perturbed_oracle"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.profile not in ("gaussian", "cosine_bump"):
            raise ValueError(f"unknown velocity profile {self.profile!r}")
        if self.theta <= 0:
            raise ValueError("theta must be > 0")
        if self.kind == "perturbed_oracle":
            if not (0 <= self.eps < 1):
                raise ValueError("eps must be in [0, 1)")
            if self.mode < 1:
                raise ValueError("perturbation mode must be >= 1")

    @property
    def vmax(self) -> float:
        if self.profile == "gaussian":
            return 8.0 * math.sqrt(self.theta)
        return self.bump_halfwidth

    def label(self) -> str:
        if self.kind == "analytic_steady":
            return f"steady-{self.profile}({self.theta:g})"
        return f"perturbed(eps={self.eps:g};mode={self.mode})-{self.profile}({self.theta:g})"

    # densities and scores ---------------------------------------------------

    def x_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "analytic_steady" or self.eps == 0.0:
            return np.full_like(x, 1.0 / TWO_PI)
        return (1.0 + self.eps * np.cos(self.mode * x)) / TWO_PI

    def velocity_pdf(self, v):
        v = np.asarray(v, dtype=np.float64)
        if self.profile == "gaussian":
            return np.exp(-(v * v) / (2.0 * self.theta)) / math.sqrt(TWO_PI * self.theta)
        a = self.bump_halfwidth
        inside = np.abs(v) <= a
        return np.where(inside, (1.0 + np.cos(np.pi * v / a)) / (2.0 * a), 0.0)

    def score_v(self, v):
        """d/dv log f; independent of x for the shipped product densities."""
        v = np.asarray(v, dtype=np.float64)
        if self.profile == "gaussian":
            return -v / self.theta
        a = self.bump_halfwidth
        num = -(np.pi / a) * np.sin(np.pi * v / a)
        den = 1.0 + np.cos(np.pi * v / a)
        return num / np.maximum(den, 1e-300)

    def f(self, x, v):
        return self.x_density(x) * self.velocity_pdf(v)

    def fisher_v(self) -> float:
        """int (d_v log f)^2 f dz; 1/theta for gaussian, (pi/a)^2 for the bump."""
        xn, xw = self.x_grid()
        vn, vw = self.v_grid()
        g = self.velocity_pdf(vn)
        s = self.score_v(vn)
        return float(np.sum(xw * self.x_density(xn)) * np.sum(vw * s * s * g))

    # quadrature grids -------------------------------------------------------

    def x_grid(self):
        return _cached_torus(self.nx)

    def v_grid(self):
        return _cached_velocity(self.nv, self.vmax)

    def expect(self, psi) -> float:
        """Tensor-quadrature expectation of psi(x, v) at t = 0.

        The discrete weights are normalized, so constants are exact.
        """
        xn, xw = self.x_grid()
        vn, vw = self.v_grid()
        X, V = np.meshgrid(xn, vn, indexing="ij")
        vals = np.asarray(psi(X, V), dtype=np.float64)
        if vals.shape != X.shape:
            vals = np.broadcast_to(vals, X.shape)
        w2 = np.outer(xw * self.x_density(xn), vw * self.velocity_pdf(vn))
        return float(np.sum(vals * w2) / np.sum(w2))

    def mass(self) -> float:
        """Raw (unnormalized) quadrature mass of the density."""
        xn, xw = self.x_grid()
        vn, vw = self.v_grid()
        return float(np.sum(xw * self.x_density(xn)) * np.sum(vw * self.velocity_pdf(vn)))

    # sampling ---------------------------------------------------------------

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """n i.i.d. draws (x, v) from the t=0 density."""
        u = rng.random(n)
        if self.kind == "analytic_steady" or self.eps == 0.0:
            x = u * TWO_PI
        else:
            # invert CDF(x) = (x + (eps/mode) sin(mode x)) / 2pi by fixed point
            x = u * TWO_PI
            for _ in range(64):
                x = u * TWO_PI - (self.eps / self.mode) * np.sin(self.mode * x)
            x = wrap_angle(x)
        if self.profile == "gaussian":
            v = rng.standard_normal(n) * math.sqrt(self.theta)
        else:
            v = self._sample_bump(rng.random(n))
        return x, v

    def _sample_bump(self, u: np.ndarray) -> np.ndarray:
        # bisection on CDF(v) = (v + a + (a/pi) sin(pi v / a)) / (2a)
        a = self.bump_halfwidth
        lo = np.full_like(u, -a)
        hi = np.full_like(u, a)
        for _ in range(52):
            mid = 0.5 * (lo + hi)
            cdf = (mid + a + (a / np.pi) * np.sin(np.pi * mid / a)) / (2.0 * a)
            take_hi = cdf < u
            lo = np.where(take_hi, mid, lo)
            hi = np.where(take_hi, hi, mid)
        return 0.5 * (lo + hi)


@lru_cache(maxsize=32)
def _cached_torus(n: int):
    return torus_nodes(n)


@lru_cache(maxsize=32)
def _cached_velocity(n: int, vmax: float):
    return velocity_nodes(n, vmax)


def density_expect(model: DensityModel, psi, t: float = 0.0, horizon: float | None = None,
                   oracle=None) -> tuple[float, float]:
    """Expectation int psi f(t) with attached standard error.

    analytic_steady densities are time-invariant, so the quadrature value is
    returned with zero error.  perturbed_oracle densities require the
    M-particle reference (``oracle``) built by the meanfield module.
    """
    if horizon is not None and not (0.0 <= t <= horizon + 1e-12):
        raise ValueError(f"t={t} outside horizon [0, {horizon}]")
    if model.kind == "analytic_steady":
        return model.expect(psi), 0.0
    if oracle is None:
        raise ValueError("perturbed_oracle expectations need the mean-field reference")
    return oracle.expect(psi, t)


# --- the interaction observable V_f -----------------------------------------


@dataclass(frozen=True)
class InteractionObservable:
    """V_f(z, z') = (K(x - x') - K*f(x)) * d_v log f(z).

    Requires an analytic_steady density so the score is available in closed
    form.  With ``delta`` set, ``vf_delta``/``wf_delta`` give the mollified
    split V_f = V_f^delta + W_f^delta.
    """

    kernel: TrigKernel
    density: DensityModel
    delta: float = 0.0

    def __post_init__(self):
        if self.density.kind != "analytic_steady":
            raise ValueError("V_f needs a closed-form score: analytic_steady only")

    def conv_force(self, x):
        """K * f(x); identically zero for mean-zero K against a uniform rho."""
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    def vf(self, z1, z2):
        (x1, v1), (x2, _v2) = z1, z2
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        return (kernel_eval(self.kernel, x1 - x2) - self.conv_force(x1)) * self.density.score_v(v1)

    def vf_delta(self, z1, z2):
        (x1, v1), (x2, _v2) = z1, z2
        kd = kernel_mollify(self.kernel, self.delta)
        return (kernel_eval(kd, np.asarray(x1) - np.asarray(x2)) - self.conv_force(x1)) * self.density.score_v(v1)

    def wf_delta(self, z1, z2):
        (x1, v1), (x2, _v2) = z1, z2
        kc = kernel_complement(self.kernel, self.delta)
        return kernel_eval(kc, np.asarray(x1) - np.asarray(x2)) * self.density.score_v(v1)


def vf_eval(obs: InteractionObservable, z1, z2):
    """Pointwise V_f(z1, z2); z = (x, v) scalars or arrays."""
    return obs.vf(z1, z2)
