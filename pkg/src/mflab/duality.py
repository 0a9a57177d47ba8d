"""Backward-transported observables and the duality identities.

The backward equation is solved along characteristics: an observable with
terminal data h^T at time T evaluates at time t as h^T applied to the
configuration flowed from t to T.  Pairings of the forward particle law
against such observables are conserved in time; the checks here verify
that conservation, the interaction identity linking marginal weak errors
to the time-integrated V_f pairing, and the closed-form terminal dual
cumulants, all at small N where grid extraction is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import accel
from .core import DensityModel, InteractionObservable, TrigKernel, kernel_eval, wrap_angle
from .cumulants import (
    CumulantTable,
    DiscreteFunction,
    DiscreteMeasure,
    average_out,
    kappa_table,
    rescale,
)
from .dynamics import IntegratorSpec
from .estimation import ExperimentPlan, MomentEstimate, ustat_rows, weak_error
from .meanfield import build_reference
from .observables import Observable
from .seeding import batch_seed, replica_rng

__all__ = [
    "TerminalObservable",
    "DualityReport",
    "backward_observable",
    "check_forward_duality",
    "check_prop_identity",
    "terminal_dual_cumulants",
    "check_cumulant_pairing_conservation",
]


@dataclass(frozen=True)
class TerminalObservable:
    """h^T(z_1..z_N) = binom(N,m)^-1 sum_{i_1<..<i_m} psi(z_{i_1})..psi(z_{i_m}),
    i.e. the order-m U-statistic of psi."""

    psi: Observable
    m: int
    n_particles: int

    def __post_init__(self):
        if not 1 <= self.m <= self.n_particles:
            raise ValueError("need 1 <= m <= N")

    def evaluate(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Evaluate on a batch of configurations of shape (R, N)."""
        x = np.atleast_2d(x)
        v = np.atleast_2d(v)
        gvals = np.asarray(self.psi(x, v), dtype=np.float64)
        return ustat_rows(gvals, self.m)

    def sup_bound(self) -> float:
        return self.psi.sup_norm() ** self.m


@dataclass
class DualityReport:
    lhs: MomentEstimate
    rhs: MomentEstimate
    z_score: float
    pathwise_max: float = math.nan
    tolerance: float = math.nan

    @property
    def gap(self) -> float:
        return abs(self.lhs.value - self.rhs.value)


def _combined_z(a: MomentEstimate, b: MomentEstimate, tolerance: float = 0.0) -> float:
    se = math.hypot(a.stderr, b.stderr)
    if se == 0.0:
        se = tolerance if tolerance > 0 else 1.0
    return abs(a.value - b.value) / se


def backward_observable(term: TerminalObservable, t: float, x, v,
                        kernel: TrigKernel, spec: IntegratorSpec, horizon: float,
                        sigma: float = 0.0) -> np.ndarray:
    """h_N(t, z) = h^T(flow of z from t to horizon); deterministic flows only."""
    if sigma > 0:
        raise ValueError("backward observables need sigma = 0")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    duration = horizon - t
    if duration < 0:
        raise ValueError("t beyond the terminal time")
    if duration == 0:
        return term.evaluate(x, v)
    steps = duration / spec.dt
    nsteps = int(round(steps))
    if abs(steps - nsteps) > 1e-9 * max(1, nsteps):
        raise ValueError("horizon - t must be an integer multiple of dt")
    xs, vs = accel.integrate(x, v, kernel.wavenumbers, kernel.amplitudes,
                             spec.dt, nsteps, np.array([nsteps], dtype=np.int64),
                             method=spec.method)
    return term.evaluate(xs[0], vs[0])


# --- forward duality ---------------------------------------------------------


def check_forward_duality(term: TerminalObservable, plan: ExperimentPlan,
                          dt_coarse: float | None = None, refine: int = 8,
                          salt: int = 701) -> DualityReport:
    """Conservation of the pairing: the replica average of h^T at the final
    state must equal the average of the backward observable at t=0 on the
    same replicas.  With the exact flow both sides coincide pathwise, so the
    residual isolates integrator error (O(dt^4) for rk4)."""
    if plan.phase.sigma > 0:
        raise ValueError("forward duality check needs sigma = 0")
    T = plan.phase.horizon
    n = term.n_particles
    dt_c = dt_coarse if dt_coarse is not None else plan.integrator.dt
    steps_c = int(round(T / dt_c))
    if abs(T / dt_c - steps_c) > 1e-9 * max(1, steps_c):
        raise ValueError("horizon must be an integer multiple of dt")
    bseed = batch_seed(plan.master_seed, n, salt)
    xs = np.empty((plan.replicas, n))
    vs = np.empty((plan.replicas, n))
    for rid in range(plan.replicas):
        x, v = plan.density.sample(n, replica_rng(bseed, rid))
        xs[rid] = x
        vs[rid] = v
    ks, amps = plan.kernel.wavenumbers, plan.kernel.amplitudes
    snap_c = np.array([steps_c], dtype=np.int64)
    xc, vc = accel.integrate(xs, vs, ks, amps, dt_c, steps_c, snap_c,
                             method=plan.integrator.method)
    rhs_vals = term.evaluate(xc[0], vc[0])
    steps_f = steps_c * refine
    snap_f = np.array([steps_f], dtype=np.int64)
    xf, vf = accel.integrate(xs, vs, ks, amps, dt_c / refine, steps_f, snap_f,
                             method=plan.integrator.method)
    lhs_vals = term.evaluate(xf[0], vf[0])
    lhs = _mk_estimate(lhs_vals, n, term.m, T)
    rhs = _mk_estimate(rhs_vals, n, term.m, 0.0)
    pathwise = float(np.max(np.abs(lhs_vals - rhs_vals)))
    return DualityReport(lhs=lhs, rhs=rhs, z_score=_combined_z(lhs, rhs),
                         pathwise_max=pathwise)


def _mk_estimate(vals: np.ndarray, n: int, order: int, t: float) -> MomentEstimate:
    r = vals.size
    se = float(vals.std(ddof=1) / math.sqrt(r)) if r > 1 else 0.0
    return MomentEstimate(value=float(vals.mean()), stderr=se, r_used=r, n=n,
                          order=order, time=t, replica_values=vals)


# --- the interaction identity -------------------------------------------------


def check_prop_identity(term: TerminalObservable, plan: ExperimentPlan,
                        samples: int = 20000, gl_nodes: int = 8,
                        control_variate: bool = True, salt: int = 811,
                        chunk: int = 4096) -> DualityReport:
    """< psi^{tensor m}, F_{N,m}(T) - f^{tensor m}(T) >
    = -N int_0^T int V_f(z1, z2) h_N(t, .) f^{tensor N} dt.

    lhs by the weak-error estimator; rhs by Monte Carlo over i.i.d. draws
    from f with Gauss-Legendre time quadrature, the backward observable
    evaluated by flowing each draw to the terminal time.  The free-flow
    control variate (exactly mean-zero by the V_f slot cancellation)
    suppresses the O(1) variance of the raw integrand.
    """
    density = plan.density
    if density.kind != "analytic_steady":
        raise ValueError("the identity check needs the analytic steady density")
    if plan.phase.sigma > 0:
        raise ValueError("needs sigma = 0")
    n = term.n_particles
    T = plan.phase.horizon
    spec = plan.integrator
    lhs_plan = ExperimentPlan(
        n_grid=(n,), replicas=plan.replicas, observable=term.psi,
        orders=(term.m,), times=(T,), kernel=plan.kernel, density=density,
        master_seed=batch_seed(plan.master_seed, salt, 1), phase=plan.phase,
        integrator=spec, coupled=plan.coupled)
    ref = build_reference(density, plan.kernel)
    lhs = [e for e in weak_error(lhs_plan, ref) if e.time == T][0]

    xi, wxi = np.polynomial.legendre.leggauss(gl_nodes)
    t_nodes = 0.5 * T * (xi + 1.0)
    w_nodes = 0.5 * T * wxi
    durations = T - t_nodes  # descending in q
    step_counts = np.array([int(round(d / spec.dt)) for d in durations], dtype=np.int64)
    order_idx = np.argsort(step_counts)
    snap = step_counts[order_idx]
    if snap[0] < 1:
        raise ValueError("Gauss-Legendre node collides with the terminal time; refine dt")
    nsteps = int(snap[-1])

    bseed = batch_seed(plan.master_seed, salt, 2)
    vals = np.empty(samples)
    ks, amps = plan.kernel.wavenumbers, plan.kernel.amplitudes
    for c0 in range(0, samples, chunk):
        c1 = min(c0 + chunk, samples)
        xs = np.empty((c1 - c0, n))
        vs = np.empty((c1 - c0, n))
        for i, rid in enumerate(range(c0, c1)):
            x, v = density.sample(n, replica_rng(bseed, rid))
            xs[i] = x
            vs[i] = v
        vf = kernel_eval(plan.kernel, xs[:, 0] - xs[:, 1]) * density.score_v(vs[:, 0])
        xq, vq = accel.integrate(xs, vs, ks, amps, spec.dt, nsteps, snap,
                                 method=spec.method)
        acc = np.zeros(c1 - c0)
        for pos, q in enumerate(order_idx):
            h = term.evaluate(xq[pos], vq[pos])
            if control_variate:
                d = snap[pos] * spec.dt
                h = h - term.evaluate(wrap_angle(xs + vs * d), vs)
            acc += w_nodes[q] * h
        vals[c0:c1] = -n * vf * acc
    rhs = _mk_estimate(vals, n, term.m, T)
    return DualityReport(lhs=lhs, rhs=rhs, z_score=_combined_z(lhs, rhs))


# --- terminal dual cumulants ----------------------------------------------------


def terminal_dual_cumulants(term: TerminalObservable, measure: DiscreteMeasure,
                            max_order: int | None = None) -> CumulantTable:
    """Closed-form rescaled dual cumulants of the terminal observable:

    Cbar_{N,n}(T) = 1_{n<=m} binom(N,n)^{-1/2} binom(m,n)
                    sum_{l=0}^n (-1)^{n+l} sum_{|sigma|=l} (int psi f)^{m-l}
                    psi^{tensor l}(z_sigma).
    """
    n_top = term.n_particles if max_order is None else min(max_order, term.n_particles)
    psi_g = np.asarray(term.psi(measure.xg, measure.vg), dtype=np.float64)
    mu = float(np.sum(psi_g * measure.w))
    g = measure.size
    entries: dict = {0: mu ** term.m}
    for n in range(1, n_top + 1):
        if n > term.m:
            entries[n] = DiscreteFunction(np.zeros((g,) * n), measure, symmetric=True)
            continue
        acc = np.zeros((1,) * n)
        for l in range(0, n + 1):
            coef = (-1.0) ** (n + l) * mu ** (term.m - l)
            for sigma in combinations(range(n), l):
                block = np.ones((1,) * n)
                for s in sigma:
                    shape = [1] * n
                    shape[s] = g
                    block = block * psi_g.reshape(shape)
                acc = acc + coef * block
        factor = math.comb(term.m, n) / math.sqrt(math.comb(term.n_particles, n))
        vals = factor * np.broadcast_to(acc, (g,) * n).copy()
        entries[n] = DiscreteFunction(vals, measure, symmetric=True)
    return CumulantTable("dual_C", entries, rescaled=True, n_particles=term.n_particles)


# --- cumulant-pairing conservation ----------------------------------------------


def _flow_grid_configs(measure: DiscreteMeasure, n: int, kernel: TrigKernel,
                       spec: IntegratorSpec, duration: float,
                       chunk: int = 120_000) -> tuple[np.ndarray, np.ndarray]:
    """Transport every n-fold tensor-grid configuration for the given signed
    duration under the interacting flow."""
    g = measure.size
    idx = np.stack([a.ravel() for a in np.meshgrid(*([np.arange(g)] * n), indexing="ij")],
                   axis=1)
    x = measure.xg[idx]
    v = measure.vg[idx]
    steps = int(round(abs(duration) / spec.dt))
    if steps == 0:
        return x, v
    dt = math.copysign(spec.dt, duration)
    snap = np.array([steps], dtype=np.int64)
    out_x = np.empty_like(x)
    out_v = np.empty_like(v)
    for c0 in range(0, x.shape[0], chunk):
        c1 = min(c0 + chunk, x.shape[0])
        xs, vs = accel.integrate(x[c0:c1], v[c0:c1], kernel.wavenumbers,
                                 kernel.amplitudes, dt, steps, snap, method=spec.method)
        out_x[c0:c1] = xs[0]
        out_v[c0:c1] = vs[0]
    return out_x, out_v


def _pairing_sum(kappa_bar: CumulantTable, c_bar: CumulantTable,
                 measure: DiscreteMeasure) -> float:
    """sum_n int kappabar_n cbar_n f^{tensor n} over the grid."""
    total = 0.0
    for order in kappa_bar.orders():
        if order not in c_bar.entries:
            continue
        ke = kappa_bar.entries[order]
        ce = c_bar.entries[order]
        if order == 0:
            total += float(ke) * float(ce)
            continue
        prod = DiscreteFunction(ke.values * ce.values, measure)
        total += float(average_out(prod, range(1, order + 1), weighted=True).values)
    return total


def check_cumulant_pairing_conservation(term: TerminalObservable, plan: ExperimentPlan,
                                        nx: int = 10, nv: int = 10,
                                        vmax: float | None = None,
                                        tolerance: float = 5e-3) -> DualityReport:
    """Conservation of sum_n int kappabar_n(t) cbar_n(t) f^{tensor n} between
    t=0 and t=T at small N.

    The t=T side extracts direct cumulants from the pushforward density
    F_N(T, z) = f^{tensor N}(flow back to 0)(z) (volume preservation) and
    pairs them with the closed-form terminal dual cumulants; the t=0 side is
    tensorized, so only order 0 survives: the f-average of the backward
    observable at time zero.  The gap is dominated by grid quadrature error.
    """
    if plan.phase.sigma > 0:
        raise ValueError("needs sigma = 0")
    density = plan.density
    if density.kind != "analytic_steady":
        raise ValueError("needs the analytic steady density")
    n = term.n_particles
    if n > 3:
        raise ValueError("grid extraction is limited to N <= 3")
    T = plan.phase.horizon
    spec = plan.integrator
    measure = DiscreteMeasure.from_model(density, nx=nx, nv=nv, vmax=vmax)
    g = measure.size

    xb, vb = _flow_grid_configs(measure, n, plan.kernel, spec, -T)
    f_end = np.ones(xb.shape[0])
    for i in range(n):
        # normalize against the grid mass so the pushforward density is
        # consistent with the measure's discrete probability weights
        f_end *= density.f(xb[:, i], vb[:, i]) / measure.raw_mass
    f_t = DiscreteFunction(f_end.reshape((g,) * n), measure, symmetric=True)
    kbar_t = rescale(kappa_table(f_t), n)
    cbar_t = terminal_dual_cumulants(term, measure)
    pair_t = _pairing_sum(kbar_t, cbar_t, measure)

    xf, vf = _flow_grid_configs(measure, n, plan.kernel, spec, T)
    h0 = term.evaluate(xf, vf).reshape((g,) * n)
    pair_0 = float(average_out(DiscreteFunction(h0, measure), range(1, n + 1),
                               weighted=True).values)

    lhs = MomentEstimate(value=pair_t, stderr=0.0, r_used=0, n=n, order=term.m, time=T)
    rhs = MomentEstimate(value=pair_0, stderr=0.0, r_used=0, n=n, order=term.m, time=0.0)
    return DualityReport(lhs=lhs, rhs=rhs,
                         z_score=_combined_z(lhs, rhs, tolerance=tolerance),
                         tolerance=tolerance)
