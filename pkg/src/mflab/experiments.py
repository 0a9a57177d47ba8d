"""Experiment drivers wired to the CLI: weak-error and kappa-scaling rate
studies, duality checks, conservation audits, and the fast selftest."""

from __future__ import annotations

import math
import os
from dataclasses import replace

import numpy as np

from . import accel
from .config import RunConfig
from .core import DensityModel, smooth_kernel, zero_kernel
from .cumulants import (
    DiscreteFunction,
    DiscreteMeasure,
    bell_number,
    dual_table,
    enumerate_partitions,
    kappa_table,
    marginals_to_G,
    cluster_to_marginals,
    max_slot_residual,
    reconstruct_from_kappa,
    rescale,
)
from .duality import (
    TerminalObservable,
    check_cumulant_pairing_conservation,
    check_forward_duality,
    check_prop_identity,
    terminal_dual_cumulants,
)
from .dynamics import IntegratorSpec, ParticleEnsemble, diagnostics, force_direct, force_spectral, step
from .estimation import ExperimentPlan, kappa_pairing, replica_ustats, ustat_product, weak_error
from .meanfield import build_reference
from .observables import parse_observable
from .rates import bound_consistency, fit_rate
from .report import ResultWriter, svg_loglog
from .seeding import batch_seed, replica_rng

__all__ = ["run_experiment"]


def _plan_from_cfg(cfg: RunConfig, coupled: bool | None = None,
                   density: DensityModel | None = None) -> ExperimentPlan:
    plan = cfg["plan"]
    density = density if density is not None else cfg.density()
    wants_coupled = cfg["estimator"]["coupled"] if coupled is None else coupled
    if density.kind != "analytic_steady":
        wants_coupled = False
    return ExperimentPlan(
        n_grid=tuple(plan["n_grid"]),
        replicas=plan["replicas"],
        observable=cfg.observable(),
        orders=tuple(plan["orders"]),
        times=tuple(plan["times"]),
        kernel=cfg.kernel(),
        density=density,
        master_seed=plan["master_seed"],
        phase=cfg.phase(),
        integrator=cfg.integrator(),
        coupled=wants_coupled,
    )


def _series(estimates, order: int, t: float):
    return sorted((e for e in estimates if e.order == order and abs(e.time - t) < 1e-9),
                  key=lambda e: e.n)


def _maybe_dump_trajectories(cfg: RunConfig, plan: ExperimentPlan, outdir: str,
                             log: list) -> None:
    if not cfg["output"]["dump_trajectories"]:
        return
    n = plan.n_grid[0]
    load = plan.replicas * n * len(plan.times)
    if load > 2_000_000:
        log.append(f"trajectory dump skipped: {load} samples exceed the 2e6 cap")
        return
    from .estimation import _sample_block, _snap_steps

    snap, index = _snap_steps(plan.times, plan.integrator.dt)
    bseed = batch_seed(plan.master_seed, n, 101, 0)
    x0, v0, _ = _sample_block(plan.density, n, bseed, 0, plan.replicas)
    xs, vs = accel.integrate(x0, v0, plan.kernel.wavenumbers, plan.kernel.amplitudes,
                             plan.integrator.dt, int(snap[-1]), snap,
                             method=plan.integrator.method)
    path = os.path.join(outdir, "trajectories.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("replica_id,t,i,x,v\n")
        for t in plan.times:
            si = index[t]
            for rid in range(plan.replicas):
                for i in range(n):
                    fh.write(f"{rid},{t:.17g},{i},{xs[si, rid, i]:.17g},{vs[si, rid, i]:.17g}\n")
    log.append(f"trajectory dump written for N={n} at {len(plan.times)} times")


def run_weak_error(cfg: RunConfig, writer: ResultWriter, log: list, outdir: str) -> None:
    plan = _plan_from_cfg(cfg)
    ref = build_reference(plan.density, plan.kernel, times=plan.times,
                          spec=plan.integrator, seed=plan.master_seed,
                          max_n=max(plan.n_grid))
    estimates = weak_error(plan, ref)
    kid, did = plan.kernel.label(), plan.density.label()
    tag = "weak-error"
    for e in estimates:
        writer.add_result(tag, kid, did, e.n, e.order, e.time, e.r_used, e.value,
                          e.stderr, detail="flagged" if e.flagged else "")
    t_final = max(plan.times)
    fits = {}
    degenerate_all = True
    for m in plan.orders:
        series = _series(estimates, m, t_final)
        if len(series) >= 4:
            fit = fit_rate(series, seed=plan.master_seed)
            fits[m] = (fit, series)
            writer.add_fit(tag, m, t_final, fit)
            degenerate_all &= fit.degenerate
        else:
            degenerate_all = False
    if fits and degenerate_all and cfg["estimator"]["fallback_to_perturbed"] \
            and plan.density.kind == "analytic_steady":
        log.append("steady weak-error signal degenerate at every order; "
                   "falling back to the perturbed configuration")
        pert = DensityModel(kind="perturbed_oracle", profile=plan.density.profile,
                            theta=plan.density.theta, eps=0.1, mode=1,
                            oracle_size=100 * max(plan.n_grid))
        plan2 = _plan_from_cfg(cfg, coupled=False, density=pert)
        ref2 = build_reference(pert, plan2.kernel, times=plan2.times,
                               spec=plan2.integrator, seed=plan2.master_seed,
                               max_n=max(plan2.n_grid))
        estimates = weak_error(plan2, ref2)
        kid, did = plan2.kernel.label(), pert.label()
        for e in estimates:
            writer.add_result(tag, kid, did, e.n, e.order, e.time, e.r_used, e.value,
                              e.stderr, detail="fallback")
        fits = {}
        for m in plan2.orders:
            series = _series(estimates, m, t_final)
            if len(series) >= 4:
                fit = fit_rate(series, seed=plan2.master_seed)
                fits[m] = (fit, series)
                writer.add_fit(tag, m, t_final, fit)
    if cfg["output"]["emit_svg"]:
        for m, (fit, series) in fits.items():
            pts = [(e.n, e.value, e.stderr) for e in series]
            svg_loglog({f"m={m}": pts},
                       os.path.join(outdir, f"weak_error_m{m}.svg"),
                       title=f"weak error, order {m}, t={t_final:g}", fit=fit)
    _maybe_dump_trajectories(cfg, plan, outdir, log)


def run_kappa_scaling(cfg: RunConfig, writer: ResultWriter, log: list, outdir: str) -> None:
    plan = _plan_from_cfg(cfg)
    ref = build_reference(plan.density, plan.kernel, times=plan.times,
                          spec=plan.integrator, seed=plan.master_seed,
                          max_n=max(plan.n_grid))
    estimates = kappa_pairing(plan, ref=ref)
    kid, did = plan.kernel.label(), plan.density.label()
    tag = "kappa-scaling"
    for e in estimates:
        writer.add_result(tag, kid, did, e.n, e.order, e.time, e.r_used, e.value, e.stderr)
    t_final = max(plan.times)
    for n_ord in plan.orders:
        series = _series(estimates, n_ord, t_final)
        if len(series) >= 4:
            fit = fit_rate(series, seed=plan.master_seed)
            writer.add_fit(tag, n_ord, t_final, fit)
            if cfg["output"]["emit_svg"]:
                pts = [(e.n, e.value, e.stderr) for e in series]
                svg_loglog({f"n={n_ord}": pts},
                           os.path.join(outdir, f"kappa_pairing_n{n_ord}.svg"),
                           title=f"direct-cumulant pairing, order {n_ord}", fit=fit)


def run_duality_check(cfg: RunConfig, writer: ResultWriter, log: list, outdir: str) -> None:
    du = cfg["duality"]
    plan = _plan_from_cfg(cfg)
    term = TerminalObservable(plan.observable, du["m"], du["n_particles"])
    kid, did = plan.kernel.label(), plan.density.label()

    fd = check_forward_duality(term, plan)
    writer.add_result("duality", kid, did, term.n_particles, term.m,
                      plan.phase.horizon, fd.lhs.r_used, fd.lhs.value, fd.lhs.stderr,
                      detail="forward:lhs")
    writer.add_result("duality", kid, did, term.n_particles, term.m, 0.0,
                      fd.rhs.r_used, fd.rhs.value, fd.rhs.stderr, detail="forward:rhs")
    writer.add_result("duality", kid, did, term.n_particles, term.m,
                      plan.phase.horizon, fd.lhs.r_used, fd.pathwise_max, 0.0,
                      detail=f"forward:pathwise_max,dt={plan.integrator.dt:g}")
    log.append(f"forward duality: pathwise residual {fd.pathwise_max:.3e} "
               f"at dt={plan.integrator.dt:g}, z={fd.z_score:.3f}")
    for dt_c in du["dt_scan"]:
        fd_c = check_forward_duality(term, plan, dt_coarse=float(dt_c))
        writer.add_result("duality", kid, did, term.n_particles, term.m,
                          plan.phase.horizon, fd_c.lhs.r_used, fd_c.pathwise_max, 0.0,
                          detail=f"forward:pathwise_max,dt={dt_c:g}")

    pid = check_prop_identity(term, plan, samples=du["samples"],
                              gl_nodes=du["gl_nodes"],
                              control_variate=du["control_variate"])
    writer.add_result("duality", kid, did, term.n_particles, term.m,
                      plan.phase.horizon, pid.lhs.r_used, pid.lhs.value,
                      pid.lhs.stderr, detail="prop:lhs")
    writer.add_result("duality", kid, did, term.n_particles, term.m,
                      plan.phase.horizon, pid.rhs.r_used, pid.rhs.value,
                      pid.rhs.stderr, detail="prop:rhs")
    writer.add_result("duality", kid, did, term.n_particles, term.m,
                      plan.phase.horizon, 0, pid.z_score, 0.0, detail="prop:z")
    log.append(f"interaction identity: lhs={pid.lhs.value:.4e} rhs={pid.rhs.value:.4e} "
               f"z={pid.z_score:.3f}")


def run_conservation(cfg: RunConfig, writer: ResultWriter, log: list, outdir: str) -> None:
    plan = _plan_from_cfg(cfg)
    kid, did = plan.kernel.label(), plan.density.label()
    n = max(plan.n_grid)
    spec = plan.integrator
    horizon = plan.phase.horizon
    nsteps = int(round(horizon / spec.dt))
    rng = replica_rng(plan.master_seed, 0)
    x, v = plan.density.sample(n, rng)
    snap = np.arange(0, nsteps + 1, dtype=np.int64)
    xs, vs = accel.integrate(x[None, :], v[None, :], plan.kernel.wavenumbers,
                             plan.kernel.amplitudes, spec.dt, nsteps, snap,
                             method=spec.method)
    e0, p0 = diagnostics(ParticleEnsemble(xs[0, 0], vs[0, 0]), plan.kernel)
    momenta = vs[:, 0, :].sum(axis=1)
    mom_step = float(np.max(np.abs(np.diff(momenta))))
    stride = max(1, nsteps // 20)
    drift = 0.0
    for sidx in range(stride, nsteps + 1, stride):
        e, _p = diagnostics(ParticleEnsemble(xs[sidx, 0], vs[sidx, 0]), plan.kernel)
        drift = max(drift, abs(e - e0) / max(abs(e0), 1e-300))
    writer.add_result("conservation", kid, did, n, 0, horizon, 1, drift, 0.0,
                      detail="energy_drift_rel")
    writer.add_result("conservation", kid, did, n, 0, horizon, 1, mom_step, 0.0,
                      detail="momentum_step_max")
    log.append(f"energy drift {drift:.3e}, momentum per-step drift {mom_step:.3e} "
               f"(N={n}, T={horizon:g}, dt={spec.dt:g})")

    du = cfg["duality"]
    term = TerminalObservable(plan.observable, du["m"], min(3, du["n_particles"]))
    rep = check_cumulant_pairing_conservation(
        term, plan, nx=du["grid_nx"], nv=du["grid_nv"],
        vmax=du["grid_vmax"] * math.sqrt(plan.density.theta))
    writer.add_result("conservation", kid, did, term.n_particles, term.m, horizon,
                      0, rep.lhs.value, 0.0, detail="pairing:T")
    writer.add_result("conservation", kid, did, term.n_particles, term.m, 0.0,
                      0, rep.rhs.value, 0.0, detail="pairing:0")
    writer.add_result("conservation", kid, did, term.n_particles, term.m, horizon,
                      0, rep.gap, 0.0, detail=f"pairing:gap,tol={rep.tolerance:g}")
    log.append(f"cumulant pairing conservation gap {rep.gap:.3e} (tol {rep.tolerance:g})")


# --- selftest -----------------------------------------------------------------


def _selftest_checks(cfg: RunConfig):
    """Fast deterministic battery; yields (name, measured, threshold, ok)."""
    rng = np.random.default_rng(4242)
    kernel = smooth_kernel([0.5, 0.2])
    density = DensityModel()

    xq, wq = density.x_grid()
    from .core import InteractionObservable, kernel_eval, kernel_potential, velocity_nodes

    mean_k = abs(float(np.sum(wq * kernel_eval(kernel, xq)))) / (2 * math.pi)
    yield ("kernel_zero_mean", mean_k, 1e-12, mean_k <= 1e-12)
    xs = rng.uniform(0, 2 * math.pi, 64)
    odd = float(np.max(np.abs(kernel_eval(kernel, -xs) + kernel_eval(kernel, xs))))
    yield ("kernel_oddness", odd, 1e-14, odd <= 1e-14)
    h = 1e-5
    fd = -(kernel_potential(kernel, xs + h) - kernel_potential(kernel, xs - h)) / (2 * h)
    grad = float(np.max(np.abs(fd - kernel_eval(kernel, xs))))
    yield ("gradient_consistency", grad, 1e-8, grad <= 1e-8)

    obs = InteractionObservable(kernel, density)
    vn, vw = density.v_grid()
    gv = density.velocity_pdf(vn)
    canc = 0.0
    for x1, v1 in [(0.3, 0.7), (2.1, -1.2)]:
        inner = np.array([np.sum(wq / (2 * math.pi) * obs.vf((x1, v1), (xq, None)))])
        canc = max(canc, abs(float(inner)))
    # starred-slot cancellation: integrate over z2 = (x2, v2)
    yield ("vf_cancellation", canc, 1e-8, canc <= 1e-8)

    ens = ParticleEnsemble(rng.uniform(0, 2 * math.pi, 64), rng.standard_normal(64))
    fdod = force_direct(ens, kernel)
    fsp = force_spectral(ens, kernel)
    rel = float(np.max(np.abs(fdod - fsp)) / np.max(np.abs(fdod)))
    yield ("force_equivalence", rel, 1e-12, rel <= 1e-12)

    spec = IntegratorSpec(dt=1e-3)
    fwd = step(ens, kernel, spec)
    back = step(fwd, kernel, IntegratorSpec(dt=1e-3, direction="backward"))
    rev = float(max(np.max(np.abs(back.x - ens.x)), np.max(np.abs(back.v - ens.v))))
    yield ("reversibility", rev, 1e-10, rev <= 1e-10)

    bells = {m: len(enumerate_partitions(m)) for m in range(1, 7)}
    ok = all(bells[m] == bell_number(m) for m in bells)
    yield ("bell_counts", float(bells[6]), 203.0, ok and bells[6] == 203)

    measure = DiscreteMeasure.from_model(density, nx=4, nv=4, vmax=3.0)
    g = measure.size
    from itertools import permutations

    pert = rng.standard_normal((g, g, g)) * 0.05
    pert = sum(pert.transpose(p) for p in permutations(range(3))) / 6.0
    dens3 = np.einsum("a,b,c->abc", measure.fvals, measure.fvals, measure.fvals)
    fvals = dens3 * (1.0 + pert)
    fvals = np.maximum(fvals, 1e-12)
    fvals /= float(np.einsum("abc,a,b,c->", fvals, measure.u, measure.u, measure.u))
    df = DiscreteFunction(fvals, measure, symmetric=False)
    table = kappa_table(df)
    recon = reconstruct_from_kappa(table, 3)
    err = float(np.max(np.abs(recon.values - df.values)))
    yield ("kappa_roundtrip", err, 1e-10, err <= 1e-10)
    canc_k = max(max_slot_residual(table.entries[m]) for m in (1, 2, 3))
    yield ("kappa_cancellation", canc_k, 1e-8, canc_k <= 1e-8)

    marg1 = DiscreteFunction(np.tensordot(df.values, np.outer(measure.u, measure.u),
                                          axes=([1, 2], [0, 1])), measure)
    marg2 = DiscreteFunction(np.tensordot(df.values, measure.u, axes=([2], [0])), measure)
    gt = marginals_to_G([marg1, marg2])
    back_m = cluster_to_marginals(gt, 2)
    mob = float(np.max(np.abs(back_m[1].values - marg2.values)))
    yield ("moebius_roundtrip", mob, 1e-12, mob <= 1e-12)

    gvals = np.array([1.0, 2.0, 3.0])
    u = ustat_product(gvals, None, 2)
    yield ("ustat_pairs", abs(u - 11.0 / 3.0), 1e-12, abs(u - 11.0 / 3.0) <= 1e-12)

    psi = parse_observable("v^2")
    term = TerminalObservable(psi, 2, 3)
    ct = terminal_dual_cumulants(term, measure)
    hvals = DiscreteFunction.from_callable(
        lambda x1, v1, x2, v2, x3, v3: (psi(x1, v1) * psi(x2, v2)
                                        + psi(x1, v1) * psi(x3, v3)
                                        + psi(x2, v2) * psi(x3, v3)) / 3.0,
        measure, 3, symmetric=True)
    dt_tab = rescale(dual_table(hvals), 3)
    gap = max(float(np.max(np.abs(dt_tab.entries[m].values - ct.entries[m].values)))
              for m in (1, 2))
    yield ("terminal_dual_formula", gap, 1e-10, gap <= 1e-10)

    null_plan = ExperimentPlan(n_grid=(16, 32), replicas=200,
                               observable=psi, orders=(1,), times=(0.25,),
                               kernel=zero_kernel(), density=density,
                               master_seed=cfg["plan"]["master_seed"],
                               phase=cfg.phase(), integrator=cfg.integrator(),
                               coupled=False)
    ref = build_reference(density, zero_kernel())
    worst_z = 0.0
    for e in weak_error(null_plan, ref):
        if e.stderr > 0:
            worst_z = max(worst_z, abs(e.value) / e.stderr)
    yield ("null_weak_error_z", worst_z, 4.0, worst_z < 4.0)


def run_selftest(cfg: RunConfig, writer: ResultWriter, log: list, outdir: str) -> list:
    violations = []
    for name, measured, threshold, ok in _selftest_checks(cfg):
        writer.add_result("selftest", "builtin", "builtin", 0, 0, 0.0, 0,
                          measured, threshold, detail=f"{name}:{'pass' if ok else 'FAIL'}")
        log.append(f"selftest {name}: measured={measured:.3e} threshold={threshold:.3e} "
                   f"{'pass' if ok else 'FAIL'}")
        if not ok:
            violations.append(name)
    return violations


def run_experiment(cfg: RunConfig, writer: ResultWriter, log: list, outdir: str) -> list:
    kind = cfg["experiment"]["kind"]
    workers = cfg["run"]["workers"]
    if workers:
        accel.set_threads(workers)
    if kind == "weak-error":
        run_weak_error(cfg, writer, log, outdir)
    elif kind == "kappa-scaling":
        run_kappa_scaling(cfg, writer, log, outdir)
    elif kind == "duality-check":
        run_duality_check(cfg, writer, log, outdir)
    elif kind == "conservation":
        run_conservation(cfg, writer, log, outdir)
    elif kind == "selftest":
        return run_selftest(cfg, writer, log, outdir)
    else:  # pragma: no cover - schema validation rejects earlier
        raise ValueError(f"unknown experiment {kind!r}")
    return []
