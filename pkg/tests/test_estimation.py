import math
from itertools import combinations

import numpy as np
import pytest
from scipy import stats

from mflab.core import DensityModel, PhaseConfig, smooth_kernel, zero_kernel
from mflab.dynamics import IntegratorSpec
from mflab.estimation import (
    ExperimentPlan,
    center_observable,
    fixed_tuple_product,
    kappa_pairing,
    sample_chaotic,
    ustat_product,
    weak_error,
)
from mflab.meanfield import build_reference
from mflab.observables import parse_observable
from mflab.seeding import replica_rng, replica_seed


def brute_force_ustat(gvals, m):
    combos = list(combinations(gvals, m))
    return sum(math.prod(c) for c in combos) / len(combos)


class TestSampling:
    def test_velocity_centered(self, gauss_density):
        rng = replica_rng(1, 0)
        ens = sample_chaotic(1_000_000, gauss_density, rng)
        se = ens.v.std() / math.sqrt(ens.n)
        assert abs(ens.v.mean()) <= 3 * se

    def test_uniform_positions_chi_square(self, gauss_density):
        rng = replica_rng(1, 1)
        ens = sample_chaotic(200_000, gauss_density, rng)
        counts, _ = np.histogram(ens.x, bins=32, range=(0, 2 * math.pi))
        chi2 = float(((counts - counts.mean()) ** 2 / counts.mean()).sum())
        p = stats.chi2.sf(chi2, df=31)
        assert p > 0.001

    def test_replica_streams_independent(self, gauss_density):
        n, reps = 64, 400
        sums_a = np.empty(reps)
        sums_b = np.empty(reps)
        for rid in range(reps):
            ens_a = sample_chaotic(n, gauss_density, replica_rng(9, 2 * rid))
            ens_b = sample_chaotic(n, gauss_density, replica_rng(9, 2 * rid + 1))
            sums_a[rid] = np.sin(ens_a.x).sum()
            sums_b[rid] = np.sin(ens_b.x).sum()
        corr = np.corrcoef(sums_a, sums_b)[0, 1]
        assert abs(corr) <= 3.0 / math.sqrt(reps)

    def test_replica_seed_distinct(self):
        seeds = {replica_seed(123, rid) for rid in range(10_000)}
        assert len(seeds) == 10_000


class TestUStatistics:
    def test_order_one_is_mean(self, rng):
        gvals = rng.standard_normal(100)
        assert ustat_product(gvals, None, 1) == pytest.approx(gvals.mean(), abs=1e-13)

    def test_pairs_hand_value(self):
        assert ustat_product(np.array([1.0, 2.0, 3.0]), None, 2) == pytest.approx(11.0 / 3.0)

    def test_constant_case(self):
        for m in (1, 2, 3):
            got = ustat_product(np.full(10, 2.0), None, m)
            assert got == pytest.approx(2.0 ** m, rel=1e-12)

    @pytest.mark.parametrize("n,m", [(6, 2), (9, 3), (12, 4), (5, 4)])
    def test_matches_brute_force(self, rng, n, m):
        for _ in range(5):
            gvals = rng.standard_normal(n)
            got = ustat_product(gvals, None, m)
            want = brute_force_ustat(gvals, m)
            assert got == pytest.approx(want, abs=1e-12 * max(1, abs(want)))

    def test_bitwise_permutation_invariance(self, rng):
        gvals = rng.standard_normal(257)
        base = [ustat_product(gvals, None, m) for m in (1, 2, 3)]
        for _ in range(5):
            perm = rng.permutation(gvals.size)
            shuffled = [ustat_product(gvals[perm], None, m) for m in (1, 2, 3)]
            assert shuffled == base  # exact power sums: bitwise equal

    def test_order_exceeds_n(self):
        with pytest.raises(ValueError):
            ustat_product(np.ones(3), None, 4)

    def test_ensemble_evaluation(self, gauss_density):
        ens = sample_chaotic(50, gauss_density, replica_rng(2, 0))
        psi = parse_observable("v^2")
        got = ustat_product(ens, psi, 2)
        want = brute_force_ustat(psi(ens.x, ens.v), 2)
        assert got == pytest.approx(want, rel=1e-12)

    def test_fixed_tuple_cross_check(self, kernel2, gauss_density, phase):
        # fixed-tuple estimator agrees with the U-statistic within 3 stderr
        psi = parse_observable("v^2")
        reps, n = 3000, 16
        u_vals = np.empty(reps)
        f_vals = np.empty(reps)
        for rid in range(reps):
            ens = sample_chaotic(n, gauss_density, replica_rng(77, rid))
            u_vals[rid] = ustat_product(ens, psi, 2)
            f_vals[rid] = fixed_tuple_product(ens, psi, 2)
        diff = u_vals.mean() - f_vals.mean()
        se = math.hypot(u_vals.std(ddof=1), f_vals.std(ddof=1)) / math.sqrt(reps)
        assert abs(diff) <= 3 * se


class TestPlanValidation:
    def test_plan_invariants(self, kernel2, gauss_density, phase):
        psi = parse_observable("v^2")
        good = dict(n_grid=(4, 8), replicas=10, observable=psi, orders=(1,),
                    times=(0.1,), kernel=kernel2, density=gauss_density,
                    master_seed=1, phase=phase, integrator=IntegratorSpec())
        ExperimentPlan(**good)
        with pytest.raises(ValueError):
            ExperimentPlan(**{**good, "n_grid": (8, 4)})
        with pytest.raises(ValueError):
            ExperimentPlan(**{**good, "replicas": 1})
        with pytest.raises(ValueError):
            ExperimentPlan(**{**good, "times": (0.9,)})
        with pytest.raises(ValueError):
            ExperimentPlan(**{**good, "orders": (0,)})
        pert = DensityModel(kind="perturbed_oracle", eps=0.1, oracle_size=1000)
        with pytest.raises(ValueError):
            ExperimentPlan(**{**good, "density": pert, "coupled": True})


class TestCentering:
    def test_already_centered_unchanged(self, kernel2, gauss_density):
        ref = build_reference(gauss_density, kernel2)
        psi = parse_observable("sin(x)")
        assert center_observable(psi, ref) is psi

    def test_constant_becomes_zero(self, kernel2, gauss_density):
        ref = build_reference(gauss_density, kernel2)
        g = center_observable(parse_observable("1"), ref)
        assert abs(g(np.array(1.0), np.array(2.0))) <= 1e-12

    def test_residual_below_tolerance(self, kernel2, gauss_density):
        ref = build_reference(gauss_density, kernel2)
        g = center_observable(parse_observable("v^2 + cos(x)"), ref)
        resid, _ = ref.expect(g, 0.0)
        assert abs(resid) <= 1e-10


def _null_plan(gauss_density, phase, coupled=False, replicas=300):
    return ExperimentPlan(n_grid=(16, 32), replicas=replicas,
                          observable=parse_observable("v^2"), orders=(1, 2),
                          times=(0.25,), kernel=zero_kernel(), density=gauss_density,
                          master_seed=31, phase=phase,
                          integrator=IntegratorSpec(dt=5e-3), coupled=coupled)


class TestWeakError:
    def test_null_kernel_zero_within_3_sigma(self, gauss_density, phase):
        ref = build_reference(gauss_density, zero_kernel())
        for e in weak_error(_null_plan(gauss_density, phase), ref):
            assert abs(e.value) <= 3 * e.stderr

    def test_constant_observable_exact_zero(self, gauss_density, phase, kernel2):
        plan = ExperimentPlan(n_grid=(8,), replicas=50, observable=parse_observable("1"),
                              orders=(1,), times=(0.1,), kernel=kernel2,
                              density=gauss_density, master_seed=5, phase=phase,
                              integrator=IntegratorSpec(dt=5e-3), coupled=False)
        ref = build_reference(gauss_density, kernel2)
        est = weak_error(plan, ref)[0]
        assert est.value == 0.0

    def test_coupled_null_is_pathwise_zero(self, gauss_density, phase):
        ref = build_reference(gauss_density, zero_kernel())
        for e in weak_error(_null_plan(gauss_density, phase, coupled=True), ref):
            assert e.value == 0.0 and e.stderr == 0.0

    def test_stderr_scales_with_replicas(self, gauss_density, phase):
        ref = build_reference(gauss_density, zero_kernel())
        small = weak_error(_null_plan(gauss_density, phase, replicas=200), ref)
        big = weak_error(_null_plan(gauss_density, phase, replicas=800), ref)
        # quadrupling replicas should halve stderr within CI slack
        for e_s, e_b in zip(small, big):
            ratio = e_s.stderr / e_b.stderr
            assert 1.4 <= ratio <= 2.9

    def test_independent_batches_per_order(self, gauss_density, phase, kernel2):
        plan = ExperimentPlan(n_grid=(8,), replicas=40, observable=parse_observable("v^2"),
                              orders=(1, 2), times=(0.1,), kernel=kernel2,
                              density=gauss_density, master_seed=5, phase=phase,
                              integrator=IntegratorSpec(dt=5e-3), coupled=True)
        ref = build_reference(gauss_density, kernel2)
        ests = weak_error(plan, ref)
        vals = {(e.order): e.replica_values for e in ests}
        # different order => different seed batch => different draws
        assert not np.allclose(vals[1], vals[2])


class TestKappaPairing:
    def test_chaotic_time_zero_vanishes(self, gauss_density, phase, kernel2):
        plan = ExperimentPlan(n_grid=(16, 32), replicas=400,
                              observable=parse_observable("sin(x)*v"), orders=(2,),
                              times=(0.0,), kernel=kernel2, density=gauss_density,
                              master_seed=13, phase=phase,
                              integrator=IntegratorSpec(dt=5e-3), coupled=False)
        ref = build_reference(gauss_density, kernel2)
        for e in kappa_pairing(plan, ref=ref):
            assert abs(e.value) <= 3 * max(e.stderr, 1e-12)

    def test_centering_enforced(self, gauss_density, phase, kernel2):
        plan = ExperimentPlan(n_grid=(8,), replicas=20,
                              observable=parse_observable("v^2"), orders=(2,),
                              times=(0.1,), kernel=kernel2, density=gauss_density,
                              master_seed=13, phase=phase,
                              integrator=IntegratorSpec(dt=5e-3), coupled=False)

        class UncenteredRef:
            analytic = True

            def expect(self, psi, t=0.0):
                return 0.5, 0.0  # wrong on purpose: residual stays 0.5

        with pytest.raises(ValueError):
            kappa_pairing(plan, ref=UncenteredRef())

    def test_small_n_matches_grid_quadrature(self, gauss_density, phase):
        # N=2 pairing: statistics vs quadrature of the extracted kappa_2 on a
        # grid, with F_2(T) from the backward flow (volume preservation)
        from mflab import accel
        from mflab.cumulants import (
            DiscreteFunction,
            DiscreteMeasure,
            average_out,
            fn_to_kappa,
        )

        kernel = smooth_kernel([1.0, 0.4])
        t_end = 0.4
        plan = ExperimentPlan(n_grid=(2,), replicas=60_000,
                              observable=parse_observable("sin(x)*v"), orders=(2,),
                              times=(t_end,), kernel=kernel, density=gauss_density,
                              master_seed=17, phase=PhaseConfig(horizon=t_end),
                              integrator=IntegratorSpec(dt=2e-3), coupled=True)
        ref = build_reference(gauss_density, kernel)
        est = kappa_pairing(plan, ref=ref)[0]

        measure = DiscreteMeasure.from_model(gauss_density, nx=24, nv=24, vmax=5.0)
        g = measure.size
        idx = np.stack([a.ravel() for a in np.meshgrid(np.arange(g), np.arange(g),
                                                       indexing="ij")], axis=1)
        spec = IntegratorSpec(dt=2e-3)
        steps = int(round(t_end / spec.dt))
        xb, vb = accel.integrate(measure.xg[idx], measure.vg[idx],
                                 kernel.wavenumbers, kernel.amplitudes,
                                 -spec.dt, steps, np.array([steps]))
        f_t = gauss_density.f(xb[0][:, 0], vb[0][:, 0]) \
            * gauss_density.f(xb[0][:, 1], vb[0][:, 1])
        df = DiscreteFunction(f_t.reshape(g, g), measure, symmetric=True)
        kappa2 = fn_to_kappa(df, 2)
        gobs = center_observable(plan.observable, ref, t_end)
        gg = np.asarray(gobs(measure.xg, measure.vg))
        quad = float(np.einsum("ab,a,b,a,b->", kappa2.values, gg, gg,
                               measure.w, measure.w))
        assert abs(est.value - quad) <= 3 * max(est.stderr, 2e-6)
