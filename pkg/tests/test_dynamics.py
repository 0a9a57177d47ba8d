import math

import numpy as np
import pytest

from mflab.core import TWO_PI, smooth_kernel, wrap_angle, zero_kernel
from mflab.dynamics import (
    IntegratorSpec,
    ParticleEnsemble,
    diagnostics,
    flow_map,
    force_direct,
    force_spectral,
    step,
)


def random_ensemble(rng, n):
    return ParticleEnsemble(rng.uniform(0, TWO_PI, n), rng.standard_normal(n))


class TestEnsemble:
    def test_wraps_positions(self):
        ens = ParticleEnsemble(np.array([-1.0, 7.0]), np.zeros(2))
        assert np.all((0 <= ens.x) & (ens.x < TWO_PI))

    def test_rejects_single_particle(self):
        with pytest.raises(ValueError):
            ParticleEnsemble(np.array([1.0]), np.array([0.0]))


class TestForces:
    def test_two_particle_hand_values(self):
        ens = ParticleEnsemble(np.array([0.0, math.pi / 2]), np.zeros(2))
        k = smooth_kernel([1.0])
        forces = force_direct(ens, k)
        assert forces[0] == pytest.approx(-1.0, abs=1e-14)
        assert forces[1] == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(force_spectral(ens, k), forces, atol=1e-14)

    def test_equal_positions_zero_force(self, kernel2):
        ens = ParticleEnsemble(np.full(8, 2.0), np.zeros(8))
        assert np.all(force_direct(ens, kernel2) == 0.0)
        assert np.max(np.abs(force_spectral(ens, kernel2))) <= 1e-14

    def test_total_force_vanishes(self, kernel2, rng):
        ens = random_ensemble(rng, 128)
        assert abs(force_direct(ens, kernel2).sum()) <= 1e-12
        assert abs(force_spectral(ens, kernel2).sum()) <= 1e-12

    @pytest.mark.parametrize("n", [2, 3, 17, 256])
    def test_spectral_matches_direct(self, kernel2, rng, n):
        for _ in range(4):
            ens = random_ensemble(rng, n)
            fd = force_direct(ens, kernel2)
            fs = force_spectral(ens, kernel2)
            scale = np.max(np.abs(fd)) or 1.0
            assert np.max(np.abs(fd - fs)) / scale <= 1e-12

    def test_exact_reduction_matches(self, kernel2, rng):
        ens = random_ensemble(rng, 33)
        fs = force_spectral(ens, kernel2)
        fe = force_spectral(ens, kernel2, exact_reduction=True)
        assert np.max(np.abs(fs - fe)) <= 1e-13


class TestStep:
    def test_free_transport_exact(self, rng):
        ens = random_ensemble(rng, 16)
        spec = IntegratorSpec(dt=0.01)
        out = step(ens, zero_kernel(), spec)
        assert np.array_equal(out.v, ens.v)
        assert np.allclose(out.x, wrap_angle(ens.x + 0.01 * ens.v), atol=0)

    def test_forward_backward_roundtrip(self, kernel2, rng):
        ens = random_ensemble(rng, 32)
        fwd = step(ens, kernel2, IntegratorSpec(dt=1e-3))
        back = step(fwd, kernel2, IntegratorSpec(dt=1e-3, direction="backward"))
        assert np.max(np.abs(back.x - ens.x)) <= 1e-10
        assert np.max(np.abs(back.v - ens.v)) <= 1e-10

    def test_sigma_method_consistency(self, kernel2, rng):
        ens = random_ensemble(rng, 8)
        with pytest.raises(ValueError):
            step(ens, kernel2, IntegratorSpec(method="rk4"), sigma=0.1)
        with pytest.raises(ValueError):
            step(ens, kernel2, IntegratorSpec(method="euler_maruyama"), sigma=0.0)
        with pytest.raises(ValueError):
            IntegratorSpec(method="euler_maruyama", direction="backward").validate_sigma(0.1)

    def test_brownian_variance_growth(self, rng):
        # Var(v) grows by 2 sigma dt per step under pure diffusion
        sigma, dt, nsteps, reps = 0.1, 1e-2, 10, 10_000
        spec = IntegratorSpec(method="euler_maruyama", dt=dt)
        v = np.zeros((reps, 2))
        x = rng.uniform(0, TWO_PI, (reps, 2))
        from mflab import accel

        noise = rng.standard_normal((reps, nsteps, 2)) * math.sqrt(2 * sigma * dt)
        xs, vs = accel.integrate_em(x, v, (), (), dt, noise, np.array([nsteps]))
        growth = vs[0].var()
        expected = 2 * sigma * dt * nsteps
        # chi-square spread of the variance estimate over reps*2 samples
        tol = 4 * expected * math.sqrt(2.0 / (2 * reps))
        assert abs(growth - expected) <= tol

    def test_velocity_verlet_close_to_rk4(self, kernel2, rng):
        ens = random_ensemble(rng, 16)
        a = step(ens, kernel2, IntegratorSpec(method="rk4", dt=1e-3))
        b = step(ens, kernel2, IntegratorSpec(method="velocity_verlet", dt=1e-3))
        assert np.max(np.abs(a.x - b.x)) <= 1e-8
        assert np.max(np.abs(a.v - b.v)) <= 1e-8


class TestFlowMap:
    def test_identity(self, kernel2, rng):
        ens = random_ensemble(rng, 8)
        x, v = flow_map((ens.x, ens.v), 0.3, 0.3, kernel2, IntegratorSpec(dt=1e-3))
        assert np.array_equal(x, ens.x) and np.array_equal(v, ens.v)

    def test_composition_is_identity(self, kernel2, rng):
        ens = random_ensemble(rng, 24)
        spec = IntegratorSpec(dt=1e-3)
        x1, v1 = flow_map((ens.x, ens.v), 0.0, 0.25, kernel2, spec)
        x0, v0 = flow_map((x1, v1), 0.25, 0.0, kernel2, spec)
        assert np.max(np.abs(x0 - ens.x)) <= 1e-10
        assert np.max(np.abs(v0 - ens.v)) <= 1e-10

    def test_free_streaming(self, rng):
        ens = random_ensemble(rng, 8)
        x, v = flow_map((ens.x, ens.v), 0.0, 0.4, zero_kernel(), IntegratorSpec(dt=1e-2))
        assert np.allclose(x, wrap_angle(ens.x + 0.4 * ens.v), atol=1e-12)
        assert np.array_equal(v, ens.v)

    def test_rejects_sigma(self, kernel2, rng):
        ens = random_ensemble(rng, 8)
        with pytest.raises(ValueError):
            flow_map((ens.x, ens.v), 0.0, 0.1, kernel2, IntegratorSpec(dt=1e-3), sigma=0.5)

    def test_volume_preservation_free_case(self, rng):
        # pushforward expectation equals change-of-variables exactly under
        # free transport: x -> x + vt is measure preserving on the torus
        x = rng.uniform(0, TWO_PI, (1, 512))
        v = rng.standard_normal((1, 512))
        t = 0.7
        phi = lambda xx, vv: np.cos(xx) * vv  # noqa: E731
        xf, vf = flow_map((x, v), 0.0, t, zero_kernel(), IntegratorSpec(dt=0.01))
        push = phi(xf, vf).mean()
        direct = phi(wrap_angle(x + v * t), v).mean()
        assert push == pytest.approx(direct, abs=1e-12)


class TestReversibilityScaling:
    def test_rk4_composition_error_scales_dt4(self, kernel2, rng):
        ens = random_ensemble(rng, 32)
        errs = []
        for dt in (0.05, 0.025):
            spec = IntegratorSpec(dt=dt)
            x1, v1 = flow_map((ens.x, ens.v), 0.0, 0.4, kernel2, spec)
            spec_f = IntegratorSpec(dt=dt / 8)
            x2, v2 = flow_map((ens.x, ens.v), 0.0, 0.4, kernel2, spec_f)
            errs.append(max(np.max(np.abs(x1 - x2)), np.max(np.abs(v1 - v2))))
        ratio = errs[0] / errs[1]
        assert 8 <= ratio <= 32  # nominal 16 for a 4th-order method


class TestExchangeability:
    def test_permutation_commutes_exact_reduction(self, kernel2, rng):
        # with exactly-rounded mode sums the force is bitwise equivariant
        ens = random_ensemble(rng, 19)
        perm = rng.permutation(19)
        f = force_spectral(ens, kernel2, exact_reduction=True)
        ens_p = ParticleEnsemble(ens.x[perm], ens.v[perm])
        f_p = force_spectral(ens_p, kernel2, exact_reduction=True)
        assert np.array_equal(f_p, f[perm])

    def test_permutation_commutes_with_flow(self, kernel2, rng):
        ens = random_ensemble(rng, 17)
        perm = rng.permutation(17)
        spec = IntegratorSpec(dt=1e-3)
        x1, v1 = flow_map((ens.x, ens.v), 0.0, 0.05, kernel2, spec)
        x2, v2 = flow_map((ens.x[perm], ens.v[perm]), 0.0, 0.05, kernel2, spec)
        assert np.max(np.abs(x2 - x1[perm])) <= 1e-12
        assert np.max(np.abs(v2 - v1[perm])) <= 1e-12


class TestDiagnostics:
    def test_free_energy_exact(self, rng):
        ens = random_ensemble(rng, 64)
        e0, _ = diagnostics(ens, zero_kernel())
        out = ens
        spec = IntegratorSpec(dt=1e-2)
        for _ in range(10):
            out = step(out, zero_kernel(), spec)
        e1, _ = diagnostics(out, zero_kernel())
        assert e1 == e0

    def test_momentum_conservation_per_step(self, kernel2, rng):
        ens = random_ensemble(rng, 128)
        spec = IntegratorSpec(dt=1e-3)
        _, p0 = diagnostics(ens, kernel2)
        out = ens
        for _ in range(20):
            out = step(out, kernel2, spec)
            _, p1 = diagnostics(out, kernel2)
            assert abs(p1 - p0) <= 1e-12
            p0 = p1

    def test_energy_drift_short_run(self, kernel2, rng):
        ens = random_ensemble(rng, 64)
        e0, _ = diagnostics(ens, kernel2)
        spec = IntegratorSpec(dt=1e-3)
        out = ens
        for _ in range(200):
            out = step(out, kernel2, spec)
        e1, _ = diagnostics(out, kernel2)
        assert abs(e1 - e0) / abs(e0) <= 1e-9


class TestBackends:
    def test_numpy_backend_matches_numba(self, kernel2, rng):
        from mflab.accel import jit as jit_mod
        from mflab.accel import plain as plain_mod
        from mflab.accel import _dense_amplitudes

        dense = _dense_amplitudes(kernel2.wavenumbers, kernel2.amplitudes)
        x = rng.uniform(0, TWO_PI, (5, 40))
        v = rng.standard_normal((5, 40))
        snap = np.array([25, 50], dtype=np.int64)
        ax, av = np.empty((2, 5, 40)), np.empty((2, 5, 40))
        bx, bv = np.empty((2, 5, 40)), np.empty((2, 5, 40))
        jit_mod.integrate_rk4(x.copy(), v.copy(), dense, 1e-3, 50, snap, ax, av)
        plain_mod.integrate_rk4(x.copy(), v.copy(), dense, 1e-3, 50, snap, bx, bv)
        assert np.max(np.abs(ax - bx)) <= 1e-12
        assert np.max(np.abs(av - bv)) <= 1e-12

    def test_env_flag_selects_numpy(self):
        import subprocess
        import sys

        code = "import mflab.accel as a; print(a.BACKEND)"
        out = subprocess.run([sys.executable, "-c", code],
                             capture_output=True, text=True,
                             env={"PATH": "/usr/bin:/bin", "MFLAB_NO_NUMBA": "1"})
        assert out.stdout.strip() == "numpy"
