import math

import numpy as np
import pytest

from mflab.core import (
    TWO_PI,
    DensityModel,
    InteractionObservable,
    PhaseConfig,
    density_expect,
    kernel_complement,
    kernel_eval,
    kernel_l2_norm,
    kernel_mollify,
    kernel_potential,
    rough_kernel,
    smooth_kernel,
    torus_nodes,
    vf_eval,
    zero_kernel,
)


class TestPhaseConfig:
    def test_defaults_valid(self):
        cfg = PhaseConfig()
        assert cfg.sigma == 0.0 and cfg.horizon > 0

    @pytest.mark.parametrize("kwargs", [
        {"sigma": -0.1}, {"horizon": 0.0}, {"spatial_dim": 2},
        {"torus_length": 6.0},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            PhaseConfig(**kwargs)


class TestTrigKernel:
    def test_single_mode_at_origin(self):
        k = smooth_kernel([1.0])
        assert kernel_eval(k, 0.0) == 0.0

    def test_single_mode_quarter_period(self):
        k = smooth_kernel([1.0])
        assert kernel_eval(k, math.pi / 2) == pytest.approx(1.0, abs=1e-15)

    def test_torus_mean_is_zero(self, kernel2):
        nodes, weights = torus_nodes(1024)
        mean = float(np.sum(weights * kernel_eval(kernel2, nodes))) / TWO_PI
        assert abs(mean) <= 1e-12

    def test_periodicity(self, kernel2, rng):
        # limited only by libm argument reduction (~1 ulp per mode)
        x = rng.uniform(0, TWO_PI, 128)
        assert np.max(np.abs(kernel_eval(kernel2, x + TWO_PI) - kernel_eval(kernel2, x))) <= 1e-13

    def test_oddness(self, kernel2, rng):
        x = rng.uniform(-10, 10, 256)
        assert np.max(np.abs(kernel_eval(kernel2, -x) + kernel_eval(kernel2, x))) <= 1e-14

    def test_gradient_consistency(self, kernel2, rng):
        x = rng.uniform(0, TWO_PI, 64)
        h = 1e-5
        fd = -(kernel_potential(kernel2, x + h) - kernel_potential(kernel2, x - h)) / (2 * h)
        assert np.max(np.abs(fd - kernel_eval(kernel2, x))) <= 1e-8

    def test_rejects_bad_modes(self):
        from mflab.core import TrigKernel

        with pytest.raises(ValueError):
            TrigKernel((0,), (1.0,))
        with pytest.raises(ValueError):
            TrigKernel((1, 1), (1.0, 2.0))
        with pytest.raises(ValueError):
            TrigKernel((1,), (1.0, 2.0))

    def test_rough_amplitude_law(self):
        k = rough_kernel(1.0, max_mode=16)
        amps = np.abs(k.a_array)
        expected = np.arange(1, 17, dtype=float) ** -1.55
        assert np.allclose(amps, expected, rtol=1e-12)

    def test_zero_kernel(self):
        k = zero_kernel()
        assert k.is_zero
        assert kernel_eval(k, 1.3) == 0.0


class TestMollification:
    def test_delta_zero_is_identity(self, kernel2):
        assert kernel_mollify(kernel2, 0.0) is kernel2

    def test_gaussian_damping_closed_form(self):
        k = kernel_mollify(smooth_kernel([1.0]), 1.0)
        assert k.amplitudes[0] == pytest.approx(math.exp(-0.5), rel=1e-12)

    def test_damping_matches_convolution_quadrature(self, kernel2):
        # direct convolution with a Gaussian mollifier of width delta
        delta = 0.35
        kd = kernel_mollify(kernel2, delta)
        y, w = np.polynomial.legendre.leggauss(240)
        y = y * 10 * delta
        w = w * 10 * delta
        dens = np.exp(-(y / delta) ** 2 / 2) / (math.sqrt(2 * math.pi) * delta)
        for x in (0.4, 1.9, 5.0):
            conv = float(np.sum(w * dens * kernel_eval(kernel2, x - y)))
            assert conv == pytest.approx(float(kernel_eval(kd, x)), abs=1e-10)

    def test_complement_is_exact_split(self, kernel2, rng):
        delta = 0.2
        x = rng.uniform(0, TWO_PI, 64)
        total = kernel_eval(kernel_mollify(kernel2, delta), x) \
            + kernel_eval(kernel_complement(kernel2, delta), x)
        assert np.allclose(total, kernel_eval(kernel2, x), atol=1e-14)

    def test_remainder_monotone_in_delta(self, kernel2):
        deltas = np.linspace(0.0, 1.5, 12)
        norms = [kernel_l2_norm(kernel_complement(kernel2, d)) for d in deltas]
        assert all(b >= a - 1e-15 for a, b in zip(norms, norms[1:]))

    def test_rough_remainder_scales_like_s(self):
        # || K - K_delta ||_L2 ~ delta^s for the rough family
        s = 1.0
        k = rough_kernel(s, max_mode=128)
        deltas = [2.0 ** -e for e in range(2, 7)]
        norms = [kernel_l2_norm(kernel_complement(k, d)) for d in deltas]
        slope = np.polyfit(np.log(deltas), np.log(norms), 1)[0]
        assert abs(slope - s) <= 0.2

    def test_negative_delta_rejected(self, kernel2):
        with pytest.raises(ValueError):
            kernel_mollify(kernel2, -0.1)


class TestDensityModel:
    def test_gaussian_normalization(self, gauss_density):
        assert gauss_density.mass() == pytest.approx(1.0, abs=1e-10)

    def test_bump_normalization(self):
        model = DensityModel(profile="cosine_bump", bump_halfwidth=3.0)
        assert model.mass() == pytest.approx(1.0, abs=1e-10)

    def test_fisher_information_gaussian(self):
        for theta in (0.5, 1.0, 2.0):
            model = DensityModel(theta=theta)
            assert model.fisher_v() == pytest.approx(1.0 / theta, rel=1e-8)

    def test_fisher_information_bump(self):
        a = 3.0
        model = DensityModel(profile="cosine_bump", bump_halfwidth=a)
        assert model.fisher_v() == pytest.approx((math.pi / a) ** 2, rel=1e-6)

    def test_steady_convolution_vanishes(self, kernel2, gauss_density):
        # K * f = 0 for mean-zero K against the uniform x-marginal
        xn, xw = gauss_density.x_grid()
        for x in (0.0, 1.0, 4.0):
            conv = float(np.sum(xw * gauss_density.x_density(xn)
                                * kernel_eval(kernel2, x - xn)))
            assert abs(conv) <= 1e-10

    def test_expect_normalization(self, gauss_density):
        val, err = density_expect(gauss_density, lambda x, v: np.ones_like(x))
        assert val == pytest.approx(1.0, abs=1e-10) and err == 0.0

    def test_expect_sin_x(self, gauss_density):
        val, _ = density_expect(gauss_density, lambda x, v: np.sin(x))
        assert abs(val) <= 1e-10

    def test_expect_v_squared(self):
        for theta in (0.7, 1.0):
            model = DensityModel(theta=theta)
            val, _ = density_expect(model, lambda x, v: v * v)
            assert val == pytest.approx(theta, rel=1e-10)

    def test_expect_outside_horizon(self, gauss_density):
        with pytest.raises(ValueError):
            density_expect(gauss_density, lambda x, v: x, t=1.0, horizon=0.5)

    def test_perturbed_needs_oracle(self):
        model = DensityModel(kind="perturbed_oracle", eps=0.1, oracle_size=500)
        with pytest.raises(ValueError):
            density_expect(model, lambda x, v: x, t=0.0)

    def test_sampling_matches_density(self, rng):
        model = DensityModel(kind="perturbed_oracle", eps=0.3, mode=2, oracle_size=500)
        x, v = model.sample(200_000, rng)
        assert np.all((0 <= x) & (x < TWO_PI))
        # perturbation mode shows up with the right amplitude: E[cos(2x)] = eps/2
        est = np.cos(2 * x).mean()
        assert est == pytest.approx(0.15, abs=3 * np.cos(2 * x).std() / math.sqrt(x.size))

    def test_bump_sampling_moments(self, rng):
        a = 2.5
        model = DensityModel(profile="cosine_bump", bump_halfwidth=a)
        _, v = model.sample(100_000, rng)
        assert np.max(np.abs(v)) <= a
        # Var(V) = a^2 (1/3 - 2/pi^2) for the raised-cosine profile
        var_exact = a * a * (1.0 / 3.0 - 2.0 / math.pi ** 2)
        assert v.var() == pytest.approx(var_exact, rel=0.02)

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            DensityModel(kind="other")
        with pytest.raises(ValueError):
            DensityModel(theta=0.0)
        with pytest.raises(ValueError):
            DensityModel(kind="perturbed_oracle", eps=1.5)


class TestInteractionObservable:
    def test_score_zero_velocity(self, kernel2, gauss_density):
        obs = InteractionObservable(kernel2, gauss_density)
        for x1 in (0.0, 2.0):
            for x2 in (0.5, 3.0):
                assert vf_eval(obs, (x1, 0.0), (x2, 0.0)) == 0.0

    def test_hand_value(self, gauss_density):
        # K(0 - pi/2) * (-v/theta) = sin(-pi/2) * (-1) = 1 at v = 1
        obs = InteractionObservable(smooth_kernel([1.0]), gauss_density)
        assert vf_eval(obs, (0.0, 1.0), (math.pi / 2, 0.3)) == pytest.approx(1.0, abs=1e-14)

    def test_cancellation_second_slot(self, kernel2, gauss_density):
        obs = InteractionObservable(kernel2, gauss_density)
        xn, xw = gauss_density.x_grid()
        rho = gauss_density.x_density(xn)
        for z1 in [(0.3, 0.7), (2.2, -1.1), (5.0, 2.0)]:
            val = float(np.sum(xw * rho * obs.vf(z1, (xn, None))))
            assert abs(val) <= 1e-8

    def test_cancellation_first_slot(self, kernel2, gauss_density):
        obs = InteractionObservable(kernel2, gauss_density)
        xn, xw = gauss_density.x_grid()
        vn, vw = gauss_density.v_grid()
        rho = gauss_density.x_density(xn)
        gv = gauss_density.velocity_pdf(vn)
        for x2 in (0.9, 4.0):
            X, V = np.meshgrid(xn, vn, indexing="ij")
            vals = obs.vf((X, V), (x2, None))
            w2 = np.outer(xw * rho, vw * gv)
            assert abs(float(np.sum(vals * w2))) <= 1e-8

    def test_mollified_split_pointwise(self, kernel2, gauss_density, rng):
        from dataclasses import replace

        obs = replace(InteractionObservable(kernel2, gauss_density), delta=0.3)
        z1 = (rng.uniform(0, TWO_PI, 32), rng.standard_normal(32))
        z2 = (rng.uniform(0, TWO_PI, 32), rng.standard_normal(32))
        total = obs.vf_delta(z1, z2) + obs.wf_delta(z1, z2)
        assert np.allclose(total, obs.vf(z1, z2), atol=1e-13)

    def test_rejects_perturbed_density(self, kernel2):
        pert = DensityModel(kind="perturbed_oracle", eps=0.1, oracle_size=300)
        with pytest.raises(ValueError):
            InteractionObservable(kernel2, pert)
