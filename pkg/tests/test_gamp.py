"""Tests for the GAMP denoisers, solver, and EM hyperparameter learning."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from conftest import simulated_trial

from onebitsync.channels import to_beamspace
from onebitsync.gamp import (
    BernoulliGaussianPrior,
    GampConfig,
    GaussianPrior,
    em_update,
    estimate_channel,
    gamp_em_solve,
    gamp_solve,
    input_denoiser_bg,
    input_denoiser_gaussian,
    output_denoiser_sign,
)
from onebitsync.model import ParameterError, RealifiedOperator, TrainingBlock, apply_cfo


def sign_posterior_by_quadrature(p_hat, tau_p, y, sigma_w_sq):
    """1-D quadrature oracle for the sign output channel."""
    sigma = np.sqrt(tau_p)

    def weight(z):
        return norm.pdf(z, loc=p_hat, scale=sigma) * norm.cdf(y * z / np.sqrt(sigma_w_sq))

    lo, hi = p_hat - 12 * sigma, p_hat + 12 * sigma
    z0 = quad(weight, lo, hi, limit=200)[0]
    m1 = quad(lambda z: z * weight(z), lo, hi, limit=200)[0] / z0
    m2 = quad(lambda z: z * z * weight(z), lo, hi, limit=200)[0] / z0
    return m1, m2 - m1**2


def bg_posterior_by_quadrature(r_hat, tau_r, lam, active_var):
    """Spike-and-slab oracle: continuous slab by quadrature plus the atom at 0."""
    sig_a = np.sqrt(active_var)

    def slab(x):
        return lam * norm.pdf(x, scale=sig_a) * norm.pdf(r_hat, loc=x, scale=np.sqrt(tau_r))

    lo, hi = -12 * sig_a + min(0, r_hat), 12 * sig_a + max(0, r_hat)
    z_slab = quad(slab, lo, hi, limit=200)[0]
    z_spike = (1 - lam) * norm.pdf(r_hat, scale=np.sqrt(tau_r))
    z0 = z_slab + z_spike
    m1 = quad(lambda x: x * slab(x), lo, hi, limit=200)[0] / z0
    m2 = quad(lambda x: x * x * slab(x), lo, hi, limit=200)[0] / z0
    return m1, m2 - m1**2, z_slab / z0


class TestSignDenoiser:
    def test_reference_value(self):
        # p=0, tau=1, sigma_w^2=1, y=+1 gives phi(0) / (Phi(0) sqrt(2))
        z_hat, _ = output_denoiser_sign(0.0, 1.0, 1.0, 1.0)
        assert z_hat == pytest.approx(norm.pdf(0) / (norm.cdf(0) * np.sqrt(2)), rel=1e-12)
        assert z_hat == pytest.approx(0.5642, abs=2e-4)

    def test_quadrature_oracle_grid(self):
        for p_hat in (-3.0, -0.5, 0.0, 0.7, 2.5):
            for tau_p in (0.1, 1.0, 5.0):
                for y in (-1.0, 1.0):
                    for sigma_w_sq in (0.5, 2.0):
                        want = sign_posterior_by_quadrature(p_hat, tau_p, y, sigma_w_sq)
                        got = output_denoiser_sign(p_hat, tau_p, y, sigma_w_sq)
                        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-12)

    def test_degenerate_tau(self):
        z_hat, z_var = output_denoiser_sign(1.3, 0.0, -1.0, 0.5)
        assert z_hat == 1.3 and z_var == 0.0

    def test_sign_symmetry(self):
        z_pos, _ = output_denoiser_sign(0.8, 0.6, 1.0, 0.4)
        z_neg, _ = output_denoiser_sign(-0.8, 0.6, -1.0, 0.4)
        assert z_pos == pytest.approx(-z_neg, rel=1e-12)

    def test_variance_bounds(self):
        rng = np.random.default_rng(0)
        p = rng.standard_normal(1000) * 3
        y = np.where(rng.standard_normal(1000) > 0, 1.0, -1.0)
        _, z_var = output_denoiser_sign(p, 0.8, y, 0.3)
        assert np.all(z_var >= 0) and np.all(z_var <= 0.8)

    def test_extreme_eta_stability(self):
        # Deep in the tail the ratio phi/Phi must stay finite and accurate:
        # the asymptotic expansion -eta - 1/eta + 2/eta^3 is the reference.
        from onebitsync.gamp import _inv_mills

        for eta in (-10.0, -20.0, -40.0):
            expansion = -eta - 1 / eta + 2 / eta**3
            assert _inv_mills(eta) == pytest.approx(expansion, rel=1e-3)
            assert np.isfinite(_inv_mills(eta))

    def test_mean_derivative_matches_variance(self):
        # GAMP consistency: d z_hat / d p_hat = z_var / tau_p.
        tau_p, sigma_w_sq = 0.7, 0.9
        step = 1e-6
        for p_hat in (-1.2, 0.3, 2.0):
            up, _ = output_denoiser_sign(p_hat + step, tau_p, 1.0, sigma_w_sq)
            down, _ = output_denoiser_sign(p_hat - step, tau_p, 1.0, sigma_w_sq)
            numeric = (up - down) / (2 * step)
            _, z_var = output_denoiser_sign(p_hat, tau_p, 1.0, sigma_w_sq)
            assert numeric == pytest.approx(z_var / tau_p, rel=1e-5)

    def test_invalid_noise(self):
        with pytest.raises(ParameterError):
            output_denoiser_sign(0.0, 1.0, 1.0, 0.0)


class TestGaussianDenoiser:
    def test_conjugate_values(self):
        x_hat, x_var = input_denoiser_gaussian(2.0, 1.0, 1.0)
        assert x_hat == pytest.approx(1.0) and x_var == pytest.approx(0.5)

    def test_flat_and_point_priors(self):
        x_flat, _ = input_denoiser_gaussian(1.7, 1.0, 1e12)
        x_point, _ = input_denoiser_gaussian(1.7, 1.0, 1e-12)
        assert x_flat == pytest.approx(1.7, rel=1e-10)
        assert abs(x_point) < 1e-10


class TestBgDenoiser:
    def test_quadrature_oracle_grid(self):
        for r_hat in (-2.0, 0.0, 0.4, 3.0):
            for tau_r in (0.2, 1.0):
                for lam in (0.05, 0.4, 0.9):
                    for active_var in (0.5, 2.0):
                        want = bg_posterior_by_quadrature(r_hat, tau_r, lam, active_var)
                        got = input_denoiser_bg(r_hat, tau_r, lam, active_var)
                        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-12)

    def test_lambda_one_reduces_to_gaussian(self):
        r = np.linspace(-3, 3, 11)
        x_bg, v_bg, pi = input_denoiser_bg(r, 0.7, 1.0, 1.4)
        x_g, v_g = input_denoiser_gaussian(r, 0.7, 1.4)
        np.testing.assert_allclose(x_bg, x_g, rtol=1e-12)
        np.testing.assert_allclose(v_bg, v_g, rtol=1e-12)
        np.testing.assert_array_equal(pi, 1.0)

    def test_sparse_limit(self):
        x_hat, _, _ = input_denoiser_bg(1.0, 0.5, 1e-10, 1.0)
        assert abs(x_hat) < 1e-6

    def test_zero_input_support_probability(self):
        lam, active_var, tau_r = 0.3, 1.2, 0.4
        x_hat, _, pi = input_denoiser_bg(0.0, tau_r, lam, active_var)
        expected = 1.0 / (1.0 + (1 - lam) / lam * np.sqrt((active_var + tau_r) / tau_r))
        assert x_hat == 0.0
        assert pi == pytest.approx(expected, rel=1e-12)

    def test_invalid_sparsity(self):
        with pytest.raises(ParameterError):
            input_denoiser_bg(0.0, 1.0, 0.0, 1.0)


class TestGampSolve:
    def test_unquantized_matches_closed_form_posterior(self):
        # Identity output channel on a 20x10 Gaussian problem: the fixed point
        # is the ridge posterior mean.
        rng = np.random.default_rng(1)
        m, n = 20, 10
        a = rng.standard_normal((m, n)) / np.sqrt(m)
        sigma_x_sq, sigma_w_sq = 1.0, 0.1
        x_true = rng.standard_normal(n) * np.sqrt(sigma_x_sq)
        y = a @ x_true + rng.standard_normal(m) * np.sqrt(sigma_w_sq)
        closed_form = sigma_x_sq * a.T @ np.linalg.solve(
            sigma_x_sq * a @ a.T + sigma_w_sq * np.eye(m), y
        )
        config = GampConfig(max_iters=500, damping=0.7, tol=1e-12, em_enabled=False)
        result = gamp_solve(a, y, sigma_w_sq, GaussianPrior(sigma_x_sq), config,
                            output_channel="identity")
        assert result.converged
        err = np.linalg.norm(result.x_hat - closed_form) / np.linalg.norm(closed_form)
        assert err < 1e-4

    def test_uninformative_observations_shrink_to_prior_mean(self):
        inst, _, y = simulated_trial(n_t=4, n_r=4, n_p=32, snr_db=-40, seed=2)
        op = RealifiedOperator(apply_cfo(inst.training, inst.cfo_rad), inst.dims.n_r)
        config = GampConfig(em_enabled=False)
        result = gamp_solve(op, y, inst.noise_var_per_dim, GaussianPrior(0.5), config)
        assert np.linalg.norm(result.x_hat) < 0.4 * np.linalg.norm(
            np.sqrt(0.5) * np.ones_like(result.x_hat)
        )

    def test_operator_and_dense_paths_agree(self):
        inst, _, y = simulated_trial(n_t=3, n_r=2, n_p=16, seed=3)
        op = RealifiedOperator(apply_cfo(inst.training, inst.cfo_rad), inst.dims.n_r)
        config = GampConfig(max_iters=20, em_enabled=False)
        res_op = gamp_solve(op, y, inst.noise_var_per_dim, GaussianPrior(0.5), config)
        res_dense = gamp_solve(op.to_dense(), y, inst.noise_var_per_dim, GaussianPrior(0.5), config)
        np.testing.assert_allclose(res_op.x_hat, res_dense.x_hat, atol=1e-10)

    def test_variances_nonnegative(self):
        inst, _, y = simulated_trial(seed=4)
        op = RealifiedOperator(apply_cfo(inst.training, inst.cfo_rad), inst.dims.n_r)
        result = gamp_solve(op, y, inst.noise_var_per_dim, GaussianPrior(0.5),
                            GampConfig(em_enabled=False))
        assert np.all(result.x_var >= 0)


class TestEmUpdate:
    def test_conjugate_model_recovers_variance(self):
        # Identity A, no quantization: EM's variance estimate lands near truth.
        rng = np.random.default_rng(5)
        n = 512
        sigma_true = 0.8
        tau_r = 0.05
        x = rng.standard_normal(n) * np.sqrt(sigma_true)
        r = x + rng.standard_normal(n) * np.sqrt(tau_r)
        learned = em_update(GaussianPrior(1.0), r, tau_r)
        for _ in range(30):
            learned = em_update(learned, r, tau_r)
        assert learned.sigma_x_sq == pytest.approx(sigma_true, rel=0.10)

    def test_fixed_point_stability(self):
        # Data generated at the current hyperparameters drifts < 5% in one pass.
        rng = np.random.default_rng(6)
        n = 4096
        prior = GaussianPrior(0.5)
        tau_r = 0.2
        x = rng.standard_normal(n) * np.sqrt(prior.sigma_x_sq)
        r = x + rng.standard_normal(n) * np.sqrt(tau_r)
        updated = em_update(prior, r, tau_r)
        assert abs(updated.sigma_x_sq - prior.sigma_x_sq) / prior.sigma_x_sq < 0.05

    def test_bg_dense_data_pushes_lambda_up(self):
        rng = np.random.default_rng(7)
        n = 2048
        tau_r = 0.05
        x = rng.standard_normal(n)  # lambda = 1 data
        r = x + rng.standard_normal(n) * np.sqrt(tau_r)
        prior = BernoulliGaussianPrior(0.5, 1.0)
        for _ in range(20):
            prior = em_update(prior, r, tau_r)
        assert prior.sparsity >= 0.9

    def test_hyperparameter_clamping(self):
        learned = em_update(GaussianPrior(1.0), np.zeros(16), 1e-13)
        assert learned.sigma_x_sq >= 1e-12


class TestEstimateChannel:
    def test_gaussian_known_cfo_recovers_channel(self):
        inst, _, y = simulated_trial(n_t=8, n_r=8, n_p=128, snr_db=10, seed=8)
        result = estimate_channel(inst.training, y, inst.cfo_rad,
                                  inst.noise_var_per_dim, "gaussian")
        nmse = np.linalg.norm(inst.channel - result.h_hat) ** 2 / np.linalg.norm(inst.channel) ** 2
        assert 10 * np.log10(nmse) < -8.0

    def test_wrong_cfo_destroys_recovery(self):
        inst, _, y = simulated_trial(n_t=8, n_r=8, n_p=128, snr_db=10, seed=9)
        result = estimate_channel(inst.training, y, 0.0, inst.noise_var_per_dim, "gaussian")
        nmse = np.linalg.norm(inst.channel - result.h_hat) ** 2 / np.linalg.norm(inst.channel) ** 2
        assert 10 * np.log10(nmse) > -5.0

    def test_beamspace_views_consistent(self):
        inst, _, y = simulated_trial(n_t=4, n_r=4, n_p=32, seed=10)
        result = estimate_channel(inst.training, y, inst.cfo_rad,
                                  inst.noise_var_per_dim, "mmwave")
        np.testing.assert_allclose(
            to_beamspace(result.h_hat).c_matrix, result.c_hat, atol=1e-10
        )

    def test_unknown_family_rejected(self):
        inst, _, y = simulated_trial(seed=11)
        with pytest.raises(ParameterError):
            estimate_channel(inst.training, y, 0.0, 1.0, "rayleigh")

    def test_trace_file_written(self, tmp_path):
        inst, _, y = simulated_trial(n_t=2, n_r=2, n_p=16, seed=12)
        trace = tmp_path / "trace.csv"
        config = GampConfig(max_iters=5, em_max_iters=2, trace_file=str(trace))
        estimate_channel(inst.training, y, inst.cfo_rad, inst.noise_var_per_dim,
                         "gaussian", config)
        lines = trace.read_text().splitlines()
        assert lines[0].startswith("em_pass,iteration,residual")
        assert len(lines) > 2
