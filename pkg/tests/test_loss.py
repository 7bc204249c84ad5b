import math

import numpy as np
import pytest

from aoavi.landscape import enumerate_global_optima
from aoavi.loss import (
    InitLossConfig,
    LossBreakdown,
    VariationalState,
    expected_reconstruction_observed,
    init_loss,
    kl_gaussian,
    matched_gamma,
    population_reconstruction,
    recover_path_parameters,
    reparameterize_sample,
    total_loss,
)
from aoavi.preprocess import PseudoLabels
from aoavi.signal_model import (
    AoAVector,
    ArrayConfig,
    ChannelPrior,
    ChannelRealization,
    ObservationSet,
    array_matrix,
    synthesize_observation,
)

from conftest import make_rng, random_pd, random_prior, random_problem


def _chol_like(cov):
    """Square-root factor matching the library's sampling convention."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


class TestVariationalState:
    def test_rejects_non_hermitian_covariance(self):
        cov = np.array([[[1.0, 0.2j], [0.3j, 1.0]]])
        with pytest.raises(ValueError):
            VariationalState(
                aoa_estimate=AoAVector(np.array([0.1, 0.2])),
                channel_means=np.zeros((2, 1), complex),
                channel_covariances=cov,
            )

    def test_rejects_indefinite_covariance(self):
        cov = np.array([[[1.0 + 0j, 0.0], [0.0, -0.5]]])
        with pytest.raises(ValueError):
            VariationalState(
                aoa_estimate=AoAVector(np.array([0.1, 0.2])),
                channel_means=np.zeros((2, 1), complex),
                channel_covariances=cov,
            )

    def test_shared_covariance_broadcast(self):
        state = VariationalState(
            aoa_estimate=AoAVector(np.array([0.0])),
            channel_means=np.zeros((1, 4), complex),
            channel_covariances=np.eye(1, dtype=complex),
        )
        assert state.n_snapshots == 4
        assert state.k_users == 1

    def test_with_aoas_swaps_angles_only(self):
        rng = make_rng(40)
        state = VariationalState(
            aoa_estimate=AoAVector(np.array([0.1])),
            channel_means=(rng.normal(size=(1, 3)) + 1j * rng.normal(size=(1, 3))),
            channel_covariances=np.eye(1, dtype=complex),
        )
        moved = state.with_aoas(np.array([0.5]))
        assert moved.aoa_estimate.angles[0] == 0.5
        assert np.array_equal(moved.channel_means, state.channel_means)


class TestLossBreakdown:
    def test_sum_must_hold(self):
        with pytest.raises(ValueError):
            LossBreakdown(kl_term=1.0, reconstruction_term=2.0, total=4.0)

    def test_negative_kl_rejected(self):
        with pytest.raises(ValueError):
            LossBreakdown(kl_term=-1.0, reconstruction_term=2.0, total=1.0)

    def test_negative_reconstruction_rejected(self):
        with pytest.raises(ValueError):
            LossBreakdown(kl_term=1.0, reconstruction_term=-2.0, total=-1.0)

    def test_from_parts(self):
        b = LossBreakdown.from_parts(1.5, 2.5)
        assert b.total == 4.0


class TestKlGaussian:
    def test_zero_at_equality(self):
        rng = make_rng(41)
        prior = random_prior(3, rng)
        assert abs(kl_gaussian(prior.mean, prior.covariance, prior)) < 1e-10

    def test_scalar_unit_case(self):
        # unit variances, unit mean offset: only the quadratic term is left
        prior = ChannelPrior(mean=np.array([0.0 + 0j]), covariance=np.array([[1.0 + 0j]]))
        val = kl_gaussian(np.array([1.0 + 0j]), np.array([[1.0 + 0j]]), prior)
        assert abs(val - 1.0) < 1e-12

    def test_non_negative_on_random_instances(self):
        rng = make_rng(42)
        for _ in range(50):
            k = int(rng.integers(1, 4))
            prior = random_prior(k, rng)
            q_mean = rng.normal(size=k) + 1j * rng.normal(size=k)
            q_cov = random_pd(k, rng, scale=float(rng.uniform(0.1, 3.0)))
            assert kl_gaussian(q_mean, q_cov, prior) >= 0.0

    def test_monte_carlo_oracle_two_users(self):
        """Sampling estimate of E_q[ln q - ln p] agrees within 1%."""
        rng = make_rng(43)
        prior = random_prior(2, rng)
        q_mean = prior.mean + np.array([0.8 - 0.3j, -0.5 + 0.9j])
        q_cov = random_pd(2, rng, scale=0.7)
        analytic = kl_gaussian(q_mean, q_cov, prior)

        n_samples = 10**6
        lq = _chol_like(q_cov)
        eps = (
            rng.normal(size=(2, n_samples)) + 1j * rng.normal(size=(2, n_samples))
        ) * math.sqrt(0.5)
        x = q_mean[:, None] + lq @ eps

        def log_density(mean, cov, pts):
            d = pts - mean[:, None]
            sol = np.linalg.solve(cov, d)
            quad = np.einsum("ks,ks->s", d.conj(), sol).real
            _, logdet = np.linalg.slogdet(cov)
            return -logdet - quad  # -K ln pi cancels in the difference

        sample = log_density(q_mean, q_cov, x) - log_density(prior.mean, prior.covariance, x)
        assert abs(sample.mean() - analytic) < 0.01 * abs(analytic)

    def test_singular_q_rejected(self):
        prior = ChannelPrior(mean=np.zeros(2, complex), covariance=np.eye(2, dtype=complex))
        singular = np.array([[1.0 + 0j, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError):
            kl_gaussian(np.zeros(2, complex), singular, prior)


class TestExpectedReconstructionObserved:
    def _exact_setup(self, rng, noise_variance=0.5):
        arr = ArrayConfig(8, 0.5)
        aoas = AoAVector(np.radians([-10.0, 25.0]))
        gains = rng.normal(size=(2, 4)) + 1j * rng.normal(size=(2, 4))
        ch = ChannelRealization.from_gains(gains)
        noiseless = synthesize_observation(arr, aoas, ch, 0.0, rng)
        obs = ObservationSet(
            signal=noiseless.signal, noise_variance=noise_variance, array=arr
        )
        return obs, aoas, gains

    def test_zero_at_exact_state(self):
        rng = make_rng(44)
        obs, aoas, gains = self._exact_setup(rng)
        state = VariationalState(
            aoa_estimate=aoas,
            channel_means=gains,
            channel_covariances=np.zeros((2, 2), complex),
        )
        assert expected_reconstruction_observed(obs, state) < 1e-18

    def test_isotropic_covariance_shift(self):
        rng = make_rng(45)
        obs, aoas, gains = self._exact_setup(rng, noise_variance=0.3)
        base = VariationalState(
            aoa_estimate=aoas,
            channel_means=gains,
            channel_covariances=np.zeros((2, 2), complex),
        )
        c = 0.17
        lifted = VariationalState(
            aoa_estimate=aoas,
            channel_means=gains,
            channel_covariances=c * np.eye(2, dtype=complex),
        )
        n, k, m = 8, 2, 4
        got = expected_reconstruction_observed(obs, lifted) - expected_reconstruction_observed(obs, base)
        expected = c * n * k * m / 0.3  # unit-modulus columns: tr(A A^H) = N K
        assert abs(got - expected) < 1e-9 * expected

    def test_matches_reparameterized_monte_carlo(self):
        rng = make_rng(46)
        obs, state, prior, aoas, channel = random_problem(rng, n=12, k=2, m=4)
        analytic = expected_reconstruction_observed(obs, state)

        a_hat = array_matrix(obs.array, state.aoa_estimate)
        s = 10**5
        totals = np.zeros(s)
        for m in range(state.n_snapshots):
            cov = state.channel_covariances[m]
            l = _chol_like(cov)
            eps = (rng.normal(size=(2, s)) + 1j * rng.normal(size=(2, s))) * math.sqrt(0.5)
            draws = state.channel_means[:, m][:, None] + l @ eps
            resid = obs.signal[:, m][:, None] - a_hat @ draws
            totals += np.sum(np.abs(resid) ** 2, axis=0) / obs.noise_variance
        se = totals.std(ddof=1) / math.sqrt(s)
        assert abs(totals.mean() - analytic) < 3 * se
        assert abs(totals.mean() - analytic) < 0.005 * analytic

    def test_sampler_api_consistency(self):
        # the vectorized check above must agree with reparameterize_sample
        rng = make_rng(47)
        obs, state, *_ = random_problem(rng, n=10, k=2, m=3)
        analytic = expected_reconstruction_observed(obs, state)
        a_hat = array_matrix(obs.array, state.aoa_estimate)
        vals = []
        for _ in range(3000):
            total = 0.0
            for m in range(state.n_snapshots):
                h = reparameterize_sample(state, m, rng)
                total += np.sum(np.abs(obs.signal[:, m] - a_hat @ h) ** 2)
            vals.append(total / obs.noise_variance)
        vals = np.asarray(vals)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - analytic) < 4 * se

    def test_noise_scaling(self):
        rng = make_rng(48)
        obs, state, *_ = random_problem(rng, n=8, k=1, m=3, snr_like_noise=0.2)
        doubled = ObservationSet(
            signal=obs.signal, noise_variance=2 * obs.noise_variance, array=obs.array
        )
        assert abs(
            expected_reconstruction_observed(doubled, state)
            - expected_reconstruction_observed(obs, state) / 2
        ) < 1e-12 * expected_reconstruction_observed(obs, state)

    def test_zero_variance_rejected_when_normalized(self):
        rng = make_rng(49)
        obs, state, *_ = random_problem(rng, n=8, k=1, m=2)
        noiseless = ObservationSet(signal=obs.signal, noise_variance=0.0, array=obs.array)
        with pytest.raises(ValueError):
            expected_reconstruction_observed(noiseless, state)
        # unnormalized variant stays finite
        val = expected_reconstruction_observed(noiseless, state, normalized=False)
        assert math.isfinite(val) and val >= 0.0


class TestPopulationReconstruction:
    def test_noise_floor_at_exact_state(self):
        rng = make_rng(50)
        arr = ArrayConfig(16, 0.5)
        aoas = AoAVector(np.radians([7.0]))
        gains = rng.normal(size=(1, 5)) + 1j * rng.normal(size=(1, 5))
        ch = ChannelRealization.from_gains(gains)
        state = VariationalState(
            aoa_estimate=aoas,
            channel_means=gains,
            channel_covariances=np.zeros((1, 1), complex),
        )
        s2 = 0.37
        val = population_reconstruction(aoas, ch, state, arr, s2)
        assert abs(val - s2 * 16 * 5) < 1e-9 * (s2 * 16 * 5)

    def test_noiseless_residual_form(self):
        rng = make_rng(51)
        arr = ArrayConfig(8, 0.5)
        aoas = AoAVector(np.radians([-12.0, 31.0]))
        gains = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
        ch = ChannelRealization.from_gains(gains)
        means = gains + 0.2 * (rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3)))
        est = AoAVector(aoas.angles + np.array([0.02, -0.01]))
        state = VariationalState(
            aoa_estimate=est,
            channel_means=means,
            channel_covariances=np.zeros((2, 2), complex),
        )
        val = population_reconstruction(aoas, ch, state, arr, 0.0)
        resid = array_matrix(arr, aoas) @ gains - array_matrix(arr, est) @ means
        expected = np.linalg.norm(resid) ** 2
        assert abs(val - expected) < 1e-9 * expected

    def test_alias_equality(self):
        """Wide spacing aliases reproduce the loss value at the truth."""
        arr = ArrayConfig(16, 2.0)
        theta = math.radians(11.0)
        gains = np.ones((1, 3), dtype=complex)
        ch = ChannelRealization.from_gains(gains)
        aoas = AoAVector(np.array([theta]))
        optima = enumerate_global_optima(arr, theta)
        assert len(optima.alias_angles) == 4
        scale = np.linalg.norm(array_matrix(arr, aoas) @ gains) ** 2
        at_truth = population_reconstruction(
            aoas,
            ch,
            VariationalState(
                aoa_estimate=aoas,
                channel_means=gains,
                channel_covariances=np.zeros((1, 1), complex),
            ),
            arr,
            0.0,
        )
        for alias in optima.alias_angles:
            state = VariationalState(
                aoa_estimate=AoAVector(np.array([alias])),
                channel_means=gains,
                channel_covariances=np.zeros((1, 1), complex),
            )
            val = population_reconstruction(aoas, ch, state, arr, 0.0)
            assert abs(val - at_truth) <= 1e-9 * scale

    def test_normalized_variant(self):
        rng = make_rng(52)
        obs, state, prior, aoas, channel = random_problem(rng, n=8, k=1, m=2)
        raw = population_reconstruction(aoas, channel, state, obs.array, 0.5)
        scaled = population_reconstruction(
            aoas, channel, state, obs.array, 0.5, normalized=True
        )
        assert abs(scaled - raw / 0.5) < 1e-12 * abs(raw)


class TestTotalLoss:
    def test_decomposition(self):
        rng = make_rng(53)
        obs, state, prior, *_ = random_problem(rng)
        b = total_loss(obs, state, prior)
        assert abs(b.total - (b.kl_term + b.reconstruction_term)) <= 1e-10 * max(
            1.0, abs(b.total)
        )
        assert abs(b.reconstruction_term - expected_reconstruction_observed(obs, state)) < 1e-9
        per_m = sum(
            kl_gaussian(
                state.channel_means[:, m], state.channel_covariances[m], prior
            )
            for m in range(state.n_snapshots)
        )
        assert abs(b.kl_term - per_m) < 1e-9 * max(1.0, per_m)

    def test_per_snapshot_prior_list(self):
        rng = make_rng(54)
        obs, state, prior, *_ = random_problem(rng, m=3)
        shared = total_loss(obs, state, prior)
        listed = total_loss(obs, state, [prior] * 3)
        assert abs(shared.total - listed.total) < 1e-10 * max(1.0, abs(shared.total))

    def test_kl_unchanged_by_noise_rescale(self):
        rng = make_rng(55)
        obs, state, prior, *_ = random_problem(rng)
        doubled = ObservationSet(
            signal=obs.signal, noise_variance=2 * obs.noise_variance, array=obs.array
        )
        a = total_loss(obs, state, prior)
        b = total_loss(doubled, state, prior)
        assert abs(a.kl_term - b.kl_term) < 1e-12 * max(1.0, a.kl_term)
        assert abs(b.reconstruction_term - a.reconstruction_term / 2) < 1e-10 * max(
            1.0, a.reconstruction_term
        )


class TestInitLoss:
    def _setup(self, rng):
        obs, state, prior, *_ = random_problem(rng, n=10, k=2, m=3)
        labels = PseudoLabels(
            angles=np.sort(state.aoa_estimate.angles + np.array([0.03, -0.02])),
            correlations=np.array([1.0, 1.0]),
        )
        return obs, state, prior, labels

    def test_zero_penalty_at_matching_angles(self):
        rng = make_rng(56)
        obs, state, prior, _ = self._setup(rng)
        labels = PseudoLabels(
            angles=np.sort(state.aoa_estimate.angles.copy()),
            correlations=np.array([1.0, 1.0]),
        )
        val = init_loss(obs, state, prior, labels, InitLossConfig(gamma=3.0))
        anchored = total_loss(obs, state.with_aoas(labels.angles), prior).total
        assert abs(val - anchored) < 1e-10 * max(1.0, abs(anchored))

    def test_gamma_linearity(self):
        rng = make_rng(57)
        obs, state, prior, labels = self._setup(rng)
        anchored = total_loss(obs, state.with_aoas(labels.angles), prior).total
        l1 = init_loss(obs, state, prior, labels, InitLossConfig(gamma=1.0))
        l2 = init_loss(obs, state, prior, labels, InitLossConfig(gamma=2.0))
        assert abs((l2 - l1) - (l1 - anchored)) < 1e-9 * max(1.0, abs(l1))

    def test_gamma_must_be_positive(self):
        with pytest.raises(ValueError):
            InitLossConfig(gamma=0.0)

    def test_matched_gamma_balances_terms(self):
        rng = make_rng(58)
        obs, state, prior, labels = self._setup(rng)
        offset = math.radians(1.0)
        gamma = matched_gamma(obs, state, prior, labels, offset)
        anchored = total_loss(obs, state.with_aoas(labels.angles), prior).total
        penalty_at_reference = gamma * state.k_users * offset**2
        assert abs(penalty_at_reference - anchored) < 1e-9 * max(1.0, abs(anchored))


class TestReparameterizeSample:
    def test_zero_covariance_returns_mean(self):
        rng = make_rng(59)
        means = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
        state = VariationalState(
            aoa_estimate=AoAVector(np.array([0.0, 0.2])),
            channel_means=means,
            channel_covariances=np.zeros((2, 2), complex),
        )
        h = reparameterize_sample(state, 1, rng)
        assert np.array_equal(h, means[:, 1])

    def test_moments(self):
        rng = make_rng(60)
        cov = random_pd(2, rng)
        mean = rng.normal(size=2) + 1j * rng.normal(size=2)
        state = VariationalState(
            aoa_estimate=AoAVector(np.array([0.0, 0.1])),
            channel_means=np.repeat(mean[:, None], 2, axis=1),
            channel_covariances=cov,
        )
        n = 10**5
        draws = np.stack([reparameterize_sample(state, 0, rng) for _ in range(n)], axis=1)
        emp_mean = draws.mean(axis=1)
        sigma = math.sqrt(np.trace(cov).real)
        assert np.linalg.norm(emp_mean - mean) < 3 * sigma / math.sqrt(n)
        centered = draws - emp_mean[:, None]
        emp_cov = centered @ centered.conj().T / n
        assert np.linalg.norm(emp_cov - cov) < 0.05 * np.linalg.norm(cov)


class TestRecoverPathParameters:
    def test_real_unit(self):
        beta, psi = recover_path_parameters(np.array([1.0 + 0j]))
        assert beta[0] == 1.0 and psi[0] == 0.0

    def test_imaginary_unit(self):
        beta, psi = recover_path_parameters(np.array([1.0j]))
        assert abs(beta[0] - 1.0) < 1e-15
        assert abs(psi[0] - math.pi / 2) < 1e-15

    def test_third_quadrant(self):
        beta, psi = recover_path_parameters(np.array([-1.0 - 1.0j]))
        assert abs(beta[0] - math.sqrt(2.0)) < 1e-15
        assert abs(psi[0] + 3 * math.pi / 4) < 1e-15

    def test_matrix_input_round_trip(self):
        rng = make_rng(61)
        gains = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
        beta, psi = recover_path_parameters(gains)
        assert np.max(np.abs(beta * np.exp(1j * psi) - gains)) < 1e-12
