import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ris_mtc.channel import ChannelRealization, SteeringVectors, crandn, draw_channels
from ris_mtc.csi import (
    PilotBook, build_training_matrix, cascaded_prior_moments, correlate_pilots, lmmse_estimate,
    lmmse_filter, observation_moments, simulate_training, training_noise_variance, unvec,
)
from ris_mtc.scenario import Geometry, RadioConfig

from conftest import random_psd


def _setup(m=2, k=2, l=2, positions=None, **radio):
    if positions is None:
        positions = [[2.0, 1.0, 0.0], [6.0, -2.0, 0.5], [4.0, 5.0, 0.0]][:m]
    geom = Geometry(np.array(positions, float), np.array([10.0, 3.0, 2.0]), np.zeros(3))
    return geom, RadioConfig(m, k, l, 1e-3, **radio)


def _bulk(geom, radio, n, seed=0):
    """Channel realizations for ``n`` independent blocks."""
    rng = np.random.default_rng(seed)
    sv = SteeringVectors.from_geometry(geom, radio)
    return [draw_channels(geom, radio, rng, sv) for _ in range(n)], rng


def _vec(cascaded):
    return cascaded.reshape(cascaded.shape[:-2] + (-1,), order="F") if cascaded.ndim == 2 else \
        np.array([c.reshape(-1, order="F") for c in cascaded])


def _rel_frob(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestTrainingMatrix:
    def test_grouped_pairs(self):
        expected = np.array([[1, 0, 0], [1, 0, 0], [0, 1, 0], [0, 1, 0], [0, 0, 1], [0, 0, 1]])
        prot = build_training_matrix("binary", 6, 2)
        np.testing.assert_array_equal(prot.upsilon, expected)
        assert prot.periods == 3

    def test_identity(self):
        np.testing.assert_array_equal(build_training_matrix("binary", 4, 1).upsilon, np.eye(4))

    def test_single_group(self):
        np.testing.assert_array_equal(build_training_matrix("binary", 5, 5).upsilon, np.ones((5, 1)))

    def test_group_must_divide(self):
        with pytest.raises(ValueError, match="group size must divide L"):
            build_training_matrix("binary", 6, 4)

    def test_nonbinary_dft(self):
        ups = build_training_matrix("nonbinary", 4, 1).upsilon
        hand = np.array([[np.exp(-2j * np.pi * t * l / 4) for t in range(4)] for l in range(4)])
        np.testing.assert_allclose(ups, hand, atol=1e-14)

    @given(st.sampled_from([(6, 1), (6, 2), (6, 3), (8, 4), (12, 3)]))
    def test_nonbinary_grouped_unit_modulus(self, lg):
        l, g = lg
        ups = build_training_matrix("nonbinary", l, g).upsilon
        np.testing.assert_allclose(np.abs(ups), 1.0)
        # rows inside one group are identical
        for start in range(0, l, g):
            np.testing.assert_allclose(ups[start:start + g], np.repeat(ups[start:start + 1], g, axis=0))

    def test_selection_matches_vec(self, rng):
        prot = build_training_matrix("nonbinary", 6, 2)
        gc = crandn(rng, 3, 6)
        z_mat = gc @ prot.upsilon  # K x T
        np.testing.assert_allclose(prot.selection(3) @ gc.reshape(-1, order="F"),
                                   z_mat.reshape(-1, order="F"), rtol=1e-12)
        np.testing.assert_allclose(unvec(gc.reshape(-1, order="F"), 3), gc)


class TestPilots:
    @pytest.mark.parametrize("m", [1, 2, 5, 20])
    def test_gram_is_diagonal(self, m):
        power = np.linspace(0.5, 2.0, m)
        book = PilotBook.dft(power)
        gram = book.gram()
        np.testing.assert_allclose(np.diag(gram).real, m * power)
        off = gram - np.diag(np.diag(gram))
        assert np.max(np.abs(off)) < 1e-10 * np.max(np.abs(gram))
        np.testing.assert_allclose(np.abs(book.pilots) ** 2, np.repeat(power[:, None], m, axis=1))

    def test_no_cross_contamination(self, rng):
        book = PilotBook.dft(np.array([1.0, 2.0, 0.5]))
        signal = crandn(rng, 4)
        received = np.outer(signal, book.pilots[0].conj())  # only sensor 0 transmits
        z = correlate_pilots(received, book)
        np.testing.assert_allclose(z[0], signal, rtol=1e-12)
        assert np.max(np.abs(z[1:])) < 1e-10 * np.max(np.abs(signal))

    def test_too_short(self):
        with pytest.raises(ValueError):
            PilotBook.dft(np.ones(3), length=2)


class TestSimulateTraining:
    def test_noiseless(self):
        geom, radio = _setup(l=4)
        prot = build_training_matrix("binary", 4, 2)
        ch = draw_channels(geom, radio, np.random.default_rng(0))
        z = simulate_training(ch, prot, PilotBook.dft(radio.tx_power), 0.0, np.random.default_rng(1))
        S = prot.selection(radio.n_antennas)
        for i in range(2):
            np.testing.assert_allclose(z[i], S @ ch.cascaded[i].reshape(-1, order="F"), rtol=1e-12)

    def test_noise_variance(self):
        power = np.array([1e-3, 4e-3])
        book = PilotBook.dft(power)
        rng = np.random.default_rng(7)
        sigma2 = 2.5
        noise = np.sqrt(sigma2) * crandn(rng, 100_000, 3, book.length)
        z = correlate_pilots(noise, book)  # (n, M, K)
        var = np.mean(np.abs(z) ** 2, axis=(0, 2))
        expected = sigma2 / (book.length * power)  # W p / (N P): variance N P sigma^2 / (N P)^2
        np.testing.assert_allclose(var, expected, rtol=0.03)

    def test_noise_variance_helper(self):
        radio = RadioConfig(2, 1, 1, [1e-3, 2e-3])
        np.testing.assert_allclose(training_noise_variance(radio, 2),
                                   radio.noise_power / (2 * np.array([1e-3, 2e-3])))


class TestPrior:
    def test_rayleigh(self):
        geom, radio = _setup(rician_sensor_ris=0.0, rician_ris_cn=0.0)
        prior = cascaded_prior_moments(geom, radio)
        assert not prior.mean.any()
        for i in range(2):
            scale = (geom.delta[i] * geom.delta_ris) ** (-radio.pathloss_ris)
            np.testing.assert_allclose(prior.cov[i], scale * np.eye(4))

    def test_scalar_variance(self):
        geom, radio = _setup(k=1, l=1)
        prior = cascaded_prior_moments(geom, radio)
        f1, f2 = radio.rician_sensor_ris, radio.rician_ris_cn
        c2 = (geom.delta[0] * geom.delta_ris) ** (-radio.pathloss_ris) / ((1 + f1) * (1 + f2))
        assert prior.cov[0, 0, 0].real == pytest.approx(c2 * (1 + f1 + f2), rel=1e-12)

    def test_sampling_oracle(self):
        geom, radio = _setup(k=2, l=3)
        prior = cascaded_prior_moments(geom, radio)
        draws, _ = _bulk(geom, radio, 100_000)
        g = np.array([_vec(d.cascaded) for d in draws])  # (n, M, KL)
        for i in range(2):
            x = g[:, i]
            assert _rel_frob(x.mean(axis=0), prior.mean[i]) < 0.03
            c = (x - prior.mean[i]).T @ (x - prior.mean[i]).conj() / len(x)
            assert _rel_frob(c, prior.cov[i]) < 0.03
        # the cross block is mostly zeros, so compare entrywise against the sampling error
        prod = (g[:, 0] - prior.mean[0])[:, :, None] * (g[:, 1] - prior.mean[1])[:, None, :].conj()
        se = prod.std(axis=0) / np.sqrt(len(g))
        assert np.all(np.abs(prod.mean(axis=0) - prior.cross_cov(0, 1)) <= 4 * np.sqrt(2) * se)


class TestObservationMoments:
    def test_identity_training_noiseless(self):
        geom, radio = _setup(l=3)
        prior = cascaded_prior_moments(geom, radio)
        obs = observation_moments(build_training_matrix("binary", 3), prior, np.zeros(2))
        np.testing.assert_allclose(obs.mean, prior.mean)
        np.testing.assert_allclose(obs.blocks[0, 0], prior.cov[0])

    def test_shared_position_cross_block(self):
        geom, radio = _setup(positions=[[2.0, 1.0, 0.0], [2.0, 1.0, 0.0]], l=4)
        prior = cascaded_prior_moments(geom, radio)
        prot = build_training_matrix("binary", 4, 2)
        obs = observation_moments(prot, prior, np.ones(2))
        S = prot.selection(2)
        c2 = prior.scale[0] ** 2
        np.testing.assert_allclose(obs.blocks[0, 1], radio.rician_sensor_ris * c2 * S @ S.conj().T,
                                   rtol=1e-12, atol=1e-14 * c2)

    def test_sampling_oracle(self):
        geom, radio = _setup(k=2, l=4)
        prot = build_training_matrix("binary", 4, 2)
        book = PilotBook.dft(radio.tx_power)
        # noise comparable to the signal so both terms are exercised
        prior = cascaded_prior_moments(geom, radio)
        noise_power = float(np.mean(np.real(np.diagonal(prior.cov[1], axis1=-2, axis2=-1)))) * 2 * 1e-3
        noise_var = noise_power / (book.length * radio.tx_power)
        obs = observation_moments(prot, prior, noise_var)
        draws, rng = _bulk(geom, radio, 100_000, seed=3)
        z = np.array([simulate_training(d, prot, book, noise_power, rng).reshape(-1) for d in draws])
        assert _rel_frob(z.mean(axis=0), obs.joint_mean) < 0.03
        zc = z - obs.joint_mean
        assert _rel_frob(zc.T @ zc.conj() / len(z), obs.joint_cov) < 0.03

    @given(st.integers(0, 2**32 - 1), st.sampled_from([("binary", 1), ("binary", 2), ("nonbinary", 1),
                                                       ("nonbinary", 2)]))
    @settings(max_examples=25, deadline=None)
    def test_joint_covariance_psd(self, seed, kind):
        rng = np.random.default_rng(seed)
        geom, radio = _setup(m=3, positions=rng.uniform(-20, 20, (3, 3)) + [0, 0, 30])
        prior = cascaded_prior_moments(geom, radio)
        obs = observation_moments(build_training_matrix(kind[0], 2, kind[1]), prior,
                                  rng.uniform(0, 1e-9, 3))
        cov = obs.joint_cov
        np.testing.assert_allclose(cov, cov.conj().T, atol=1e-12 * np.abs(cov).max())
        assert np.linalg.eigvalsh(cov).min() >= -1e-10 * np.trace(cov).real
        np.testing.assert_allclose(obs.blocks[1, 0], obs.blocks[0, 1].conj().T)


class TestLmmse:
    def test_scalar_wiener(self):
        mu, var, nv = 0.3 - 0.2j, 2.0, 0.5
        filt = lmmse_filter(np.array([mu]), np.array([[var]]), np.eye(1), nv)
        z = 1.1 + 0.7j
        wiener = mu + var / (var + nv) * (z - mu)
        assert abs(filt.apply(np.array([z]))[0] - wiener) < 1e-10
        assert filt.error_cov[0, 0].real == pytest.approx(var * nv / (var + nv), rel=1e-10)

    def test_scalar_wiener_from_channels(self):
        geom, radio = _setup(m=1, k=1, l=1)
        prior = cascaded_prior_moments(geom, radio)
        nv = training_noise_variance(radio, 1)
        est = lmmse_estimate(np.array([[0.01 + 0.02j]]), prior, build_training_matrix("binary", 1), nv)[0]
        var = prior.cov[0, 0, 0].real
        mu = prior.mean[0, 0]
        wiener = mu + var / (var + nv[0]) * (0.01 + 0.02j - mu)
        assert abs(est.estimate[0] - wiener) <= 1e-10 * abs(wiener)

    def test_no_information_limit(self, rng):
        c = random_psd(rng, 4, complex_=True)
        mu = crandn(rng, 4)
        S = build_training_matrix("binary", 2).selection(2)
        filt = lmmse_filter(mu, c, S, 1e12 * np.trace(c).real)
        z = S @ (mu + crandn(rng, 4))
        np.testing.assert_allclose(filt.apply(z), mu, rtol=1e-3)

    def test_error_cov_identity(self, rng):
        c = random_psd(rng, 6, complex_=True)
        S = build_training_matrix("binary", 3, 3).selection(2)
        filt = lmmse_filter(crandn(rng, 6), c, S, 0.3)
        np.testing.assert_allclose(filt.error_cov, c - filt.A @ S @ c, rtol=1e-10, atol=1e-12)
        assert np.linalg.eigvalsh(filt.error_cov).min() > -1e-10 * np.trace(c).real

    def test_singular_noiseless_uses_pinv(self, rng):
        c = random_psd(rng, 4, rank=1, complex_=True)
        filt = lmmse_filter(np.zeros(4), c, np.eye(4), 0.0)
        assert np.all(np.isfinite(filt.A))
        assert np.trace(filt.error_cov).real < 1e-8 * np.trace(c).real

    def test_monte_carlo_mse_and_orthogonality(self):
        geom, radio = _setup(k=2, l=2)
        prot = build_training_matrix("binary", 2)
        book = PilotBook.dft(radio.tx_power)
        prior = cascaded_prior_moments(geom, radio)
        noise_power = float(prior.cov[0, 0, 0].real) * 1e-3  # SNR around one after correlation
        nv = noise_power / (book.length * radio.tx_power)
        draws, rng = _bulk(geom, radio, 100_000, seed=9)
        z = np.array([simulate_training(d, prot, book, noise_power, rng) for d in draws])
        g = np.array([_vec(d.cascaded) for d in draws])
        ests = lmmse_estimate(z[0], prior, prot, nv)
        for i, est in enumerate(ests):
            g_hat = est.apply(z[:, i])
            err = g[:, i] - g_hat
            mse = np.mean(np.sum(np.abs(err) ** 2, axis=1))
            assert mse == pytest.approx(np.trace(est.error_cov).real, rel=0.02)
            prod = err[:, :, None] * z[:, i, None, :].conj()
            corr = prod.mean(axis=0)
            se = prod.std(axis=0) / np.sqrt(len(prod))
            assert np.all(np.abs(corr) <= 3 * np.sqrt(2) * se)

    def test_more_periods_less_error(self):
        geom, radio = _setup(k=2, l=6)
        prior = cascaded_prior_moments(geom, radio)
        eye = np.eye(6)
        traces = []
        for t in range(1, 7):
            S = np.kron(eye[:, :t].T, np.eye(2))
            traces.append(np.trace(lmmse_filter(prior.mean[0], prior.cov[0], S, 1e-9).error_cov).real)
        assert all(b <= a * (1 + 1e-12) for a, b in zip(traces, traces[1:]))

    @pytest.mark.parametrize("g", [2, 3, 6])
    def test_grouping_cannot_help(self, g):
        geom, radio = _setup(k=2, l=6)
        prior = cascaded_prior_moments(geom, radio)
        nv = 1e-9

        def err(group):
            S = build_training_matrix("binary", 6, group).selection(2)
            return np.trace(lmmse_filter(prior.mean[0], prior.cov[0], S, nv).error_cov).real

        assert err(g) >= err(1)

    def test_infinite_noise_returns_prior(self, rng):
        c = random_psd(rng, 2, complex_=True)
        mu = crandn(rng, 2)
        filt = lmmse_filter(mu, c, np.eye(2), np.inf)
        np.testing.assert_allclose(filt.apply(crandn(rng, 2)), mu)
        np.testing.assert_allclose(filt.error_cov, c)


def test_zero_power_sensor_falls_back_to_prior():
    geom, radio = _setup()
    radio = RadioConfig(2, 2, 2, [1e-3, 0.0])
    nv = training_noise_variance(radio, 2)
    assert np.isinf(nv[1])
    prior = cascaded_prior_moments(geom, radio)
    ests = lmmse_estimate(np.ones((2, 4), complex), prior, build_training_matrix("binary", 2), nv)
    np.testing.assert_allclose(ests[1].estimate, prior.mean[1])


def test_direct_channel_is_removed():
    """Training statistics depend on the cascaded channels only."""
    geom, radio = _setup()
    prot = build_training_matrix("binary", 2)
    book = PilotBook.dft(radio.tx_power)
    ch = draw_channels(geom, radio, np.random.default_rng(4))
    other = ChannelRealization(ch.q * 100, ch.g, ch.G_R, ch.chi, ch.tau, ch.Delta)
    a = simulate_training(ch, prot, book, 1e-12, np.random.default_rng(5))
    b = simulate_training(other, prot, book, 1e-12, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
