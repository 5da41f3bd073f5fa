import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ris_mtc.channel import (
    RisConfiguration, SteeringVectors, crandn, draw_channels, draw_direct_channel,
    draw_ris_cn_channel, draw_sensor_ris_channel, effective_channel, planar_steering_vector,
    steering_vector,
)
from ris_mtc.scenario import Geometry, RadioConfig


def _setup(m=2, k=4, l=6, **radio):
    sensors = np.array([[1.0, 0.0, 0.0], [10.0, 0.0, 0.0]])[:m]
    geom = Geometry(sensors, np.array([3.0, 4.0, 0.0]), np.zeros(3))
    return geom, RadioConfig(m, k, l, 1e-3, **radio)


class TestSteering:
    def test_broadside_all_ones(self):
        np.testing.assert_allclose(steering_vector(7, 0.0), np.ones(7))

    def test_single_element(self):
        np.testing.assert_allclose(steering_vector(1, 1.234), [1.0])

    def test_endfire_half_wavelength(self):
        np.testing.assert_allclose(steering_vector(2, np.pi / 2, 0.5), [1.0, np.exp(-1j * np.pi)], atol=1e-15)

    @given(st.integers(1, 12), st.integers(1, 12), st.floats(-7, 7), st.floats(-7, 7))
    def test_planar_unit_modulus_reference(self, nx, ny, az, el):
        a = planar_steering_vector((nx, ny), az, el)
        assert a.shape == (nx * ny,)
        np.testing.assert_allclose(np.abs(a), 1.0, rtol=1e-12)
        assert a[0] == 1.0

    def test_planar_is_separable(self):
        az, el = 0.3, 0.7
        a = planar_steering_vector((2, 3), az, el)
        cx, cy = np.cos(el) * np.cos(az), np.cos(el) * np.sin(az)
        hand = [np.exp(-1j * np.pi * (x * cx + y * cy)) for x in range(2) for y in range(3)]
        np.testing.assert_allclose(a, hand, atol=1e-14)


class TestDirect:
    def test_unit_distance_power(self):
        geom, radio = _setup()
        rng = np.random.default_rng(1)
        chi = crandn(rng, 100_000, 2, radio.n_antennas)
        power = np.mean([np.sum(np.abs(draw_direct_channel(geom, radio, rng, c)[0][0]) ** 2) for c in chi])
        assert power == pytest.approx(radio.n_antennas, rel=0.02)

    def test_power_scale(self):
        geom, radio = _setup()
        q, chi = draw_direct_channel(geom, radio, np.random.default_rng(0))
        np.testing.assert_allclose(q[1], 10 ** (-3.8 / 2) * chi[1])
        np.testing.assert_allclose(q[0], chi[0])

    def test_deterministic(self):
        geom, radio = _setup()
        a, _ = draw_direct_channel(geom, radio, np.random.default_rng(5))
        b, _ = draw_direct_channel(geom, radio, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)


def _sensor_ris_samples(geom, radio, n, seed=0):
    rng = np.random.default_rng(seed)
    tau = crandn(rng, n, geom.n_sensors, radio.n_elements)
    sv = SteeringVectors.from_geometry(geom, radio)
    return np.array([draw_sensor_ris_channel(geom, radio, rng, t, sv)[0] for t in tau]), sv


class TestSensorRis:
    def test_rayleigh_zero_mean(self):
        geom, radio = _setup(rician_sensor_ris=0.0)
        g, _ = _sensor_ris_samples(geom, radio, 100_000)
        scale = geom.delta[0] ** (-radio.pathloss_ris / 2)
        assert np.max(np.abs(g[:, 0].mean(axis=0))) < 5 * scale / np.sqrt(100_000)

    def test_los_limit(self):
        geom, radio = _setup(rician_sensor_ris=1e9)
        g, sv = _sensor_ris_samples(geom, radio, 3)
        scale = geom.delta ** (-radio.pathloss_ris / 2)
        for draw in g:
            np.testing.assert_allclose(draw, scale[:, None] * sv.sensor_ris, rtol=1e-3)

    def test_rician_mean_and_variance(self):
        geom, radio = _setup()
        f1 = 10 ** 0.3
        g, sv = _sensor_ris_samples(geom, radio, 100_000)
        scale = geom.delta[0] ** (-radio.pathloss_ris / 2)
        mean = g[:, 0].mean(axis=0)
        np.testing.assert_allclose(np.abs(mean), scale * np.sqrt(f1 / (1 + f1)), rtol=0.03)
        var = np.mean(np.abs(g[:, 0] - scale * np.sqrt(f1 / (1 + f1)) * sv.sensor_ris[0]) ** 2, axis=0)
        np.testing.assert_allclose(var, scale ** 2 / (1 + f1), rtol=0.03)


class TestRisCn:
    def test_los_rank_one(self):
        geom, radio = _setup(rician_ris_cn=1e9)
        G, _ = draw_ris_cn_channel(geom, radio, np.random.default_rng(0))
        s = np.linalg.svd(G / geom.delta_ris ** (-radio.pathloss_ris / 2), compute_uv=False)
        assert s[1] < 1e-3 * s[0]

    def test_default_factor(self):
        assert RadioConfig(1, 1, 1, 1.0).rician_ris_cn == pytest.approx(10.0)

    def test_frobenius_power(self):
        geom, radio = _setup()
        rng = np.random.default_rng(3)
        sv = SteeringVectors.from_geometry(geom, radio)
        power = np.mean([np.sum(np.abs(draw_ris_cn_channel(geom, radio, rng, steering=sv)[0]) ** 2)
                         for _ in range(10_000)])
        expected = radio.n_antennas * radio.n_elements * geom.delta_ris ** (-radio.pathloss_ris)
        assert power == pytest.approx(expected, rel=0.02)

    def test_independent_of_sensor_draws(self):
        geom, radio = _setup(m=1, k=1, l=1)
        rng = np.random.default_rng(11)
        n = 20_000
        draws = [draw_channels(geom, radio, rng) for _ in range(n)]
        tau = np.array([d.tau[0, 0] for d in draws])
        delta = np.array([d.Delta[0, 0] for d in draws])
        cross = np.mean(delta * tau.conj())
        se = np.std(delta * tau.conj()) / np.sqrt(n)
        assert abs(cross) <= 3 * se * np.sqrt(2)


class TestEffective:
    def test_ris_off(self, rng):
        q = crandn(rng, 3)
        np.testing.assert_allclose(effective_channel(q, crandn(rng, 3, 5), np.zeros(5)), q)

    def test_scalar_cascade(self):
        geom, radio = _setup(l=1)
        ch = draw_channels(geom, radio, np.random.default_rng(2))
        h = effective_channel(ch.q[0], ch.cascaded[0], np.ones(1))
        np.testing.assert_allclose(h, ch.q[0] + ch.G_R[:, 0] * ch.g[0, 0])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_two_evaluation_paths(self, seed):
        geom, radio = _setup()
        rng = np.random.default_rng(seed)
        ch = draw_channels(geom, radio, rng)
        psi = RisConfiguration(rng.uniform(0, 2 * np.pi, radio.n_elements)).psi
        for i in range(geom.n_sensors):
            a = ch.G_R @ np.diag(ch.g[i]) @ psi + ch.q[i]
            b = ch.G_R @ (ch.g[i] * psi) + ch.q[i]
            np.testing.assert_allclose(a, b, rtol=1e-12)
            np.testing.assert_allclose(effective_channel(ch.q[i], ch.cascaded[i], psi), a, rtol=1e-12)
        np.testing.assert_allclose(ch.effective(psi), [ch.G_R @ (ch.g[i] * psi) + ch.q[i]
                                                       for i in range(geom.n_sensors)], rtol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="dimension mismatch"):
            effective_channel(crandn(rng, 3), crandn(rng, 3, 4), np.ones(5))


class TestRisConfiguration:
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
    def test_transmission_mode(self, phases):
        cfg = RisConfiguration(np.array(phases))
        np.testing.assert_allclose(np.abs(cfg.psi), 1.0)
        assert np.all((cfg.phases >= 0) & (cfg.phases < 2 * np.pi))

    def test_amplitudes_switch_elements(self):
        cfg = RisConfiguration(np.zeros(3), np.array([1.0, 0.0, 1.0]))
        np.testing.assert_allclose(cfg.psi, [1, 0, 1])
        with pytest.raises(ValueError):
            RisConfiguration(np.zeros(3), np.array([0.5, 1.0, 1.0]))


def test_direct_link_disabled():
    geom, radio = _setup(direct_link=False)
    q, _ = draw_direct_channel(geom, radio, np.random.default_rng(0))
    assert not q.any()
    assert dataclasses.replace(radio, direct_link=True).direct_link
