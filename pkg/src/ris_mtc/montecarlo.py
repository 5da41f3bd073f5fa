"""Monte Carlo machinery with common random numbers.

A ``TrialBank`` fixes every random draw of a batch of coherence blocks
(channels and training noise) from per-trial substreams of one seed, so any
two candidate designs evaluated on the same bank see identical randomness.
``SystemModel`` turns a bank into MSE oracles:

* per training protocol it caches the observations ``z`` and the LMMSE
  filters (``CsiState``);
* per RIS configuration it caches the estimated effective channels, their
  Gram matrices and residual-interference terms (``LinkState``), so each
  decoding order costs O(trials * M^2).
"""

from __future__ import annotations

from collections import OrderedDict
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .channel import (
    SteeringVectors, crandn, draw_direct_channel, draw_ris_cn_channel,
    draw_sensor_ris_channel,
)
from .csi import (
    CsiEstimate, TrainingProtocol, cascaded_prior_moments, lmmse_filter,
    observation_moments, training_noise_variance,
)
from .decoding import (
    EffectiveChannelMoments, MseTable, effective_channel_moments, fbl_per,
    no_sic_mse, outcome_probabilities, project_covariance, project_rows, uatf_terms,
)
from .scenario import ResourceBudget, Scenario

SIMULATED = "simulated"
GAUSSIAN = "gaussian"


def trial_generators(seed: int | np.random.SeedSequence, trials: int) -> list[np.random.Generator]:
    """Independent per-trial generators; trial ``t`` always gets the same
    stream for a given seed, whatever the batch size or worker count."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in root.spawn(trials)]


class TrialBank:
    """Frozen random draws for ``trials`` coherence blocks.

    Draw order inside each trial is fixed: direct-link draws, sensor-RIS
    draws, RIS-CN draws, then training noise for the largest possible number
    of periods (``L``) so that any group size reuses the same prefix.

    Parameters
    ----------
    observation : {"simulated", "gaussian"}
        ``"gaussian"`` replaces simulated training by draws of ``z`` from a
        Gaussian with the exact observation moments (the model assumed by the
        closed-form analysis).  The standard normal seeds are stored here and
        coloured later per protocol.
    """

    def __init__(self, scenario: Scenario, trials: int, seed: int = 0,
                 observation: str = SIMULATED):
        if trials < 1:
            raise ValueError("trials must be >= 1")
        if observation not in (SIMULATED, GAUSSIAN):
            raise ValueError(f"unknown observation mode {observation!r}")
        geo, radio = scenario.geometry, scenario.radio
        m, k, l = radio.n_sensors, radio.n_antennas, radio.n_elements
        self.trials = trials
        self.seed = seed
        self.observation = observation
        chi = np.empty((trials, m, k), complex)
        tau = np.empty((trials, m, l), complex)
        delta = np.empty((trials, k, l), complex)
        noise = np.empty((trials, l, m, k), complex)
        for t, rng in enumerate(trial_generators(seed, trials)):
            chi[t] = crandn(rng, m, k)
            tau[t] = crandn(rng, m, l)
            delta[t] = crandn(rng, k, l)
            noise[t] = crandn(rng, l, m, k)
        self.steering = SteeringVectors.from_geometry(geo, radio)
        self.q, _ = draw_direct_channel(geo, radio, None, chi=chi)
        self.g, _ = draw_sensor_ris_channel(geo, radio, None, tau=tau, steering=self.steering)
        self.G_R, _ = draw_ris_cn_channel(geo, radio, None, delta=delta, steering=self.steering)
        self.noise = noise  # (n, L, M, K), unit variance after pilot correlation

    def observations(self, protocol: TrainingProtocol, noise_std: np.ndarray) -> np.ndarray:
        """Training statistics ``z`` for every trial, shape (n, M, K*T).

        ``noise_std[i] = sqrt(sigma_w^2 / (N P_i))``.  Pilot correlation with
        orthogonal pilots leaves independent noise per sensor, so this equals
        ``simulate_training`` in distribution.
        """
        t = protocol.periods
        # G_C,i upsilon_t = G_R (g_i * upsilon_t)
        weighted = self.g[:, :, :, None] * protocol.upsilon[None, None, :, :]  # (n, M, L, T)
        signal = np.einsum("nkl,nmlt->nmtk", self.G_R, weighted)
        noise = self.noise[:, :t].transpose(0, 2, 1, 3) * noise_std[None, :, None, None]
        n, m = signal.shape[:2]
        return (signal + noise).reshape(n, m, -1)


@dataclass
class CsiState:
    """LMMSE filters and observations for one training protocol.

    Observations are drawn on first access; statistics-only consumers
    (the UatF bound) never pay for them.
    """

    protocol: TrainingProtocol
    budget: ResourceBudget
    estimates: list[CsiEstimate]
    observe: Callable[[], np.ndarray] = field(repr=False)

    @cached_property
    def z(self) -> np.ndarray:
        return self.observe()  # (n, M, K*T)

    @cached_property
    def z_by_sensor(self) -> np.ndarray:
        return np.ascontiguousarray(np.swapaxes(self.z, 0, 1))  # (M, n, KT)

    @cached_property
    def filters(self) -> np.ndarray:
        return np.array([e.A for e in self.estimates])  # (M, KL, KT)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([e.b for e in self.estimates])  # (M, KL)

    @cached_property
    def error_covs(self) -> np.ndarray:
        return np.array([e.error_cov for e in self.estimates])  # (M, KL, KL)


def _standard_error(values: np.ndarray) -> float:
    n = len(values)
    return float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def _prefix_sinr(signal, base, interference, seq) -> np.ndarray:
    """SINR along the (possibly partial) order ``seq``.

    ``interference[..., i, j] = P_j |f_i^H h_hat_j|^2``.  Every sensor not yet
    decoded when ``seq[s]`` is processed interferes with it.
    """
    seq = np.asarray(seq, int)
    m = interference.shape[-1]
    # pending[s, j]: sensor j not yet decoded once step s is done; summed
    # directly rather than as total minus decoded, which cancels badly at high SINR
    pending = np.ones((len(seq), m))
    pending[np.tril_indices(len(seq))[0], seq[np.tril_indices(len(seq))[1]]] = 0.0
    later = np.einsum("...sj,sj->...s", interference[..., seq, :], pending)
    return signal[..., seq] / (base[..., seq] + later)


class LinkState:
    """Effective-SINR quantities for one protocol and RIS configuration."""

    def __init__(self, model: "SystemModel", csi: CsiState, psi: np.ndarray):
        self.model = model
        self.csi = csi
        self.psi = psi
        k = model.scenario.radio.n_antennas
        power = model.tx_power
        psi_a = project_rows(csi.filters, psi, k)  # (M, K, KT)
        psi_b = project_rows(csi.offsets[..., None], psi, k)[..., 0]  # (M, K)
        h_hat = model.q + np.swapaxes(csi.z_by_sensor @ np.swapaxes(psi_a, -1, -2), 0, 1) + psi_b
        # residual interference kappa[i, j] = f_i^H B_j f_i with f = h_hat
        b_err = project_covariance(csi.error_covs, psi, k)  # (M, K, K)
        hb = h_hat.conj()[:, None, :, :] @ b_err[None, :, :, :]  # (n, j, i, K)
        kap = np.real(np.sum(hb * h_hat[:, None, :, :], axis=-1)).transpose(0, 2, 1)
        gram = h_hat.conj() @ np.swapaxes(h_hat, -1, -2)
        norm2 = np.real(np.einsum("nii->ni", gram))
        self.h_hat = h_hat
        self.kappa = kap
        self.signal = power * norm2**2
        self.base = model.noise_power * norm2 + kap @ power
        self.interference = np.abs(gram) ** 2 * power

    @property
    def budget(self) -> ResourceBudget:
        return self.csi.budget

    def sinr(self, sequence) -> np.ndarray:
        """(n, S) SINR along ``sequence``."""
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = _prefix_sinr(self.signal, self.base, self.interference, sequence)
        return np.nan_to_num(rho, nan=0.0, posinf=np.inf)

    def per(self, sequence) -> np.ndarray:
        b = self.budget
        return fbl_per(self.sinr(sequence), b.data_symbols, b.rate)

    def mse(self, sequence) -> np.ndarray:
        """Per-trial conditional MSE (n,) of decoding along ``sequence``.

        A partial sequence yields the truncated objective in which only the
        listed sensors are ever decoded.
        """
        phi = outcome_probabilities(self.per(sequence))
        return phi @ self.model.table.prefixes(sequence)

    def average(self, sequence) -> tuple[float, float]:
        values = self.mse(sequence)
        return float(np.mean(values)), _standard_error(values)

    def objective(self, sequence) -> float:
        return float(np.mean(self.mse(sequence)))

    def no_sic_mse(self, allowed_failures: int = 1) -> np.ndarray:
        inter = self.interference.sum(axis=-1) - np.einsum("nii->ni", self.interference)
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.nan_to_num(self.signal / (self.base + inter), nan=0.0)
        b = self.budget
        per = fbl_per(rho, b.data_symbols, b.rate)
        return no_sic_mse(per, self.model.table, allowed_failures)

    def rx_power(self) -> np.ndarray:
        """Trial-averaged ``P_i |f_i^H h_hat_i|^2`` per sensor."""
        return self.signal.mean(axis=0)


class UatfLinkState:
    """Statistics-only SINR quantities; deterministic given the protocol."""

    def __init__(self, model: "SystemModel", csi: CsiState, psi: np.ndarray,
                 bound_factor: float = 2.0):
        self.model = model
        self.csi = csi
        self.psi = psi
        self.moments: EffectiveChannelMoments = effective_channel_moments(
            model.prior, csi.estimates, csi.protocol.selection(model.scenario.radio.n_antennas),
            psi, model.direct_gain)
        first, second = uatf_terms(self.moments, bound_factor)
        power = model.tx_power
        variance = np.maximum(second - np.abs(first) ** 2, 0.0)
        filt = np.real(np.einsum("ikk->i", self.moments.est_cov)) + np.sum(
            np.abs(self.moments.est_mean) ** 2, axis=1)
        self.signal = power * np.abs(np.diag(first)) ** 2
        self._second = second * power
        self._variance = variance * power
        self._noise = model.noise_power * filt

    @property
    def budget(self) -> ResourceBudget:
        return self.csi.budget

    def sinr(self, sequence) -> np.ndarray:
        seq = np.asarray(sequence, int)
        m = len(self.signal)
        placed = np.zeros(m, bool)
        out = np.empty(len(seq))
        for s, i in enumerate(seq):
            placed[i] = True
            interference = np.where(placed, self._variance[i], self._second[i]).sum()
            den = self._noise[i] + interference
            out[s] = self.signal[i] / den if den > 0 else np.inf
        return out

    def per(self, sequence) -> np.ndarray:
        b = self.budget
        return fbl_per(self.sinr(sequence), b.data_symbols, b.rate)

    def mse(self, sequence) -> np.ndarray:
        phi = outcome_probabilities(self.per(sequence))
        return np.atleast_1d(phi @ self.model.table.prefixes(sequence))

    def average(self, sequence) -> tuple[float, float]:
        return float(self.mse(sequence)[0]), 0.0

    def objective(self, sequence) -> float:
        return float(self.mse(sequence)[0])

    def rx_power(self) -> np.ndarray:
        return self.signal


class SystemModel:
    """MSE oracles for one scenario on one frozen trial bank."""

    def __init__(self, scenario: Scenario, bank: TrialBank, cache_size: int = 8):
        self.scenario = scenario
        self.bank = bank
        radio = scenario.radio
        self.tx_power = radio.tx_power
        self.noise_power = radio.noise_power
        self.prior = cascaded_prior_moments(scenario.geometry, radio, bank.steering)
        self.table = MseTable(scenario.stats.cov, scenario.stats.noise_cov)
        self.direct_gain = (scenario.geometry.d ** (-radio.pathloss_direct)
                            if radio.direct_link else np.zeros(radio.n_sensors))
        self.q = bank.q
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    def budget_for(self, protocol: TrainingProtocol) -> ResourceBudget:
        b = self.scenario.budget
        return ResourceBudget(b.pilot_length, protocol.group_size, b.n_elements,
                              b.coherence_symbols, b.spectral_efficiency)

    def csi(self, protocol: TrainingProtocol) -> CsiState:
        key = (protocol.kind, protocol.group_size, protocol.upsilon.tobytes())
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        budget = self.budget_for(protocol)
        radio = self.scenario.radio
        noise_var = training_noise_variance(radio, budget.pilot_length)
        S = protocol.selection(radio.n_antennas)
        estimates = [lmmse_filter(self.prior.mean[i], self.prior.cov[i], S, float(noise_var[i]))
                     for i in range(radio.n_sensors)]

        def observe():
            if self.bank.observation == GAUSSIAN:
                return self._gaussian_observations(protocol, noise_var)
            with np.errstate(invalid="ignore"):
                z = self.bank.observations(protocol, np.sqrt(noise_var))
            return np.nan_to_num(z, nan=0.0, posinf=0.0, neginf=0.0)  # P_i = 0: filter is zero anyway

        state = CsiState(protocol, budget, estimates, observe)
        self._cache[key] = state
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return state

    def _gaussian_observations(self, protocol, noise_var) -> np.ndarray:
        stats = observation_moments(protocol, self.prior, noise_var)
        cov = stats.joint_cov
        w, v = np.linalg.eigh(0.5 * (cov + cov.conj().T))
        root = v * np.sqrt(np.clip(w, 0.0, None))
        dim = cov.shape[0]
        n = self.bank.trials
        seeds = self.bank.noise.reshape(n, -1)[:, :dim]
        z = stats.joint_mean + seeds @ root.T
        return z.reshape(n, *stats.mean.shape)

    def link(self, protocol: TrainingProtocol, psi: np.ndarray) -> LinkState:
        return LinkState(self, self.csi(protocol), np.asarray(psi, complex))

    def uatf(self, protocol: TrainingProtocol, psi: np.ndarray, bound_factor: float = 2.0) -> UatfLinkState:
        return UatfLinkState(self, self.csi(protocol), np.asarray(psi, complex), bound_factor)
