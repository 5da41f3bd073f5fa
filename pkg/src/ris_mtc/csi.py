"""Training phase: RIS training matrices, pilot correlation, and LMMSE
estimation of the cascaded sensor-RIS-CN channels.

Vectorization is column-major throughout: for a ``K x L`` cascaded channel
entry ``(k, l)`` sits at index ``l*K + k`` of ``g_C``, and the ``K x T``
statistic ``Z_i`` is stored as ``z_i[t*K + k]``.  With that convention the
training operator is ``S = kron(Upsilon^T, I_K)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channel import ChannelRealization, SteeringVectors, crandn
from .scenario import Geometry, RadioConfig

PINV_RCOND = 1e-12

BINARY = "binary"
NONBINARY = "nonbinary"


@dataclass(frozen=True)
class TrainingProtocol:
    kind: str  # "binary" or "nonbinary"
    upsilon: np.ndarray  # (L, T)
    group_size: int

    @property
    def n_elements(self) -> int:
        return self.upsilon.shape[0]

    @property
    def periods(self) -> int:
        return self.upsilon.shape[1]

    def selection(self, n_antennas: int) -> np.ndarray:
        """``S = kron(Upsilon^T, I_K)``, shape (K*T, K*L)."""
        return np.kron(self.upsilon.T, np.eye(n_antennas))

    def with_upsilon(self, upsilon: np.ndarray) -> "TrainingProtocol":
        return TrainingProtocol(self.kind, np.asarray(upsilon, complex), self.group_size)


def build_training_matrix(kind: str, n_elements: int, group_size: int = 1) -> TrainingProtocol:
    """RIS training matrix for ``T = L/G`` periods.

    Binary: ``I_T kron 1_G`` (on/off groups of adjacent elements).
    Non-binary: unit-modulus DFT phases; for ``G > 1`` the ``T x T`` DFT row of
    each group is replicated over its ``G`` elements.
    """
    if group_size < 1 or n_elements % group_size:
        raise ValueError(f"group size must divide L (G={group_size}, L={n_elements})")
    t = n_elements // group_size
    group_of = np.arange(n_elements) // group_size
    if kind == BINARY:
        ups = np.kron(np.eye(t), np.ones((group_size, 1))).astype(complex)
    elif kind == NONBINARY:
        periods = np.arange(t)
        ups = np.exp(-2j * np.pi * np.outer(group_of, periods) / t)
    else:
        raise ValueError(f"unknown training protocol {kind!r}")
    return TrainingProtocol(kind, ups, group_size)


@dataclass(frozen=True)
class PilotBook:
    pilots: np.ndarray  # (M, N), |p_im|^2 = P_i

    @classmethod
    def dft(cls, tx_power: np.ndarray, length: int | None = None) -> "PilotBook":
        """Rows of an ``N x N`` DFT matrix scaled to amplitude ``sqrt(P_i)``."""
        tx_power = np.asarray(tx_power, float)
        m = len(tx_power)
        n = m if length is None else length
        if n < m:
            raise ValueError(f"pilot length {n} cannot keep {m} pilots orthogonal")
        rows = np.exp(-2j * np.pi * np.outer(np.arange(m), np.arange(n)) / n)
        return cls(np.sqrt(tx_power)[:, None] * rows)

    @property
    def length(self) -> int:
        return self.pilots.shape[1]

    def gram(self) -> np.ndarray:
        return self.pilots.conj() @ self.pilots.T


def training_noise_variance(radio: RadioConfig, pilot_length: int) -> np.ndarray:
    """Per-entry variance ``sigma_w^2 / (N P_i)`` left after pilot correlation."""
    with np.errstate(divide="ignore"):
        return radio.noise_power / (pilot_length * radio.tx_power)


def correlate_pilots(received: np.ndarray, pilots: PilotBook) -> np.ndarray:
    """``Y_t p_i / ||p_i||^2`` for every sensor; ``received`` is (..., K, N),
    result is (..., M, K)."""
    p = pilots.pilots
    return np.einsum("...kn,mn->...mk", received, p) / np.sum(np.abs(p) ** 2, axis=1)[:, None]


def simulate_training(channels: ChannelRealization, protocol: TrainingProtocol,
                      pilots: PilotBook, noise_power: float,
                      rng: np.random.Generator | None = None,
                      noise: np.ndarray | None = None) -> np.ndarray:
    """Sufficient statistics ``z_i`` (M, K*T) of one training phase.

    ``Y_t = sum_i G_C,i upsilon_t p_i^H + W_t`` with the direct links already
    removed; ``noise`` may supply the (T, K, N) normalized draws of
    ``W_t / sigma_w`` explicitly.
    """
    cascaded = channels.cascaded  # (M, K, L)
    m, k, _ = cascaded.shape
    t = protocol.periods
    n = pilots.length
    if noise is None:
        noise = crandn(rng, t, k, n)
    noise = noise[:t]
    # reflected signal per sensor and period: (T, M, K)
    reflected = np.einsum("mkl,lt->tmk", cascaded, protocol.upsilon)
    received = np.einsum("tmk,mn->tkn", reflected, pilots.pilots.conj()) + np.sqrt(noise_power) * noise
    z = correlate_pilots(received, pilots)  # (T, M, K)
    return z.transpose(1, 0, 2).reshape(m, t * k)


@dataclass(frozen=True)
class CascadedPrior:
    """Mean and covariance of ``g_C,i`` under the Rician model.

    ``cov[i] = c_i^2 ((1+F1) I_KL + F2 (I_L kron u u^H))`` with
    ``c_i^2 = (delta_i delta_R)^(-alpha2) / ((1+F1)(1+F2))``.
    """

    mean: np.ndarray  # (M, K*L)
    cov: np.ndarray  # (M, K*L, K*L)
    scale: np.ndarray  # (M,) c_i
    steering: SteeringVectors
    rician_sensor_ris: float
    rician_ris_cn: float

    @property
    def block(self) -> np.ndarray:
        """(M, K, K) factor ``B_i`` with ``cov[i] = I_L kron B_i``."""
        u = self.steering.cn_arrival
        k = len(u)
        f1, f2 = self.rician_sensor_ris, self.rician_ris_cn
        base = (1.0 + f1) * np.eye(k) + f2 * np.outer(u, u.conj())
        return self.scale[:, None, None] ** 2 * base

    def cross_cov(self, i: int, j: int) -> np.ndarray:
        """``E[(g_C,i - mu_i)(g_C,j - mu_j)^H]``; only the shared RIS-CN
        scattering couples different sensors."""
        if i == j:
            return self.cov[i]
        v = self.steering.sensor_ris
        k = len(self.steering.cn_arrival)
        d = self.rician_sensor_ris * self.scale[i] * self.scale[j] * v[i] * v[j].conj()
        return np.kron(np.diag(d), np.eye(k))


def cascaded_prior_moments(geometry: Geometry, radio: RadioConfig,
                           steering: SteeringVectors | None = None) -> CascadedPrior:
    sv = steering or SteeringVectors.from_geometry(geometry, radio)
    f1, f2 = radio.rician_sensor_ris, radio.rician_ris_cn
    k, l = radio.n_antennas, radio.n_elements
    c = np.sqrt((geometry.delta * geometry.delta_ris) ** (-radio.pathloss_ris)
                / ((1.0 + f1) * (1.0 + f2)))
    los = np.outer(sv.cn_arrival, sv.ris_departure.conj())  # K x L
    # vec(u v_R^H diag(v_i)) column-major
    mean = np.array([c_i * np.sqrt(f1 * f2) * (los * v_i[None, :]).reshape(-1, order="F")
                     for c_i, v_i in zip(c, sv.sensor_ris)])
    base = (1.0 + f1) * np.eye(k * l) + f2 * np.kron(np.eye(l), np.outer(sv.cn_arrival, sv.cn_arrival.conj()))
    cov = c[:, None, None] ** 2 * base[None, :, :]
    return CascadedPrior(mean, cov, c, sv, f1, f2)


@dataclass(frozen=True)
class ObservationStatistics:
    mean: np.ndarray  # (M, K*T)
    blocks: np.ndarray  # (M, M, K*T, K*T); blocks[i, j] = C_{z_i, z_j}

    @property
    def joint_mean(self) -> np.ndarray:
        return self.mean.reshape(-1)

    @property
    def joint_cov(self) -> np.ndarray:
        m, _, n, _ = self.blocks.shape
        return self.blocks.transpose(0, 2, 1, 3).reshape(m * n, m * n)


def observation_moments(protocol: TrainingProtocol, prior: CascadedPrior,
                        noise_var: np.ndarray) -> ObservationStatistics:
    """Exact first and second moments of the stacked training statistics.

    ``noise_var[i] = sigma_w^2 / (N P_i)`` lands on the diagonal blocks only
    (orthogonal pilots keep the post-correlation noise independent).
    """
    m = prior.mean.shape[0]
    k = len(prior.steering.cn_arrival)
    S = protocol.selection(k)
    n = S.shape[0]
    mean = prior.mean @ S.T
    blocks = np.empty((m, m, n, n), complex)
    for i in range(m):
        for j in range(i, m):
            blk = S @ prior.cross_cov(i, j) @ S.conj().T
            if i == j:
                blk = blk + noise_var[i] * np.eye(n)
            blocks[i, j] = blk
            blocks[j, i] = blk.conj().T
    return ObservationStatistics(mean, blocks)


@dataclass(frozen=True)
class CsiEstimate:
    """LMMSE estimate ``g_hat = A z + b`` with error covariance."""

    estimate: np.ndarray | None  # (K*L,) or None when only the filter was built
    A: np.ndarray  # (K*L, K*T)
    b: np.ndarray  # (K*L,)
    error_cov: np.ndarray  # (K*L, K*L)
    prior_mean: np.ndarray
    prior_cov: np.ndarray

    @property
    def estimate_cov(self) -> np.ndarray:
        """Covariance of ``g_hat`` itself, ``C_g - C_err``."""
        return self.prior_cov - self.error_cov

    def apply(self, z: np.ndarray) -> np.ndarray:
        return z @ self.A.T + self.b


def lmmse_filter(prior_mean: np.ndarray, prior_cov: np.ndarray, S: np.ndarray,
                 noise_var: float) -> CsiEstimate:
    if not np.isfinite(noise_var):
        # no usable training energy: the estimate falls back to the prior
        zero = np.zeros((prior_cov.shape[0], S.shape[0]), complex)
        return CsiEstimate(None, zero, prior_mean.copy(), prior_cov.copy(), prior_mean, prior_cov)
    cs = prior_cov @ S.conj().T  # C S^H
    system = S @ cs + noise_var * np.eye(S.shape[0])
    system = 0.5 * (system + system.conj().T)
    A = None
    if noise_var > 0:
        try:
            A = scipy.linalg.solve(system, cs.conj().T, assume_a="pos").conj().T
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            A = None
    if A is None:
        A = cs @ np.linalg.pinv(system, rcond=PINV_RCOND, hermitian=True)
    b = prior_mean - A @ (S @ prior_mean)
    err = prior_cov - A @ S @ prior_cov
    err = 0.5 * (err + err.conj().T)
    return CsiEstimate(None, A, b, err, prior_mean, prior_cov)


def lmmse_estimate(z: np.ndarray, prior: CascadedPrior, protocol: TrainingProtocol,
                   noise_var: np.ndarray) -> list[CsiEstimate]:
    """Per-sensor LMMSE estimates from the stacked statistics ``z`` (M, K*T)."""
    k = len(prior.steering.cn_arrival)
    S = protocol.selection(k)
    out = []
    for i in range(prior.mean.shape[0]):
        filt = lmmse_filter(prior.mean[i], prior.cov[i], S, float(noise_var[i]))
        out.append(CsiEstimate(filt.apply(z[i]), filt.A, filt.b, filt.error_cov,
                               filt.prior_mean, filt.prior_cov))
    return out


def unvec(g: np.ndarray, n_antennas: int) -> np.ndarray:
    """Inverse of the column-major vectorization: (..., K*L) -> (..., K, L)."""
    shape = g.shape[:-1] + (g.shape[-1] // n_antennas, n_antennas)
    return np.swapaxes(g.reshape(shape), -1, -2)
