"""SIC decoding analytics.

Effective SINR under imperfect CSI, finite-blocklength packet error rates,
the outcome tree of a decoding order and the parameter-estimation MSE it
induces, plus the statistics-only (use-and-then-forget) SINR.

Orders are handled in two equivalent forms.  ``steps[i]`` is the (0-based)
step at which sensor ``i`` is decoded; ``sequence[s]`` is the sensor decoded
at step ``s``.  ``DecodingOrder`` converts between them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.linalg
from scipy.special import erfc

LOG2E = np.log2(np.e)


# --------------------------------------------------------------------------
# orders


@dataclass(frozen=True)
class DecodingOrder:
    sequence: tuple[int, ...]  # sensor decoded at each step, 0-based

    def __post_init__(self):
        seq = tuple(int(s) for s in self.sequence)
        if sorted(seq) != list(range(len(seq))):
            raise ValueError(f"not a permutation: {seq}")
        object.__setattr__(self, "sequence", seq)

    @classmethod
    def from_steps(cls, steps, one_based: bool = False) -> "DecodingOrder":
        """Build from per-sensor steps ``o`` (``o[i]`` = step of sensor i)."""
        steps = np.asarray(steps, int) - (1 if one_based else 0)
        seq = np.empty(len(steps), int)
        if sorted(steps.tolist()) != list(range(len(steps))):
            raise ValueError(f"not a permutation: {steps.tolist()}")
        seq[steps] = np.arange(len(steps))
        return cls(tuple(seq))

    @classmethod
    def identity(cls, m: int) -> "DecodingOrder":
        return cls(tuple(range(m)))

    def steps(self, one_based: bool = False) -> tuple[int, ...]:
        out = np.empty(len(self.sequence), int)
        out[list(self.sequence)] = np.arange(len(self.sequence))
        return tuple((out + (1 if one_based else 0)).tolist())

    def __len__(self) -> int:
        return len(self.sequence)


# --------------------------------------------------------------------------
# finite-blocklength error model


def q_function(x):
    """Gaussian tail ``Q(x) = erfc(x / sqrt 2) / 2``."""
    return 0.5 * erfc(np.asarray(x, float) / np.sqrt(2.0))


def capacity(rho):
    return np.log2(1.0 + np.asarray(rho, float))


def dispersion(rho):
    """Channel dispersion in bits^2, ``(1 - (1+rho)^-2) log2(e)^2``."""
    rho = np.asarray(rho, float)
    return (1.0 - (1.0 + rho) ** -2) * LOG2E**2


def fbl_per(rho, n_symbols: int, rate: float):
    """Normal-approximation packet error rate.

    Parameters
    ----------
    rho : array_like
        Linear SINR, any shape.  ``rho <= 0`` maps to PER 1.
    n_symbols : int
        Blocklength ``n_s``.
    rate : float
        Coding rate in bits per symbol.

    Returns
    -------
    ndarray
        PER in ``[0, 1]`` with the shape of ``rho``.
    """
    rho = np.asarray(rho, float)
    positive = rho > 0
    safe = np.where(positive, rho, 1.0)
    with np.errstate(divide="ignore"):  # dispersion underflows for subnormal rho; Q(-inf) = 1
        arg = np.sqrt(n_symbols) * (capacity(safe) - rate) / np.sqrt(dispersion(safe))
    per = np.where(positive, q_function(arg), 1.0)
    return np.clip(per, 0.0, 1.0)


def per_bounds(pers) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper bounds on the unconditional error of each step.

    Failing step ``s`` happens if its own packet fails or any earlier one did:
    the union is bounded below by the larger event (Frechet) and above by the
    sum (Boole), applied recursively along the order.
    """
    pers = np.asarray(pers, float)
    lower = np.maximum.accumulate(pers)
    upper = np.empty_like(pers)
    acc = 0.0
    for s, p in enumerate(pers):
        acc = min(1.0, p + acc)
        upper[s] = acc
    return lower, upper


def outcome_probabilities(pers) -> np.ndarray:
    """Probability that exactly the first ``s`` ordered packets decode.

    Parameters
    ----------
    pers : array_like, shape (..., S)
        Conditional PERs along the order.  Leading axes are batch axes.

    Returns
    -------
    ndarray, shape (..., S + 1)
        ``phi[..., s]`` for ``s = 0..S``; a missing step ``S+1`` counts as a
        certain failure, so the last entry is the all-success probability.
    """
    pers = np.asarray(pers, float)
    survive = np.cumprod(1.0 - pers, axis=-1)
    ones = np.ones(pers.shape[:-1] + (1,))
    before = np.concatenate([ones, survive], axis=-1)  # prob. first s all succeed
    fail_next = np.concatenate([pers, ones], axis=-1)
    return before * fail_next


# --------------------------------------------------------------------------
# parameter estimation MSE


def _solve_psd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a^-1 b`` for PSD ``a``; singular or ill-conditioned ``a`` goes through the pseudo-inverse."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            return scipy.linalg.solve(a, b, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        return np.linalg.pinv(a, rcond=1e-12, hermitian=True) @ b


def conditional_mse(decoded, cov_theta: np.ndarray, cov_eta: np.ndarray) -> float:
    """LMMSE error of the parameters given the measurements of ``decoded``.

    ``decoded`` is any iterable of sensor indices; the empty set returns the
    prior error ``tr(C_theta)``.
    """
    idx = np.asarray(sorted(set(int(i) for i in decoded)), int)
    total = float(np.trace(cov_theta))
    if idx.size == 0:
        return total
    cross = cov_theta[:, idx]  # C_theta V^T
    inner = cov_theta[np.ix_(idx, idx)] + cov_eta[np.ix_(idx, idx)]
    gain = _solve_psd(inner, cross.T)
    return total - float(np.real(np.einsum("ij,ji->", cross, gain)))


class MseTable:
    """Memoized ``conditional_mse`` keyed by decoded set."""

    def __init__(self, cov_theta: np.ndarray, cov_eta: np.ndarray):
        self.cov_theta = np.asarray(cov_theta, float)
        self.cov_eta = np.asarray(cov_eta, float)
        self._cache: dict[frozenset, float] = {}

    @property
    def prior(self) -> float:
        return float(np.trace(self.cov_theta))

    def __call__(self, decoded) -> float:
        key = frozenset(int(i) for i in decoded)
        if key not in self._cache:
            self._cache[key] = conditional_mse(key, self.cov_theta, self.cov_eta)
        return self._cache[key]

    def prefixes(self, sequence) -> np.ndarray:
        """MSE after decoding the first ``s`` entries of ``sequence``, s = 0..S."""
        seq = list(sequence)
        return np.array([self(seq[:s]) for s in range(len(seq) + 1)])


def conditional_total_mse(phi: np.ndarray, prefix_mse: np.ndarray) -> np.ndarray:
    """``sum_s phi_s eps_s`` over the outcome tree (batch over leading axes)."""
    return np.asarray(phi) @ np.asarray(prefix_mse)


# --------------------------------------------------------------------------
# effective SINR with imperfect CSI


def project_covariance(cov: np.ndarray, psi: np.ndarray, n_antennas: int) -> np.ndarray:
    """Covariance of ``unvec(g) psi`` for ``g`` with covariance ``cov``.

    ``cov`` may carry leading batch axes, shape (..., K*L, K*L); the result
    is (..., K, K) with entries ``sum_{l,l'} psi_l cov[lK+k, l'K+k'] psi_l'^*``.
    """
    k = n_antennas
    l = cov.shape[-1] // k
    rows = project_rows(cov, psi, k)  # (..., K, KL)
    rows = rows.reshape(rows.shape[:-1] + (l, k))
    return np.swapaxes(rows, -1, -2) @ psi.conj()  # sum over l of rows[a, l, b] psi_l^*


def project_mean(mean: np.ndarray, psi: np.ndarray, n_antennas: int) -> np.ndarray:
    """``unvec(mean) psi`` for column-major vectorized means (..., K*L)."""
    l = mean.shape[-1] // n_antennas
    return np.einsum("...lk,l->...k", mean.reshape(mean.shape[:-1] + (l, n_antennas)), psi)


def kappa(error_cov: np.ndarray, psi: np.ndarray, f: np.ndarray) -> float:
    """Residual interference ``E|f^H G_err psi|^2`` of one estimation error.

    Equals ``f^H B f`` with ``B = project_covariance(error_cov, psi)``.
    """
    f = np.asarray(f)
    b = project_covariance(error_cov, np.asarray(psi), len(f))
    return float(np.real(f.conj() @ b @ f))


@dataclass
class SinrReport:
    """Per-sensor SINR along one decoding order."""

    order: DecodingOrder
    sinr: np.ndarray  # (M,) by sensor index
    kappa: np.ndarray | None = None  # (M, M), kappa[i, j]
    per: np.ndarray | None = None  # (M,) by sensor index
    details: dict = field(default_factory=dict)

    def along_order(self, values: np.ndarray | None = None) -> np.ndarray:
        values = self.sinr if values is None else values
        return np.asarray(values)[list(self.order.sequence)]


def effective_sinr(order: DecodingOrder, filters: np.ndarray, h_hat: np.ndarray,
                   error_covs: np.ndarray, psi: np.ndarray, tx_power: np.ndarray,
                   noise_power: float) -> SinrReport:
    """Conditional SINR of every sensor for one observation.

    The residual estimation error of every sensor (decoded or not) is
    treated as Gaussian interference through ``kappa``; sensors decoded later
    also interfere through their estimated channels.

    Parameters
    ----------
    filters, h_hat : ndarray, shape (M, K)
    error_covs : ndarray, shape (M, K*L, K*L)
        Error covariance of each cascaded channel estimate.
    """
    f = np.asarray(filters)
    if np.any(np.linalg.norm(f, axis=1) == 0):
        raise ValueError("zero-norm spatial filter")
    m, k = f.shape
    b = project_covariance(error_covs, psi, k)  # (M, K, K)
    kap = np.real(np.einsum("ia,jab,ib->ij", f.conj(), b, f))
    gram = f.conj() @ h_hat.T  # gram[i, j] = f_i^H h_hat_j
    steps = np.asarray(order.steps())
    later = steps[None, :] > steps[:, None]
    signal = tx_power * np.abs(np.diag(gram)) ** 2
    interference = (later * tx_power[None, :] * np.abs(gram) ** 2).sum(axis=1)
    noise = noise_power * np.sum(np.abs(f) ** 2, axis=1)
    sinr = signal / (noise + kap @ tx_power + interference)
    return SinrReport(order, sinr, kap)


# --------------------------------------------------------------------------
# statistics-only (use-and-then-forget) SINR


@dataclass(frozen=True)
class EffectiveChannelMoments:
    """First and second moments of the true and estimated effective channels.

    ``cross[j, i] = Cov(h_j, h_hat_i)``; for LMMSE estimates ``cross[i, i]``
    equals ``est_cov[i]`` and ``est_mean`` equals ``mean``.
    """

    mean: np.ndarray  # (M, K)
    cov: np.ndarray  # (M, K, K)
    est_mean: np.ndarray  # (M, K)
    est_cov: np.ndarray  # (M, K, K)
    cross: np.ndarray  # (M, M, K, K)


def project_rows(x: np.ndarray, psi: np.ndarray, n_antennas: int) -> np.ndarray:
    """``(psi^T kron I_K) x`` for ``x`` of shape (..., K*L, n)."""
    l = x.shape[-2] // n_antennas
    lead = x.shape[:-2]
    x3 = x.reshape(lead + (l, n_antennas * x.shape[-1]))
    return (psi @ x3).reshape(lead + (n_antennas, x.shape[-1]))


def effective_channel_moments(prior, estimates, selection: np.ndarray, psi: np.ndarray,
                              direct_gain: np.ndarray) -> EffectiveChannelMoments:
    """Moments of ``h_i`` and ``h_hat_i`` for MRC with LMMSE cascaded CSI.

    Parameters
    ----------
    prior : CascadedPrior
    estimates : sequence of CsiEstimate
        Filters of every sensor (``A`` is what matters).
    selection : ndarray
        Training operator ``S``.
    direct_gain : ndarray, shape (M,)
        Direct-link variance per antenna, ``d_i^-alpha1`` (0 if blocked).
    """
    k = len(prior.steering.cn_arrival)
    m = prior.mean.shape[0]
    eye = np.eye(k)
    mean = project_mean(prior.mean, psi, k)
    psi_c = project_rows(prior.cov, psi, k)  # (M, K, KL) = Psi C
    cov = direct_gain[:, None, None] * eye + project_rows(np.swapaxes(psi_c, -1, -2).conj(), psi, k)
    psi_a = np.array([project_rows(e.A, psi, k) for e in estimates])  # (M, K, KT)
    # Cov(g_hat) = A S C, so Psi A S C Psi^H = (Psi A) S (Psi C)^H
    est_cov = direct_gain[:, None, None] * eye + np.einsum(
        "mat,tc,mbc->mab", psi_a, selection, psi_c.conj())
    # C_ji = diag(d_ji) kron I_K for j != i and S = Upsilon^T kron I_K, so
    # Psi C_ji S^H = r_ji^T kron I_K with r_ji = Upsilon^H (psi * d_ji)
    upsilon = selection[::k, ::k].T  # (L, T)
    v = prior.steering.sensor_ris
    d = prior.rician_sensor_ris * np.einsum("j,i,jl,il->jil", prior.scale, prior.scale, v, v.conj())
    r = np.einsum("l,jil,lt->jit", psi, d, upsilon.conj())
    pa = psi_a.reshape(m, k, -1, k)  # column t*K + a of Psi A_i
    cross = np.einsum("jit,ibta->jiab", r, pa.conj())
    idx = np.arange(m)
    cross[idx, idx] = est_cov
    return EffectiveChannelMoments(mean, cov, mean.copy(), est_cov, cross)


def uatf_terms(moments: EffectiveChannelMoments, bound_factor: float = 2.0):
    """``(first, second)`` with ``first[i, j] = E[h_hat_i^H h_j]`` and
    ``second[i, j]`` the (bounded) ``E|h_hat_i^H h_j|^2``.

    The bracket is the circular-Gaussian expansion of the second moment;
    ``bound_factor = 2`` applies the ``|a+b|^2 <= 2(|a|^2+|b|^2)`` worst case.
    """
    mu, C = moments.mean, moments.cov
    mu_hat, C_hat = moments.est_mean, moments.est_cov
    tr_x = np.einsum("jikk->ij", moments.cross)  # tr Cov(h_j, h_hat_i)
    d = mu_hat.conj() @ mu.T  # d[i, j] = mu_hat_i^H mu_j
    first = tr_x + d
    quad = np.real(np.einsum("iab,jba->ij", C_hat, C))  # tr(C_hat_i C_j)
    mu_c_mu = np.real(np.einsum("ja,iab,jb->ij", mu.conj(), C_hat, mu))
    muh_c_muh = np.real(np.einsum("ia,jab,ib->ij", mu_hat.conj(), C, mu_hat))
    second = (quad + np.abs(tr_x) ** 2 + np.abs(d) ** 2 + 2 * np.real(tr_x * d.conj())
              + mu_c_mu + muh_c_muh)
    return first, bound_factor * second


def uatf_sinr(order: DecodingOrder, moments: EffectiveChannelMoments, tx_power: np.ndarray,
              noise_power: float, bound_factor: float = 2.0) -> SinrReport:
    """SINR that uses only channel statistics (no conditioning on ``z``).

    Sensors decoded before ``i`` (and ``i`` itself) leave only their
    fluctuation around the mean as interference; later sensors contribute
    their full (bounded) second moment.
    """
    first, second = uatf_terms(moments, bound_factor)
    steps = np.asarray(order.steps())
    later = steps[None, :] > steps[:, None]
    variance = np.maximum(second - np.abs(first) ** 2, 0.0)
    interference = np.where(later, second, variance) @ tx_power
    filt_power = np.real(np.einsum("ikk->i", moments.est_cov)) + np.sum(np.abs(moments.est_mean) ** 2, axis=1)
    signal = tx_power * np.abs(np.diag(first)) ** 2
    sinr = signal / (noise_power * filt_power + interference)
    return SinrReport(order, sinr, details={"first": first, "second": second})


# --------------------------------------------------------------------------
# decoding without cancellation


def no_sic_outcomes(pers: np.ndarray, allowed_failures: int = 1):
    """Outcome distribution when every packet is decoded independently.

    Yields ``(probability, decoded_set)`` for each failure pattern with at
    most ``allowed_failures`` losses; the remaining mass is a complete
    failure.  ``pers`` may carry a leading batch axis, shape (..., M).
    """
    pers = np.asarray(pers, float)
    m = pers.shape[-1]
    ok = 1.0 - pers
    out = []
    for n_fail in range(min(allowed_failures, m) + 1):
        for failed in combinations(range(m), n_fail):
            mask = np.zeros(m, bool)
            mask[list(failed)] = True
            prob = np.prod(np.where(mask, pers, ok), axis=-1)
            out.append((prob, tuple(i for i in range(m) if not mask[i])))
    return out


def no_sic_mse(pers: np.ndarray, table: MseTable, allowed_failures: int = 1) -> np.ndarray:
    """Expected parameter MSE without SIC (batch over leading axes)."""
    total = 0.0
    covered = 0.0
    for prob, decoded in no_sic_outcomes(pers, allowed_failures):
        total = total + prob * table(decoded)
        covered = covered + prob
    return total + (1.0 - covered) * table.prior
