"""Channel draws for one coherence block.

Sensor-CN links are Rayleigh with power-law path loss; sensor-RIS and RIS-CN
links are Rician with a line-of-sight term built from array responses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Geometry, RadioConfig


def crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples, CN(0, 1)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _linear_response(n: int, sine: float, spacing: float) -> np.ndarray:
    return np.exp(-2j * np.pi * spacing * np.arange(n) * sine)


def steering_vector(n: int, angle: float, spacing: float = 0.5) -> np.ndarray:
    """Uniform linear array response, entry m = exp(-j 2 pi s m sin(angle))."""
    return _linear_response(n, np.sin(angle), spacing)


def planar_steering_vector(shape: tuple[int, int], azimuth: float, elevation: float,
                           spacing: float = 0.5) -> np.ndarray:
    """Response of an ``nx x ny`` planar array in the horizontal plane.

    Separable product of two linear responses driven by the x and y
    direction cosines; ordering is x-major (``kron(a_x, a_y)``).
    """
    nx, ny = shape
    cx = np.cos(elevation) * np.cos(azimuth)
    cy = np.cos(elevation) * np.sin(azimuth)
    return np.kron(_linear_response(nx, cx, spacing), _linear_response(ny, cy, spacing))


@dataclass(frozen=True)
class SteeringVectors:
    """Line-of-sight array responses for one geometry."""

    sensor_ris: np.ndarray  # (M, L) v(theta_i)
    ris_departure: np.ndarray  # (L,) v(theta_R2)
    cn_arrival: np.ndarray  # (K,) u(theta_R1)

    @classmethod
    def from_geometry(cls, geometry: Geometry, radio: RadioConfig) -> "SteeringVectors":
        shape = radio.ris_shape
        s = radio.element_spacing
        v_i = np.array([planar_steering_vector(shape, az, el, s) for az, el in geometry.sensor_aoa])
        v_r = planar_steering_vector(shape, *geometry.ris_aod, s)
        u_r = steering_vector(radio.n_antennas, geometry.cn_aoa, s)
        return cls(v_i, v_r, u_r)


@dataclass(frozen=True)
class ChannelRealization:
    q: np.ndarray  # (M, K) direct channels
    g: np.ndarray  # (M, L) sensor-RIS channels
    G_R: np.ndarray  # (K, L) RIS-CN channel
    chi: np.ndarray  # (M, K) NLoS draws behind q
    tau: np.ndarray  # (M, L) NLoS draws behind g
    Delta: np.ndarray  # (K, L) NLoS draws behind G_R

    @property
    def cascaded(self) -> np.ndarray:
        """``G_C,i = G_R diag(g_i)`` stacked as (M, K, L)."""
        return self.G_R[None, :, :] * self.g[:, None, :]

    def effective(self, psi: np.ndarray) -> np.ndarray:
        """Effective channels ``h_i = q_i + G_C,i psi`` as (M, K)."""
        return self.q + (self.G_R[None, :, :] * (self.g * psi)[:, None, :]).sum(axis=-1)


def direct_scale(geometry: Geometry, radio: RadioConfig) -> np.ndarray:
    if not radio.direct_link:
        return np.zeros(geometry.n_sensors)
    return geometry.d ** (-radio.pathloss_direct / 2.0)


def draw_direct_channel(geometry: Geometry, radio: RadioConfig, rng: np.random.Generator,
                        chi: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(q, chi)`` with ``q_i = d_i^(-alpha1/2) chi_i``."""
    if chi is None:
        chi = crandn(rng, geometry.n_sensors, radio.n_antennas)
    return direct_scale(geometry, radio)[:, None] * chi, chi


def draw_sensor_ris_channel(geometry: Geometry, radio: RadioConfig, rng: np.random.Generator,
                            tau: np.ndarray | None = None,
                            steering: SteeringVectors | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(g, tau)`` for the Rician sensor-RIS links."""
    sv = steering or SteeringVectors.from_geometry(geometry, radio)
    if tau is None:
        tau = crandn(rng, geometry.n_sensors, radio.n_elements)
    f1 = radio.rician_sensor_ris
    scale = geometry.delta ** (-radio.pathloss_ris / 2.0)
    g = scale[:, None] * (np.sqrt(1.0 / (1.0 + f1)) * tau + np.sqrt(f1 / (1.0 + f1)) * sv.sensor_ris)
    return g, tau


def draw_ris_cn_channel(geometry: Geometry, radio: RadioConfig, rng: np.random.Generator,
                        delta: np.ndarray | None = None,
                        steering: SteeringVectors | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(G_R, Delta)``; the LoS part is the rank-one ``u v^H``."""
    sv = steering or SteeringVectors.from_geometry(geometry, radio)
    if delta is None:
        delta = crandn(rng, radio.n_antennas, radio.n_elements)
    f2 = radio.rician_ris_cn
    los = np.outer(sv.cn_arrival, sv.ris_departure.conj())
    G_R = geometry.delta_ris ** (-radio.pathloss_ris / 2.0) * (
        np.sqrt(1.0 / (1.0 + f2)) * delta + np.sqrt(f2 / (1.0 + f2)) * los)
    return G_R, delta


def draw_channels(geometry: Geometry, radio: RadioConfig, rng: np.random.Generator,
                  steering: SteeringVectors | None = None) -> ChannelRealization:
    """One coherence-block realization.  Draw order is fixed (chi, tau, Delta)
    so that a given generator state always yields the same channels."""
    sv = steering or SteeringVectors.from_geometry(geometry, radio)
    q, chi = draw_direct_channel(geometry, radio, rng)
    g, tau = draw_sensor_ris_channel(geometry, radio, rng, steering=sv)
    G_R, delta = draw_ris_cn_channel(geometry, radio, rng, steering=sv)
    return ChannelRealization(q, g, G_R, chi, tau, delta)


def effective_channel(q: np.ndarray, cascaded: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``h = q + G_C psi`` for one sensor (``q``: K, ``cascaded``: K x L)."""
    q = np.asarray(q)
    cascaded = np.atleast_2d(cascaded)
    psi = np.asarray(psi)
    if cascaded.shape != (q.shape[0], psi.shape[0]):
        raise ValueError(f"dimension mismatch: q {q.shape}, G_C {cascaded.shape}, psi {psi.shape}")
    return q + cascaded @ psi


def wrap_phase(phases) -> np.ndarray:
    """Phases reduced to ``[0, 2pi)``; ``np.mod`` alone can round tiny
    negatives up to exactly ``2pi``."""
    wrapped = np.mod(np.asarray(phases, float), 2 * np.pi)
    return np.where(wrapped >= 2 * np.pi, 0.0, wrapped)


def random_phases(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.exp(1j * rng.uniform(0.0, 2 * np.pi, n))


@dataclass(frozen=True)
class RisConfiguration:
    """Data-phase RIS response ``psi_l = lambda_l exp(j phi_l)``."""

    phases: np.ndarray
    amplitudes: np.ndarray | None = None  # None: transmission mode, all ones

    def __post_init__(self):
        phases = wrap_phase(self.phases)
        object.__setattr__(self, "phases", phases)
        if self.amplitudes is not None:
            amp = np.asarray(self.amplitudes, float)
            if amp.shape != phases.shape or np.any((amp != 0) & (amp != 1)):
                raise ValueError("amplitudes must be 0/1 with one entry per element")
            object.__setattr__(self, "amplitudes", amp)

    @property
    def psi(self) -> np.ndarray:
        psi = np.exp(1j * self.phases)
        return psi if self.amplitudes is None else self.amplitudes * psi
