"""Simulation world: geometry, radio constants, resource budget and the
statistics of the sensed parameters.

All quantities are stored in linear units (W, W/Hz, linear Rician factors);
dB values are converted once, when a configuration file is loaded.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import (
    ConfigError,
    get_bool,
    get_float,
    get_int,
    get_matrix,
    get_str,
    get_vector,
    read_config,
)

log = logging.getLogger(__name__)


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def dbm_to_watt(value_dbm):
    return 10.0 ** (np.asarray(value_dbm, dtype=float) / 10.0) * 1e-3


# Hand-placed positions on a 40 m x 31 m floor (metres, sensors 1 m above the
# floor).  Ordered so that any prefix of the list is spread over the room.
DEFAULT_SENSOR_LAYOUT = np.array([
    (6.0, 5.0), (34.0, 26.0), (30.0, 6.0), (9.0, 24.0), (20.0, 4.0),
    (20.0, 27.0), (3.0, 15.0), (37.0, 15.0), (13.0, 12.0), (27.0, 19.0),
    (14.0, 2.5), (26.0, 28.5), (36.0, 4.0), (4.0, 27.0), (11.0, 18.0),
    (29.0, 12.0), (17.0, 21.0), (23.0, 9.0), (33.0, 21.0), (7.0, 9.0),
])
DEFAULT_SENSOR_HEIGHT = 1.0
# RIS on the ceiling at the centre of the room, CN in a corner.
DEFAULT_RIS_POSITION = np.array([20.0, 15.5, 3.0])
DEFAULT_CN_POSITION = np.array([0.5, 0.5, 2.5])


def _direction(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    vec = np.asarray(dst, float) - np.asarray(src, float)
    return vec / np.linalg.norm(vec, axis=-1, keepdims=True)


def _az_el(unit: np.ndarray) -> np.ndarray:
    unit = np.atleast_2d(unit)
    az = np.arctan2(unit[:, 1], unit[:, 0])
    el = np.arcsin(np.clip(unit[:, 2], -1.0, 1.0))
    return np.column_stack([az, el])


@dataclass(frozen=True)
class Geometry:
    """Positions of sensors, RIS and CN plus the derived distances and angles.

    The RIS is a planar array lying in the horizontal plane, so the
    direction towards another node is kept as an (azimuth, elevation) pair.
    The CN carries a linear array along the x axis and ``cn_aoa`` is the
    angle from broadside, i.e. ``sin(cn_aoa)`` is the x direction cosine of
    the RIS as seen from the CN.
    """

    sensor_positions: np.ndarray
    ris_position: np.ndarray
    cn_position: np.ndarray
    d: np.ndarray = field(init=False, repr=False)
    delta: np.ndarray = field(init=False, repr=False)
    delta_ris: float = field(init=False, repr=False)
    sensor_aoa: np.ndarray = field(init=False, repr=False)
    cn_aoa: float = field(init=False, repr=False)
    ris_aod: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sensors = np.atleast_2d(np.asarray(self.sensor_positions, float))
        if sensors.shape[1] == 2:
            sensors = np.column_stack([sensors, np.full(len(sensors), DEFAULT_SENSOR_HEIGHT)])
        ris = _pad3(self.ris_position)
        cn = _pad3(self.cn_position)
        object.__setattr__(self, "sensor_positions", sensors)
        object.__setattr__(self, "ris_position", ris)
        object.__setattr__(self, "cn_position", cn)

        d = np.linalg.norm(sensors - cn, axis=1)
        delta = np.linalg.norm(sensors - ris, axis=1)
        delta_ris = float(np.linalg.norm(cn - ris))
        if np.any(d <= 0) or np.any(delta <= 0) or delta_ris <= 0:
            raise ConfigError("node positions must be distinct (all distances > 0)",
                              invariant="positive distances")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "delta_ris", delta_ris)
        object.__setattr__(self, "sensor_aoa", _az_el(_direction(ris, sensors)))
        object.__setattr__(self, "ris_aod", _az_el(_direction(ris, cn))[0])
        object.__setattr__(self, "cn_aoa", float(np.arcsin(_direction(cn, ris)[0])))

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_positions)

    def subset(self, n: int) -> "Geometry":
        return Geometry(self.sensor_positions[:n], self.ris_position, self.cn_position)


def _pad3(pos) -> np.ndarray:
    pos = np.asarray(pos, float).ravel()
    if pos.size == 2:
        pos = np.append(pos, 0.0)
    if pos.size != 3:
        raise ConfigError(f"position must have 2 or 3 coordinates, got {pos.size}")
    return pos


def most_square_factors(n: int) -> tuple[int, int]:
    """Factor ``n = a * b`` with ``a <= b`` and ``b - a`` minimal (50 -> 5 x 10)."""
    a = int(math.isqrt(n))
    while n % a:
        a -= 1
    return a, n // a


@dataclass(frozen=True)
class RadioConfig:
    n_sensors: int
    n_antennas: int
    n_elements: int
    tx_power: np.ndarray  # W, one entry per sensor
    noise_psd: float = float(dbm_to_watt(-174.0))  # W/Hz
    bandwidth: float = 180e3
    carrier_freq: float = 3e9
    pathloss_direct: float = 3.8
    pathloss_ris: float = 2.2
    rician_sensor_ris: float = float(db_to_linear(3.0))
    rician_ris_cn: float = float(db_to_linear(10.0))
    coherence_symbols: int = 100
    subcarrier_spacing: float = 15e3
    symbol_duration: float = 71.4e-6
    coherence_bandwidth: float = 200e3
    spectral_efficiency: float = 0.5  # bit/symbol
    element_spacing: float = 0.5  # wavelengths, both arrays
    direct_link: bool = True

    def __post_init__(self):
        power = np.broadcast_to(np.asarray(self.tx_power, float), (self.n_sensors,)).copy()
        object.__setattr__(self, "tx_power", power)
        if self.n_sensors < 1 or self.n_antennas < 1 or self.n_elements < 1:
            raise ConfigError("M, K and L must be positive", invariant="positive counts")
        if np.any(power < 0):
            raise ConfigError("transmit powers must be nonnegative", invariant="P_i >= 0")
        if not self.noise_power > 0:
            raise ConfigError("noise power must be positive", invariant="noise power > 0")
        if self.pathloss_direct <= 0 or self.pathloss_ris <= 0:
            raise ConfigError("path-loss exponents must be positive", invariant="alpha > 0")
        if self.rician_sensor_ris < 0 or self.rician_ris_cn < 0:
            raise ConfigError("Rician factors must be nonnegative", invariant="F >= 0")
        if self.coherence_symbols < 2 * self.n_sensors:
            raise ConfigError("coherence block must hold at least 2M symbols",
                              invariant="n_c >= 2M")
        if self.spectral_efficiency <= 0:
            raise ConfigError("spectral efficiency must be positive", invariant="R > 0")

    @property
    def noise_power(self) -> float:
        return self.noise_psd * self.bandwidth

    @property
    def ris_shape(self) -> tuple[int, int]:
        return most_square_factors(self.n_elements)


@dataclass(frozen=True)
class ResourceBudget:
    """Split of the coherence block into ``n_p = N*T`` pilot and ``n_s`` data
    symbols, with ``T = L/G`` training periods."""

    pilot_length: int
    group_size: int
    n_elements: int
    coherence_symbols: int
    spectral_efficiency: float = 0.5

    def __post_init__(self):
        if self.group_size < 1 or self.n_elements % self.group_size:
            raise ConfigError(
                f"group size must divide L (G={self.group_size}, L={self.n_elements})",
                invariant="group size must divide L",
            )
        if self.data_symbols < 1:
            raise ConfigError(
                f"coherence block too small: n_p={self.pilot_symbols} >= n_c={self.coherence_symbols}",
                invariant="n_s >= 1",
            )

    @property
    def periods(self) -> int:
        return self.n_elements // self.group_size

    @property
    def pilot_symbols(self) -> int:
        return self.pilot_length * self.periods

    @property
    def data_symbols(self) -> int:
        return self.coherence_symbols - self.pilot_symbols

    @property
    def info_bits(self) -> int:
        return max(1, round(self.spectral_efficiency * self.data_symbols))

    @property
    def rate(self) -> float:
        """Coding rate ``l / n_s`` in bit/symbol."""
        return self.info_bits / self.data_symbols


def feasible_group_sizes(n_sensors: int, n_elements: int, coherence_symbols: int,
                         pilot_length: int | None = None) -> list[int]:
    n = n_sensors if pilot_length is None else pilot_length
    return [g for g in range(1, n_elements + 1)
            if n_elements % g == 0 and n * (n_elements // g) <= coherence_symbols - 1]


@dataclass(frozen=True)
class ParameterStatistics:
    mean: np.ndarray
    cov: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, float)
        noise = np.asarray(self.noise_cov, float)
        mean = np.asarray(self.mean, float)
        m = len(mean)
        if cov.shape != (m, m) or noise.shape != (m, m):
            raise ConfigError("statistics dimensions disagree", invariant="dimensions = M")
        if not np.allclose(cov, cov.T, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ConfigError("parameter covariance must be symmetric", invariant="C_theta symmetric")
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov).min() < -1e-10 * max(np.trace(cov), 1e-300):
            raise ConfigError("parameter covariance must be PSD", invariant="C_theta PSD")
        if np.any(noise - np.diag(np.diag(noise))) or np.any(np.diag(noise) < 0):
            raise ConfigError("measurement-noise covariance must be diagonal and nonnegative",
                              invariant="C_eta diagonal")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "noise_cov", noise)
        object.__setattr__(self, "mean", mean)

    @property
    def n_sensors(self) -> int:
        return len(self.mean)

    @property
    def snr(self) -> np.ndarray:
        """Per-sensor ratio of parameter variance to measurement-noise variance."""
        num = np.diag(self.cov)
        den = np.diag(self.noise_cov)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
        return np.where((den == 0) & (num == 0), 0.0, out)

    def subset(self, n: int) -> "ParameterStatistics":
        return ParameterStatistics(self.mean[:n], self.cov[:n, :n], self.noise_cov[:n, :n])


def exponential_statistics(positions: np.ndarray, variance=1.0, correlation_length=15.0,
                           noise_fraction=0.1, mean=0.0) -> ParameterStatistics:
    """Spatially correlated parameters with ``C[i,j] = s_i s_j exp(-dist/len)``."""
    positions = np.atleast_2d(positions)
    m = len(positions)
    std = np.sqrt(np.broadcast_to(np.asarray(variance, float), (m,)))
    dist = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    cov = np.outer(std, std) * np.exp(-dist / correlation_length)
    frac = np.broadcast_to(np.asarray(noise_fraction, float), (m,))
    return ParameterStatistics(np.broadcast_to(np.asarray(mean, float), (m,)).copy(),
                               cov, np.diag(frac * np.diag(cov)))


# --------------------------------------------------------------------------
# Measurement log ingestion
# --------------------------------------------------------------------------

def load_measurement_log(path: str | Path, sensor_ids: Sequence[int]) -> dict[int, np.ndarray]:
    """Read a whitespace-separated sensor log and align the temperature
    series of ``sensor_ids`` on their common epochs.

    Records are ``date time epoch mote-id temperature humidity light voltage``.
    Rows with a missing or non-numeric epoch, mote id or temperature are
    skipped; for duplicated ``(epoch, mote)`` pairs the first row wins.
    """
    if not sensor_ids:
        raise ValueError("sensor_ids must be nonempty")
    wanted = {int(s) for s in sensor_ids}
    readings: dict[int, dict[int, float]] = {s: {} for s in wanted}
    seen: set[int] = set()
    try:
        fh = Path(path).open(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise OSError(f"cannot read measurement log {path}: {exc}") from exc
    with fh:
        for line in fh:
            parts = line.split()
            if len(parts) < 5:
                continue
            try:
                epoch = int(parts[2])
                mote = int(parts[3])
                temp = float(parts[4])
            except ValueError:
                continue
            if not math.isfinite(temp):
                continue
            seen.add(mote)
            if mote in wanted:
                readings[mote].setdefault(epoch, temp)
    missing = sorted(wanted - seen)
    if missing:
        raise KeyError(f"unknown sensor id(s): {missing}")
    common = set.intersection(*(set(r) for r in readings.values()))
    if len(common) < 2:
        raise ValueError(f"only {len(common)} aligned epoch(s) across sensors {sorted(wanted)}")
    epochs = sorted(common)
    return {int(s): np.array([readings[int(s)][e] for e in epochs]) for s in sensor_ids}


def estimate_parameter_statistics(series: dict[int, np.ndarray] | Sequence[np.ndarray],
                                  noise_fraction=0.1) -> ParameterStatistics:
    """Sample mean and unbiased covariance of aligned series; measurement noise
    is ``noise_fraction * diag(C_theta)``."""
    data = np.vstack(list(series.values()) if isinstance(series, dict) else list(series))
    if data.shape[1] < 2:
        raise ValueError("need at least 2 aligned samples")
    cov = np.atleast_2d(np.cov(data, ddof=1))
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(cov)):
        raise ValueError("sample covariance is not finite")
    if not np.any(cov):
        raise ValueError("rank-0 data: every series is constant")
    frac = np.broadcast_to(np.asarray(noise_fraction, float), (data.shape[0],))
    return ParameterStatistics(data.mean(axis=1), cov, np.diag(frac * np.diag(cov)))


# --------------------------------------------------------------------------
# Scenario assembly
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    geometry: Geometry
    radio: RadioConfig
    budget: ResourceBudget
    stats: ParameterStatistics

    @property
    def n_sensors(self) -> int:
        return self.radio.n_sensors

    def with_group_size(self, group_size: int) -> "Scenario":
        return dataclasses.replace(self, budget=dataclasses.replace(self.budget, group_size=group_size))


def default_config_path() -> Path:
    return Path(__file__).with_name("data") / "default.cfg"


OVERRIDE_KEYS = {
    "M": ("geometry", "sensors"),
    "K": ("radio", "antennas"),
    "L": ("radio", "ris_elements"),
    "n_c": ("radio", "coherence_symbols"),
    "G": ("budget", "group_size"),
    "tx_power_dbm": ("radio", "tx_power_dbm"),
}


def apply_overrides(config, **overrides) -> configparser.ConfigParser:
    """Copy of ``config`` with short-named values (``M, K, L, n_c, G,
    tx_power_dbm``) replaced.  Changing ``L`` or ``n_c`` without ``G`` resets
    the group size to the smallest feasible one."""
    src = read_config(config)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_dict(src)
    if ("L" in overrides or "n_c" in overrides or "M" in overrides) and "G" not in overrides:
        overrides = {**overrides, "G": "auto"}
    for key, value in overrides.items():
        if key not in OVERRIDE_KEYS:
            raise ConfigError(f"unknown override {key!r}")
        section, option = OVERRIDE_KEYS[key]
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, option, str(value))
    return cp


def build_scenario(config=None, **overrides) -> Scenario:
    """Assemble a :class:`Scenario` from a config file (path or parser).

    Missing sections and keys fall back to the micro-urban defaults.  Raises
    :class:`ConfigError` naming the violated invariant.
    """
    cp = apply_overrides(config, **overrides) if overrides else read_config(config)

    # geometry
    m = get_int(cp, "geometry", "sensors")
    positions = get_matrix(cp, "geometry", "sensor_positions")
    if positions is None:
        positions = np.column_stack([DEFAULT_SENSOR_LAYOUT,
                                     np.full(len(DEFAULT_SENSOR_LAYOUT), DEFAULT_SENSOR_HEIGHT)])
    if positions.shape[1] not in (2, 3):
        raise ConfigError("sensor_positions rows must have 2 or 3 coordinates")
    stats_dim = _explicit_stats_dim(cp)
    if m is None:
        m = stats_dim if stats_dim is not None else (len(positions) if get_str(cp, "geometry", "sensor_positions") else 5)
    if m < 1 or m > len(positions):
        raise ConfigError(f"sensors={m} but {len(positions)} positions available",
                          invariant="counts consistent with M")
    ris = get_vector(cp, "geometry", "ris_position")
    cn = get_vector(cp, "geometry", "cn_position")
    geometry = Geometry(positions[:m],
                        DEFAULT_RIS_POSITION if ris is None else ris,
                        DEFAULT_CN_POSITION if cn is None else cn)

    # radio
    power_dbm = get_vector(cp, "radio", "tx_power_dbm")
    if power_dbm is None:
        power_dbm = np.array([0.0])
    if power_dbm.size not in (1, m):
        raise ConfigError(f"tx_power_dbm has {power_dbm.size} entries for M={m}",
                          invariant="counts consistent with M")
    if np.any(power_dbm < -10) or np.any(power_dbm > 10):
        log.warning("transmit power outside the [-10, 10] dBm micro-urban range")
    radio = RadioConfig(
        n_sensors=m,
        n_antennas=get_int(cp, "radio", "antennas", 4),
        n_elements=get_int(cp, "radio", "ris_elements", 16),
        tx_power=dbm_to_watt(power_dbm),
        noise_psd=float(dbm_to_watt(get_float(cp, "radio", "noise_psd_dbm_hz", -174.0))),
        bandwidth=get_float(cp, "radio", "bandwidth_hz", 180e3),
        carrier_freq=get_float(cp, "radio", "carrier_hz", 3e9),
        pathloss_direct=get_float(cp, "radio", "pathloss_direct", 3.8),
        pathloss_ris=get_float(cp, "radio", "pathloss_ris", 2.2),
        rician_sensor_ris=float(db_to_linear(get_float(cp, "radio", "rician_sensor_ris_db", 3.0))),
        rician_ris_cn=float(db_to_linear(get_float(cp, "radio", "rician_ris_cn_db", 10.0))),
        coherence_symbols=get_int(cp, "radio", "coherence_symbols", 100),
        subcarrier_spacing=get_float(cp, "radio", "subcarrier_spacing_hz", 15e3),
        symbol_duration=get_float(cp, "radio", "symbol_duration_s", 71.4e-6),
        coherence_bandwidth=get_float(cp, "radio", "coherence_bandwidth_hz", 200e3),
        spectral_efficiency=get_float(cp, "radio", "spectral_efficiency", 0.5),
        element_spacing=get_float(cp, "radio", "element_spacing", 0.5),
        direct_link=get_bool(cp, "radio", "direct_link", True),
    )
    if radio.element_spacing <= 0:
        raise ConfigError("element spacing must be positive", invariant="spacing > 0")

    # budget
    pilot = get_int(cp, "budget", "pilot_length", m)
    if pilot < m:
        raise ConfigError(f"pilot length N={pilot} < M={m}", invariant="N >= M")
    group_raw = get_str(cp, "budget", "group_size", "auto")
    if group_raw == "auto":
        feasible = feasible_group_sizes(m, radio.n_elements, radio.coherence_symbols, pilot)
        if not feasible:
            raise ConfigError("coherence block too small for any group size",
                              invariant="n_s >= 1")
        group = feasible[0]
    else:
        group = get_int(cp, "budget", "group_size")
    budget = ResourceBudget(pilot, group, radio.n_elements, radio.coherence_symbols,
                            radio.spectral_efficiency)

    stats = _build_statistics(cp, geometry, m)
    return Scenario(geometry, radio, budget, stats)


def _explicit_stats_dim(cp) -> int | None:
    cov = get_matrix(cp, "statistics", "covariance")
    if cov is not None:
        return cov.shape[0]
    ids = get_vector(cp, "statistics", "sensor_ids")
    if ids is not None and get_str(cp, "statistics", "log"):
        return len(ids)
    return None


def _build_statistics(cp, geometry: Geometry, m: int) -> ParameterStatistics:
    frac = get_vector(cp, "statistics", "noise_fraction")
    frac = np.array([0.1]) if frac is None else frac
    if frac.size not in (1, m) or np.any(frac < 0):
        raise ConfigError("noise_fraction must be one nonnegative value or one per sensor")
    cov = get_matrix(cp, "statistics", "covariance")
    log_path = get_str(cp, "statistics", "log")
    if cov is not None:
        if cov.shape != (m, m):
            raise ConfigError(f"covariance is {cov.shape[0]}x{cov.shape[1]} but M={m}",
                              invariant="dimensions = M")
        mean = get_vector(cp, "statistics", "mean")
        mean = np.zeros(m) if mean is None else mean
        noise = get_vector(cp, "statistics", "noise_variance")
        noise = frac * np.diag(cov) if noise is None else noise
        if mean.size != m or noise.size != m:
            raise ConfigError("mean / noise_variance length must equal M", invariant="dimensions = M")
        return ParameterStatistics(mean, cov, np.diag(noise))
    if log_path:
        ids = get_vector(cp, "statistics", "sensor_ids")
        if ids is None:
            raise ConfigError("[statistics] log requires sensor_ids")
        ids = [int(i) for i in ids][:m]
        try:
            series = load_measurement_log(log_path, ids)
            return estimate_parameter_statistics(series, frac)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"measurement log: {exc}") from exc
    model = get_str(cp, "statistics", "model", "exponential")
    if model != "exponential":
        raise ConfigError(f"unknown statistics model {model!r}")
    variance = get_vector(cp, "statistics", "variance")
    return exponential_statistics(
        geometry.sensor_positions,
        variance=1.0 if variance is None else variance,
        correlation_length=get_float(cp, "statistics", "correlation_length", 15.0),
        noise_fraction=frac,
    )
