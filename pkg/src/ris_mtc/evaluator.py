"""Average-MSE estimation, axis sweeps and ordering benchmarks."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .csi import TrainingProtocol, build_training_matrix
from .config import read_config
from .decoding import DecodingOrder
from .montecarlo import SystemModel, TrialBank
from .optimizer import (
    COMBINED, GREEDY, NOSIC, RXPOWER, UATF, AoSettings, alternating_optimize,
    order_combined, order_greedy, order_random, order_rx_power, parse_strategy,
)
from .scenario import Scenario, build_scenario

log = logging.getLogger(__name__)

AXES = ("L", "M", "K", "n_c")
CSV_HEADER = ("axis", "value", "strategy", "protocol", "nmse", "stderr", "seconds", "seed")


def nmse(mse: float, cov_theta: np.ndarray) -> float:
    """MSE normalized by the prior error ``tr(C_theta)``."""
    total = float(np.trace(cov_theta))
    if not total > 0:
        raise ValueError("prior covariance has zero trace")
    return mse / total


def average_mse(scenario: Scenario, psi: np.ndarray, protocol: TrainingProtocol,
                order: DecodingOrder, trials: int, seed: int,
                sinr_model: str = "effective", bound_factor: float = 2.0,
                observation: str = "simulated") -> tuple[float, float]:
    """Monte Carlo average of the conditional MSE and its standard error."""
    bank = TrialBank(scenario, trials, seed, observation)
    model = SystemModel(scenario, bank)
    if sinr_model == UATF:
        return model.uatf(protocol, psi, bound_factor).average(order.sequence)
    return model.link(protocol, psi).average(order.sequence)


def average_mse_no_sic(scenario: Scenario, psi: np.ndarray, protocol: TrainingProtocol,
                       trials: int, seed: int, allowed_failures: int = 1) -> tuple[float, float]:
    """Same as ``average_mse`` for independent decoding without cancellation."""
    model = SystemModel(scenario, TrialBank(scenario, trials, seed))
    values = model.link(protocol, psi).no_sic_mse(allowed_failures)
    se = float(np.std(values, ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return float(np.mean(values)), se


# --------------------------------------------------------------------------
# sweeps


@dataclass
class ExperimentSpec:
    axis: str
    values: Sequence[float]
    strategies: Sequence[str] = (COMBINED,)
    protocols: Sequence[str] = ("binary",)
    trials: int = 1000
    seed: int = 42
    overrides: dict = field(default_factory=dict)
    settings: AoSettings = field(default_factory=AoSettings)
    record_timing: bool = False

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}; expected one of {', '.join(AXES)}")
        if not len(self.values) or not len(self.strategies) or not len(self.protocols):
            raise ValueError("axis values, strategies and protocols must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for name in self.strategies:
            parse_strategy(name)


@dataclass
class ResultRow:
    axis: str
    value: float
    strategy: str
    protocol: str
    nmse: float
    stderr: float
    seconds: float
    seed: int
    reason: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.reason)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return format(x, ".17g")


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            writer.writerow([r.axis, _fmt(r.value), r.strategy, r.protocol,
                             format(r.nmse, ".17g"), format(r.stderr, ".17g"),
                             format(r.seconds, ".17g"), r.seed])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="")

    @classmethod
    def read_csv(cls, path: str | Path) -> "ResultTable":
        rows = []
        with open(path, encoding="utf-8", newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(ResultRow(rec["axis"], float(rec["value"]), rec["strategy"], rec["protocol"],
                                      float(rec["nmse"]), float(rec["stderr"]), float(rec["seconds"]),
                                      int(rec["seed"])))
        return cls(rows)

    def select(self, **match) -> list[ResultRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def lookup(self, value, strategy, protocol="binary") -> ResultRow:
        rows = self.select(value=value, strategy=strategy, protocol=protocol)
        if len(rows) != 1:
            raise KeyError((value, strategy, protocol))
        return rows[0]


def cell_seed(base_seed: int, index: int) -> int:
    """Deterministic 63-bit seed for sweep cell ``index``."""
    state = np.random.SeedSequence([int(base_seed), int(index)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass(frozen=True)
class _Cell:
    index: int
    value: float
    strategy: str
    protocol: str
    seed: int


def _axis_value(value):
    return int(value) if float(value).is_integer() else value


def run_cell(spec: ExperimentSpec, cell: _Cell, config=None) -> ResultRow:
    """Optimize and evaluate one (axis value, strategy, protocol) cell."""
    start = time.perf_counter()
    try:
        scenario = build_scenario(config, **{**spec.overrides, spec.axis: _axis_value(cell.value)})
        base, sinr_model = parse_strategy(cell.strategy)
        settings = dataclasses.replace(spec.settings, strategy=base, sinr_model=sinr_model,
                                       protocol=cell.protocol, seed=cell.seed)
        state = alternating_optimize(scenario, settings)
        report_seed = cell_seed(cell.seed, 1)
        if base == NOSIC:
            mse, se = average_mse_no_sic(scenario, state.psi, state.protocol, spec.trials,
                                         report_seed, settings.allowed_failures)
        else:
            mse, se = average_mse(scenario, state.psi, state.protocol, state.order, spec.trials,
                                  report_seed, sinr_model, settings.bound_factor)
        prior = float(np.trace(scenario.stats.cov))
        elapsed = time.perf_counter() - start
        return ResultRow(spec.axis, cell.value, cell.strategy, cell.protocol, mse / prior, se / prior,
                         elapsed if spec.record_timing else 0.0, cell.seed)
    except Exception as exc:  # a failed cell must not stop the sweep
        log.warning("cell %s=%s %s/%s failed: %s", spec.axis, cell.value, cell.strategy, cell.protocol, exc)
        return ResultRow(spec.axis, cell.value, cell.strategy, cell.protocol, math.nan, math.nan,
                         0.0, cell.seed, reason=f"{type(exc).__name__}: {exc}")


def sweep_cells(spec: ExperimentSpec) -> list[_Cell]:
    """Cells in output order.  The seed depends on the axis value only, so all
    strategies and protocols at one value are compared on paired draws."""
    cells = []
    for vi, value in enumerate(spec.values):
        seed = cell_seed(spec.seed, vi)
        for strategy in spec.strategies:
            for protocol in spec.protocols:
                cells.append(_Cell(len(cells), float(value), strategy, protocol, seed))
    return cells


def run_sweep(spec: ExperimentSpec, config=None, threads: int = 1,
              progress: Callable[[ResultRow], None] | None = None) -> ResultTable:
    """Run every cell of ``spec``; rows come back in cell order regardless of
    ``threads``."""
    if config is not None:
        config = read_config(config)
    cells = sweep_cells(spec)
    rows: list[ResultRow] = []
    if threads <= 1 or len(cells) == 1:
        for cell in cells:
            row = run_cell(spec, cell, config)
            rows.append(row)
            if progress:
                progress(row)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_cell, spec, cell, config) for cell in cells]
            for fut in futures:
                row = fut.result()
                rows.append(row)
                if progress:
                    progress(row)
    return ResultTable(rows)


# --------------------------------------------------------------------------
# timing


@dataclass
class TimingRow:
    strategy: str
    n_sensors: int
    seconds: float
    evaluations: int


def _time_ordering(model: SystemModel, protocol, psi, strategy: str, rng) -> tuple[float, int, DecodingOrder]:
    base, sinr_model = parse_strategy(strategy)
    count = 0
    start = time.perf_counter()
    link = model.uatf(protocol, psi) if sinr_model == UATF else model.link(protocol, psi)

    def objective(seq):
        nonlocal count
        count += 1
        return link.objective(seq)

    m = model.scenario.n_sensors
    if base == RXPOWER:
        order = order_rx_power(link.rx_power())
    elif base == GREEDY:
        order = order_greedy(objective, m)
    elif base == COMBINED:
        order = order_combined(objective, order_random(m, rng))
    else:
        raise ValueError(f"strategy {strategy!r} is not benchmarked")
    return time.perf_counter() - start, count, order


def benchmark_ordering(strategies: Sequence[str], sensor_counts: Sequence[int], repetitions: int = 3,
                       trials: int = 200, seed: int = 42, config=None, **overrides) -> list[TimingRow]:
    """Mean wall-clock time of one decoding-order optimization.

    The clock covers everything the strategy needs once the random draws
    exist: LMMSE filters, the conditional estimates built from the training
    observations (skipped by the UatF bound, which uses statistics only),
    and the order search itself.
    """
    rows = []
    for m in sensor_counts:
        scenario = build_scenario(config, **{**overrides, "M": int(m)})
        l = scenario.radio.n_elements
        protocol = build_training_matrix("binary", l, scenario.budget.group_size)
        psi = np.ones(l, complex)
        for strategy in strategies:
            times, evals = [], 0
            for rep in range(repetitions):
                model = SystemModel(scenario, TrialBank(scenario, trials, cell_seed(seed, rep)))
                rng = np.random.default_rng(cell_seed(seed, rep))
                elapsed, evals, _ = _time_ordering(model, protocol, psi, strategy, rng)
                times.append(elapsed)
            rows.append(TimingRow(strategy, int(m), float(np.mean(times)), evals))
    return rows
