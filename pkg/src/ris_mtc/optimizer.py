"""Alternating optimization of decoding order, RIS phases, training matrix
and pilot group size.

Every candidate comparison inside one run is made on the same frozen trial
bank, so the objective is a deterministic function of the design and each
accepted move weakly lowers it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .channel import wrap_phase
from .csi import NONBINARY, TrainingProtocol, build_training_matrix
from .decoding import DecodingOrder
from .montecarlo import SystemModel, TrialBank
from .scenario import ConfigError, ParameterStatistics, Scenario, feasible_group_sizes

log = logging.getLogger(__name__)

RANDOM = "random"
RXPOWER = "rxpower"
MEASUREMENT = "measurement"
GREEDY = "greedy"
COMBINED = "combined"
NOSIC = "nosic"
STRATEGIES = (RANDOM, RXPOWER, MEASUREMENT, GREEDY, COMBINED, NOSIC)

EFFECTIVE = "effective"
UATF = "uatf"

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


# --------------------------------------------------------------------------
# ordering strategies


def _ranked(metric: np.ndarray) -> DecodingOrder:
    """Descending ``metric``; ties go to the lower sensor index."""
    metric = np.asarray(metric, float)
    idx = np.arange(len(metric))
    return DecodingOrder(tuple(np.lexsort((idx, -metric))))


def order_random(n_sensors: int, rng: np.random.Generator) -> DecodingOrder:
    return DecodingOrder(tuple(rng.permutation(n_sensors)))


def order_rx_power(rx_power: np.ndarray) -> DecodingOrder:
    """Strongest processed received power first."""
    return _ranked(rx_power)


def order_measurement(stats: ParameterStatistics) -> DecodingOrder:
    """Highest measurement SNR ``C_theta[i,i] / C_eta[i,i]`` first."""
    return _ranked(stats.snr)


def order_greedy(prefix_objective: Callable[[Sequence[int]], float], n_sensors: int) -> DecodingOrder:
    """Grow the order one step at a time.

    ``prefix_objective(seq)`` returns the average MSE when only the sensors
    in ``seq`` are decoded, in that order.  Each stage appends the sensor with
    the lowest value; ties go to the lower index.
    """
    seq: list[int] = []
    remaining = list(range(n_sensors))
    for _ in range(n_sensors):
        values = [prefix_objective(seq + [j]) for j in remaining]
        best = remaining[int(np.argmin(values))]
        seq.append(best)
        remaining.remove(best)
    return DecodingOrder(tuple(seq))


def order_combined(objective: Callable[[Sequence[int]], float], initial: DecodingOrder) -> DecodingOrder:
    """Swap construction over the full MSE.

    At stage ``s`` every sensor not yet fixed is tried in position ``s`` by
    swapping it with the current occupant; the best full-order value wins.
    Ties keep the current occupant, then prefer the lower sensor index.
    """
    seq = list(initial.sequence)
    for s in range(len(seq)):
        best_seq, best_val = seq, objective(seq)
        for p in sorted(range(s + 1, len(seq)), key=lambda p: seq[p]):
            cand = seq.copy()
            cand[s], cand[p] = cand[p], cand[s]
            val = objective(cand)
            if val < best_val:
                best_seq, best_val = cand, val
        seq = best_seq
    return DecodingOrder(tuple(seq))


# --------------------------------------------------------------------------
# phase search


def golden_section(f: Callable[[float], float], lo: float, hi: float,
                   tol: float = 1e-3) -> tuple[float, float]:
    """Minimize a scalar function on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def minimize_phase(f: Callable[[float], float], current: float, current_value: float,
                   grid_points: int = 16, tol: float = 1e-3) -> tuple[float, float]:
    """Coarse grid over ``[0, 2pi)`` then golden-section refinement around the
    best grid point.  Returns the current phase unless strictly improved."""
    grid = 2 * np.pi * np.arange(grid_points) / grid_points
    values = [f(x) for x in grid]
    k = int(np.argmin(values))
    step = 2 * np.pi / grid_points
    x, fx = golden_section(f, grid[k] - step, grid[k] + step, tol)
    if values[k] < fx:
        x, fx = grid[k], values[k]
    if fx < current_value:
        return float(wrap_phase(x)), fx
    return current, current_value


def optimize_phases(objective: Callable[[np.ndarray], float], phases: np.ndarray,
                    grid_points: int = 16, tol: float = 1e-3, max_cycles: int = 3,
                    rel_tol: float = 1e-3, value: float | None = None,
                    history: list | None = None,
                    blocks: Sequence[np.ndarray] | None = None) -> tuple[np.ndarray, float]:
    """Cyclic coordinate descent over the entries of a phase array.

    Parameters
    ----------
    objective : callable
        Maps a phase array (same shape as ``phases``) to the value to minimize.
    phases : ndarray
        Starting phases in radians; any shape.
    history : list, optional
        Receives the objective after every accepted move.
    blocks : sequence of index arrays, optional
        Coordinates that move together: one common phase offset is searched
        per block (flat indices).  Defaults to one block per entry.

    Returns
    -------
    phases, value
    """
    phases = np.array(phases, float)
    flat = phases.reshape(-1)
    if blocks is None:
        blocks = [np.array([i]) for i in range(flat.size)]
    value = objective(phases) if value is None else value
    for _ in range(max_cycles):
        start = value
        for idx in blocks:
            base = flat.copy()

            def scalar(x, idx=idx, base=base):
                trial = base.copy()
                trial[idx] += x
                return objective(trial.reshape(phases.shape))

            offset, new_value = minimize_phase(scalar, 0.0, value, grid_points, tol)
            if new_value < value:
                flat[idx] = wrap_phase(flat[idx] + offset)
                value = new_value
                if history is not None:
                    history.append(value)
        if start - value <= rel_tol * abs(start):
            break
    return flat.reshape(phases.shape), value


def group_blocks(n_elements: int, group_size: int) -> list[np.ndarray]:
    """Index blocks of the elements trained together."""
    return [np.arange(s, s + group_size) for s in range(0, n_elements, group_size)]


def align_to_groups(phases: np.ndarray, group_size: int) -> np.ndarray:
    """Replace each group's phases by the phase of the group's mean response,
    so that the data-phase response is constant over every trained group."""
    psi = np.exp(1j * np.asarray(phases, float)).reshape(-1, group_size)
    common = np.angle(psi.sum(axis=1))
    return wrap_phase(np.repeat(common, group_size))


# --------------------------------------------------------------------------
# alternating optimization


@dataclass
class AoSettings:
    strategy: str = COMBINED
    protocol: str = "binary"
    sinr_model: str = EFFECTIVE
    max_outer: int = 10
    tol: float = 1e-3
    grid_points: int = 16
    phase_tol: float = 1e-3
    phase_cycles: int = 3
    upsilon_cycles: int = 1
    inner_trials: int = 200
    seed: int = 0
    bound_factor: float = 2.0
    allowed_failures: int = 1
    optimize_order: bool = True
    optimize_psi: bool = True
    optimize_upsilon: bool = True
    optimize_group: bool = True
    beam_starts: bool = True  # also try group-aligned beams toward each sensor as starts

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.sinr_model not in (EFFECTIVE, UATF):
            raise ValueError(f"unknown SINR model {self.sinr_model!r}")
        if self.strategy == NOSIC and self.sinr_model == UATF:
            raise ValueError("the no-SIC baseline uses the effective SINR only")


@dataclass
class AoState:
    psi_phases: np.ndarray
    protocol: TrainingProtocol
    order: DecodingOrder
    objective: float = np.inf
    history: list[float] = field(default_factory=list)  # one entry per outer iteration
    moves: list[float] = field(default_factory=list)  # after every accepted move
    iterations: int = 0
    evaluations: int = 0

    @property
    def psi(self) -> np.ndarray:
        return np.exp(1j * self.psi_phases)

    @property
    def group_size(self) -> int:
        return self.protocol.group_size


def parse_strategy(name: str) -> tuple[str, str]:
    """``"rxpower:uatf"`` -> ``("rxpower", "uatf")``."""
    base, _, model = name.lower().partition(":")
    model = model or EFFECTIVE
    if base not in STRATEGIES or model not in (EFFECTIVE, UATF):
        raise ValueError(f"unknown strategy {name!r}")
    return base, model


class DesignProblem:
    """Objective of the joint design on a fixed trial bank."""

    def __init__(self, model: SystemModel, settings: AoSettings):
        self.model = model
        self.settings = settings
        self.evaluations = 0

    def link(self, protocol: TrainingProtocol, psi: np.ndarray):
        s = self.settings
        if s.sinr_model == UATF:
            return self.model.uatf(protocol, psi, s.bound_factor)
        return self.model.link(protocol, psi)

    def value(self, protocol: TrainingProtocol, psi: np.ndarray, order: DecodingOrder) -> float:
        self.evaluations += 1
        link = self.link(protocol, psi)
        if self.settings.strategy == NOSIC:
            return float(np.mean(link.no_sic_mse(self.settings.allowed_failures)))
        return link.objective(order.sequence)

    def state_value(self, state: AoState) -> float:
        return self.value(state.protocol, state.psi, state.order)

    def propose_order(self, state: AoState, rng: np.random.Generator) -> DecodingOrder:
        s = self.settings
        m = self.model.scenario.n_sensors
        if s.strategy in (RANDOM, NOSIC):
            return state.order
        if s.strategy == MEASUREMENT:
            return order_measurement(self.model.scenario.stats)
        link = self.link(state.protocol, state.psi)
        if s.strategy == RXPOWER:
            return order_rx_power(link.rx_power())

        def objective(seq):
            self.evaluations += 1
            return link.objective(seq)

        if s.strategy == GREEDY:
            return order_greedy(objective, m)
        return order_combined(objective, state.order)


def matched_phases(prior, sensor: int, group_size: int = 1) -> np.ndarray:
    """Phases that co-phase the mean reflected path of ``sensor`` at the CN
    array, made constant over training groups.  Zero when the mean is zero."""
    u = prior.steering.cn_arrival
    k = len(u)
    response = prior.mean[sensor].reshape(-1, k) @ u.conj()  # per element
    return align_to_groups(-np.angle(response), group_size)


def initial_state(scenario: Scenario, settings: AoSettings, rng: np.random.Generator) -> AoState:
    m, l = scenario.n_sensors, scenario.radio.n_elements
    protocol = build_training_matrix(settings.protocol, l, scenario.budget.group_size)
    if settings.strategy == MEASUREMENT:
        order = order_measurement(scenario.stats)
    else:
        order = order_random(m, rng)
    return AoState(np.zeros(l), protocol, order)


def choose_start(problem: DesignProblem, state: AoState, rng: np.random.Generator) -> AoState:
    """Best of the all-zero phases and one matched beam per sensor, each
    scored after the strategy's own order proposal.  Ties keep the earlier
    candidate (all-zero first)."""
    model = problem.model
    candidates = [state.psi_phases] + [matched_phases(model.prior, i, state.group_size)
                                       for i in range(model.scenario.n_sensors)]
    best = None
    for phases in candidates:
        cand = replace(state, psi_phases=phases, history=[], moves=[])
        if problem.settings.optimize_order:
            cand = replace(cand, order=problem.propose_order(cand, rng))
        cand.objective = problem.state_value(cand)
        if best is None or cand.objective < best.objective:
            best = cand
    return best


def optimize_group_size(problem: DesignProblem, state: AoState) -> AoState:
    """Exhaustive search over feasible group sizes; ties favour larger G.

    Each candidate is tried with the current phases and with the phases
    aligned to its groups (a grouped estimate is exact only for a response
    that is constant over every group).
    """
    sc = problem.model.scenario
    b = sc.budget
    candidates = feasible_group_sizes(sc.n_sensors, b.n_elements, b.coherence_symbols, b.pilot_length)
    if not candidates:
        raise ConfigError("coherence block too small", invariant="n_s >= 1")
    best = (state.objective, state.group_size, state.protocol, state.psi_phases)
    for g in sorted(candidates, reverse=True):
        prot = state.protocol if g == state.group_size else build_training_matrix(
            state.protocol.kind, b.n_elements, g)
        options = [align_to_groups(state.psi_phases, g)]
        if g != state.group_size:
            options.insert(0, state.psi_phases)
        for phases in options:
            val = problem.value(prot, np.exp(1j * phases), state.order)
            if val < best[0] or (val == best[0] and g > best[1]):
                best = (val, g, prot, phases)
    if best[2] is not state.protocol or best[3] is not state.psi_phases:
        state = replace(state, protocol=best[2], psi_phases=best[3], objective=best[0])
        state.moves.append(best[0])
    return state


def optimize_psi(problem: DesignProblem, state: AoState) -> AoState:
    s = problem.settings

    def objective(phases):
        return problem.value(state.protocol, np.exp(1j * phases), state.order)

    blocks = group_blocks(len(state.psi_phases), state.group_size)
    phases, value = optimize_phases(objective, state.psi_phases, s.grid_points, s.phase_tol,
                                    s.phase_cycles, s.tol, state.objective, state.moves, blocks)
    return replace(state, psi_phases=phases, objective=value)


def optimize_upsilon(problem: DesignProblem, state: AoState) -> AoState:
    s = problem.settings
    prot = state.protocol

    def objective(phases):
        return problem.value(prot.with_upsilon(np.exp(1j * phases)), state.psi, state.order)

    phases, value = optimize_phases(objective, np.angle(prot.upsilon), s.grid_points, s.phase_tol,
                                    s.upsilon_cycles, s.tol, state.objective, state.moves)
    return replace(state, protocol=prot.with_upsilon(np.exp(1j * phases)), objective=value)


def alternating_optimize(scenario: Scenario, settings: AoSettings | None = None,
                         model: SystemModel | None = None) -> AoState:
    """Run the order -> psi -> training matrix -> group size loop.

    The trial bank (``settings.inner_trials`` draws from ``settings.seed``) is
    built once and shared by every comparison, so ``history`` is
    non-increasing.
    """
    settings = settings or AoSettings()
    if model is None:
        bank = TrialBank(scenario, settings.inner_trials, settings.seed)
        model = SystemModel(scenario, bank)
    problem = DesignProblem(model, settings)
    rng = np.random.default_rng(np.random.SeedSequence([settings.seed, 0x5EED]))
    state = initial_state(scenario, settings, rng)
    if settings.beam_starts and settings.optimize_psi:
        state = choose_start(problem, state, rng)
    state.objective = problem.state_value(state)
    state.history.append(state.objective)
    for it in range(settings.max_outer):
        start = state.objective
        if settings.optimize_order and not (settings.strategy == MEASUREMENT and it > 0):
            order = problem.propose_order(state, rng)
            if order != state.order:
                val = problem.value(state.protocol, state.psi, order)
                if val <= state.objective:
                    state = replace(state, order=order, objective=val)
                    state.moves.append(val)
        if settings.optimize_psi:
            state = optimize_psi(problem, state)
        if settings.optimize_upsilon and state.protocol.kind == NONBINARY:
            state = optimize_upsilon(problem, state)
        if settings.optimize_group:
            state = optimize_group_size(problem, state)
        state.history.append(state.objective)
        state.iterations = it + 1
        log.debug("AO iteration %d: objective %.6g", it + 1, state.objective)
        if start - state.objective <= settings.tol * abs(start):
            break
    state.evaluations = problem.evaluations
    return state
