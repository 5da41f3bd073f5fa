"""Command-line entry point ``ris-mtc``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
Data go to files only; progress and diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import (ConfigError, format_matrix, format_vector, get_float, get_int, get_str,
                     get_vector, read_config, write_config)
from .evaluator import AXES, ExperimentSpec, ResultTable, benchmark_ordering, run_sweep
from .optimizer import AoSettings, parse_strategy
from .scenario import (build_scenario, default_config_path,
                       estimate_parameter_statistics, load_measurement_log)

log = logging.getLogger("ris_mtc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
SEED_ENV = "RIS_SIM_SEED"
DEFAULT_SEED = 42
BENCH_STRATEGIES = ("rxpower", "rxpower:uatf", "greedy", "combined")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which is reserved for runtime errors
        raise UsageError(message)


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # not on Linux
        return os.cpu_count() or 1


def parse_axis(text: str) -> tuple[str, list[float]]:
    """``"L=8,64"`` -> ``("L", [8.0, 64.0])``."""
    name, sep, raw = text.partition("=")
    name = name.strip()
    if not sep or name not in AXES:
        raise ConfigError(f"--axis expects NAME=v1,v2,... with NAME in {', '.join(AXES)}; got {text!r}")
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--axis {name}: malformed value list {raw!r}") from exc
    if not values:
        raise ConfigError(f"--axis {name}: empty value list", invariant="value lists nonempty")
    return name, values


def _split(text: str | None) -> list[str]:
    return [t.strip() for t in (text or "").split(",") if t.strip()]


def settings_from_config(cp: configparser.ConfigParser) -> AoSettings:
    """``[optimizer]`` section mapped onto :class:`AoSettings` (missing keys keep defaults)."""
    base = AoSettings()
    try:
        return dataclasses.replace(
            base,
            max_outer=get_int(cp, "optimizer", "max_outer", base.max_outer),
            tol=get_float(cp, "optimizer", "tolerance", base.tol),
            grid_points=get_int(cp, "optimizer", "grid_points", base.grid_points),
            phase_tol=get_float(cp, "optimizer", "phase_tolerance", base.phase_tol),
            phase_cycles=get_int(cp, "optimizer", "phase_cycles", base.phase_cycles),
            upsilon_cycles=get_int(cp, "optimizer", "upsilon_cycles", base.upsilon_cycles),
            inner_trials=get_int(cp, "optimizer", "inner_trials", base.inner_trials),
            bound_factor=get_float(cp, "optimizer", "bound_factor", base.bound_factor),
            allowed_failures=get_int(cp, "optimizer", "allowed_failures", base.allowed_failures),
        )
    except ValueError as exc:
        raise ConfigError(f"[optimizer] {exc}") from exc


def resolve_seed(flag: int | None, cp: configparser.ConfigParser) -> int:
    """Flag, then ``RIS_SIM_SEED``, then ``[experiment] seed``, then 42."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV, "").strip()
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from exc
    return get_int(cp, "experiment", "seed", DEFAULT_SEED)


def _load(args) -> configparser.ConfigParser:
    return read_config(args.config if args.config else default_config_path())


def _experiment(args, cp, axis: str, values: list[float]) -> ExperimentSpec:
    strategies = _split(args.strategy) or [get_str(cp, "optimizer", "strategy", "combined")]
    protocols = _split(args.protocol) or [get_str(cp, "optimizer", "protocol", "binary")]
    for name in strategies:
        try:
            parse_strategy(name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    for p in protocols:
        if p not in ("binary", "nonbinary"):
            raise ConfigError(f"unknown protocol {p!r}; expected binary or nonbinary")
    trials = args.trials if args.trials is not None else get_int(cp, "experiment", "trials", 1000)
    if trials < 1:
        raise ConfigError("trials must be >= 1", invariant="trials >= 1")
    try:
        return ExperimentSpec(axis, values, strategies, protocols, trials, resolve_seed(args.seed, cp),
                              settings=settings_from_config(cp), record_timing=args.timing)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _report(row) -> None:
    status = f"FAILED ({row.reason})" if row.failed else f"nmse={row.nmse:.6g} +- {row.stderr:.2g}"
    print(f"{row.axis}={row.value:g} {row.strategy}/{row.protocol}: {status}", file=sys.stderr, flush=True)


def _write_table(table: ResultTable, out: str | None) -> None:
    if out:
        table.write_csv(out)
        print(f"wrote {len(table.rows)} row(s) to {out}", file=sys.stderr)
    else:
        sys.stdout.write(table.to_csv())


def cmd_sweep(args) -> int:
    cp = _load(args)
    if not args.axis:
        raise ConfigError("sweep needs --axis NAME=v1,v2,...")
    axis, values = parse_axis(args.axis)
    spec = _experiment(args, cp, axis, values)
    build_scenario(cp, **{axis: _as_int(values[0])})  # fail fast on configuration errors
    table = run_sweep(spec, cp, threads=args.threads, progress=_report)
    _write_table(table, args.out)
    return EXIT_RUNTIME if any(r.failed for r in table.rows) else EXIT_OK


def cmd_single(args) -> int:
    cp = _load(args)
    if args.axis:
        axis, values = parse_axis(args.axis)
        if len(values) != 1:
            raise ConfigError("single takes exactly one axis value")
    else:
        axis, values = "L", [float(build_scenario(cp).radio.n_elements)]
    spec = _experiment(args, cp, axis, values)
    if len(spec.strategies) != 1 or len(spec.protocols) != 1:
        raise ConfigError("single takes one strategy and one protocol")
    build_scenario(cp, **{axis: _as_int(values[0])})
    table = run_sweep(spec, cp, threads=1, progress=_report)
    _write_table(table, args.out)
    return EXIT_RUNTIME if table.rows[0].failed else EXIT_OK


def cmd_bench(args) -> int:
    cp = _load(args)
    counts = [10]
    if args.axis:
        axis, values = parse_axis(args.axis)
        if axis != "M":
            raise ConfigError("bench sweeps the sensor count only (--axis M=...)")
        counts = [int(v) for v in values]
    strategies = _split(args.strategy) or list(BENCH_STRATEGIES)
    trials = args.trials if args.trials is not None else AoSettings().inner_trials
    rows = benchmark_ordering(strategies, counts, repetitions=args.repetitions, trials=trials,
                              seed=resolve_seed(args.seed, cp), config=cp)
    lines = ["strategy,n_sensors,seconds,evaluations"]
    for r in rows:
        lines.append(f"{r.strategy},{r.n_sensors},{format(r.seconds, '.17g')},{r.evaluations}")
        print(f"M={r.n_sensors} {r.strategy}: {r.seconds:.4g} s ({r.evaluations} evaluations)",
              file=sys.stderr)
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ingest_stats(args) -> int:
    cp = _load(args)
    log_path = args.log or get_str(cp, "statistics", "log")
    ids = get_vector(cp, "statistics", "sensor_ids")
    if args.sensors:
        ids = np.array([float(s) for s in _split(args.sensors)])
    if not log_path or ids is None or not len(ids):
        raise ConfigError("ingest-stats needs a measurement log and sensor ids "
                          "(--log/--sensors or [statistics] log/sensor_ids)")
    frac = get_vector(cp, "statistics", "noise_fraction")
    frac = 0.1 if frac is None else frac
    try:
        series = load_measurement_log(log_path, [int(i) for i in ids])
        stats = estimate_parameter_statistics(series, frac)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"measurement log: {exc}") from exc
    out = configparser.ConfigParser(inline_comment_prefixes=("#",))
    out.read_dict(cp)
    if out.has_section("statistics"):
        out.remove_section("statistics")
    out.add_section("statistics")
    out.set("statistics", "mean", format_vector(stats.mean))
    out.set("statistics", "covariance", format_matrix(stats.cov))
    out.set("statistics", "noise_variance", format_vector(np.diag(stats.noise_cov)))
    if not out.has_section("geometry"):
        out.add_section("geometry")
    out.set("geometry", "sensors", str(stats.n_sensors))
    build_scenario(out)  # the emitted file must validate
    if args.out:
        write_config(out, args.out)
        print(f"wrote statistics for {stats.n_sensors} sensors to {args.out}", file=sys.stderr)
    else:
        out.write(sys.stdout)
    return EXIT_OK


def cmd_validate_config(args) -> int:
    cp = _load(args)
    sc = build_scenario(cp)
    settings_from_config(cp)
    resolve_seed(args.seed, cp)
    b = sc.budget
    print(f"ok: M={sc.n_sensors} K={sc.radio.n_antennas} L={sc.radio.n_elements} n_c={b.coherence_symbols} "
          f"G={b.group_size} T={b.periods} n_p={b.pilot_symbols} n_s={b.data_symbols}", file=sys.stderr)
    return EXIT_OK


def _as_int(value: float):
    return int(value) if float(value).is_integer() else value


COMMANDS = {
    "sweep": cmd_sweep,
    "single": cmd_single,
    "bench": cmd_bench,
    "ingest-stats": cmd_ingest_stats,
    "validate-config": cmd_validate_config,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario config (default: bundled desk-scale layout)")
    common.add_argument("--out", metavar="PATH", help="output file (default: standard output)")
    common.add_argument("--seed", type=int, metavar="U64",
                        help=f"base seed (default: ${SEED_ENV}, then [experiment] seed, then {DEFAULT_SEED})")
    common.add_argument("--trials", type=int, metavar="N", help="Monte Carlo trials for reporting")
    common.add_argument("--axis", metavar="NAME=v1,v2,...", help=f"swept axis, NAME in {', '.join(AXES)}")
    common.add_argument("--strategy", metavar="NAME[,NAME]",
                        help="ordering strategy: random, rxpower, measurement, greedy, combined, nosic; "
                             "append ':uatf' for the statistics-only SINR")
    common.add_argument("--protocol", metavar="{binary,nonbinary}", help="training protocol(s)")
    common.add_argument("--threads", type=int, default=available_cores(), metavar="N",
                        help="worker processes (default: available cores)")
    common.add_argument("--timing", action="store_true", help="record wall-clock seconds in the CSV")
    common.add_argument("--verbose", action="store_true", help="debug logging to standard error")
    parser = _Parser(prog="ris-mtc", description="RIS-aided MTC parameter-estimation simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("sweep", parents=[common], help="optimize and evaluate every cell of an axis sweep")
    sub.add_parser("single", parents=[common], help="optimize and evaluate one cell")
    bench = sub.add_parser("bench", parents=[common], help="time the decoding-order strategies")
    bench.add_argument("--repetitions", type=int, default=3, metavar="N",
                       help="timed runs per strategy and sensor count (default: 3)")
    ingest = sub.add_parser("ingest-stats", parents=[common],
                            help="estimate parameter statistics from a measurement log")
    ingest.add_argument("--log", metavar="PATH", help="whitespace-separated measurement log")
    ingest.add_argument("--sensors", metavar="ID[,ID]", help="mote ids to use, in sensor order")
    sub.add_parser("validate-config", parents=[common], help="check a config and print the resource budget")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"ris-mtc: usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("ris-mtc: config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        detail = f" [invariant: {exc.invariant}]" if exc.invariant else ""
        print(f"ris-mtc: config error: {exc}{detail}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        log.debug("runtime error", exc_info=True)
        print(f"ris-mtc: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
