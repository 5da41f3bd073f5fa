"""INI-style configuration files.

Sections: ``geometry``, ``radio``, ``budget``, ``statistics``,
``optimizer`` and ``experiment``.  Arrays are comma separated; matrices use
``;`` between rows.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Iterable

import numpy as np

SECTIONS = ("geometry", "radio", "budget", "statistics", "optimizer", "experiment")


class ConfigError(ValueError):
    """A configuration value is missing, malformed or violates an invariant."""

    def __init__(self, message: str, invariant: str | None = None):
        super().__init__(message)
        self.invariant = invariant


def read_config(source: str | Path | configparser.ConfigParser | None) -> configparser.ConfigParser:
    if isinstance(source, configparser.ConfigParser):
        return source
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if source is None:
        return parser
    path = Path(source)
    try:
        with path.open(encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return parser


def get_float(parser, section, key, default=None) -> float | None:
    raw = parser.get(section, key, fallback=None)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from exc


def get_int(parser, section, key, default=None) -> int | None:
    value = get_float(parser, section, key, None)
    if value is None:
        return default
    if value != int(value):
        raise ConfigError(f"[{section}] {key}: expected an integer, got {value}")
    return int(value)


def get_bool(parser, section, key, default: bool) -> bool:
    if not parser.has_option(section, key):
        return default
    try:
        return parser.getboolean(section, key)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: expected a boolean") from exc


def get_str(parser, section, key, default=None) -> str | None:
    raw = parser.get(section, key, fallback=None)
    if raw is None:
        return default
    raw = raw.strip()
    return raw if raw else default


def parse_vector(raw: str, what: str = "value") -> np.ndarray:
    try:
        return np.array([float(tok) for tok in raw.replace(";", ",").split(",") if tok.strip()])
    except ValueError as exc:
        raise ConfigError(f"{what}: malformed number list {raw!r}") from exc


def parse_matrix(raw: str, what: str = "value") -> np.ndarray:
    rows = [parse_vector(r, what) for r in raw.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{what}: ragged or empty matrix")
    return np.vstack(rows)


def get_vector(parser, section, key) -> np.ndarray | None:
    raw = get_str(parser, section, key)
    return None if raw is None else parse_vector(raw, f"[{section}] {key}")


def get_matrix(parser, section, key) -> np.ndarray | None:
    raw = get_str(parser, section, key)
    return None if raw is None else parse_matrix(raw, f"[{section}] {key}")


def format_vector(values: Iterable[float]) -> str:
    return ", ".join(repr(float(v)) for v in values)


def format_matrix(matrix: np.ndarray) -> str:
    return "; ".join(format_vector(row) for row in np.atleast_2d(matrix))


def write_config(parser: configparser.ConfigParser, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        parser.write(fh)
