import numpy as np
import pytest

from ris_mtc.scenario import build_scenario


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scenario():
    """M=3, K=2, L=4 desk instance, single-element groups."""
    return build_scenario(M=3, K=2, L=4, G=1)


@pytest.fixture(scope="session")
def desk_scenario():
    return build_scenario(M=5, K=4, L=16)


def random_psd(rng, n, rank=None, complex_=False):
    rank = n if rank is None else rank
    a = rng.standard_normal((n, rank))
    if complex_:
        a = a + 1j * rng.standard_normal((n, rank))
    return a @ a.conj().T


def write_log(path, rows):
    """Measurement log in the lab format: date time epoch mote temp hum light volt."""
    with open(path, "w") as fh:
        for epoch, mote, temp in rows:
            fh.write(f"2004-03-01 00:00:00.0 {epoch} {mote} {temp} 40.0 100.0 2.7\n")


# --------------------------------------------------------------------------
# acceptance report: one line per criterion in the terminal summary

_CRITERIA: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def criterion():
    """``record(number, ok, detail)``; parts of one criterion are merged."""

    def record(number: int, ok: bool, detail: str):
        _CRITERIA.setdefault(number, []).append((bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  " + "; ".join(d for _, d in parts))
