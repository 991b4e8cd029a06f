import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pauli_sum(rng, n, terms=6, hermitian=True):
    from iqsim.opalg import spin_sum

    entries = []
    for _ in range(terms):
        letters = "".join(rng.choice(list("IXYZ"), n))
        c = rng.normal() if hermitian else rng.normal() + 1j * rng.normal()
        entries.append((letters, c))
    return spin_sum(n, entries)


_CRITERIA: dict = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion (merged over sub-checks)."""

    def add(number: int, ok: bool, detail: str):
        prev = _CRITERIA.get(number)
        if prev is not None:
            ok, detail = prev[0] and ok, f"{prev[1]}; {detail}"
        _CRITERIA[number] = (ok, detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")

    return add


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
