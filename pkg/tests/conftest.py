from __future__ import annotations

import numpy as np
import pytest

from qkdoffload.bitlinalg import ParityCheck
from qkdoffload.codes import hamming74, load_fixture, regular_ldpc


@pytest.fixture(scope="session")
def h1000() -> ParityCheck:
    return load_fixture("ldpc_1000_3_6.alist")


@pytest.fixture(scope="session")
def ham() -> ParityCheck:
    return hamming74()


@pytest.fixture(scope="session")
def small_codes() -> dict[str, ParityCheck]:
    """Small codes used as exhaustive fixtures."""
    return {
        "hamming74": hamming74(),
        "r16": regular_ldpc(16, 3, 6, seed=1),
        "r20": regular_ldpc(20, 3, 6, seed=2),
        "r20b": regular_ldpc(20, 2, 4, seed=3),
    }


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
