import numpy as np
import pytest

from gradgibbs.lattice import AffineMap
from gradgibbs.potential import PotentialSpec


@pytest.fixture
def gauss1():
    return PotentialSpec("gaussian_gradient", 1, 1, patch="forward")


@pytest.fixture
def gauss2():
    return PotentialSpec("gaussian_gradient", 2, 2, patch="forward")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def affine(*rows):
    return AffineMap(np.asarray(rows, float))


# acceptance bookkeeping: one line per criterion in the terminal summary
_ACCEPTANCE: dict[int, list] = {}


@pytest.fixture
def criterion():
    def record(num: int, part: str, ok: bool, detail: str = ""):
        _ACCEPTANCE.setdefault(num, []).append((part, bool(ok), detail))
        print(f"criterion {num} [{part}]: {'PASS' if ok else 'FAIL'} {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[num]
        bad = [p for p, ok, _ in parts if not ok]
        line = f"criterion {num:2d}: {'PASS' if not bad else 'FAIL'}"
        line += f"  ({len(parts)} parts" + (f"; failing: {', '.join(bad)})" if bad else ")")
        tr.write_line(line)
        for p, ok, detail in parts:
            tr.write_line(f"    {'PASS' if ok else 'FAIL'}  {p}: {detail}")
