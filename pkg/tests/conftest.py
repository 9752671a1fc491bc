import numpy as np
import pytest

from nocrit.space import SparseVec


def vec(*xs):
    return SparseVec.from_dense(xs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
