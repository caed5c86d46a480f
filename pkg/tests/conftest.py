import numpy as np
import pytest
from hypothesis import settings

from twogrid.linalg import CsrMatrix, InstrumentedOperator

settings.register_profile("ci", derandomize=True, deadline=None, max_examples=100,
                          print_blob=True)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_op(A, prec=None):
    if not isinstance(A, CsrMatrix):
        A = CsrMatrix.from_dense(np.asarray(A, dtype=float))
    return InstrumentedOperator(A, prec)


def nonsymmetric(n, rng, shift=4.0):
    """Diagonally dominant nonsymmetric test matrix."""
    return shift * np.eye(n) + rng.standard_normal((n, n)) / np.sqrt(n)


# acceptance criteria -> list of (part, ok, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, parts in ACCEPTANCE.items():
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{p[0]}: {p[2]}" if p[0] else p[2] for p in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
