import numpy as np
import pytest

from transinv.fields import parse_field
from transinv.geometry import build_grid
from transinv.transport import TransportProblem


@pytest.fixture
def case_a():
    """1D unit drift on (0, 1), T = 1.5, dt = h, n = 256."""

    def make(n=256, T=1.5, f="sin(pi*x)"):
        g = build_grid(0, 1, n, T, n_steps=int(round(T * n)))
        prob = TransportProblem(
            g,
            parse_field("1", 1, vector=True),
            V=parse_field("0", 1),
            f=parse_field(f, 1),
            R=parse_field("1", 1),
            a=parse_field("0", 1),
            h=parse_field("0", 1),
        )
        return g, prob

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one acceptance line; they are repeated in the terminal summary."""

    def say(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return say


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
