import math

import pytest
from hypothesis import HealthCheck, settings, strategies as st

from fragim.corpus import BINARY, DISSIPATIVE, MIXTURE
from fragim.measure import DislocationMeasure

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

CORPUS = [BINARY, DISSIPATIVE, MIXTURE]


@st.composite
def measures(draw, conservative=None, max_atoms=3, max_children=3):
    """Finite dislocation measures with ratios bounded away from 0 and 1."""
    n = draw(st.integers(1, max_atoms))
    atoms = []
    for _ in range(n):
        k = draw(st.integers(2, max_children))
        raw = [draw(st.floats(0.1, 1.0)) for _ in range(k)]
        cons = draw(st.booleans()) if conservative is None else conservative
        total = math.fsum(raw) / (1.0 if cons else draw(st.floats(0.5, 0.95)))
        ratios = [r / total for r in raw]  # largest ratio <= 1 / 1.1
        atoms.append((draw(st.floats(0.1, 3.0)), ratios))
    return DislocationMeasure.from_atoms(atoms)


@pytest.fixture(params=["binary", "dissipative", "mixture"])
def corpus_measure(request):
    return {"binary": BINARY, "dissipative": DISSIPATIVE, "mixture": MIXTURE}[request.param]


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
