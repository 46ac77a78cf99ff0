import numpy as np
import pytest

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def split_graph():
    """Reachable graph and converged tables of the two-particle split preset."""
    from mfgame.engine import TimeGrid
    from mfgame.pim import build_graph, iterate
    from mfgame.presets import load_preset

    sc = load_preset("split_linear")
    g = build_graph(0.0, sc.initial, TimeGrid.uniform(0.0, sc.horizon, 3), sc, 0.025)
    return sc, g, iterate(g, sc, mixture_samples=0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
