import numpy as np
import pytest

from tractrisk.data import simulate_cohort
from tractrisk.geometry import grid_graph
from tractrisk.graph import build_graph
from tractrisk.polyagamma import RandomStream


def random_connected_graph(n, rng, extra=0.3):
    """Random spanning tree plus a few extra edges."""
    ids = [f"t{i:02d}" for i in range(n)]
    edges = set()
    for i in range(1, n):
        j = int(rng.integers(i))
        edges.add((j, i))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < extra / n:
                edges.add((i, j))
    return build_graph([(ids[a], ids[b]) for a, b in edges], ids)


@pytest.fixture
def path3():
    return build_graph([("A", "B"), ("B", "C")], ["A", "B", "C"])


@pytest.fixture(scope="session")
def toy():
    """Small simulated cohort on a 4 x 3 grid with a few real effects."""
    graph, cent = grid_graph(4, 3)
    truth = {"alpha0": -1.0, "beta": {"age": 0.04, "black": 0.5, "poverty": 1.0},
             "tau_alpha": 0.6, "rho": 0.7}
    cohort, truth = simulate_cohort(graph, truth, 40, RandomStream(11, 0), centroids=cent)
    return graph, cent, cohort, truth


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def report(number, title, ok, detail=""):
    ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (
        f" ({detail})" if detail else "")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
