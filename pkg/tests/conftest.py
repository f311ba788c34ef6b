import numpy as np
import pytest

from aisgraph.graphbuild import build_multiship, standardize
from aisgraph.ingest import AisPoint, Track


def small_track(tid, n, seed, t0=0.0):
    rng = np.random.default_rng(seed)
    pts = tuple(AisPoint(tid, t0 + i, -30 + 0.1 * i + rng.normal(0, 0.01), 110 + 0.1 * i, 10 + rng.normal(),
                         float(rng.uniform(0, 360))) for i in range(n))
    return Track(tid, tid, pts)


def merged_graph(n_ships=2, w=3, seed=0):
    ships = [(small_track(f"s{i}", w, seed + i), np.arange(w)) for i in range(n_ships)]
    (g,) = build_multiship(ships, {f"s{i}": 0 for i in range(n_ships)})
    return standardize(g)


@pytest.fixture
def two_ship_graph():
    return merged_graph(2, 3)


# criterion id -> (passed, detail); filled by test_acceptance, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}")
