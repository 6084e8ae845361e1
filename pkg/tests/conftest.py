from __future__ import annotations

import logging

import pytest

from sdfeel.data import assign_clusters, partition_label_skew, synth_dataset
from sdfeel.topology import make_graph


@pytest.fixture(autouse=True)
def _quiet_logs():
    logging.getLogger("sdfeel").setLevel(logging.ERROR)
    yield


@pytest.fixture
def small_setup():
    """Six clients in three clusters on a ring, four-class synthetic data."""
    ds = synth_dataset(4, 30, 5, seed=0)
    part = partition_label_skew(ds, 6, 2, seed=0).with_clusters(assign_clusters(6, 3, 0, 0))
    graph = make_graph("ring", 3, weights=part.m_tilde)
    return ds, part, graph


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2} [{title}]: {'PASS' if ok else 'FAIL'} ({detail})"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
