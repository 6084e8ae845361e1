"""Per-iteration run records and their CSV form."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SYNC_COLUMNS = ("k", "wall_clock_s", "global_loss", "test_acc", "max_cluster_deviation", "event")
ASYNC_COLUMNS = SYNC_COLUMNS + ("trigger_cluster", "max_gap", "theta_bar")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(v)


@dataclass
class TraceRecord:
    k: int
    wall_clock_s: float
    global_loss: float
    test_acc: float
    max_cluster_deviation: float
    event: str
    trigger_cluster: int = -1
    max_gap: int = 0
    theta_bar: float = float("nan")


@dataclass
class RunTrace:
    """Records of one run plus its output model.

    ``models`` (client models after every iteration, ``C x M`` each) and
    ``gradients`` are only filled when a run is asked to record them.
    """

    scheme: str
    records: list = field(default_factory=list)
    final_model: np.ndarray | None = None
    consensus_rounds: int = 0
    consensus_distance: float = 0.0
    models: list = field(default_factory=list)
    gradients: list = field(default_factory=list)
    server_models: list = field(default_factory=list)
    gossip_deviation: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def columns(self) -> tuple:
        return ASYNC_COLUMNS if self.scheme == "async" else SYNC_COLUMNS

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.records:
            writer.writerow([_fmt(getattr(r, c)) for c in self.columns])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def time_to_loss(self, target: float) -> float:
        """Simulated seconds at the first record with ``global_loss <= target``; ``inf`` if never."""
        for r in self.records:
            if r.global_loss <= target:
                return r.wall_clock_s
        return math.inf

    def iterations_to_loss(self, target: float) -> float:
        for r in self.records:
            if r.global_loss <= target:
                return float(r.k)
        return math.inf

    def loss_at_time(self, budget: float) -> float:
        """Loss of the last record whose clock is within ``budget``; ``nan`` if none."""
        best = math.nan
        for r in self.records:
            if r.wall_clock_s > budget:
                break
            best = r.global_loss
        return best


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
