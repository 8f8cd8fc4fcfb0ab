"""Virtual-clock evaluation of (N, f) plans.

Each plan is played as a sequence of events on a deterministic clock:
map tasks finish according to their own record counts (round-robin deal,
first ``M`` records cached, the rest loaded from disk), then each tree level
starts after the previous one completes and lasts as long as its busiest
node, ``A * children``.  Full levels therefore cost ``A * f``; a top level
with fewer than ``f`` inputs costs less.
"""

from __future__ import annotations

import csv
import heapq
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .aggtree import build_shape
from .cost_model import ClusterProfile, CostEstimate, PlanPoint


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: str = field(compare=False)
    detail: dict = field(compare=False, default_factory=dict)


class VirtualClock:
    def __init__(self):
        self.now = 0.0
        self._queue: list[Event] = []
        self._seq = 0
        self.log: list[Event] = []

    def schedule(self, delay: float, kind: str, **detail) -> None:
        heapq.heappush(self._queue, Event(self.now + delay, self._seq, kind, detail))
        self._seq += 1

    def run(self) -> float:
        while self._queue:
            ev = heapq.heappop(self._queue)
            self.now = ev.time
            self.log.append(ev)
        return self.now


def task_sizes(R: int, N: int) -> list[tuple[int, int]]:
    """``(records, tasks)`` groups of a round-robin deal of R records to N tasks."""
    q, r = divmod(R, N)
    groups = [(q + 1, r), (q, N - r)]
    return [(n, k) for n, k in groups if k]


def _task_time(profile: ClusterProfile, n: int) -> float:
    spilled = max(0, n - profile.M)
    return n * profile.P + spilled * profile.D


def simulate_iteration(profile: ClusterProfile, plan: PlanPoint, trace: bool = False):
    """Simulated time and cost of one iteration; optionally also the event log."""
    N, f = plan.N, plan.f
    if f != int(f) or f < 2:
        raise ValueError(f"simulation needs an integer fan-in >= 2, got {f}")
    clock = VirtualClock()
    for n, k in task_sizes(profile.R, N):
        clock.schedule(_task_time(profile, n), "map_done", records=n, tasks=k)
    t_map = clock.run()

    shape = build_shape(N, int(f))
    critical = 0
    for level in range(1, shape.height + 1):
        clock.schedule(profile.A * shape.widest_node(level), "level_done",
                       level=level, nodes=shape.levels[level])
        clock.run()
        critical += shape.widest_node(level)
    # sum the integer child counts first so equal trees give bit-equal times
    t_agg = profile.A * critical
    T = t_map + t_agg
    est = CostEstimate(T=T, C=N * T, T_map=t_map, T_agg=t_agg, regime=profile.regime(N))
    return (est, clock.log) if trace else est


@dataclass(frozen=True)
class SweepRow:
    N: int
    f: int
    regime: str
    T_model: float
    C_model: float


@dataclass
class SweepResult:
    rows: list[SweepRow]

    HEADER = ("N", "f", "regime", "T_model", "C_model")

    def argmin(self, column: str = "T_model") -> SweepRow:
        return min(self.rows, key=lambda r: (getattr(r, column), r.N, r.f))

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.HEADER)
        for r in self.rows:
            writer.writerow([r.N, r.f, r.regime, repr(r.T_model), repr(r.C_model)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def sweep(profile: ClusterProfile, N_grid: Iterable[int], f_grid: Iterable[int]) -> SweepResult:
    N_grid, f_grid = list(N_grid), list(f_grid)
    if not N_grid or not f_grid:
        raise ValueError("sweep grids must be non-empty")
    rows = []
    for N in N_grid:
        for f in f_grid:
            est = simulate_iteration(profile, PlanPoint(N, f))
            rows.append(SweepRow(N, f, est.regime.value, est.T, est.C))
    return SweepResult(rows)


def best_fanin(profile: ClusterProfile, N: int, f_grid: Iterable[int]) -> int:
    """Fan-in with the smallest simulated time at fixed N (smaller f on ties)."""
    return min(f_grid, key=lambda f: (simulate_iteration(profile, PlanPoint(N, f)).T, f))
