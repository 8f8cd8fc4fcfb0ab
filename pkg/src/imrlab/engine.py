"""Local executor for Iterative MapReduce programs.

A program is a :class:`LoopProgram`: an initializer producing the first
model, a body chain of :class:`MapReduce` and :class:`Sequential` operators,
and a condition deciding whether another pass of the body runs.

Execution follows the physical plan of a cluster job on one host:

* the input is read once and dealt round-robin into ``N`` partitions; the
  first ``M`` records of each stay in memory, the rest are spilled to a
  binary cache file and re-read sequentially every iteration;
* each partition is bound to one worker for the whole loop, and a map task
  folds its records into one pre-aggregated leaf statistic;
* leaves are reduced through a balanced tree of fan-in ``f``;
* the Sequential step runs on the driver and replaces the model, which is
  written to the model store after every step.
"""

from __future__ import annotations

import csv
import logging
import os
import pickle
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import reduce
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol, Sequence

from .aggtree import Combiner, assign_leaves, build_shape, tree_fold
from .ingest import CacheReader, RecordBlock, SparseExample, read_cache, write_cache

log = logging.getLogger(__name__)


class TaskFailure(RuntimeError):
    def __init__(self, message: str, partition: int | None = None):
        self.partition = partition
        super().__init__(message)


# --- operators ---------------------------------------------------------------

@dataclass(frozen=True)
class MapReduce:
    """``map`` turns (model, record) into a statistic; ``combine`` must be
    associative and commutative with ``zero(model)`` as identity.

    ``map_block`` is an optional vectorized equivalent of folding ``map`` over
    a whole :class:`RecordBlock`.
    """

    map: Callable[[Any, SparseExample], Any]
    combine: Callable[[Any, Any], Any]
    zero: Callable[[Any], Any]
    map_block: Callable[[Any, RecordBlock], Any] | None = None
    name: str = "mapreduce"


@dataclass(frozen=True)
class Sequential:
    """``update(model, statistic)`` returns the next model."""

    update: Callable[[Any, Any], Any]
    name: str = "sequential"


@dataclass(frozen=True)
class LoopState:
    model: Any
    iteration: int
    statistics: tuple = ()


class ModelCodec(Protocol):
    def encode(self, model: Any, iteration: int) -> bytes: ...

    def decode(self, data: bytes) -> tuple[Any, int]: ...


class PickleCodec:
    def encode(self, model, iteration):
        return pickle.dumps((iteration, model), protocol=pickle.HIGHEST_PROTOCOL)

    def decode(self, data):
        iteration, model = pickle.loads(data)
        return model, iteration


@dataclass(frozen=True)
class LoopProgram:
    """``condition(state)`` returns True while the loop should continue."""

    initializer: Callable[[], Any]
    body: tuple
    condition: Callable[[LoopState], bool]
    codec: ModelCodec = field(default_factory=PickleCodec)

    def __post_init__(self):
        body = tuple(self.body)
        object.__setattr__(self, "body", body)
        if not body:
            raise ValueError("loop body is empty")
        for op in body:
            if not isinstance(op, (MapReduce, Sequential)):
                raise TypeError(f"body operators must be MapReduce or Sequential, got {op!r}")
        # the body's output feeds both the condition and the first operator,
        # so it has to be a model
        if not isinstance(body[-1], Sequential):
            raise ValueError("the last body operator must be Sequential")


# --- model store ---------------------------------------------------------------

class ModelStore:
    """A model file rewritten atomically (write temp, then rename)."""

    def __init__(self, path: str | Path, codec: ModelCodec | None = None):
        self.path = Path(path)
        self.codec = codec or PickleCodec()
        self.writes = 0

    def save(self, model, iteration: int) -> None:
        data = self.codec.encode(model, iteration)
        fd, tmp = tempfile.mkstemp(prefix=self.path.name + ".", dir=self.path.parent or ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        self.writes += 1

    def load(self) -> tuple[Any, int]:
        return self.codec.decode(self.path.read_bytes())


# --- partitions ------------------------------------------------------------------

@dataclass
class Partition:
    index: int
    cached: RecordBlock
    spill_path: Path | None = None
    n_spilled: int = 0
    disk_reads: int = 0

    def __len__(self) -> int:
        return len(self.cached) + self.n_spilled

    def read_spilled(self) -> RecordBlock:
        if not self.n_spilled:
            return RecordBlock.empty()
        reader = CacheReader(self.spill_path)
        block = reader.read_block()
        self.disk_reads += reader.records_read
        return block

    def drop_spill(self) -> None:
        if self.spill_path is not None:
            self.spill_path.unlink(missing_ok=True)


def _as_block(dataset) -> RecordBlock:
    if isinstance(dataset, RecordBlock):
        return dataset
    if isinstance(dataset, (str, Path)):
        return read_cache(dataset)
    return RecordBlock.from_examples(dataset)


def load_and_partition(dataset: RecordBlock | Iterable[SparseExample] | str | Path, N: int, M: int,
                       spill_dir: str | Path | None = None) -> list[Partition]:
    """Deal records round-robin into ``N`` partitions, caching at most ``M`` each.

    ``dataset`` is read exactly once.  Records past the cache limit go to one
    spill file per partition under ``spill_dir`` (a fresh temporary directory
    by default).
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if M < 0:
        raise ValueError(f"M must be >= 0, got {M}")
    block = _as_block(dataset)
    R = len(block)
    parts = []
    for p in range(N):
        rows = list(range(p, R, N))
        mine = block.take(rows)
        part = Partition(p, mine.slice(0, M))
        if len(mine) > M:
            if spill_dir is None:
                spill_dir = tempfile.mkdtemp(prefix="imr-spill-")
            Path(spill_dir).mkdir(parents=True, exist_ok=True)
            part.spill_path = Path(spill_dir) / f"part-{p:05d}.imr"
            part.n_spilled = write_cache(part.spill_path, mine.slice(M, len(mine)))
        parts.append(part)
    return parts


# --- iteration -------------------------------------------------------------------

@dataclass
class IterationStats:
    iteration: int
    wall_time: float = 0.0
    map_time: float = 0.0
    agg_time: float = 0.0
    seq_time: float = 0.0
    records_from_cache: int = 0
    records_from_disk: int = 0
    machine_seconds: float = 0.0
    task_time_max: float = 0.0
    n_tasks: int = 0
    fanin: int = 0

    CSV_FIELDS = (
        "iteration", "n_tasks", "fanin", "records_from_cache", "records_from_disk",
        "total_wall", "map_wall", "agg_wall", "seq_wall", "task_max_wall", "machine_seconds_wall",
    )

    def csv_row(self) -> dict:
        return {
            "iteration": self.iteration,
            "n_tasks": self.n_tasks,
            "fanin": self.fanin,
            "records_from_cache": self.records_from_cache,
            "records_from_disk": self.records_from_disk,
            "total_wall": f"{self.wall_time:.6f}",
            "map_wall": f"{self.map_time:.6f}",
            "agg_wall": f"{self.agg_time:.6f}",
            "seq_wall": f"{self.seq_time:.6f}",
            "task_max_wall": f"{self.task_time_max:.6f}",
            "machine_seconds_wall": f"{self.machine_seconds:.6f}",
        }

    def as_dict(self) -> dict:
        return asdict(self)


def append_stats_csv(path: str | Path, rows: Sequence[IterationStats]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=IterationStats.CSV_FIELDS)
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow(row.csv_row())


@dataclass
class IterationResult:
    model: Any
    statistics: tuple
    stats: IterationStats

    @property
    def statistic(self):
        return self.statistics[-1] if self.statistics else None


def _plan_shape(plan) -> tuple[int, int]:
    N, f = int(plan.N), plan.f
    if f != int(f) or int(f) < 2:
        raise ValueError(f"the engine needs an integer fan-in >= 2, got {f}")
    return N, int(f)


def _map_partition(op: MapReduce, model, part: Partition):
    t0 = time.perf_counter()
    stat = None
    counts = [0, 0]
    try:
        for slot, block in enumerate((part.cached, part.read_spilled())):
            if not len(block):
                continue
            if op.map_block is not None:
                piece = op.map_block(model, block)
            else:
                piece = reduce(op.combine, (op.map(model, rec) for rec in block))
            stat = piece if stat is None else op.combine(stat, piece)
            counts[slot] += len(block)
        if stat is None:
            stat = op.zero(model)
    except Exception as exc:
        raise TaskFailure(f"{op.name}: map task for partition {part.index} failed: {exc!r}",
                          part.index) from exc
    return stat, counts[0], counts[1], time.perf_counter() - t0


def _run_worker(op, model, parts):
    return [_map_partition(op, model, p) for p in parts]


class WorkerPool:
    """``n`` single-thread workers; work sent to worker ``w`` always runs on its thread.

    This is what keeps a partition on the same worker across iterations.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"need at least one worker, got {n}")
        self.workers = [ThreadPoolExecutor(max_workers=1, thread_name_prefix=f"imr-w{w}") for w in range(n)]

    def __len__(self) -> int:
        return len(self.workers)

    def submit(self, worker: int, fn, *args):
        return self.workers[worker % len(self.workers)].submit(fn, *args)

    def map(self, fn, items):
        futures = [self.submit(i, fn, item) for i, item in enumerate(items)]
        return [f.result() for f in futures]

    def shutdown(self) -> None:
        for w in self.workers:
            w.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def default_workers(N: int) -> int:
    return min(N, os.cpu_count() or 1)


def run_mapreduce(model, partitions: Sequence[Partition], plan, op: MapReduce, *,
                  pool: WorkerPool | None = None, workers: int | None = None,
                  leaf_seed: int | None = None) -> tuple[Any, IterationStats]:
    """One MapReduce pass: parallel map tasks, then the aggregation tree."""
    N, f = _plan_shape(plan)
    if len(partitions) != N:
        raise ValueError(f"plan has N={N} but {len(partitions)} partitions were loaded")
    stats = IterationStats(iteration=-1, n_tasks=N, fanin=f)
    own = pool is None
    if own:
        pool = WorkerPool(workers or default_workers(N))
    try:
        n_workers = min(len(pool), N)
        # stable binding: partition p always runs on worker p mod n_workers
        lanes = [list(partitions[w::n_workers]) for w in range(n_workers)]
        t0 = time.perf_counter()
        futures = [pool.submit(w, _run_worker, op, model, lane) for w, lane in enumerate(lanes)]
        results: dict[int, tuple] = {}
        for lane, fut in zip(lanes, futures):
            for part, res in zip(lane, fut.result()):
                results[part.index] = res
        stats.map_time = time.perf_counter() - t0
        leaves = [results[p.index][0] for p in partitions]
        stats.records_from_cache = sum(r[1] for r in results.values())
        stats.records_from_disk = sum(r[2] for r in results.values())
        stats.task_time_max = max(r[3] for r in results.values())

        shape = build_shape(N, f)
        if shape.height == 0:
            return leaves[0], stats
        combiner = Combiner(op.combine)
        t1 = time.perf_counter()
        try:
            out = tree_fold(assign_leaves(leaves, leaf_seed), shape, combiner,
                            map_nodes=pool.map if N > 2 and len(pool) > 1 else None)
        except Exception as exc:
            raise TaskFailure(f"{op.name}: reduce failed: {exc!r}") from exc
        stats.agg_time = time.perf_counter() - t1
        return out, stats
    finally:
        if own:
            pool.shutdown()


def run_iteration(model, partitions: Sequence[Partition], plan, program: LoopProgram, *,
                  iteration: int = 0, pool: WorkerPool | None = None,
                  model_store: ModelStore | None = None,
                  leaf_seed: int | None = None) -> IterationResult:
    """Run the loop body once, returning the new model and every MapReduce output."""
    N, f = _plan_shape(plan)
    stats = IterationStats(iteration=iteration, n_tasks=N, fanin=f)
    t0 = time.perf_counter()
    statistic = None
    outputs = []
    for op in program.body:
        if isinstance(op, MapReduce):
            statistic, s = run_mapreduce(model, partitions, plan, op, pool=pool, leaf_seed=leaf_seed)
            outputs.append(statistic)
            stats.map_time += s.map_time
            stats.agg_time += s.agg_time
            stats.task_time_max += s.task_time_max
            stats.records_from_cache += s.records_from_cache
            stats.records_from_disk += s.records_from_disk
        else:
            t1 = time.perf_counter()
            model = op.update(model, statistic)
            stats.seq_time += time.perf_counter() - t1
            if model_store is not None:
                model_store.save(model, iteration)
    stats.wall_time = time.perf_counter() - t0
    stats.machine_seconds = N * stats.wall_time
    return IterationResult(model, tuple(outputs), stats)


def run_loop(program: LoopProgram, partitions: Sequence[Partition], plan, *,
             model_store: ModelStore | str | Path | None = None,
             stats_csv: str | Path | None = None,
             max_iterations: int = 10_000,
             workers: int | None = None,
             leaf_seed: int | None = None,
             observer: Callable[[LoopState, IterationStats], None] | None = None,
             ) -> tuple[Any, list[IterationStats]]:
    """Drive the loop until the condition fails or ``max_iterations`` passes ran.

    With no records at all the body is never executed: the driver seeds the
    model and evaluates the condition once.
    """
    N, _ = _plan_shape(plan)
    if isinstance(model_store, (str, Path)):
        model_store = ModelStore(model_store, program.codec)
    state = LoopState(program.initializer(), 0, ())
    if model_store is not None:
        model_store.save(state.model, 0)
    history: list[IterationStats] = []
    if sum(len(p) for p in partitions) == 0:
        program.condition(state)
        return state.model, history

    with WorkerPool(workers or default_workers(N)) as pool:
        while program.condition(state):
            if state.iteration >= max_iterations:
                log.warning("loop stopped by the %d-iteration cap", max_iterations)
                break
            res = run_iteration(state.model, partitions, plan, program, iteration=state.iteration + 1,
                                pool=pool, model_store=model_store, leaf_seed=leaf_seed)
            state = LoopState(res.model, state.iteration + 1, res.statistics)
            history.append(res.stats)
            if stats_csv is not None:
                append_stats_csv(stats_csv, [res.stats])
            if observer is not None:
                observer(state, res.stats)
    return state.model, history
