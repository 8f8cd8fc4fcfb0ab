"""Microbenchmarks estimating a host's cluster profile.

Each estimate is the median of several timed trials after one discarded
warm-up run.  ``A`` is measured in-process (a combine plus a serialize and
deserialize round trip), which is a lower bound on a networked cluster.
"""

from __future__ import annotations

import logging
import os
import pickle
import statistics
import sys
import tempfile
import time
import warnings
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cost_model import ClusterProfile
from .ingest import RecordBlock, SparseExample, decode_block, write_cache
from .ml_bgd import LossKind, ModelVector, block_gradient, record_gradient

log = logging.getLogger(__name__)

MIN_STABLE_SAMPLE = 10_000


class CalibrationWarning(UserWarning):
    pass


def _median_time(fn: Callable[[], object], trials: int) -> float:
    if trials < 1:
        raise ValueError("need at least one trial")
    fn()  # warm-up
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _positive(x: float) -> float:
    # perf_counter can report 0 for very fast operations on coarse clocks
    return max(x, 1e-12)


def measure_P(sample: Sequence[SparseExample] | RecordBlock, dim: int, *,
              loss: LossKind | str = LossKind.SQUARED, trials: int = 5,
              vectorized: bool = False) -> float:
    """Seconds per record to fold the gradient map over an in-memory sample."""
    if dim < 1:
        raise ValueError(f"model dimension must be >= 1, got {dim}")
    block = sample if isinstance(sample, RecordBlock) else RecordBlock.from_examples(sample)
    if len(block) == 0:
        raise ValueError("sample is empty")
    if len(block) < MIN_STABLE_SAMPLE:
        warnings.warn(f"sample of {len(block)} records is too small for stable timing "
                      f"(< {MIN_STABLE_SAMPLE})", CalibrationWarning, stacklevel=2)
    model = ModelVector(np.zeros(dim), 1.0)
    if vectorized:
        def run():
            return block_gradient(block, model, loss)
    else:
        records = list(block)

        def run():
            acc = None
            for rec in records:
                g = record_gradient(rec, model, loss)
                acc = g if acc is None else acc + g
            return acc
    return _positive(_median_time(run, trials) / len(block))


def measure_D(path: str | Path, trials: int = 5) -> float:
    """Seconds per record for a sequential read and decode of a cache file.

    The first read is taken as the cold estimate.  A warm median below a tenth
    of it means the cold read was dominated by device latency, and the result
    is flagged.
    """
    path = Path(path)

    def run():
        with open(path, "rb") as fh:
            return decode_block(fh.read())

    t0 = time.perf_counter()
    n = len(run())
    cold = time.perf_counter() - t0
    if n == 0:
        raise ValueError(f"{path} holds no records")
    warm = statistics.median(_timed(run) for _ in range(max(trials, 1)))
    if warm < 0.1 * cold:
        warnings.warn(f"warm read ({warm / n:.3g} s/rec) is under 10% of the cold read "
                      f"({cold / n:.3g} s/rec); D estimate is suspect", CalibrationWarning, stacklevel=2)
    return _positive(cold / n)


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def measure_A(object_size: int, trials: int = 5) -> float:
    """Seconds to combine and hand over one statistic of ``object_size`` bytes."""
    n = max(1, object_size // 8)
    a = np.random.default_rng(0).standard_normal(n)
    b = np.ones(n)

    def run():
        blob = pickle.dumps(a + b, protocol=pickle.HIGHEST_PROTOCOL)
        return pickle.loads(blob)

    return _positive(_median_time(run, trials))


def record_footprint(nnz: int) -> int:
    """Bytes held by one in-memory record with ``nnz`` features."""
    ex = SparseExample(0.0, np.arange(nnz), np.zeros(nnz))
    return sys.getsizeof(ex) + sys.getsizeof(ex.indices) + sys.getsizeof(ex.values) + sys.getsizeof(ex.label)


def measure_M(budget: int, nnz: int) -> int:
    """Records that fit into ``budget`` bytes of task memory."""
    per = record_footprint(nnz)
    if budget < per:
        raise ValueError(f"budget of {budget} bytes is below one record ({per} bytes)")
    return budget // per


def synthetic_sample(n: int, dim: int, nnz: int, seed: int = 0) -> RecordBlock:
    rng = np.random.default_rng(seed)
    nnz = min(nnz, dim)
    examples = []
    for _ in range(n):
        idx = np.sort(rng.choice(dim, nnz, replace=False))
        examples.append(SparseExample(float(rng.standard_normal()), idx, rng.standard_normal(nnz)))
    return RecordBlock.from_examples(examples)


def calibrate_profile(budget: int, dim: int, *, sample: RecordBlock | None = None,
                      R: int | None = None, N_max: int | None = None, nnz: int = 16,
                      sample_size: int = MIN_STABLE_SAMPLE, trials: int = 5,
                      object_size: int | None = None, vectorized: bool = False) -> ClusterProfile:
    """Measure P, D, A and M on this host and assemble a profile.

    ``R`` defaults to the sample size and ``N_max`` to the CPU count.
    """
    if sample is None:
        sample = synthetic_sample(sample_size, dim, nnz)
    if len(sample) == 0:
        raise ValueError("calibration sample is empty")
    mean_nnz = max(1, round(sample.nnz / len(sample)))
    P = measure_P(sample, dim, trials=trials, vectorized=vectorized)
    with tempfile.TemporaryDirectory(prefix="imr-calib-") as tmp:
        path = Path(tmp) / "sample.imr"
        write_cache(path, sample)
        D = measure_D(path, trials=trials)
    A = measure_A(object_size if object_size is not None else 8 * dim, trials=trials)
    M = measure_M(budget, mean_nnz)
    profile = ClusterProfile(
        R=R if R is not None else len(sample),
        N_max=N_max if N_max is not None else (os.cpu_count() or 1),
        M=M, P=P, D=D, A=A,
    )
    log.info("calibrated %s", profile)
    return profile
