"""Batch gradient descent for linear models as an Iterative MapReduce program.

The map step emits the gradient and loss of one record at the current model,
the reduce step sums them, and the Sequential step applies

    w <- w - eta * sum_i grad l(<x_i, w>, y_i)

The update uses the plain sum over the dataset (no ``1/n`` factor), so the
step size has to shrink as the dataset grows.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy.special import expit

from .engine import LoopProgram, LoopState, MapReduce, Sequential
from .ingest import RecordBlock, SparseExample


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class ModelVector:
    w: np.ndarray
    eta: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError("model must be a 1-d vector")
        if not self.eta > 0:
            raise ValueError(f"step size must be > 0, got {self.eta}")
        object.__setattr__(self, "w", w)

    @property
    def dim(self) -> int:
        return self.w.size


@dataclass(frozen=True)
class GradientStatistic:
    grad: np.ndarray
    loss: float
    count: int

    @classmethod
    def zero(cls, dim: int) -> GradientStatistic:
        return cls(np.zeros(dim), 0.0, 0)

    def __add__(self, other: GradientStatistic) -> GradientStatistic:
        if self.grad.shape != other.grad.shape:
            raise ValueError(f"gradient dimensions differ: {self.grad.shape} vs {other.grad.shape}")
        return GradientStatistic(self.grad + other.grad, self.loss + other.loss, self.count + other.count)


def _check_example(example: SparseExample, dim: int, loss_kind: LossKind) -> None:
    if example.nnz and example.indices[-1] >= dim:
        raise ValueError(f"feature index {example.indices[-1]} out of range for dimension {dim}")
    if loss_kind is LossKind.LOGISTIC and example.label not in (-1.0, 1.0):
        raise ValueError(f"logistic loss needs labels in {{-1, +1}}, got {example.label}")


def record_gradient(example: SparseExample, model: ModelVector,
                    loss_kind: LossKind | str = LossKind.SQUARED) -> GradientStatistic:
    loss_kind = LossKind(loss_kind)
    _check_example(example, model.dim, loss_kind)
    margin = float(example.values @ model.w[example.indices])
    y = example.label
    if loss_kind is LossKind.SQUARED:
        r = margin - y
        loss, scale = 0.5 * r * r, r
    else:
        z = y * margin
        loss = float(np.logaddexp(0.0, -z))
        scale = -y * float(expit(-z))
    grad = np.zeros(model.dim)
    grad[example.indices] = scale * example.values
    return GradientStatistic(grad, loss, 1)


def block_gradient(block: RecordBlock, model: ModelVector,
                   loss_kind: LossKind | str = LossKind.SQUARED) -> GradientStatistic:
    """Sum of :func:`record_gradient` over a block, computed with sparse algebra."""
    loss_kind = LossKind(loss_kind)
    if not len(block):
        return GradientStatistic.zero(model.dim)
    X = block.to_csr(model.dim)
    y = block.labels
    margin = X @ model.w
    if loss_kind is LossKind.SQUARED:
        r = margin - y
        loss, coef = 0.5 * float(r @ r), r
    else:
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("logistic loss needs labels in {-1, +1}")
        z = y * margin
        loss = float(np.logaddexp(0.0, -z).sum())
        coef = -y * expit(-z)
    return GradientStatistic(X.T @ coef, loss, len(block))


def apply_update(model: ModelVector, stat: GradientStatistic) -> ModelVector:
    if stat.grad.shape != model.w.shape:
        raise ValueError(f"gradient has shape {stat.grad.shape}, model {model.w.shape}")
    return ModelVector(model.w - model.eta * stat.grad, model.eta)


def total_loss(block: RecordBlock, w: np.ndarray, loss_kind: LossKind | str = LossKind.SQUARED) -> float:
    return block_gradient(block, ModelVector(w, 1.0), loss_kind).loss


# --- stopping rules --------------------------------------------------------------

@dataclass(frozen=True)
class MaxIter:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"MaxIter needs k >= 1, got {self.k}")

    def __call__(self, state: LoopState) -> bool:
        return state.iteration < self.k


@dataclass(frozen=True)
class GradNorm:
    """Continue until the last summed gradient has norm below ``eps``."""

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"GradNorm needs eps > 0, got {self.eps}")

    def __call__(self, state: LoopState) -> bool:
        if not state.statistics:
            return True
        return float(np.linalg.norm(state.statistics[-1].grad)) >= self.eps


# --- model file ----------------------------------------------------------------

_MODEL_HEAD = struct.Struct("<QQ")


class ModelVectorCodec:
    """``u64 dimension | u64 iteration | dimension * f64``, little-endian.

    The step size is not part of the file; ``decode`` takes it from the codec.
    """

    def __init__(self, eta: float = 1.0):
        self.eta = eta

    def encode(self, model: ModelVector, iteration: int) -> bytes:
        return _MODEL_HEAD.pack(model.dim, iteration) + model.w.astype("<f8").tobytes()

    def decode(self, data: bytes) -> tuple[ModelVector, int]:
        if len(data) < _MODEL_HEAD.size:
            raise ValueError("truncated model file")
        dim, iteration = _MODEL_HEAD.unpack_from(data)
        if len(data) != _MODEL_HEAD.size + 8 * dim:
            raise ValueError(f"model file holds {len(data)} bytes, expected {_MODEL_HEAD.size + 8 * dim}")
        w = np.frombuffer(data, dtype="<f8", offset=_MODEL_HEAD.size).astype(np.float64)
        return ModelVector(w, self.eta), iteration


def bgd_program(loss_kind: LossKind | str, eta: float, stop: MaxIter | GradNorm, dim: int,
                w0: np.ndarray | None = None, vectorized: bool = True) -> LoopProgram:
    """BGD as a loop of one MapReduce (gradient sum) and one Sequential (update)."""
    loss_kind = LossKind(loss_kind)
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    if not isinstance(stop, (MaxIter, GradNorm)):
        raise TypeError(f"stop must be MaxIter or GradNorm, got {stop!r}")
    start = np.zeros(dim) if w0 is None else np.array(w0, dtype=np.float64)
    if start.shape != (dim,):
        raise ValueError(f"w0 has shape {start.shape}, expected ({dim},)")

    gradients = MapReduce(
        map=lambda model, rec: record_gradient(rec, model, loss_kind),
        combine=GradientStatistic.__add__,
        zero=lambda model: GradientStatistic.zero(model.dim),
        map_block=(lambda model, blk: block_gradient(blk, model, loss_kind)) if vectorized else None,
        name=f"{loss_kind.value}-gradient",
    )
    return LoopProgram(
        initializer=partial(ModelVector, start.copy(), eta),
        body=(gradients, Sequential(apply_update, name="bgd-update")),
        condition=stop,
        codec=ModelVectorCodec(eta),
    )
