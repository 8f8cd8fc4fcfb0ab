"""Text training records and the binary record cache.

Text format, one record per line::

    <label> | <index>:<value> <index>:<value> ...

Indices are non-negative integers in strictly increasing order.

Binary cache (all little-endian)::

    b"IMR1" | u32 record count | records...
    record = f64 label | u32 nonzero count | (u32 index, f64 value) * count

Trailing bytes after the last record are an error.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

MAGIC = b"IMR1"
_HEADER = struct.Struct("<4sI")
_REC_HEAD = struct.Struct("<dI")
_PAIR = np.dtype([("index", "<u4"), ("value", "<f8")])
_MAX_INDEX = 2**32 - 1


class ParseError(ValueError):
    """A malformed text record.  ``column`` is 1-based."""

    def __init__(self, kind: str, message: str, column: int, line: str = "", lineno: int | None = None):
        self.kind = kind
        self.message = message
        self.column = column
        self.line = line
        self.lineno = lineno
        where = f"column {column}" if lineno is None else f"line {lineno}, column {column}"
        super().__init__(f"{where}: {message}")


class CacheFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseExample:
    label: float
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or idx.shape != val.shape:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size and (idx[0] < 0 or np.any(np.diff(idx) <= 0)):
            raise ValueError("indices must be non-negative and strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_pairs(cls, label: float, pairs: Iterable[tuple[int, float]]) -> SparseExample:
        pairs = list(pairs)
        return cls(float(label), [i for i, _ in pairs], [v for _, v in pairs])

    @property
    def nnz(self) -> int:
        return self.indices.size

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def __eq__(self, other):
        if not isinstance(other, SparseExample):
            return NotImplemented
        return (
            _same_float(self.label, other.label)
            and np.array_equal(self.indices, other.indices)
            and self.values.tobytes() == other.values.tobytes()
        )

    def __repr__(self):
        return f"SparseExample(label={self.label!r}, x={self.pairs()!r})"


def _same_float(a: float, b: float) -> bool:
    return struct.pack("<d", a) == struct.pack("<d", b)


class RecordBlock:
    """Columnar (CSR-like) storage for a run of records."""

    __slots__ = ("labels", "indptr", "indices", "values")

    def __init__(self, labels, indptr, indices, values):
        self.labels = np.asarray(labels, dtype=np.float64)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.indptr.shape != (self.labels.size + 1,) or self.indptr[-1] != self.indices.size:
            raise ValueError("inconsistent block arrays")

    @classmethod
    def empty(cls) -> RecordBlock:
        return cls(np.empty(0), np.zeros(1, dtype=np.int64), np.empty(0), np.empty(0))

    @classmethod
    def from_examples(cls, examples: Iterable[SparseExample]) -> RecordBlock:
        examples = list(examples)
        if not examples:
            return cls.empty()
        nnz = np.fromiter((e.nnz for e in examples), dtype=np.int64, count=len(examples))
        indptr = np.zeros(len(examples) + 1, dtype=np.int64)
        np.cumsum(nnz, out=indptr[1:])
        return cls(
            np.fromiter((e.label for e in examples), dtype=np.float64, count=len(examples)),
            indptr,
            np.concatenate([e.indices for e in examples]),
            np.concatenate([e.values for e in examples]),
        )

    @classmethod
    def concat(cls, blocks: Sequence[RecordBlock]) -> RecordBlock:
        blocks = [b for b in blocks if len(b)]
        if not blocks:
            return cls.empty()
        if len(blocks) == 1:
            return blocks[0]
        offsets = np.cumsum([0] + [b.indices.size for b in blocks[:-1]])
        indptr = np.concatenate([blocks[0].indptr[:1]] + [b.indptr[1:] + o for b, o in zip(blocks, offsets)])
        return cls(
            np.concatenate([b.labels for b in blocks]),
            indptr,
            np.concatenate([b.indices for b in blocks]),
            np.concatenate([b.values for b in blocks]),
        )

    def __len__(self) -> int:
        return self.labels.size

    @property
    def nnz(self) -> int:
        return self.indices.size

    @property
    def max_index(self) -> int:
        return int(self.indices.max()) if self.indices.size else -1

    def __getitem__(self, i: int) -> SparseExample:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return SparseExample(float(self.labels[i]), self.indices[lo:hi], self.values[lo:hi])

    def __iter__(self) -> Iterator[SparseExample]:
        for i in range(len(self)):
            yield self[i]

    def take(self, rows) -> RecordBlock:
        rows = np.asarray(rows, dtype=np.int64)
        starts = self.indptr[rows]
        lens = self.indptr[rows + 1] - starts
        indptr = np.zeros(rows.size + 1, dtype=np.int64)
        np.cumsum(lens, out=indptr[1:])
        gather = np.repeat(starts - indptr[:-1], lens) + np.arange(indptr[-1])
        return RecordBlock(self.labels[rows], indptr, self.indices[gather], self.values[gather])

    def slice(self, start: int, stop: int) -> RecordBlock:
        return self.take(np.arange(start, min(stop, len(self))))

    def to_csr(self, dim: int):
        import scipy.sparse as sp

        if self.max_index >= dim:
            raise ValueError(f"feature index {self.max_index} out of range for dimension {dim}")
        return sp.csr_matrix((self.values, self.indices, self.indptr), shape=(len(self), dim))


# --- text format -------------------------------------------------------------

def _parse_label(text: str, column: int, line: str) -> float:
    try:
        label = float(text)
    except ValueError:
        raise ParseError("label", f"label {text!r} is not a number", column, line) from None
    if not np.isfinite(label):
        raise ParseError("label", f"label {text!r} is not finite", column, line)
    return label


def parse_line(line: str) -> SparseExample:
    """Parse one text record, raising :class:`ParseError` with the column."""
    body = line.rstrip("\r\n")
    bar = body.find("|")
    if bar < 0:
        raise ParseError("separator", "missing '|' between label and features", len(body) + 1, line)
    head = body[:bar]
    label_text = head.strip()
    if not label_text:
        raise ParseError("label", "missing label", 1, line)
    if len(label_text.split()) > 1:
        raise ParseError("label", f"label {label_text!r} has extra tokens", head.find(label_text) + 1, line)
    label = _parse_label(label_text, head.find(label_text) + 1, line)

    indices: list[int] = []
    values: list[float] = []
    pos = bar + 1
    for token in body[bar + 1:].split():
        col = body.index(token, pos) + 1
        pos = col - 1 + len(token)
        name, colon, value_text = token.partition(":")
        if not colon:
            raise ParseError("pair", f"feature {token!r} is not index:value", col, line)
        if not name.isdigit() or not name.isascii():
            raise ParseError("index", f"index {name!r} is not a non-negative integer", col, line)
        index = int(name)
        if index > _MAX_INDEX:
            raise ParseError("index", f"index {index} does not fit in 32 bits", col, line)
        try:
            value = float(value_text)
        except ValueError:
            raise ParseError("value", f"value {value_text!r} is not a number", col + len(name) + 1, line) from None
        if not np.isfinite(value):
            raise ParseError("value", f"value {value_text!r} is not finite", col + len(name) + 1, line)
        if indices and index <= indices[-1]:
            kind = "duplicate" if index == indices[-1] else "unsorted"
            raise ParseError(kind, f"index {index} after {indices[-1]}: indices must strictly increase", col, line)
        indices.append(index)
        values.append(value)
    return SparseExample(label, indices, values)


def format_line(example: SparseExample) -> str:
    feats = " ".join(f"{i}:{v!r}" for i, v in example.pairs())
    return f"{example.label!r} | {feats}".rstrip()


def read_text(path: str | Path) -> Iterator[SparseExample]:
    """Yield records from a text file; blank lines are skipped.

    Parse errors are re-raised carrying the 1-based line number.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield parse_line(line)
            except ParseError as exc:
                raise ParseError(exc.kind, exc.message, exc.column, line, lineno) from None


# --- binary cache --------------------------------------------------------------

def _encode_record(ex: SparseExample) -> bytes:
    if ex.nnz and ex.indices[-1] > _MAX_INDEX:
        raise CacheFormatError(f"index {ex.indices[-1]} does not fit in 32 bits")
    pairs = np.empty(ex.nnz, dtype=_PAIR)
    pairs["index"] = ex.indices
    pairs["value"] = ex.values
    return _REC_HEAD.pack(ex.label, ex.nnz) + pairs.tobytes()


def encode(records: Iterable[SparseExample]) -> bytes:
    records = list(records)
    out = bytearray(_HEADER.pack(MAGIC, len(records)))
    for ex in records:
        out += _encode_record(ex)
    return bytes(out)


def decode_block(buf: bytes) -> RecordBlock:
    """Decode a whole cache image into a :class:`RecordBlock`."""
    if len(buf) < _HEADER.size:
        raise CacheFormatError(f"truncated header: {len(buf)} bytes")
    magic, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CacheFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    offsets = np.empty(count, dtype=np.int64)
    nnz = np.empty(count, dtype=np.int64)
    pos, size = _HEADER.size, len(buf)
    unpack_nnz = struct.Struct("<I").unpack_from
    for i in range(count):
        if pos + _REC_HEAD.size > size:
            raise CacheFormatError(f"truncated at record {i} of {count}")
        k = unpack_nnz(buf, pos + 8)[0]
        offsets[i] = pos
        nnz[i] = k
        pos += _REC_HEAD.size + _PAIR.itemsize * k
        if pos > size:
            raise CacheFormatError(f"truncated inside record {i} of {count}")
    if pos != size:
        raise CacheFormatError(f"{size - pos} trailing bytes after {count} records (count mismatch)")

    raw = np.frombuffer(buf, dtype=np.uint8)
    labels = raw[offsets[:, None] + np.arange(8)].copy().view("<f8").ravel()
    indptr = np.zeros(count + 1, dtype=np.int64)
    np.cumsum(nnz, out=indptr[1:])
    pair_starts = np.repeat(offsets + _REC_HEAD.size, nnz) + _PAIR.itemsize * (
        np.arange(indptr[-1]) - np.repeat(indptr[:-1], nnz)
    )
    pair_bytes = raw[pair_starts[:, None] + np.arange(_PAIR.itemsize)].copy()
    pairs = pair_bytes.view(_PAIR).ravel()
    indices = pairs["index"].astype(np.int64)
    values = pairs["value"].astype(np.float64)
    if indices.size:
        step = np.diff(indices)
        inner = np.ones(indices.size - 1, dtype=bool)
        starts = indptr[1:-1]
        inner[starts[(starts > 0) & (starts < indices.size)] - 1] = False
        bad = np.flatnonzero(inner & (step <= 0))
        if bad.size:
            rec = int(np.searchsorted(indptr, bad[0], side="right") - 1)
            raise CacheFormatError(f"record {rec}: indices not strictly increasing")
    return RecordBlock(labels, indptr, indices, values)


def decode(buf: bytes) -> list[SparseExample]:
    return list(decode_block(buf))


class CacheWriter:
    """Streams records into a cache file, patching the count on close."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh: BinaryIO | None = open(self.path, "wb")
        self._fh.write(_HEADER.pack(MAGIC, 0))
        self.count = 0

    def write(self, example: SparseExample) -> None:
        self._fh.write(_encode_record(example))
        self.count += 1

    def write_block(self, block: RecordBlock) -> None:
        for ex in block:
            self.write(ex)

    def close(self) -> None:
        if self._fh is None:
            return
        if self.count > 0xFFFFFFFF:
            raise CacheFormatError("too many records for a 32-bit count")
        self._fh.seek(4)
        self._fh.write(struct.pack("<I", self.count))
        self._fh.close()
        self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class CacheReader:
    """Sequential reader over a cache file; counts records it hands out."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records_read = 0

    def read_block(self) -> RecordBlock:
        with open(self.path, "rb") as fh:
            block = decode_block(fh.read())
        self.records_read += len(block)
        return block

    def __iter__(self) -> Iterator[SparseExample]:
        with open(self.path, "rb") as fh:
            stream = io.BufferedReader(fh)
            head = stream.read(_HEADER.size)
            if len(head) < _HEADER.size:
                raise CacheFormatError("truncated header")
            magic, count = _HEADER.unpack(head)
            if magic != MAGIC:
                raise CacheFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
            for i in range(count):
                rh = stream.read(_REC_HEAD.size)
                if len(rh) < _REC_HEAD.size:
                    raise CacheFormatError(f"truncated at record {i} of {count}")
                label, k = _REC_HEAD.unpack(rh)
                body = stream.read(_PAIR.itemsize * k)
                if len(body) < _PAIR.itemsize * k:
                    raise CacheFormatError(f"truncated inside record {i} of {count}")
                pairs = np.frombuffer(body, dtype=_PAIR)
                try:
                    ex = SparseExample(label, pairs["index"], pairs["value"])
                except ValueError as exc:
                    raise CacheFormatError(f"record {i}: {exc}") from None
                self.records_read += 1
                yield ex
            if stream.read(1):
                raise CacheFormatError(f"trailing bytes after {count} records (count mismatch)")


def write_cache(path: str | Path, records: Iterable[SparseExample]) -> int:
    """Write records atomically; returns the record count."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with CacheWriter(tmp) as w:
            for ex in records:
                w.write(ex)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return w.count


def read_cache(path: str | Path) -> RecordBlock:
    return CacheReader(path).read_block()
