"""Balanced aggregation trees and level-synchronous folding.

A tree over ``n`` leaves with fan-in ``f`` groups each level into contiguous
runs of ``f`` nodes; only the last node of a level may be underfull.  When
``n < f`` the tree collapses to a single root with ``n`` children.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from functools import reduce
from typing import Any, Callable, Generic, Sequence, TypeVar

S = TypeVar("S")


@dataclass(frozen=True)
class TreeShape:
    n_leaves: int
    fanin: int
    levels: tuple[int, ...]

    @property
    def height(self) -> int:
        return len(self.levels) - 1

    def children(self, level: int, node: int) -> range:
        """Indices in ``level - 1`` feeding ``node`` of ``level``."""
        lo = node * self.fanin
        return range(lo, min(lo + self.fanin, self.levels[level - 1]))

    def widest_node(self, level: int) -> int:
        """Children of the fullest node of ``level`` (the level's critical path)."""
        return min(self.fanin, self.levels[level - 1])


def build_shape(n_leaves: int, fanin: int) -> TreeShape:
    if fanin < 2:
        raise ValueError(f"fan-in must be >= 2, got {fanin}")
    if n_leaves < 1:
        raise ValueError(f"need at least one leaf, got {n_leaves}")
    levels = [n_leaves]
    while levels[-1] > 1:
        levels.append(-(-levels[-1] // fanin))
    return TreeShape(n_leaves, fanin, tuple(levels))


@dataclass(frozen=True)
class Combiner(Generic[S]):
    """An associative, commutative binary operation with its identity."""

    combine: Callable[[S, S], S]
    identity: S | None = None

    def fold(self, items: Sequence[S]) -> S:
        if not items:
            if self.identity is None:
                raise ValueError("empty fold needs an identity element")
            return self.identity
        return reduce(self.combine, items)


def sequential_fold(leaves: Sequence[S], combiner: Combiner[S]) -> S:
    return combiner.fold(list(leaves))


def tree_fold(
    leaves: Sequence[S],
    shape: TreeShape,
    combiner: Combiner[S],
    map_nodes: Callable[[Callable[[Sequence[S]], S], list[Sequence[S]]], Any] | None = None,
    on_level: Callable[[int, int], None] | None = None,
) -> S:
    """Reduce ``leaves`` level by level following ``shape``.

    Each node folds its children in child-index order, so the result does not
    depend on how nodes of one level are scheduled.  ``map_nodes`` (e.g.
    ``executor.map``) may run the nodes of a level in parallel; the level is a
    barrier.  ``on_level(level, n_nodes)`` is called after each level.
    """
    if len(leaves) != shape.n_leaves:
        raise ValueError(f"got {len(leaves)} leaves for a tree with {shape.n_leaves}")
    current = list(leaves)
    for level in range(1, len(shape.levels)):
        groups = [
            current[c.start:c.stop]
            for c in (shape.children(level, node) for node in range(shape.levels[level]))
        ]
        if map_nodes is None:
            current = [combiner.fold(g) for g in groups]
        else:
            current = list(map_nodes(combiner.fold, groups))
        if on_level is not None:
            on_level(level, len(current))
    return current[0]


def assign_leaves(leaves: Sequence[S], seed: int | None = None) -> list[S]:
    """Leaf order for the tree: partition order, or a seeded shuffle."""
    out = list(leaves)
    if seed is not None:
        random.Random(seed).shuffle(out)
    return out
