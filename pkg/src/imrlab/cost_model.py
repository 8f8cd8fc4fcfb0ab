"""Analytic time and cost model for one Iterative MapReduce iteration.

An iteration is a map phase over ``R`` records spread across ``N`` machines
followed by a balanced aggregation tree of fan-in ``f``.  Time is split as
``T = T_map + T_agg``; cost is machine time, ``C = N * T``, because every map
machine stays allocated while the blocking aggregation runs inside a loop.

Symbols follow the usual cluster profile:

====== ==========================================================
R      total number of training records
N_max  maximum number of map tasks (``None`` means unbounded)
M      records cached in memory per task before spilling to disk
P      map time per record (seconds)
D      disk load time per record (seconds)
A      transfer + aggregation time per statistic object (seconds)
====== ==========================================================
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path

E = math.e


class Regime(str, enum.Enum):
    CACHED = "cached"
    SPILLING = "spilling"


@dataclass(frozen=True)
class ClusterProfile:
    R: int
    N_max: int | None
    M: int
    P: float
    D: float
    A: float

    def __post_init__(self):
        if self.R < 1:
            raise ValueError(f"R must be >= 1, got {self.R}")
        if self.N_max is not None and self.N_max < 1:
            raise ValueError(f"N_max must be >= 1, got {self.N_max}")
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if not self.P > 0:
            raise ValueError(f"P must be > 0, got {self.P}")
        if not self.D >= 0:
            raise ValueError(f"D must be >= 0, got {self.D}")
        if not self.A > 0:
            raise ValueError(f"A must be > 0, got {self.A}")

    @property
    def bounded(self) -> bool:
        return self.N_max is not None

    @property
    def cache_threshold(self) -> int:
        """Smallest N for which every record fits in the aggregate cache."""
        return -(-self.R // self.M)

    def regime(self, N: int) -> Regime:
        return Regime.CACHED if self.R <= self.M * N else Regime.SPILLING

    def with_(self, **changes) -> ClusterProfile:
        return replace(self, **changes)


@dataclass(frozen=True)
class PlanPoint:
    """A candidate physical plan: ``N`` map tasks and tree fan-in ``f``.

    ``f`` may be a real number (> 1) for continuous analysis, e.g. ``math.e``.
    """

    N: int
    f: float

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if not self.f > 1:
            raise ValueError(f"fan-in must be > 1, got {self.f}")


@dataclass(frozen=True)
class CostEstimate:
    T: float
    C: float
    T_map: float
    T_agg: float
    regime: Regime


def agg_time_continuous(N: float, f: float, A: float) -> float:
    """Aggregation time ``A * f * ln(N) / ln(f)`` of a tree with real height."""
    if not f > 1:
        raise ValueError(f"continuous fan-in must be > 1, got {f}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if N == 1:
        return 0.0
    return A * f * math.log(N) / math.log(f)


def tree_height(N: int, f: int) -> int:
    """Exact ``ceil(log_f N)`` using integer arithmetic."""
    if f < 2:
        raise ValueError(f"fan-in must be >= 2, got {f}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    h, reach = 0, 1
    while reach < N:
        reach *= f
        h += 1
    return h


def agg_time_discrete(N: int, f: int, A: float) -> float:
    """Aggregation time ``A * f * ceil(log_f N)`` of an integer tree."""
    return A * f * tree_height(N, f)


def map_time(profile: ClusterProfile, N: int) -> float:
    """Per-machine share of map work, including spilled-record loads."""
    R, M = profile.R, profile.M
    if R <= M * N:
        return R * profile.P / N
    return (R * profile.P + (R - M * N) * profile.D) / N


def iteration_time(profile: ClusterProfile, plan: PlanPoint, discrete: bool = False) -> CostEstimate:
    """Time and cost of one iteration under the plan.

    With ``discrete=True`` the tree height is ``ceil(log_f N)`` and ``f`` must
    be an integer; otherwise the real-valued height ``ln N / ln f`` is used.
    """
    N = plan.N
    if profile.N_max is not None and N > profile.N_max:
        raise ValueError(f"N={N} exceeds N_max={profile.N_max}")
    t_map = map_time(profile, N)
    if discrete:
        if int(plan.f) != plan.f:
            raise ValueError(f"discrete costing needs an integer fan-in, got {plan.f}")
        t_agg = agg_time_discrete(N, int(plan.f), profile.A)
    else:
        t_agg = agg_time_continuous(N, plan.f, profile.A)
    T = t_map + t_agg
    return CostEstimate(T=T, C=N * T, T_map=t_map, T_agg=t_agg, regime=profile.regime(N))


def iteration_cost(profile: ClusterProfile, N: int) -> float:
    """Closed-form machine-seconds with the fastest (fan-in ``e``) tree.

    Cached: ``e A N ln N + R P``.
    Spilling: ``e A N ln N - N M D + R (P + D)``.
    """
    R, M, P, D, A = profile.R, profile.M, profile.P, profile.D, profile.A
    agg = E * A * N * math.log(N)
    if R <= M * N:
        return agg + R * P
    return agg - N * M * D + R * (P + D)


def static_iteration_time(profile: ClusterProfile, N: int) -> CostEstimate:
    """A MapReduce outside a loop with a flat tree (fan-in ``N``).

    Map machines are released once their map task ends, so only the single
    aggregation node is charged for the reduce: ``C = N T_map + A N``.
    """
    t_map = map_time(profile, N)
    t_agg = profile.A * N if N > 1 else 0.0
    return CostEstimate(
        T=t_map + t_agg,
        C=N * t_map + t_agg,
        T_map=t_map,
        T_agg=t_agg,
        regime=profile.regime(N),
    )


# --- profile file ----------------------------------------------------------

_INT_KEYS = ("R", "N_max", "M")
_FLOAT_KEYS = ("P", "D", "A")
_UNBOUNDED = {"inf", "none", "unbounded"}


def parse_profile(text: str) -> ClusterProfile:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key == "N_max" and value.lower() in _UNBOUNDED:
                values[key] = None
            elif key in _INT_KEYS:
                values[key] = int(value.replace("_", "").replace(",", ""))
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            else:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if "unknown key" in str(exc):
                raise
            raise ValueError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    missing = [k for k in _INT_KEYS + _FLOAT_KEYS if k not in values]
    if missing:
        raise ValueError(f"profile is missing keys: {', '.join(missing)}")
    return ClusterProfile(**values)


def format_profile(profile: ClusterProfile, comment: str | None = None) -> str:
    lines = []
    if comment:
        lines += [f"# {c}" for c in comment.splitlines()]
    lines.append(f"R={profile.R}")
    lines.append(f"N_max={'inf' if profile.N_max is None else profile.N_max}")
    lines.append(f"M={profile.M}")
    for key in _FLOAT_KEYS:
        lines.append(f"{key}={getattr(profile, key)!r}")
    return "\n".join(lines) + "\n"


def load_profile(path: str | Path) -> ClusterProfile:
    return parse_profile(Path(path).read_text())


def save_profile(profile: ClusterProfile, path: str | Path, comment: str | None = None) -> None:
    Path(path).write_text(format_profile(profile, comment))


# Measured environment of the 30-machine rack (4 map tasks each).  The load
# time per record was not published in legible form; ``D`` here is a
# documented placeholder (see README) and should be calibrated.
REFERENCE_CLUSTER = ClusterProfile(
    R=2_319_592_301,
    N_max=120,
    M=19_329_936,
    P=3.895e-6,
    D=5.0e-6,
    A=2.1,
)

# One fifth of the dataset, which fits into the memory of a subset of the rack.
REFERENCE_FIFTH = REFERENCE_CLUSTER.with_(R=463_925_403)
