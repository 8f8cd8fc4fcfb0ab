"""Cost-based choice of map parallelism ``N`` and aggregation fan-in ``f``.

The optimizer treats the cached regime (``R <= M N``) and the spilling regime
(``R > M N``) as two branches with disjoint integer domains.  In each branch
the objective has a closed-form real optimum; that optimum is clamped into the
branch domain and the objective is evaluated at its floor, its ceiling and the
domain boundaries.  The lowest value over both branches wins, ties going to
the smaller ``N`` and then the smaller ``f``.

Two fan-in models are supported:

* continuous (default): tree height ``ln N / ln f`` with the fastest fan-in
  ``e``, which gives the closed forms below;
* discrete: integer trees of height ``ceil(log_f N)`` with the best integer
  fan-in for every ``N``.  The closed-form candidates are then extended by the
  points where the best integer tree changes shape, which keeps the search
  exact.

``validate_against_sweep`` checks either mode against an exhaustive sweep.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .cost_model import (
    E,
    ClusterProfile,
    CostEstimate,
    PlanPoint,
    Regime,
    iteration_time,
    static_iteration_time,
    tree_height,
)

# upper end of the search when N_max is unbounded and the objective is time
_N_CEILING = 2**62


class Objective(str, enum.Enum):
    MIN_TIME = "time"
    MIN_COST = "cost"


class InfeasiblePlan(ValueError):
    pass


class OptimizerDivergence(AssertionError):
    pass


@dataclass(frozen=True)
class PhysicalPlan:
    N: int
    f: int
    regime: Regime
    predicted: CostEstimate
    continuous_N: float
    objective: Objective
    discrete: bool = False
    in_loop: bool = True

    @property
    def value(self) -> float:
        return self.predicted.T if self.objective is Objective.MIN_TIME else self.predicted.C

    CSV_HEADER = "objective,N,f,regime,T,C,continuous_N"

    def csv_row(self) -> str:
        p = self.predicted
        return (
            f"{self.objective.value},{self.N},{self.f},{self.regime.value},"
            f"{p.T!r},{p.C!r},{self.continuous_N!r}"
        )

    def report(self) -> str:
        p = self.predicted
        model = "integer tree heights" if self.discrete else "fan-in e, real tree heights"
        return "\n".join([
            f"objective        : minimize {self.objective.value}",
            f"map tasks N      : {self.N}",
            f"fan-in f         : {self.f}",
            f"regime           : {self.regime.value}",
            f"predicted T      : {p.T:.6g} s  (map {p.T_map:.6g} s + aggregation {p.T_agg:.6g} s)",
            f"predicted C      : {p.C:.6g} machine-s",
            f"continuous N     : {self.continuous_N:.6g}",
            f"cost model       : {model}",
        ])


# --- fan-in ----------------------------------------------------------------

def optimal_fanin_time() -> float:
    """Fan-in of the fastest aggregation tree: ``argmin f / ln f = e``."""
    return E


def _iroot_ceil(n: int, k: int) -> int:
    """Smallest integer ``r`` with ``r**k >= n``."""
    if k == 1:
        return n
    r = max(1, int(round(n ** (1.0 / k))))
    while r**k < n:
        r += 1
    while r > 1 and (r - 1) ** k >= n:
        r -= 1
    return r


def best_integer_tree(n_leaves: int) -> tuple[int, int]:
    """Return ``(f * height, f)`` minimizing ``f * ceil(log_f n)`` over ``f`` in ``[2, n]``.

    For every height ``k`` only the smallest fan-in reaching ``n`` leaves can be
    optimal, so it suffices to try ``ceil(n ** (1/k))`` for each ``k``.
    Ties go to the smaller fan-in.
    """
    if n_leaves < 2:
        raise ValueError(f"need at least 2 leaves, got {n_leaves}")
    best = None
    for k in range(1, n_leaves.bit_length() + 1):
        f = max(2, _iroot_ceil(n_leaves, k))
        cand = (f * tree_height(n_leaves, f), f)
        if best is None or cand < best:
            best = cand
    return best


def optimal_fanin_discrete(n_leaves: int, A: float = 1.0) -> int:
    """Integer fan-in minimizing ``agg_time_discrete(n_leaves, f, A)``.

    ``A`` only scales the objective, so it cannot move the minimizer.
    """
    if not A > 0:
        raise ValueError(f"A must be > 0, got {A}")
    return best_integer_tree(n_leaves)[1]


def optimal_fanin_cost(in_loop: bool, N: int, discrete: bool = False) -> float:
    """Cost-optimal fan-in.

    Outside a loop a flat tree (fan-in ``N``) avoids extra aggregation work.
    Inside a loop the map machines idle during aggregation, so the fastest
    tree is also the cheapest.
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if not in_loop:
        return N
    return optimal_fanin_discrete(N) if discrete else E


# --- objective evaluation --------------------------------------------------

def _execution_fanin(N: int) -> int:
    return 2 if N < 2 else optimal_fanin_discrete(N)


def _evaluate(profile, N, objective, in_loop, discrete) -> tuple[float, int, CostEstimate]:
    if objective is Objective.MIN_COST and not in_loop:
        est = static_iteration_time(profile, N)
        return est.C, max(N, 2), est
    f = _execution_fanin(N)
    est = iteration_time(profile, PlanPoint(N, f if discrete else E), discrete=discrete)
    value = est.T if objective is Objective.MIN_TIME else est.C
    return value, f, est


def _branch_domains(profile: ClusterProfile):
    """Integer domains ``(lo, hi)`` of the cached and spilling branches; ``hi`` may be inf."""
    hi = math.inf if profile.N_max is None else profile.N_max
    c = profile.cache_threshold
    cached = (c, hi) if c <= hi else None
    spill_hi = min(c - 1, hi)
    spilling = (1, spill_hi) if spill_hi >= 1 else None
    return {Regime.CACHED: cached, Regime.SPILLING: spilling}


def branch_stationary_point(profile: ClusterProfile, regime: Regime, objective: Objective,
                            in_loop: bool = True) -> float:
    """Unclamped real optimum of a branch objective (fan-in ``e`` model).

    Time, cached:   ``R P / (A e)``
    Time, spilling: ``R (P + D) / (A e)``
    Cost, cached:   ``R / M`` (cost grows with N, so the cache bound binds)
    Cost, spilling: ``exp(M D / (A e) - 1)``, the root of
                    ``d/dN [e A N ln N - N M D] = e A (ln N + 1) - M D``
    """
    R, M, P, D, A = profile.R, profile.M, profile.P, profile.D, profile.A
    if objective is Objective.MIN_TIME:
        work = R * P if regime is Regime.CACHED else R * (P + D)
        return work / (A * E)
    if regime is Regime.CACHED or not in_loop:
        # increasing (cached) or linear (static spilling) in N: a boundary wins
        return R / M
    expo = M * D / (A * E) - 1.0
    return math.exp(expo) if expo < 700 else math.inf


def _staircase_points(lo: int, hi: int) -> set[int]:
    """Points where the best integer tree can change shape, within ``[lo, hi]``.

    The minimal ``f * height`` only grows from ``n`` to ``n + 1`` when its
    argmin tree is exactly full at ``n``, i.e. ``n = f**k``.  For ``n > 6`` the
    argmin has ``k >= 2`` and ``f <= g(hi) / 2``.
    """
    pts = set(range(lo, min(hi, 8) + 1))
    if hi < 4:
        return pts
    f_max = best_integer_tree(hi)[0] // 2 + 1
    for f in range(2, f_max + 1):
        p = f * f
        while p <= hi:
            for q in (p, p + 1):
                if lo <= q <= hi:
                    pts.add(q)
            p *= f
    return pts


def _branch_candidates(profile, regime, domain, objective, in_loop, discrete, time_ceiling):
    lo, hi = domain
    x = branch_stationary_point(profile, regime, objective, in_loop)
    cands = {lo}
    if hi != math.inf:
        cands.add(int(hi))
    xc = min(max(x, lo), hi)
    if xc != math.inf:
        cands.update((math.floor(xc), math.ceil(xc)))
    if discrete and not (objective is Objective.MIN_COST and not in_loop):
        top = hi
        if top == math.inf:
            # cost only grows past the cache bound; time is capped by the
            # lower bound A e ln N <= T(N)
            top = lo if objective is Objective.MIN_COST else time_ceiling
        top = int(min(top, _N_CEILING))
        if top >= lo:
            cands |= _staircase_points(lo, top)
    return x, sorted(n for n in cands if lo <= n <= hi)


def _time_ceiling(profile, candidates_best: float) -> float:
    expo = candidates_best / (profile.A * E)
    return math.floor(math.exp(expo)) if expo < 43 else _N_CEILING


def branch_optima(profile: ClusterProfile, objective: Objective, *, in_loop: bool = True,
                  discrete: bool = False) -> dict[Regime, tuple[int, float, float] | None]:
    """Best ``(N, value, stationary_point)`` of each branch, or ``None`` if empty."""
    domains = _branch_domains(profile)
    out: dict[Regime, tuple[int, float, float] | None] = {}
    ceiling = _N_CEILING
    if discrete and objective is Objective.MIN_TIME:
        # seed the cap with the best continuous-candidate value of any branch
        seed = math.inf
        for regime, dom in domains.items():
            if dom is None:
                continue
            _, ns = _branch_candidates(profile, regime, dom, objective, in_loop, False, 0)
            seed = min(seed, min(_evaluate(profile, n, objective, in_loop, True)[0] for n in ns))
        ceiling = _time_ceiling(profile, seed)
    for regime, dom in domains.items():
        if dom is None:
            out[regime] = None
            continue
        x, ns = _branch_candidates(profile, regime, dom, objective, in_loop, discrete, ceiling)
        scored = [(_evaluate(profile, n, objective, in_loop, discrete)[0], n) for n in ns]
        value, n = min(scored)
        out[regime] = (n, value, x)
    return out


def optimize(profile: ClusterProfile, objective: Objective | str, *, in_loop: bool = True,
             discrete: bool = False) -> PhysicalPlan:
    """Choose ``N`` and ``f`` minimizing iteration time or cost.

    ``in_loop=False`` costs a stand-alone MapReduce with a flat tree; it only
    changes the ``MIN_COST`` objective.
    """
    objective = Objective(objective)
    if profile.N_max is not None and profile.N_max < 1:
        raise InfeasiblePlan("no machines available")
    optima = branch_optima(profile, objective, in_loop=in_loop, discrete=discrete)
    live = [(v[1], v[0], r, v[2]) for r, v in optima.items() if v is not None]
    if not live:
        raise InfeasiblePlan(f"no feasible N for {profile}")
    value, N, regime, x = min(live, key=lambda t: (t[0], t[1]))
    _, f, est = _evaluate(profile, N, objective, in_loop, discrete)
    assert est.regime is regime
    return PhysicalPlan(
        N=N, f=f, regime=regime, predicted=est, continuous_N=x,
        objective=objective, discrete=discrete, in_loop=in_loop,
    )


def spill_beneficial(profile: ClusterProfile) -> bool:
    """Closed-form test for whether accepting disk I/O beats an all-in-memory plan.

    True iff ``M P / (A e)`` lies in ``(0, 1)`` and
    ``0 < D / P < exp(1 - M P / (A e)) - 1``.
    """
    x = profile.M * profile.P / (profile.A * E)
    if not 0 < x < 1:
        return False
    ratio = profile.D / profile.P
    return 0 < ratio < math.exp(1 - x) - 1


# --- exhaustive oracle -----------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    profile: ClusterProfile
    objective: Objective
    discrete: bool
    in_loop: bool
    plan_N: int
    plan_value: float
    sweep_N: int
    sweep_f: int
    sweep_value: float
    tolerance: float

    @property
    def rel_excess(self) -> float:
        return (self.plan_value - self.sweep_value) / abs(self.sweep_value)

    @property
    def ok(self) -> bool:
        return self.rel_excess <= self.tolerance

    def describe(self) -> str:
        status = "ok" if self.ok else "DIVERGED"
        return (
            f"{status}: objective={self.objective.value} discrete={self.discrete} "
            f"in_loop={self.in_loop} optimize N={self.plan_N} value={self.plan_value!r} "
            f"sweep N={self.sweep_N} f={self.sweep_f} value={self.sweep_value!r} "
            f"rel_excess={self.rel_excess:.3e} profile={self.profile}"
        )

    def check(self) -> ValidationReport:
        if not self.ok:
            raise OptimizerDivergence(self.describe())
        return self


MAX_SWEEP = 100_000


def _sweep_map_time(profile: ClusterProfile, N: np.ndarray) -> np.ndarray:
    R, M, P, D = profile.R, profile.M, profile.P, profile.D
    spilled = np.maximum(R - M * N, 0.0)
    return (R * P + spilled * D) / N


def _sweep_best_trees(n_max: int, A: float) -> tuple[np.ndarray, np.ndarray]:
    """Brute force over every ``f`` in ``[2, N]``: best ``A f ceil(log_f N)`` per N."""
    N = np.arange(1, n_max + 1)
    best = np.where(N == 1, 0.0, np.inf)
    best_f = np.full(n_max, 2, dtype=np.int64)
    for f in range(2, n_max + 1):
        height = np.zeros(n_max, dtype=np.int64)
        reach = 1
        while True:
            grow = N > reach
            if not grow.any():
                break
            height += grow
            reach *= f
        val = np.where(N >= f, A * f * height, np.inf)
        better = val < best
        best = np.where(better, val, best)
        best_f = np.where(better, f, best_f)
    return best, best_f


def sweep_objective(profile: ClusterProfile, objective: Objective, *, in_loop: bool = True,
                    discrete: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Objective value and fan-in for every ``N`` in ``[1, N_max]``."""
    if profile.N_max is None or profile.N_max > MAX_SWEEP:
        raise ValueError(f"sweep needs 1 <= N_max <= {MAX_SWEEP}, got {profile.N_max}")
    N = np.arange(1, profile.N_max + 1, dtype=np.float64)
    t_map = _sweep_map_time(profile, N)
    if objective is Objective.MIN_COST and not in_loop:
        t_agg = np.where(N > 1, profile.A * N, 0.0)
        return N * t_map + t_agg, np.maximum(N, 2).astype(np.int64)
    if discrete:
        t_agg, fs = _sweep_best_trees(profile.N_max, profile.A)
    else:
        t_agg = profile.A * E * np.log(N)
        fs = np.full(profile.N_max, 0, dtype=np.int64)
    T = t_map + t_agg
    return (T if objective is Objective.MIN_TIME else N * T), fs


def validate_against_sweep(profile: ClusterProfile, objective: Objective | str, *,
                           in_loop: bool = True, discrete: bool = False,
                           tolerance: float = 1e-9) -> ValidationReport:
    """Compare ``optimize`` with the minimum of an exhaustive sweep over N (and f)."""
    objective = Objective(objective)
    plan = optimize(profile, objective, in_loop=in_loop, discrete=discrete)
    values, fs = sweep_objective(profile, objective, in_loop=in_loop, discrete=discrete)
    i = int(np.argmin(values))  # first minimum: smallest N on ties
    return ValidationReport(
        profile=profile, objective=objective, discrete=discrete, in_loop=in_loop,
        plan_N=plan.N, plan_value=plan.value,
        sweep_N=i + 1, sweep_f=int(fs[i]), sweep_value=float(values[i]),
        tolerance=tolerance,
    )


def random_profile(rng: np.random.Generator, n_max: tuple[int, int] | None = (1, 2000)) -> ClusterProfile:
    """Log-uniform random profile; ``n_max=None`` gives an unbounded machine pool."""

    def logu(lo, hi):
        return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

    R = int(round(logu(1e3, 1e9)))
    M = int(round(logu(1e2, 1e7)))
    P, D = logu(1e-7, 1e-2), logu(1e-7, 1e-2)
    A = logu(1e-2, 10.0)
    N_max = None if n_max is None else int(round(logu(*n_max)))
    return ClusterProfile(R=R, N_max=N_max, M=M, P=P, D=D, A=A)


def validate_many(profiles: Iterable[ClusterProfile], *, discrete: bool = False,
                  in_loop: bool = True) -> list[ValidationReport]:
    reports = []
    for profile in profiles:
        for objective in Objective:
            reports.append(validate_against_sweep(profile, objective, in_loop=in_loop, discrete=discrete))
    return reports


__all__ = [
    "Objective", "PhysicalPlan", "InfeasiblePlan", "OptimizerDivergence", "ValidationReport",
    "optimal_fanin_time", "optimal_fanin_discrete", "optimal_fanin_cost", "best_integer_tree",
    "branch_stationary_point", "branch_optima", "optimize", "spill_beneficial",
    "sweep_objective", "validate_against_sweep", "validate_many", "random_profile",
]
