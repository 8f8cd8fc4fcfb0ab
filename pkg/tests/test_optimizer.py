import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imrlab.cost_model import E, REFERENCE_FIFTH, REFERENCE_CLUSTER, ClusterProfile, Regime
from imrlab.optimizer import (
    Objective, OptimizerDivergence, PhysicalPlan, best_integer_tree,
    branch_optima, branch_stationary_point, optimal_fanin_cost, optimal_fanin_discrete,
    optimal_fanin_time, optimize, random_profile, spill_beneficial, sweep_objective,
    validate_against_sweep, validate_many,
)


def brute_tree(n: int) -> tuple[int, int]:
    """min over f in [2, n] of f * (levels needed), levels counted by repeated multiplication."""
    best = None
    for f in range(2, n + 1):
        levels, reach = 0, 1
        while reach < n:
            reach *= f
            levels += 1
        cand = (f * levels, f)
        if best is None or cand < best:
            best = cand
    return best


def test_best_integer_tree_matches_brute_force():
    for n in range(2, 1500):
        assert best_integer_tree(n) == brute_tree(n), n


def test_best_integer_tree_large_n_spot_checks():
    for n in (3**12, 3**12 + 1, 2**40, 10**15 + 7):
        g, f = best_integer_tree(n)
        # a candidate is only valid if f^(g/f) reaches n
        assert f ** (g // f) >= n


def test_optimal_fanin_time_is_e():
    assert optimal_fanin_time() == math.e


def test_discrete_companion_is_three():
    vals = {f: f / math.log(f) for f in range(2, 50)}
    assert min(vals, key=vals.get) == 3
    assert 3 / math.log(3) < 2 / math.log(2) == pytest.approx(4 / math.log(4))


@pytest.mark.parametrize("k", range(1, 9))
def test_optimal_fanin_discrete_powers_of_three(k):
    assert optimal_fanin_discrete(3**k, A=0.37) == 3


def test_optimal_fanin_discrete_two_leaves():
    assert optimal_fanin_discrete(2, A=100.0) == 2


def test_optimal_fanin_discrete_errors():
    with pytest.raises(ValueError):
        optimal_fanin_discrete(1)
    with pytest.raises(ValueError):
        optimal_fanin_discrete(8, A=0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5000), st.floats(1e-6, 1e6))
def test_discrete_fanin_independent_of_A(n, A):
    assert optimal_fanin_discrete(n, A) == optimal_fanin_discrete(n, 1.0)


def test_optimal_fanin_cost():
    assert optimal_fanin_cost(False, 32) == 32
    assert optimal_fanin_cost(True, 32) == math.e
    assert optimal_fanin_cost(True, 2, discrete=True) == 2
    with pytest.raises(ValueError):
        optimal_fanin_cost(True, 1)


def test_reference_fifth_plans():
    cost = optimize(REFERENCE_FIFTH, "cost")
    time_ = optimize(REFERENCE_FIFTH, "time")
    assert cost.N == 24
    assert time_.N == 120
    assert time_.regime is Regime.CACHED
    assert time_.continuous_N > 120
    for discrete in (True, False):
        assert optimize(REFERENCE_FIFTH, "cost", discrete=discrete).N == 24
        assert optimize(REFERENCE_FIFTH, "time", discrete=discrete).N == 120


def test_reference_full_unbounded_time_optimum():
    p = REFERENCE_CLUSTER.with_(N_max=None)
    x = branch_stationary_point(p, Regime.CACHED, Objective.MIN_TIME)
    assert x == pytest.approx(p.R * p.P / (p.A * math.e), rel=1e-15)
    assert x == pytest.approx(1583, abs=1)
    assert optimize(p, "time").continuous_N == x


def test_synthetic_profile_min_time():
    p = ClusterProfile(R=1000, N_max=50, M=100, P=1e-3, D=1e-3, A=0.01)
    assert branch_stationary_point(p, Regime.CACHED, Objective.MIN_TIME) == pytest.approx(36.8, abs=0.05)
    plan = optimize(p, "time")
    assert plan.N == 37
    rep = validate_against_sweep(p, "time")
    assert rep.sweep_N == 37 and rep.ok


def test_spill_stationary_cost_point_is_root_of_derivative():
    p = ClusterProfile(R=10**9, N_max=None, M=10**4, P=1e-6, D=1e-3, A=1.0)
    x = branch_stationary_point(p, Regime.SPILLING, Objective.MIN_COST)
    deriv = E * p.A * (math.log(x) + 1) - p.M * p.D
    assert abs(deriv) < 1e-9 * p.M * p.D


def test_n_max_one():
    p = ClusterProfile(R=1000, N_max=1, M=10, P=1e-3, D=1e-3, A=1.0)
    for obj in Objective:
        plan = optimize(p, obj)
        assert plan.N == 1 and plan.f == 2
        rep = validate_against_sweep(p, obj)
        assert rep.sweep_N == 1 and rep.ok


def test_boundary_assigned_to_cached_branch():
    p = ClusterProfile(R=1000, N_max=None, M=100, P=1e-3, D=1e-3, A=1.0)
    opt = branch_optima(p, Objective.MIN_COST)
    assert opt[Regime.CACHED][0] == 10
    assert opt[Regime.SPILLING][0] <= 9


def test_spill_branch_empty_when_everything_fits():
    # R <= M means the spill branch is empty; N_max >= 1 keeps cached nonempty
    p = ClusterProfile(R=5, N_max=1, M=10, P=1e-3, D=0.0, A=1.0)
    assert branch_optima(p, Objective.MIN_TIME)[Regime.SPILLING] is None
    assert optimize(p, "time").N == 1


def test_spill_beneficial_examples():
    assert spill_beneficial(REFERENCE_CLUSTER) is False
    x = REFERENCE_CLUSTER.M * REFERENCE_CLUSTER.P / (REFERENCE_CLUSTER.A * math.e)
    assert x == pytest.approx(13.19, abs=0.01)
    assert spill_beneficial(REFERENCE_CLUSTER.with_(D=0.0)) is False
    A, M = 1.0, 1000
    P = 0.5 * A * math.e / M
    p = ClusterProfile(R=10**6, N_max=None, M=M, P=P, D=0.3 * P, A=A)
    assert spill_beneficial(p) is True
    assert spill_beneficial(p.with_(D=0.65 * P)) is False


def test_plan_report_and_csv():
    plan = optimize(REFERENCE_FIFTH, "cost")
    row = plan.csv_row().split(",")
    assert PhysicalPlan.CSV_HEADER.split(",") == ["objective", "N", "f", "regime", "T", "C", "continuous_N"]
    assert row[:4] == ["cost", "24", "3", "spilling"]
    assert float(row[5]) == plan.predicted.C
    assert "map tasks N      : 24" in plan.report()


@pytest.mark.parametrize("discrete", [False, True])
@pytest.mark.parametrize("in_loop", [True, False])
def test_validate_random_profiles(discrete, in_loop):
    rng = np.random.default_rng(2024)
    n_max = (1, 300) if discrete else (1, 3000)
    profiles = [random_profile(rng, n_max) for _ in range(60)]
    reports = validate_many(profiles, discrete=discrete, in_loop=in_loop)
    bad = [r.describe() for r in reports if not r.ok]
    assert not bad, "\n".join(bad)


def test_plan_feasibility_on_random_profiles():
    rng = np.random.default_rng(5)
    for _ in range(200):
        p = random_profile(rng)
        for obj in Objective:
            plan = optimize(p, obj)
            assert 1 <= plan.N <= p.N_max
            assert plan.f >= 2
            assert (plan.regime is Regime.CACHED) == (p.R <= p.M * plan.N)


def test_unbounded_discrete_time_matches_wide_sweep():
    rng = np.random.default_rng(9)
    for _ in range(30):
        p = random_profile(rng, None)
        plan = optimize(p, "time", discrete=True)
        # the optimum cannot sit beyond exp(T/(A e)); sweep comfortably past it
        bound = min(int(math.exp(plan.value / (p.A * math.e))) + 2, 3000)
        if plan.N > bound:
            continue
        values, _ = sweep_objective(p.with_(N_max=bound), Objective.MIN_TIME, discrete=True)
        assert plan.value <= values.min() * (1 + 1e-9)


def test_validation_report_check_raises():
    p = ClusterProfile(R=1000, N_max=50, M=100, P=1e-3, D=1e-3, A=0.01)
    rep = validate_against_sweep(p, "time")
    assert rep.check() is rep
    broken = rep.__class__(**{**rep.__dict__, "plan_value": rep.sweep_value * 1.1})
    with pytest.raises(OptimizerDivergence):
        broken.check()


def test_sweep_requires_bounded_profile():
    with pytest.raises(ValueError):
        sweep_objective(REFERENCE_CLUSTER.with_(N_max=None), Objective.MIN_TIME)
