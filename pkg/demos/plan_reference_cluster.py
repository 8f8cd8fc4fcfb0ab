"""Plan N and fan-in for the 30-machine reference cluster, then check the plan
against a simulated sweep over the machine counts that were actually tried.

    python demos/plan_reference_cluster.py
"""

from imrlab.cost_model import REFERENCE_CLUSTER, REFERENCE_FIFTH, Regime
from imrlab.optimizer import Objective, branch_optima, branch_stationary_point, optimize, spill_beneficial
from imrlab.simulator import sweep

profile = REFERENCE_FIFTH
print(profile)
print(f"records per machine cache: {profile.M:,}, all data cached from N = {profile.cache_threshold}")

for objective in Objective:
    plan = optimize(profile, objective)
    print()
    print(plan.report())

# both branches, before the lower one is picked
for objective in Objective:
    for regime, best in branch_optima(profile, objective).items():
        print(f"{objective.value:>4} {regime.value:>8}: N={best[0]:>4} value={best[1]:.6g} stationary={best[2]:.6g}")

grid = [15, 24, 30, 60, 90, 120]
res = sweep(profile, grid, [4])
print()
print(res.to_csv(), end="")
print(f"simulated argmin T: N={res.argmin('T_model').N}  argmin C: N={res.argmin('C_model').N}")

# the full dataset wants far more machines than the rack has
full = REFERENCE_CLUSTER.with_(N_max=None)
print()
print(f"unbounded time-optimal N for the full dataset: {branch_stationary_point(full, Regime.CACHED, Objective.MIN_TIME):.1f}")
print(f"is disk I/O worth it on this cluster? {spill_beneficial(profile)}")
