"""How the best fan-in depends on the number of leaves and on A.

Under the cost model A only scales the aggregation time, so the best integer
fan-in depends on the leaf count alone, and over real tree heights it is e.
"""

import math

import numpy as np

from imrlab.cost_model import ClusterProfile, agg_time_discrete
from imrlab.optimizer import best_integer_tree, optimal_fanin_discrete, optimal_fanin_time
from imrlab.simulator import best_fanin

print(f"continuous optimum: f = {optimal_fanin_time():.12f}")
print("f / ln f:", {f: round(f / math.log(f), 4) for f in range(2, 9)})
print()

print("leaves  best f (formula)  f*height   best f (simulated, f in 2..8)")
p = ClusterProfile(R=1024, N_max=1024, M=1024, P=1e-6, D=0.0, A=1.0)
for n in (2, 4, 8, 16, 32, 81, 100, 243, 1000):
    g, f = best_integer_tree(n)
    print(f"{n:>6}  {f:>16}  {g:>8}   {best_fanin(p, n, range(2, 9)):>6}")

print()
# A does not move the optimum
for A in np.geomspace(1e-3, 1e3, 4):
    fs = [optimal_fanin_discrete(n, A) for n in (2, 4, 8, 16, 32)]
    print(f"A={A:<8.3g} best f for 2..32 leaves: {fs}")

# ties are common: a full binary tree and a 4-ary tree cost the same on 16 leaves
print(agg_time_discrete(16, 2, 1.0), agg_time_discrete(16, 4, 1.0))
