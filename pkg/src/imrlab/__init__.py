"""Iterative MapReduce laboratory: a local runtime with caching and spilling,
balanced aggregation trees, a cost-based planner for machine count and fan-in,
a virtual-clock simulator, and batch gradient descent as the reference workload.
"""

__version__ = "0.1.0"
