"""
gossipage: version age of gossip networks.

Exact small-graph solver, Monte Carlo simulator, bound chains and closed
forms for rings, grids, hypercubes, tori and complete graphs, plus a
declarative experiment harness.
"""

__version__ = "1.0.0"
