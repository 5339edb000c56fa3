"""Distributionally robust graph collaborative filtering.

A from-scratch implicit-feedback recommender built on LightGCN-style linear
propagation over a bipartite user-item graph, hardened against train/test
distribution shift by reweighting graph edges toward the worst-case neighbor
distribution inside a KL ball, and by mixing a similar non-neighbor into each
node's neighbor distribution to expand its support.
"""

from drgcf.graph import InteractionGraph, NormalizedAdjacency, build_graph, normalize

__all__ = [
    "InteractionGraph",
    "NormalizedAdjacency",
    "build_graph",
    "normalize",
]

__version__ = "0.1.0"
