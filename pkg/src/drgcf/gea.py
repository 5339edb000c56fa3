"""Edge-addition support expansion for the robust neighbor distributions.

Recommendation graphs are sparse, so the KL ball around a node's uniform
neighbor distribution lives on a tiny support.  To widen it, each node's
distribution is mixed with a point mass on the single most similar
opposite-side non-neighbor, drawn from a random candidate subset:

    P_new = gamma * P_u + (1 - gamma) * delta(v*)

v* minimizes the affinity g(u, v) (i.e. maximizes embedding similarity).
The perturbation lives purely at the distribution level: original graph
degrees are frozen and no edge is ever added to the graph itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drgcf.dro import l2_normalize_rows, worst_case_distribution
from drgcf.graph import InteractionGraph, NormalizedAdjacency


@dataclass
class GeaConfig:
    """Perturbation knobs.

    gamma: weight kept on the original neighbor distribution, in (0, 1].
    candidate_size: how many random opposite-side non-neighbors to score.
    refresh_period: epochs between re-selections; None inherits the
        robust-reweighting refresh period.
    """

    gamma: float = 0.3
    candidate_size: int = 32
    refresh_period: int | None = None
    enabled: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.candidate_size < 1:
            raise ValueError("candidate_size must be >= 1")
        if self.refresh_period is not None and self.refresh_period < 1:
            raise ValueError("refresh_period must be >= 1")


@dataclass
class EdgeOverlay:
    """Per-node optional added neighbor carrying mass (1 - gamma).

    added[u] is the global node id mixed into u's neighbor distribution, or
    -1 when u has no overlay.  Empty when gamma == 1 (zero perturbation).
    """

    added: np.ndarray
    gamma: float

    def added_count(self) -> int:
        return int(np.count_nonzero(self.added >= 0))


def _opposite_side_pool(graph: InteractionGraph, node: int) -> np.ndarray:
    """Opposite-side nodes with degree >= 1 that are not neighbors of node.

    Zero-degree nodes are excluded: their normalization 1/sqrt(d) is
    undefined and propagation skips them anyway.
    """
    if graph.is_user(node):
        lo, hi = graph.num_users, graph.num_nodes
    else:
        lo, hi = 0, graph.num_users
    keep = graph.degrees[lo:hi] > 0
    keep[graph.neighbors(node) - lo] = False
    return np.flatnonzero(keep).astype(np.int64) + lo


def select_added_neighbor(
    node: int,
    graph: InteractionGraph,
    embeddings: np.ndarray,
    candidate_size: int,
    rng: np.random.Generator,
    l2_normalize: bool = True,
) -> int | None:
    """Pick the most similar opposite-side non-neighbor from a random subset.

    Samples min(candidate_size, pool size) candidates uniformly without
    replacement and returns the argmin of g(node, v); exact ties break to
    the lowest node id.  Returns None when no candidate exists.
    """
    pool = _opposite_side_pool(graph, node)
    if len(pool) == 0:
        return None
    k = min(candidate_size, len(pool))
    candidates = rng.choice(pool, size=k, replace=False)

    emb = l2_normalize_rows(embeddings) if l2_normalize else embeddings
    d = graph.degrees.astype(np.float64)
    g = -(emb[candidates] @ emb[node]) / np.sqrt(d[node] * d[candidates])
    best = np.lexsort((candidates, g))[0]
    return int(candidates[best])


def build_overlay(
    graph: InteractionGraph,
    embeddings: np.ndarray,
    config: GeaConfig,
    rng: np.random.Generator,
    l2_normalize: bool = True,
) -> EdgeOverlay:
    """Select one added neighbor for every node with degree >= 1.

    Nodes are visited in ascending id order from a single generator, so the
    whole overlay is reproducible from one seed.  gamma == 1 yields an
    empty overlay without consuming randomness.
    """
    added = np.full(graph.num_nodes, -1, dtype=np.int64)
    if config.gamma == 1.0 or not config.enabled:
        return EdgeOverlay(added=added, gamma=config.gamma)
    emb = l2_normalize_rows(embeddings) if l2_normalize else embeddings
    for node in range(graph.num_nodes):
        if graph.degrees[node] == 0:
            continue
        pick = select_added_neighbor(
            node, graph, emb, config.candidate_size, rng, l2_normalize=False
        )
        if pick is not None:
            added[node] = pick
    return EdgeOverlay(added=added, gamma=config.gamma)


def apply_overlay(
    adjacency: NormalizedAdjacency, overlay: EdgeOverlay
) -> NormalizedAdjacency:
    """Realize the distribution mixture as new rows of the adjacency.

    Existing entries of a row with an added neighbor v* are scaled by gamma
    and one entry of value (1 - gamma) * sqrt(d_u) / sqrt(d_v*) is inserted,
    so the row encodes exactly gamma * P_u + (1 - gamma) * delta(v*) under
    the bridge identity value(u, v) = sqrt(d_u) * P_u(v) / sqrt(d_v).
    Degrees are left at the original graph values.  gamma == 1 returns the
    input unchanged.
    """
    gamma = overlay.gamma
    if gamma == 1.0 or overlay.added_count() == 0:
        return adjacency

    n = adjacency.num_nodes
    counts = np.diff(adjacency.row_offsets)
    src = np.repeat(np.arange(n, dtype=np.int64), counts)
    with_add = np.flatnonzero(overlay.added >= 0)
    targets = overlay.added[with_add]

    for u, v in zip(with_add, targets):
        nbrs, _ = adjacency.row(int(u))
        pos = np.searchsorted(nbrs, v)
        if pos < len(nbrs) and nbrs[pos] == v:
            raise ValueError(f"overlay for node {int(u)} references existing edge {int(v)}")

    d = adjacency.degrees.astype(np.float64)
    scale = np.ones(n)
    scale[with_add] = gamma
    old_vals = adjacency.edge_values * scale[src]
    new_vals = (1.0 - gamma) * np.sqrt(d[with_add]) / np.sqrt(d[targets])

    rows = np.concatenate([src, with_add])
    cols = np.concatenate([adjacency.neighbor_ids, targets])
    vals = np.concatenate([old_vals, new_vals])
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]

    row_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=row_offsets[1:])

    return NormalizedAdjacency(
        num_users=adjacency.num_users,
        num_items=adjacency.num_items,
        row_offsets=row_offsets,
        neighbor_ids=cols,
        edge_values=vals,
        degrees=adjacency.degrees,
    )


def node_mixture(
    graph: InteractionGraph, overlay: EdgeOverlay, node: int
) -> tuple[np.ndarray, np.ndarray]:
    """(support ids, probabilities) of the node's mixed neighbor distribution.

    Without an overlay entry this is the uniform distribution over the
    node's neighbors.
    """
    nbrs = graph.neighbors(node)
    if len(nbrs) == 0:
        raise ValueError(f"node {node} has no neighbors")
    gamma = overlay.gamma
    target = overlay.added[node]
    if target < 0 or gamma == 1.0:
        return nbrs.copy(), np.full(len(nbrs), 1.0 / len(nbrs))
    support = np.append(nbrs, target)
    probs = np.append(np.full(len(nbrs), gamma / len(nbrs)), 1.0 - gamma)
    return support, probs


def dro_over_new_distribution(
    graph: InteractionGraph,
    overlay: EdgeOverlay,
    node: int,
    affinities: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Worst-case distribution with the mixed distribution as the base.

    affinities must align with the support returned by node_mixture; with
    gamma == 1 or no overlay this reduces to the plain uniform-base worst
    case.
    """
    _, probs = node_mixture(graph, overlay, node)
    return worst_case_distribution(probs, affinities, alpha)
