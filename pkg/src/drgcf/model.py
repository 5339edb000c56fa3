"""Linear K-layer propagation, layer combination, and dot-product scoring.

The forward map is E^(k) = A_hat @ E^(k-1) for k = 1..K with the combined
output either the uniform mean of layers 0..K (the LightGCN convention,
default) or the last layer.  Propagation is linear in the embeddings, so the
exact reverse-mode gradient is the same chain applied with the transposed
adjacency.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from drgcf.graph import NormalizedAdjacency

LAYER_COMBINE_MODES = ("mean", "last")


@dataclass
class PropagationOutput:
    """Per-layer embeddings E^(0..K) plus the combined matrix."""

    layers: list[np.ndarray]
    final: np.ndarray
    combine: str


def init_embeddings(num_nodes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean normal init with std 0.1 (the LightGCN convention)."""
    return rng.normal(loc=0.0, scale=0.1, size=(num_nodes, dim))


def propagate(
    adjacency: NormalizedAdjacency,
    embeddings: np.ndarray,
    num_layers: int,
    combine: str = "mean",
) -> PropagationOutput:
    """Run num_layers sparse propagation steps and combine the layers.

    num_layers == 0 returns the input unchanged as the final embedding.
    """
    if embeddings.shape[0] != adjacency.num_nodes:
        raise ValueError(
            f"embedding rows {embeddings.shape[0]} != nodes {adjacency.num_nodes}"
        )
    if num_layers < 0:
        raise ValueError("num_layers must be >= 0")
    if combine not in LAYER_COMBINE_MODES:
        raise ValueError(f"combine must be one of {LAYER_COMBINE_MODES}")

    mat = adjacency.matrix()
    layers = [embeddings]
    cur = embeddings
    for _ in range(num_layers):
        cur = mat @ cur
        layers.append(cur)
    if combine == "mean":
        final = sum(layers) / float(len(layers))
    else:
        final = layers[-1]
    return PropagationOutput(layers=layers, final=final, combine=combine)


def backpropagate(
    adjacency: NormalizedAdjacency,
    grad_final: np.ndarray,
    num_layers: int,
    combine: str = "mean",
) -> np.ndarray:
    """Exact gradient on E^(0) given the gradient on the combined output.

    For the mean combiner this is (1/(K+1)) * sum_k (A_hat^T)^k G.  The
    adjacency must be the same snapshot used in the forward pass; for the
    symmetric unweighted adjacency the transpose is a no-op, for reweighted
    snapshots the transposed matrix is materialized once and cached.
    """
    if grad_final.shape[0] != adjacency.num_nodes:
        raise ValueError(
            f"gradient rows {grad_final.shape[0]} != nodes {adjacency.num_nodes}"
        )
    if combine not in LAYER_COMBINE_MODES:
        raise ValueError(f"combine must be one of {LAYER_COMBINE_MODES}")

    mat_t = adjacency.matrix_t()
    if combine == "mean":
        acc = grad_final.copy()
        cur = grad_final
        for _ in range(num_layers):
            cur = mat_t @ cur
            acc += cur
        return acc / float(num_layers + 1)
    cur = grad_final
    for _ in range(num_layers):
        cur = mat_t @ cur
    return cur


def score(final_embeddings: np.ndarray, user: int, item_node: int) -> float:
    """Dot product of the final user and item rows (global node ids)."""
    n = final_embeddings.shape[0]
    if not (0 <= user < n and 0 <= item_node < n):
        raise IndexError(f"node id out of range ({user}, {item_node}) for {n} nodes")
    return float(final_embeddings[user] @ final_embeddings[item_node])


def dump_embeddings(path: str | os.PathLike, embeddings: np.ndarray) -> None:
    """Text dump: header `num_nodes dim`, one space-separated row per node.

    Values are written with repr-level precision so a dump/load round trip
    is bit-exact.
    """
    n, c = embeddings.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {c}\n")
        for row in embeddings:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_embeddings(path: str | os.PathLike) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        n, c = int(header[0]), int(header[1])
        out = np.empty((n, c), dtype=np.float64)
        for k in range(n):
            out[k] = np.fromstring(fh.readline(), sep=" ")
    if out.shape != (n, c):
        raise ValueError(f"embedding file {path} truncated")
    return out
