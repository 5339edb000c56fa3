"""Bipartite user-item interaction graph in compressed sparse row form.

Node id convention: users occupy indices [0, num_users) and items occupy
[num_users, num_users + num_items).  Interactions are given as
(user_index, item_index) pairs with item indices local to the item side;
internally every edge is stored in both directions so the adjacency is
symmetric.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp


class GraphConstructionError(ValueError):
    """Raised when interaction pairs violate the graph preconditions."""


@dataclass(frozen=True)
class InteractionGraph:
    """Immutable bipartite interaction graph with CSR neighbor lists.

    Attributes:
        num_users: number of user nodes.
        num_items: number of item nodes.
        row_offsets: int64 array of length num_nodes + 1; neighbors of node v
            live in neighbor_ids[row_offsets[v]:row_offsets[v + 1]].
        neighbor_ids: int64 array of global node ids, both edge directions
            stored, each neighbor list sorted ascending and duplicate-free.
        degrees: int64 array, degrees[v] == row_offsets[v+1] - row_offsets[v].
    """

    num_users: int
    num_items: int
    row_offsets: np.ndarray
    neighbor_ids: np.ndarray
    degrees: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def num_edges(self) -> int:
        """Number of undirected user-item edges."""
        return len(self.neighbor_ids) // 2

    def neighbors(self, node: int) -> np.ndarray:
        """Sorted neighbor ids of ``node`` (a view, do not mutate)."""
        return self.neighbor_ids[self.row_offsets[node] : self.row_offsets[node + 1]]

    def has_edge(self, a: int, b: int) -> bool:
        nbrs = self.neighbors(a)
        pos = np.searchsorted(nbrs, b)
        return pos < len(nbrs) and nbrs[pos] == b

    def is_user(self, node: int) -> bool:
        return node < self.num_users

    def user_items(self, user: int) -> np.ndarray:
        """Item-local indices the user interacted with."""
        return self.neighbors(user) - self.num_users


@dataclass
class NormalizedAdjacency:
    """Symmetrically normalized adjacency sharing the graph's CSR skeleton.

    edge_values[e] holds 1/(sqrt(d_u) * sqrt(d_v)) for the directed entry
    u -> v at position e; rows of zero-degree nodes are empty.  Instances
    produced by the robust reweighting keep this skeleton but carry
    non-symmetric values.
    """

    num_users: int
    num_items: int
    row_offsets: np.ndarray
    neighbor_ids: np.ndarray
    edge_values: np.ndarray
    degrees: np.ndarray
    _matrix: sp.csr_matrix | None = field(default=None, repr=False, compare=False)
    _matrix_t: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    def row(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        """(neighbor ids, values) of one row."""
        lo, hi = self.row_offsets[node], self.row_offsets[node + 1]
        return self.neighbor_ids[lo:hi], self.edge_values[lo:hi]

    def matrix(self) -> sp.csr_matrix:
        """scipy CSR operator used for propagation; built once and cached.

        Zero-degree nodes are skipped by propagation, not zeroed: their rows
        carry an identity entry in the operator (the stored edge_values are
        untouched), so isolated embeddings pass through every layer
        unchanged.
        """
        if self._matrix is None:
            n = self.num_nodes
            mat = sp.csr_matrix(
                (self.edge_values, self.neighbor_ids, self.row_offsets), shape=(n, n)
            )
            isolated = np.flatnonzero(self.degrees == 0)
            if len(isolated):
                eye = sp.csr_matrix(
                    (np.ones(len(isolated)), (isolated, isolated)), shape=(n, n)
                )
                mat = (mat + eye).tocsr()
            self._matrix = mat
        return self._matrix

    def matrix_t(self) -> sp.csr_matrix:
        """Cached CSR transpose, needed to backpropagate through
        non-symmetric reweighted snapshots."""
        if self._matrix_t is None:
            self._matrix_t = self.matrix().T.tocsr()
        return self._matrix_t

    def with_values(self, edge_values: np.ndarray) -> "NormalizedAdjacency":
        """New adjacency over the same skeleton with replaced values."""
        return NormalizedAdjacency(
            num_users=self.num_users,
            num_items=self.num_items,
            row_offsets=self.row_offsets,
            neighbor_ids=self.neighbor_ids,
            edge_values=edge_values,
            degrees=self.degrees,
        )


def build_graph(
    interactions: Iterable[tuple[int, int]], num_users: int, num_items: int
) -> InteractionGraph:
    """Build the bipartite graph from (user, item) index pairs.

    Duplicate pairs collapse to a single edge (implicit feedback is binary),
    both directions are stored, and neighbor lists come out sorted, so the
    result is independent of the input order.

    Raises:
        GraphConstructionError: some pair is out of range; the message names
            the first offending pair.
    """
    pairs = np.asarray(list(interactions), dtype=np.int64)
    if pairs.size == 0:
        pairs = pairs.reshape(0, 2)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise GraphConstructionError("interactions must be (user, item) pairs")

    users, items = pairs[:, 0], pairs[:, 1]
    bad = (users < 0) | (users >= num_users) | (items < 0) | (items >= num_items)
    if bad.any():
        k = int(np.argmax(bad))
        raise GraphConstructionError(
            f"interaction ({int(users[k])}, {int(items[k])}) out of range for "
            f"{num_users} users x {num_items} items"
        )

    # Dedup via a scalar key; num_items * num_users stays far below 2**63 at
    # any scale this engine targets.
    keys = np.unique(users * np.int64(num_items) + items)
    u = keys // num_items
    i = keys % num_items + num_users

    num_nodes = num_users + num_items
    rows = np.concatenate([u, i])
    cols = np.concatenate([i, u])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]

    degrees = np.bincount(rows, minlength=num_nodes).astype(np.int64)
    row_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(degrees, out=row_offsets[1:])

    return InteractionGraph(
        num_users=num_users,
        num_items=num_items,
        row_offsets=row_offsets,
        neighbor_ids=cols,
        degrees=degrees,
    )


def normalize(graph: InteractionGraph) -> NormalizedAdjacency:
    """Symmetric normalization: value(u, v) = 1 / (sqrt(d_u) * sqrt(d_v)).

    Zero-degree nodes simply have empty rows; no entries are emitted for
    them and their embeddings are never touched by propagation.
    """
    num_nodes = graph.num_nodes
    src = np.repeat(np.arange(num_nodes, dtype=np.int64), graph.degrees)
    inv_sqrt = np.zeros(num_nodes, dtype=np.float64)
    nz = graph.degrees > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(graph.degrees[nz].astype(np.float64))
    values = inv_sqrt[src] * inv_sqrt[graph.neighbor_ids]

    return NormalizedAdjacency(
        num_users=graph.num_users,
        num_items=graph.num_items,
        row_offsets=graph.row_offsets.copy(),
        neighbor_ids=graph.neighbor_ids.copy(),
        edge_values=values,
        degrees=graph.degrees.copy(),
    )


# ---------------------------------------------------------------------------
# Raw-id ingestion: TSV interactions use arbitrary string ids; the engine
# works on dense indices and records the mapping in idmap.tsv.
# ---------------------------------------------------------------------------


@dataclass
class IdMap:
    """Mapping from raw string ids to dense indices, one space per role.

    Built from sorted unique raw ids so the mapping does not depend on the
    order interactions arrive in.
    """

    users: dict[str, int]
    items: dict[str, int]

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_items(self) -> int:
        return len(self.items)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "IdMap":
        user_ids: set[str] = set()
        item_ids: set[str] = set()
        for u, i in pairs:
            user_ids.add(u)
            item_ids.add(i)
        return cls(
            users={raw: k for k, raw in enumerate(sorted(user_ids))},
            items={raw: k for k, raw in enumerate(sorted(item_ids))},
        )

    def encode(self, pairs: Iterable[tuple[str, str]]) -> list[tuple[int, int]]:
        return [(self.users[u], self.items[i]) for u, i in pairs]

    def write(self, path: str | os.PathLike) -> None:
        """Write `raw_id<TAB>dense_id<TAB>role` lines."""
        with open(path, "w", encoding="utf-8") as fh:
            for raw, dense in sorted(self.users.items(), key=lambda kv: kv[1]):
                fh.write(f"{raw}\t{dense}\tuser\n")
            for raw, dense in sorted(self.items.items(), key=lambda kv: kv[1]):
                fh.write(f"{raw}\t{dense}\titem\n")

    @classmethod
    def read(cls, path: str | os.PathLike) -> "IdMap":
        users: dict[str, int] = {}
        items: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                raw, dense, role = line.split("\t")
                if role == "user":
                    users[raw] = int(dense)
                elif role == "item":
                    items[raw] = int(dense)
                else:
                    raise ValueError(f"unknown role {role!r} in {path}")
        return cls(users=users, items=items)
