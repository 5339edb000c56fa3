"""Full-ranking top-K evaluation with train-item masking.

Every item in the catalog is scored by dot product against the user's final
embedding, the user's training positives are masked out, and NDCG /
Precision / Recall are computed at the cutoff.  Gains are binary, the
discount is log2(rank + 1), and the ideal DCG truncates at
min(|test items|, k).  Aggregates are plain arithmetic means over users
with a non-empty test set.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from drgcf.graph import InteractionGraph


@dataclass
class MetricsReport:
    k: int
    ndcg: float
    precision: float
    recall: float
    num_evaluated_users: int
    per_user: dict[int, tuple[float, float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "ndcg": self.ndcg,
            "precision": self.precision,
            "recall": self.recall,
            "users": self.num_evaluated_users,
        }

    def write_json(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def rank_items(
    final_embeddings: np.ndarray,
    user: int,
    num_users: int,
    num_items: int,
    mask_items: np.ndarray | None = None,
) -> np.ndarray:
    """All item-local indices ordered by descending score.

    mask_items (item-local indices, typically the user's training positives)
    are pushed to the bottom via a -inf score; exact score ties break to the
    ascending item id.
    """
    if not 0 <= user < num_users:
        raise IndexError(f"user {user} out of range")
    item_emb = final_embeddings[num_users : num_users + num_items]
    scores = item_emb @ final_embeddings[user]
    if mask_items is not None and len(mask_items):
        scores = scores.copy()
        scores[mask_items] = -np.inf
    # Stable sort of -scores keeps the natural ascending-id order on ties.
    return np.argsort(-scores, kind="stable")


def metrics_at_k(
    ranked_items: np.ndarray, test_items: set[int] | np.ndarray, k: int
) -> tuple[float, float, float]:
    """(precision, recall, ndcg) of one ranked list against the test items."""
    if k < 1:
        raise ValueError("k must be >= 1")
    test = set(int(i) for i in test_items)
    if not test:
        raise ValueError("empty test set; user should be skipped")
    top = ranked_items[:k]
    rel = np.array([1.0 if int(i) in test else 0.0 for i in top])
    hits = float(rel.sum())
    precision = hits / k
    recall = hits / len(test)
    discounts = 1.0 / np.log2(np.arange(2, len(top) + 2))
    dcg = float((rel * discounts).sum())
    ideal = float(discounts[: min(len(test), k)].sum())
    ndcg = dcg / ideal if ideal > 0 else 0.0
    return precision, recall, ndcg


def evaluate_ranking(
    final_embeddings: np.ndarray,
    train_graph: InteractionGraph,
    test_items_by_user: dict[int, set[int]],
    k: int = 20,
    keep_per_user: bool = False,
    batch_users: int = 512,
) -> MetricsReport:
    """Score every test user against the full catalog and average metrics.

    test_items_by_user maps user index -> item-local test positives; users
    with empty test sets are excluded from the averages.  Training positives
    of each user are masked from the ranking.
    """
    num_users, num_items = train_graph.num_users, train_graph.num_items
    users = sorted(u for u, items in test_items_by_user.items() if items)
    if not users:
        return MetricsReport(k=k, ndcg=0.0, precision=0.0, recall=0.0, num_evaluated_users=0)

    item_emb = final_embeddings[num_users : num_users + num_items]
    sums = np.zeros(3)
    per_user: dict[int, tuple[float, float, float]] = {}

    for lo in range(0, len(users), batch_users):
        chunk = users[lo : lo + batch_users]
        scores = final_embeddings[chunk] @ item_emb.T
        for row, u in enumerate(chunk):
            s = scores[row]
            mask = train_graph.user_items(u)
            if len(mask):
                s[mask] = -np.inf
            ranked = np.argsort(-s, kind="stable")
            p, r, n = metrics_at_k(ranked, test_items_by_user[u], k)
            sums += (p, r, n)
            if keep_per_user:
                per_user[u] = (p, r, n)

    count = len(users)
    return MetricsReport(
        k=k,
        ndcg=sums[2] / count,
        precision=sums[0] / count,
        recall=sums[1] / count,
        num_evaluated_users=count,
        per_user=per_user,
    )
