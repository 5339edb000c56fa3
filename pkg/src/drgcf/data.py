"""Interaction ingestion and the three distribution-shift splits.

Three ways to produce a train/validation/test bundle with a controlled
train-test mismatch:

  * popularity: per-item quota sampling makes the test item histogram close
    to uniform while the training set keeps its long tail;
  * temporal: per user, earliest 60% of interactions train, most recent 20%
    test, the middle 20% validation;
  * exposure: train and test arrive as separate rating files (biased logged
    feedback vs. randomized exposure); ratings > 3 count as positive.

Plus the shift meter: KL divergence between test and train item-frequency
distributions.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SMOOTHING_EPS = 1e-9


class DataFormatError(ValueError):
    """Malformed input rows or empty split results."""


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: int | None = None


@dataclass
class SplitBundle:
    """Train/validation/test partition plus how it was made."""

    train: list[Interaction]
    validation: list[Interaction]
    test: list[Interaction]
    meta: dict = field(default_factory=dict)

    def parts(self) -> dict[str, list[Interaction]]:
        return {"train": self.train, "valid": self.validation, "test": self.test}


# ---------------------------------------------------------------------------
# TSV ingestion / emission
# ---------------------------------------------------------------------------


def read_interactions_tsv(path: str | os.PathLike) -> list[Interaction]:
    """Read `user<TAB>item[<TAB>timestamp]` lines; ids stay raw strings."""
    out: list[Interaction] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) == 2:
                out.append(Interaction(parts[0], parts[1]))
            elif len(parts) == 3:
                try:
                    ts = int(parts[2])
                except ValueError as exc:
                    raise DataFormatError(
                        f"{path}:{lineno}: bad timestamp {parts[2]!r}"
                    ) from exc
                out.append(Interaction(parts[0], parts[1], ts))
            else:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 2 or 3 tab-separated fields, "
                    f"got {len(parts)}"
                )
    return out


def write_interactions_tsv(path: str | os.PathLike, rows: Iterable[Interaction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            if r.timestamp is None:
                fh.write(f"{r.user}\t{r.item}\n")
            else:
                fh.write(f"{r.user}\t{r.item}\t{r.timestamp}\n")


def write_split(bundle: SplitBundle, out_dir: str | os.PathLike, name: str) -> dict[str, str]:
    """Write `<name>.{train,valid,test}.tsv` plus `<name>.split.json`."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for part, rows in bundle.parts().items():
        p = os.path.join(out_dir, f"{name}.{part}.tsv")
        write_interactions_tsv(p, rows)
        paths[part] = p
    meta_path = os.path.join(out_dir, f"{name}.split.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                **bundle.meta,
                "sizes": {k: len(v) for k, v in bundle.parts().items()},
            },
            fh,
            indent=2,
        )
    paths["meta"] = meta_path
    return paths


def _dedup_pairs(interactions: Sequence[Interaction]) -> list[Interaction]:
    """Collapse repeated (user, item) pairs, keeping the first occurrence.

    Splits must keep the partitions disjoint at the pair level, so repeats
    have to be resolved before any partitioning (feedback is binary anyway).
    """
    seen: set[tuple[str, str]] = set()
    out = []
    for r in interactions:
        key = (r.user, r.item)
        if key not in seen:
            seen.add(key)
            out.append(r)
    return out


def _drop_cold_test_users(bundle: SplitBundle) -> None:
    """Remove validation/test interactions of users absent from train."""
    train_users = {r.user for r in bundle.train}
    bundle.validation = [r for r in bundle.validation if r.user in train_users]
    bundle.test = [r for r in bundle.test if r.user in train_users]


def apply_min_count(
    interactions: Sequence[Interaction], min_count: int
) -> list[Interaction]:
    """Iteratively drop users/items with fewer than min_count interactions."""
    rows = list(interactions)
    if min_count <= 0:
        return rows
    while True:
        ucnt: dict[str, int] = defaultdict(int)
        icnt: dict[str, int] = defaultdict(int)
        for r in rows:
            ucnt[r.user] += 1
            icnt[r.item] += 1
        kept = [
            r for r in rows if ucnt[r.user] >= min_count and icnt[r.item] >= min_count
        ]
        if len(kept) == len(rows):
            return kept
        rows = kept


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def split_popularity(
    interactions: Sequence[Interaction],
    test_quota_per_item: int,
    seed: int,
) -> SplitBundle:
    """Per-item quota sampling: near-uniform test, long-tail train.

    For every item, min(count, quota) of its interactions are sampled
    uniformly into the test pool and the remainder stays in train, so each
    item contributes (at most) the same number of test interactions no
    matter how popular it is.  Test interactions of users that end up absent
    from train are dropped.  Validation comes out empty; carve one from the
    training side separately if early stopping is wanted.
    """
    if test_quota_per_item < 1:
        raise ValueError("test_quota_per_item must be >= 1")
    rows = _dedup_pairs(interactions)
    if not rows:
        raise DataFormatError("no interactions to split")
    rng = np.random.default_rng(seed)

    by_item: dict[str, list[int]] = defaultdict(list)
    for idx, r in enumerate(rows):
        by_item[r.item].append(idx)

    test_idx: set[int] = set()
    for item in sorted(by_item):
        idxs = by_item[item]
        take = min(len(idxs), test_quota_per_item)
        picked = rng.choice(len(idxs), size=take, replace=False)
        test_idx.update(idxs[k] for k in picked)

    bundle = SplitBundle(
        train=[r for k, r in enumerate(rows) if k not in test_idx],
        validation=[],
        test=[r for k, r in enumerate(rows) if k in test_idx],
        meta={"type": "popularity", "quota": test_quota_per_item, "seed": seed},
    )
    if not bundle.train:
        raise DataFormatError("popularity split produced an empty training set")
    _drop_cold_test_users(bundle)
    if not bundle.test:
        raise DataFormatError("popularity split produced an empty test set")
    return bundle


def split_temporal(interactions: Sequence[Interaction]) -> SplitBundle:
    """Per-user time split: earliest 60% train, most recent 20% test.

    The middle 20% becomes validation (needed for early stopping anyway).
    Counts use floor for train and ceil for test with train taking priority
    on degenerate users, i.e. a single-interaction user contributes one
    training row and nothing else.  Ties in timestamp keep input order.
    """
    rows = _dedup_pairs(interactions)
    if not rows:
        raise DataFormatError("no interactions to split")
    if any(r.timestamp is None for r in rows):
        raise DataFormatError("temporal split requires a timestamp on every row")

    by_user: dict[str, list[Interaction]] = defaultdict(list)
    for r in rows:
        by_user[r.user].append(r)

    train: list[Interaction] = []
    valid: list[Interaction] = []
    test: list[Interaction] = []
    for user in sorted(by_user):
        urows = sorted(by_user[user], key=lambda r: r.timestamp)  # stable
        n = len(urows)
        n_train = max(1, int(np.floor(0.6 * n)))
        n_test = min(int(np.ceil(0.2 * n)), n - n_train)
        n_valid = n - n_train - n_test
        train.extend(urows[:n_train])
        valid.extend(urows[n_train : n_train + n_valid])
        test.extend(urows[n_train + n_valid :])

    bundle = SplitBundle(
        train=train, validation=valid, test=test, meta={"type": "temporal"}
    )
    _drop_cold_test_users(bundle)
    return bundle


def _read_rating_rows(path: str | os.PathLike) -> list[Interaction]:
    """`user<TAB>item<TAB>rating` rows; keeps rating > 3 as positives."""
    out: list[Interaction] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(
                    f"{path}:{lineno}: expected user<TAB>item<TAB>rating, "
                    f"got {len(parts)} fields"
                )
            try:
                rating = float(parts[2])
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}:{lineno}: bad rating {parts[2]!r}"
                ) from exc
            if rating > 3:
                out.append(Interaction(parts[0], parts[1]))
    return out


def load_exposure_pair(
    train_file: str | os.PathLike, test_file: str | os.PathLike
) -> SplitBundle:
    """Ingest a biased-train / randomized-test rating pair as-is.

    No re-splitting happens: the files already embody the exposure shift.
    Ratings of exactly 3 or below are dropped (strict inequality).
    """
    train = _dedup_pairs(_read_rating_rows(train_file))
    test = _dedup_pairs(_read_rating_rows(test_file))
    if not train:
        raise DataFormatError(f"{train_file}: no positive interactions (rating > 3)")
    if not test:
        raise DataFormatError(f"{test_file}: no positive interactions (rating > 3)")
    bundle = SplitBundle(
        train=train,
        validation=[],
        test=test,
        meta={"type": "exposure", "train_file": str(train_file), "test_file": str(test_file)},
    )
    _drop_cold_test_users(bundle)
    if not bundle.test:
        raise DataFormatError("exposure pair left no test users that appear in train")
    return bundle


# ---------------------------------------------------------------------------
# Shift meter
# ---------------------------------------------------------------------------


def shift_kl(
    train_interactions: Sequence[Interaction],
    test_interactions: Sequence[Interaction],
) -> float:
    """KL(test item frequencies || train item frequencies), in nats.

    Frequencies live on the union support; zero frequencies are replaced by
    a 1e-9 floor and both sides renormalized, so disjoint supports give a
    large but finite value.
    """
    if not train_interactions or not test_interactions:
        raise ValueError("shift_kl needs non-empty train and test interactions")
    items = sorted(
        {r.item for r in train_interactions} | {r.item for r in test_interactions}
    )
    index = {item: k for k, item in enumerate(items)}

    def freqs(rows: Sequence[Interaction]) -> np.ndarray:
        counts = np.zeros(len(items))
        for r in rows:
            counts[index[r.item]] += 1
        f = counts / counts.sum()
        f = np.where(f > 0, f, SMOOTHING_EPS)
        return f / f.sum()

    p = freqs(test_interactions)
    q = freqs(train_interactions)
    return float(np.sum(p * np.log(p / q)))
