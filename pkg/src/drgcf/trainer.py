"""BPR training loop with periodic robust-reweighting and overlay refresh.

Gradients are fully analytic: the pairwise ranking loss differentiates
through scoring and the linear propagation chain back to the layer-0
embeddings (plus the L2 term 2*lambda*E).  The robust machinery enters only
through the adjacency snapshot used for propagation; the snapshot is held
fixed between refreshes, so no gradient ever flows through the edge
weights.  Evaluation always propagates over the plain normalized adjacency:
robustness is a property of the learned embeddings, and measuring every
configuration through the same inference operator keeps comparisons fair.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from drgcf.dro import DroConfig, reweight_adjacency
from drgcf.gea import EdgeOverlay, GeaConfig, apply_overlay, build_overlay
from drgcf.graph import InteractionGraph, NormalizedAdjacency, normalize
from drgcf.metrics import MetricsReport, evaluate_ranking
from drgcf.model import (
    backpropagate,
    dump_embeddings,
    init_embeddings,
    load_embeddings,
    propagate,
)

log = logging.getLogger(__name__)

NEG_SAMPLE_RETRY_CAP = 32


class TrainingDivergedError(RuntimeError):
    """Raised when the epoch loss becomes non-finite."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    l2_lambda: float = 1e-4
    epochs: int = 100
    batch_size: int = 1024
    num_layers: int = 3
    dim: int = 32
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    layer_combine: str = "mean"
    patience: int = 20
    eval_every: int = 1
    eval_k: int = 20

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")


def bpr_loss(score_pos, score_neg):
    """-log sigmoid(pos - neg), computed as softplus(neg - pos).

    Stable for any score magnitude; accepts scalars or arrays.
    """
    return np.logaddexp(0.0, -(np.asarray(score_pos) - np.asarray(score_neg)))


def sample_negatives(
    graph: InteractionGraph,
    users: np.ndarray,
    rng: np.random.Generator,
    retry_cap: int = NEG_SAMPLE_RETRY_CAP,
    edge_keys: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform negatives over each user's non-interacted items.

    Rejection-samples up to retry_cap rounds, then falls back to an explicit
    complement draw for the stragglers.  Returns (negatives, valid) where
    negatives holds item-local indices and valid flags users that have at
    least one non-interacted item (the rest get a warning and should be
    skipped by the caller).  Callers in a loop should precompute edge_keys
    once via build_edge_keys.
    """
    num_items = graph.num_items
    # Membership tests run against the sorted directed-edge key array.
    if edge_keys is None:
        edge_keys = build_edge_keys(graph)
    negatives = rng.integers(0, num_items, size=len(users), dtype=np.int64)
    pending = _is_member(edge_keys, users, negatives, num_items)
    tries = 0
    while pending.any() and tries < retry_cap:
        redraw = rng.integers(0, num_items, size=int(pending.sum()), dtype=np.int64)
        negatives[pending] = redraw
        pending = _is_member(edge_keys, users, negatives, num_items)
        tries += 1

    valid = np.ones(len(users), dtype=bool)
    if pending.any():
        all_items = np.arange(num_items, dtype=np.int64)
        for k in np.flatnonzero(pending):
            u = int(users[k])
            complement = np.setdiff1d(all_items, graph.user_items(u), assume_unique=True)
            if len(complement) == 0:
                log.warning("user %d interacted with every item; triple skipped", u)
                valid[k] = False
            else:
                negatives[k] = rng.choice(complement)
    return negatives, valid


def build_edge_keys(graph: InteractionGraph) -> np.ndarray:
    """Sorted scalar keys user * num_items + item, one per training edge."""
    src = np.repeat(np.arange(graph.num_nodes, dtype=np.int64), graph.degrees)
    user_side = src < graph.num_users
    return np.sort(
        src[user_side] * np.int64(graph.num_items)
        + (graph.neighbor_ids[user_side] - graph.num_users)
    )


def _is_member(edge_keys: np.ndarray, users: np.ndarray, items: np.ndarray, num_items: int) -> np.ndarray:
    keys = users * np.int64(num_items) + items
    pos = np.searchsorted(edge_keys, keys)
    pos = np.minimum(pos, len(edge_keys) - 1)
    return edge_keys[pos] == keys


@dataclass
class TrainResult:
    embeddings: np.ndarray
    history: list[dict]
    stopped_epoch: int
    best_val_ndcg: float | None
    final_report: MetricsReport | None = None


@dataclass
class _OptimState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class Trainer:
    """Owns the optimization state; one instance per training run.

    Pass dro=None (or an alpha of +inf) and gea=None (or disabled/gamma 1)
    for the plain LightGCN baseline: that configuration never touches the
    reweighting or overlay code and propagates over the unweighted
    adjacency.
    """

    def __init__(
        self,
        graph: InteractionGraph,
        config: TrainConfig,
        dro: DroConfig | None = None,
        gea: GeaConfig | None = None,
        validation: dict[int, set[int]] | None = None,
    ) -> None:
        self.graph = graph
        self.config = config
        self.dro = dro
        self.gea = gea if (gea is not None and gea.enabled and gea.gamma < 1.0) else None
        self.validation = validation or {}
        self.base_adjacency = normalize(graph)

        seq = np.random.SeedSequence(config.seed)
        init_seq, sample_seq, gea_seq = seq.spawn(3)
        init_rng = np.random.default_rng(init_seq)
        self.rng = np.random.default_rng(sample_seq)
        self.gea_rng = np.random.default_rng(gea_seq)

        self.embeddings = init_embeddings(graph.num_nodes, config.dim, init_rng)
        self.opt = _OptimState(
            m=np.zeros_like(self.embeddings), v=np.zeros_like(self.embeddings)
        )
        self.epoch = 0
        self.snapshot: NormalizedAdjacency = self.base_adjacency
        self.overlay: EdgeOverlay | None = None
        self.best_val = -np.inf
        self.best_embeddings: np.ndarray | None = None
        self.epochs_since_improve = 0
        self.history: list[dict] = []

        src = np.repeat(np.arange(graph.num_users, dtype=np.int64), graph.degrees[: graph.num_users])
        dst = self.base_adjacency.neighbor_ids[: graph.row_offsets[graph.num_users]]
        self.pos_users = src
        self.pos_items = dst - graph.num_users
        self.edge_keys = build_edge_keys(graph)

    # -- robust machinery -------------------------------------------------

    @property
    def dro_active(self) -> bool:
        return self.dro is not None and self.dro.enabled

    @property
    def gea_active(self) -> bool:
        return self.gea is not None

    def _refresh_snapshot(self) -> None:
        """Recompute overlay and edge weights from the current embeddings.

        Overlay first, then reweighting over the mixed distribution, so the
        KL ball is centered on the support-expanded base.
        """
        if not (self.dro_active or self.gea_active):
            return
        dro_period = self.dro.refresh_period if self.dro is not None else 1
        gea_period = (
            (self.gea.refresh_period or dro_period) if self.gea_active else None
        )
        need_overlay = self.gea_active and self.epoch % gea_period == 0
        need_weights = self.dro_active and self.epoch % self.dro.refresh_period == 0
        if not (need_overlay or need_weights):
            return

        l2n = self.dro.l2_normalize if self.dro is not None else True
        if self.gea_active and (need_overlay or self.overlay is None):
            self.overlay = build_overlay(
                self.graph, self.embeddings, self.gea, self.gea_rng, l2_normalize=l2n
            )
        mixed = (
            apply_overlay(self.base_adjacency, self.overlay)
            if self.overlay is not None
            else self.base_adjacency
        )
        if self.dro_active:
            self.snapshot = reweight_adjacency(
                mixed, self.embeddings, self.dro.alpha, l2_normalize=l2n
            )
        else:
            self.snapshot = mixed

    # -- one epoch ---------------------------------------------------------

    def batch_loss_and_grad(
        self,
        users: np.ndarray,
        pos_items: np.ndarray,
        neg_items: np.ndarray,
        snapshot: NormalizedAdjacency | None = None,
        embeddings: np.ndarray | None = None,
    ) -> tuple[float, np.ndarray]:
        """Mean BPR loss over the triples plus lambda*||E||^2, and its
        exact gradient on the layer-0 embeddings."""
        snap = snapshot if snapshot is not None else self.snapshot
        emb = embeddings if embeddings is not None else self.embeddings
        cfg = self.config
        out = propagate(snap, emb, cfg.num_layers, cfg.layer_combine)
        final = out.final

        u = users
        i = pos_items + self.graph.num_users
        j = neg_items + self.graph.num_users
        s_pos = np.einsum("ij,ij->i", final[u], final[i])
        s_neg = np.einsum("ij,ij->i", final[u], final[j])
        delta = s_pos - s_neg
        losses = np.logaddexp(0.0, -delta)
        loss = float(losses.mean()) + cfg.l2_lambda * float(np.sum(emb * emb))

        coeff = -_sigmoid(-delta) / len(delta)
        grad_final = np.zeros_like(final)
        np.add.at(grad_final, u, coeff[:, None] * (final[i] - final[j]))
        np.add.at(grad_final, i, coeff[:, None] * final[u])
        np.add.at(grad_final, j, -coeff[:, None] * final[u])

        grad0 = backpropagate(snap, grad_final, cfg.num_layers, cfg.layer_combine)
        grad0 += 2.0 * cfg.l2_lambda * emb
        return loss, grad0

    def _apply_update(self, grad: np.ndarray) -> None:
        cfg = self.config
        if cfg.optimizer == "sgd":
            self.embeddings -= cfg.learning_rate * grad
            return
        opt = self.opt
        opt.t += 1
        opt.m = cfg.adam_beta1 * opt.m + (1 - cfg.adam_beta1) * grad
        opt.v = cfg.adam_beta2 * opt.v + (1 - cfg.adam_beta2) * grad * grad
        m_hat = opt.m / (1 - cfg.adam_beta1 ** opt.t)
        v_hat = opt.v / (1 - cfg.adam_beta2 ** opt.t)
        self.embeddings -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)

    def train_epoch(self) -> float:
        """One pass over shuffled training triples; returns the epoch loss."""
        self._refresh_snapshot()
        snapshot = self.snapshot

        perm = self.rng.permutation(len(self.pos_users))
        users = self.pos_users[perm]
        pos = self.pos_items[perm]
        total, batches = 0.0, 0
        for lo in range(0, len(users), self.config.batch_size):
            bu = users[lo : lo + self.config.batch_size]
            bp = pos[lo : lo + self.config.batch_size]
            bn, valid = sample_negatives(self.graph, bu, self.rng, edge_keys=self.edge_keys)
            if not valid.all():
                bu, bp, bn = bu[valid], bp[valid], bn[valid]
            if len(bu) == 0:
                continue
            # Forward and backward must see the same snapshot object.
            assert snapshot is self.snapshot
            loss, grad = self.batch_loss_and_grad(bu, bp, bn, snapshot=snapshot)
            self._apply_update(grad)
            total += loss
            batches += 1
        epoch_loss = total / max(batches, 1)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(
                f"non-finite loss {epoch_loss} at epoch {self.epoch}"
            )
        return epoch_loss

    # -- evaluation, early stopping, checkpoints ---------------------------

    def evaluation_embeddings(self, embeddings: np.ndarray | None = None) -> np.ndarray:
        """Final embeddings for scoring: plain-adjacency propagation."""
        emb = embeddings if embeddings is not None else self.embeddings
        return propagate(
            self.base_adjacency, emb, self.config.num_layers, self.config.layer_combine
        ).final

    def validate(self) -> float:
        report = evaluate_ranking(
            self.evaluation_embeddings(),
            self.graph,
            self.validation,
            k=self.config.eval_k,
        )
        return report.ndcg

    def run(
        self,
        log_path: str | os.PathLike | None = None,
        checkpoint_prefix: str | os.PathLike | None = None,
    ) -> TrainResult:
        """Train to completion or early stop; returns the best embeddings.

        Early stopping watches validation NDCG and is active only when a
        validation set was supplied.
        """
        cfg = self.config
        log_rows = []
        while self.epoch < cfg.epochs:
            loss = self.train_epoch()
            val_ndcg = None
            if self.validation and (self.epoch % cfg.eval_every == 0 or self.epoch == cfg.epochs - 1):
                val_ndcg = self.validate()
                if val_ndcg > self.best_val:
                    self.best_val = val_ndcg
                    self.best_embeddings = self.embeddings.copy()
                    self.epochs_since_improve = 0
                else:
                    self.epochs_since_improve += 1
            row = {"epoch": self.epoch, "loss": loss, "val_ndcg": val_ndcg}
            self.history.append(row)
            log_rows.append(row)
            log.info(
                "epoch %d loss %.6f%s",
                self.epoch,
                loss,
                f" val_ndcg {val_ndcg:.4f}" if val_ndcg is not None else "",
            )
            self.epoch += 1
            if checkpoint_prefix is not None:
                self.save_checkpoint(checkpoint_prefix)
            if self.validation and self.epochs_since_improve > cfg.patience:
                log.info("early stop at epoch %d", self.epoch - 1)
                break

        if log_path is not None:
            _write_log_csv(log_path, self.history)
        final = (
            self.best_embeddings
            if self.best_embeddings is not None
            else self.embeddings
        )
        return TrainResult(
            embeddings=final,
            history=self.history,
            stopped_epoch=self.epoch - 1,
            best_val_ndcg=None if not self.validation else self.best_val,
        )

    def save_checkpoint(self, prefix: str | os.PathLike) -> None:
        """Embedding dump + JSON sidecar + optimizer/rng state archive."""
        prefix = str(prefix)
        os.makedirs(os.path.dirname(prefix) or ".", exist_ok=True)
        dump_embeddings(prefix + ".embeddings.txt", self.embeddings)
        extras = {"m": self.opt.m, "v": self.opt.v}
        if self.best_embeddings is not None:
            extras["best_embeddings"] = self.best_embeddings
        np.savez(prefix + ".state.npz", **extras)
        sidecar = {
            "epoch": self.epoch,
            "adam_t": self.opt.t,
            "best_val": None if self.best_val == -np.inf else self.best_val,
            "epochs_since_improve": self.epochs_since_improve,
            "rng_state": self.rng.bit_generator.state,
            "gea_rng_state": self.gea_rng.bit_generator.state,
            "config": self.config.__dict__,
            "dro": self.dro.__dict__ if self.dro else None,
            "gea": self.gea.__dict__ if self.gea else None,
            "history": self.history,
        }
        with open(prefix + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, default=str)

    def load_checkpoint(self, prefix: str | os.PathLike) -> None:
        prefix = str(prefix)
        self.embeddings = load_embeddings(prefix + ".embeddings.txt")
        with open(prefix + ".json", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        state = np.load(prefix + ".state.npz")
        self.opt.m = state["m"]
        self.opt.v = state["v"]
        self.opt.t = sidecar["adam_t"]
        if "best_embeddings" in state:
            self.best_embeddings = state["best_embeddings"]
        self.epoch = sidecar["epoch"]
        self.best_val = (
            -np.inf if sidecar["best_val"] is None else sidecar["best_val"]
        )
        self.epochs_since_improve = sidecar["epochs_since_improve"]
        self.rng.bit_generator.state = _restore_rng_state(sidecar["rng_state"])
        self.gea_rng.bit_generator.state = _restore_rng_state(sidecar["gea_rng_state"])
        self.history = sidecar.get("history", [])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _restore_rng_state(state_dict: dict) -> dict:
    """JSON round trips turn the PCG64 ints into ints already; pass through,
    but coerce nested values defensively."""
    fixed = dict(state_dict)
    if isinstance(fixed.get("state"), dict):
        fixed["state"] = {k: int(v) for k, v in fixed["state"].items()}
    if "uinteger" in fixed:
        fixed["uinteger"] = int(fixed["uinteger"])
    return fixed


def _write_log_csv(path: str | os.PathLike, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,val_ndcg\n")
        for row in history:
            val = "" if row["val_ndcg"] is None else f"{row['val_ndcg']:.6f}"
            fh.write(f"{row['epoch']},{row['loss']:.8f},{val}\n")
