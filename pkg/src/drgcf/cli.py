"""Command-line entry point.

Subcommands: split, train, evaluate, sweep-alpha, shift-kl, bound,
dump-embeddings.  Every command accepts --config run.json with individual
flags taking precedence, and writes the fully resolved configuration as
run.json next to its outputs so any run can be reproduced from its echo.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from drgcf import data as data_mod
from drgcf.config import ConfigError, RunConfig, parse_alpha
from drgcf.data import DataFormatError
from drgcf.dro import BoundInputs, generalization_bound, worst_case_kl
from drgcf.graph import GraphConstructionError, IdMap, build_graph, normalize
from drgcf.metrics import evaluate_ranking
from drgcf.model import dump_embeddings, load_embeddings, propagate
from drgcf.plots import render_alpha_sweep, render_training_curve
from drgcf.trainer import Trainer, TrainingDivergedError

log = logging.getLogger("drgcf")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _resolve_config(args) -> RunConfig:
    """File config first, then flag overrides."""
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "alpha": ("dro", "alpha"),
        "dro_refresh": ("dro", "refresh_period"),
        "gea_gamma": ("gea", "gamma"),
        "gea_candidates": ("gea", "candidate_size"),
        "gea_refresh": ("gea", "refresh_period"),
        "lr": ("train", "learning_rate"),
        "l2": ("train", "l2_lambda"),
        "epochs": ("train", "epochs"),
        "batch_size": ("train", "batch_size"),
        "seed": ("train", "seed"),
        "optimizer": ("train", "optimizer"),
        "patience": ("train", "patience"),
        "eval_every": ("train", "eval_every"),
        "dim": ("model", "dim"),
        "layers": ("model", "num_layers"),
        "layer_combine": ("model", "layer_combine"),
        "k": ("eval", "k"),
    }
    for flag, (section, fieldname) in overrides.items():
        value = getattr(args, flag, None)
        if value is not None:
            if flag == "alpha":
                value = parse_alpha(value)
            setattr(getattr(cfg, section), fieldname, value)
    gea_flag = getattr(args, "gea", None)
    if gea_flag is not None:
        cfg.gea.enabled = gea_flag == "on"
    if getattr(args, "no_l2_normalize", False):
        cfg.dro.l2_normalize = False
    return cfg


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run.json with {data,model,dro,gea,train,eval} sections")
    p.add_argument("--alpha", help="robustness knob; 'inf' disables the reweighting")
    p.add_argument("--dro-refresh", type=int, dest="dro_refresh")
    p.add_argument("--no-l2-normalize", action="store_true", dest="no_l2_normalize")
    p.add_argument("--gea", choices=["on", "off"])
    p.add_argument("--gea-gamma", type=float, dest="gea_gamma")
    p.add_argument("--gea-candidates", type=int, dest="gea_candidates")
    p.add_argument("--gea-refresh", type=int, dest="gea_refresh")
    p.add_argument("--lr", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--dim", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--layer-combine", choices=["mean", "last"], dest="layer_combine")
    p.add_argument("--k", type=int)


def _load_corpus(
    train_path: str,
    valid_path: str | None,
    test_path: str | None,
):
    """Read split files, build the id map over every id seen, and encode."""
    train_rows = data_mod.read_interactions_tsv(train_path)
    valid_rows = data_mod.read_interactions_tsv(valid_path) if valid_path else []
    test_rows = data_mod.read_interactions_tsv(test_path) if test_path else []
    all_pairs = [(r.user, r.item) for r in train_rows + valid_rows + test_rows]
    if not train_rows:
        raise DataFormatError(f"{train_path}: empty training file")
    idmap = IdMap.from_pairs(all_pairs)
    encode = lambda rows: idmap.encode((r.user, r.item) for r in rows)
    return idmap, encode(train_rows), encode(valid_rows), encode(test_rows)


def _pairs_to_user_items(pairs) -> dict[int, set[int]]:
    out: dict[int, set[int]] = {}
    for u, i in pairs:
        out.setdefault(u, set()).add(i)
    return out


def _train_once(cfg: RunConfig, graph, validation) -> Trainer:
    trainer = Trainer(
        graph,
        cfg.train_config(),
        dro=cfg.dro_config(),
        gea=cfg.gea_config(),
        validation=validation,
    )
    return trainer


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_split(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.mode:
        cfg.data.mode = args.mode
    for flag in ("input", "quota", "seed", "min_count", "train_file", "test_file", "name"):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg.data, flag, v)
    d = cfg.data
    if d.mode not in ("popularity", "temporal", "exposure"):
        raise ConfigError(f"split mode must be popularity|temporal|exposure, got {d.mode!r}")

    if d.mode == "exposure":
        if not (d.train_file and d.test_file):
            raise ConfigError("exposure mode needs --train-file and --test-file")
        bundle = data_mod.load_exposure_pair(d.train_file, d.test_file)
    else:
        if not d.input:
            raise ConfigError(f"{d.mode} mode needs --input")
        rows = data_mod.apply_min_count(
            data_mod.read_interactions_tsv(d.input), d.min_count
        )
        if d.mode == "popularity":
            bundle = data_mod.split_popularity(rows, d.quota, d.seed)
        else:
            try:
                bundle = data_mod.split_temporal(rows)
            except DataFormatError as exc:
                raise DataFormatError(f"temporal mode: {exc}") from exc

    os.makedirs(args.out_dir, exist_ok=True)
    paths = data_mod.write_split(bundle, args.out_dir, d.name)
    cfg.write(os.path.join(args.out_dir, "run.json"))
    for part, p in paths.items():
        print(f"{part}: {p}")
    return EXIT_OK


def _run_training(cfg: RunConfig, args, out_dir: str, checkpoint: bool = True):
    """Shared by train and sweep-alpha: one full training run."""
    idmap, train_pairs, valid_pairs, test_pairs = _load_corpus(
        args.train, getattr(args, "valid", None), getattr(args, "test", None)
    )
    graph = build_graph(train_pairs, idmap.num_users, idmap.num_items)
    validation = _pairs_to_user_items(valid_pairs)
    trainer = _train_once(cfg, graph, validation)
    resume = getattr(args, "resume", None)
    if resume:
        trainer.load_checkpoint(resume)
    result = trainer.run(
        log_path=os.path.join(out_dir, "train_log.csv"),
        checkpoint_prefix=os.path.join(out_dir, "checkpoint") if checkpoint else None,
    )
    return idmap, graph, trainer, result, test_pairs


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    idmap, graph, trainer, result, _ = _run_training(cfg, args, out_dir)

    idmap.write(os.path.join(out_dir, "idmap.tsv"))
    dump_embeddings(os.path.join(out_dir, "model.embeddings.txt"), result.embeddings)
    with open(os.path.join(out_dir, "model.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"config": cfg.to_dict(), "stopped_epoch": result.stopped_epoch},
            fh,
            indent=2,
        )
    render_training_curve(result.history, os.path.join(out_dir, "training_curve.png"))

    if trainer.validation:
        report = evaluate_ranking(
            trainer.evaluation_embeddings(result.embeddings),
            graph,
            trainer.validation,
            k=cfg.eval.k,
        )
        report.write_json(os.path.join(out_dir, "metrics_valid.json"))
        print(json.dumps(report.to_dict()))
    cfg.write(os.path.join(out_dir, "run.json"))
    log.info("training finished at epoch %d", result.stopped_epoch)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run_dir = args.run_dir
    emb_path = args.embeddings or os.path.join(run_dir, "model.embeddings.txt")
    idmap_path = args.idmap or os.path.join(run_dir, "idmap.tsv")
    model_json = os.path.join(run_dir, "model.json")
    with open(model_json, encoding="utf-8") as fh:
        cfg = RunConfig.from_dict(json.load(fh)["config"])
    if args.k is not None:
        cfg.eval.k = args.k

    idmap = IdMap.read(idmap_path)
    embeddings = load_embeddings(emb_path)
    train_rows = data_mod.read_interactions_tsv(args.train)
    test_rows = data_mod.read_interactions_tsv(args.test)

    def encode_known(rows):
        pairs, dropped = [], 0
        for r in rows:
            if r.user in idmap.users and r.item in idmap.items:
                pairs.append((idmap.users[r.user], idmap.items[r.item]))
            else:
                dropped += 1
        return pairs, dropped

    train_pairs, d1 = encode_known(train_rows)
    test_pairs, d2 = encode_known(test_rows)
    if d1 or d2:
        log.warning("dropped %d train / %d test rows with ids unseen at training time", d1, d2)
    graph = build_graph(train_pairs, idmap.num_users, idmap.num_items)
    final = propagate(
        normalize(graph), embeddings, cfg.model.num_layers, cfg.model.layer_combine
    ).final
    report = evaluate_ranking(
        final, graph, _pairs_to_user_items(test_pairs), k=cfg.eval.k
    )
    out_path = args.out or os.path.join(run_dir, "metrics_test.json")
    report.write_json(out_path)
    cfg.write(os.path.join(os.path.dirname(out_path) or ".", "run.json"))
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def cmd_sweep_alpha(args) -> int:
    cfg = _resolve_config(args)
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    alphas = sorted(parse_alpha(tok) for tok in args.alphas.split(","))
    rows: list[dict] = []
    errors: dict[str, str] = {}
    for alpha in alphas:
        run_cfg = RunConfig.from_dict(cfg.to_dict())
        run_cfg.dro.alpha = alpha
        sub_dir = os.path.join(out_dir, f"alpha_{_alpha_token(alpha)}")
        os.makedirs(sub_dir, exist_ok=True)
        try:
            idmap, graph, trainer, result, test_pairs = _run_training(
                run_cfg, args, sub_dir, checkpoint=False
            )
            report = evaluate_ranking(
                trainer.evaluation_embeddings(result.embeddings),
                graph,
                _pairs_to_user_items(test_pairs),
                k=run_cfg.eval.k,
            )
            kl = (
                0.0
                if math.isinf(alpha)
                else worst_case_kl(
                    trainer.base_adjacency,
                    result.embeddings,
                    alpha,
                    l2_normalize=run_cfg.dro.l2_normalize,
                )
            )
            rows.append({"alpha": alpha, "ndcg": report.ndcg, "kl_of_pstar": kl})
            log.info("alpha %s -> ndcg %.4f kl %.4g", alpha, report.ndcg, kl)
        except Exception as exc:  # per-alpha failures recorded, sweep continues
            log.error("alpha %s failed: %s", alpha, exc)
            errors[_alpha_token(alpha)] = str(exc)
            rows.append({"alpha": alpha, "ndcg": None, "kl_of_pstar": None})

    csv_path = os.path.join(out_dir, "sweep_alpha.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("alpha,ndcg,kl_of_pstar\n")
        for row in rows:
            ndcg = "" if row["ndcg"] is None else f"{row['ndcg']:.6f}"
            kl = "" if row["kl_of_pstar"] is None else f"{row['kl_of_pstar']:.8g}"
            fh.write(f"{_alpha_token(row['alpha'])},{ndcg},{kl}\n")
    render_alpha_sweep(rows, os.path.join(out_dir, "sweep_alpha.png"), k=cfg.eval.k)
    if errors:
        with open(os.path.join(out_dir, "sweep_errors.json"), "w", encoding="utf-8") as fh:
            json.dump(errors, fh, indent=2)
    cfg.write(os.path.join(out_dir, "run.json"))
    print(csv_path)
    return EXIT_OK


def _alpha_token(alpha: float) -> str:
    return "inf" if math.isinf(alpha) else f"{alpha:g}"


def cmd_shift_kl(args) -> int:
    train_rows = data_mod.read_interactions_tsv(args.train)
    test_rows = data_mod.read_interactions_tsv(args.test)
    value = data_mod.shift_kl(train_rows, test_rows)
    print(f"{value:.6f}")
    if args.out:
        payload = {
            "shift_kl": value,
            "train": str(args.train),
            "test": str(args.test),
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    return EXIT_OK


def cmd_bound(args) -> int:
    inputs = BoundInputs(
        alpha=parse_alpha(args.alpha),
        degree=args.degree,
        rho=args.rho,
        hypothesis_count=args.hypothesis_count,
    )
    print(f"{generalization_bound(inputs):.12g}")
    return EXIT_OK


def cmd_dump_embeddings(args) -> int:
    embeddings = load_embeddings(args.embeddings)
    if args.propagated:
        if not (args.train and args.idmap):
            raise ConfigError("--propagated needs --train and --idmap")
        idmap = IdMap.read(args.idmap)
        rows = data_mod.read_interactions_tsv(args.train)
        pairs = idmap.encode((r.user, r.item) for r in rows)
        graph = build_graph(pairs, idmap.num_users, idmap.num_items)
        embeddings = propagate(
            normalize(graph), embeddings, args.layers, args.layer_combine
        ).final
    dump_embeddings(args.output, embeddings)
    print(args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="drgcf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="build a train/valid/test split with a distribution shift")
    p.add_argument("--config")
    p.add_argument("--mode", choices=["popularity", "temporal", "exposure"])
    p.add_argument("--input")
    p.add_argument("--quota", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--train-file", dest="train_file")
    p.add_argument("--test-file", dest="test_file")
    p.add_argument("--name")
    p.add_argument("--out-dir", default=".", dest="out_dir")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train embeddings with optional robust reweighting")
    p.add_argument("--train", required=True)
    p.add_argument("--valid")
    p.add_argument("--test", help="included in the id map so test items can be ranked later")
    p.add_argument("--resume", help="checkpoint prefix to continue from")
    p.add_argument("--out-dir", default="run", dest="out_dir")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rank the full catalog and report NDCG/Precision/Recall")
    p.add_argument("--run-dir", required=True, dest="run_dir")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--idmap")
    p.add_argument("--k", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-alpha", help="train/evaluate once per alpha; CSV + figure")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--valid")
    p.add_argument("--alphas", required=True, help="comma list, e.g. 0.1,0.3,1,inf")
    p.add_argument("--out-dir", default="sweep", dest="out_dir")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("shift-kl", help="KL(test || train) over item frequencies")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_shift_kl)

    p = sub.add_parser("bound", help="robust generalization bound calculator")
    p.add_argument("--alpha", required=True)
    p.add_argument("--degree", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--hypothesis-count", type=int, required=True, dest="hypothesis_count")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("dump-embeddings", help="re-export an embedding dump (optionally propagated)")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--propagated", action="store_true")
    p.add_argument("--train")
    p.add_argument("--idmap")
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--layer-combine", default="mean", dest="layer_combine")
    p.set_defaults(func=cmd_dump_embeddings)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("DRGCF_LOGLEVEL", "INFO"),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, GraphConstructionError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
