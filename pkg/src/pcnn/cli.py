"""Command-line entry point: gen-data, train, embed, retrieve, eval, gradcheck.

Every command reads the same flat configuration file (all keys have
defaults), applies its flags on top, and writes its outputs plus the
effective configuration into the output directory.  Outputs never embed
timestamps, so rerunning a command with the same inputs reproduces the
same bytes.  Exit codes: 0 success, 1 failed check, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .backbone import ConfigError
from .checkpoint import load_checkpoint, read_checkpoint
from .config import RunConfig
from .formats import FormatError, read_emb, read_mvi, write_emb, write_mvi
from .model import PCNNModel
from .retrieval import (
    embed,
    map_and_pr,
    rank,
    write_metrics_json,
    write_pr_csv,
    write_ranking_csv,
)
from .synth import generate, manifest_for
from .training import train

GRAD_TOL = 1e-5

# --ablation values: which blocks run and whether edges carry coordinates
ABLATIONS = {
    "full": {"patchconv.enabled": True, "patchconv.use_coords": True,
             "awv.enabled": True},
    "mvcnn-baseline": {"patchconv.enabled": False, "awv.enabled": False},
    "patchconv-only": {"patchconv.enabled": True,
                       "patchconv.use_coords": True, "awv.enabled": False},
    "awv-only": {"patchconv.enabled": False, "awv.enabled": True},
    "edgeconv-awv": {"patchconv.enabled": True,
                     "patchconv.use_coords": False, "awv.enabled": True},
}

# --loss values: model loss alone, with uniform view losses, or weighted
LOSSES = {
    "ml": {"loss.view_mode": "none", "loss.gamma": 0.0},
    "ml-avl": {"loss.view_mode": "avl"},
    "discrimination": {"loss.view_mode": "wvl"},
}


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(getattr(args, "config", None))
    for flag in ("ablation", "loss"):
        choice = getattr(args, flag, None)
        if choice is not None:
            table = ABLATIONS if flag == "ablation" else LOSSES
            for key, value in table[choice].items():
                cfg.set(key, value)
    if getattr(args, "seed", None) is not None:
        cfg.set("train.seed", args.seed)
    if getattr(args, "metric", None) is not None:
        cfg.set("retrieval.metric", args.metric)
    if getattr(args, "rerank", None) is not None:
        cfg.set("retrieval.rerank", args.rerank)
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(getattr(args, "out", None) or cfg["out.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    for flag, key in (("classes", "dataset.classes"),
                      ("per_class", "dataset.per_class"),
                      ("test_per_class", "dataset.test_per_class"),
                      ("views", "dataset.views"), ("res", "dataset.res"),
                      ("data_seed", "dataset.seed")):
        value = getattr(args, flag)
        if value is not None:
            cfg.set(key, value)
    out = _out_dir(args, cfg)
    classes = cfg.classes()
    per_split = {"train": cfg["dataset.per_class"],
                 "test": cfg["dataset.test_per_class"]}
    for split in ("train", "test"):
        data = generate(classes, per_split[split],
                        cfg["dataset.views"], cfg["dataset.res"],
                        cfg["dataset.seed"], split)
        write_mvi(out / f"{split}.mvi", data)
        manifest = manifest_for(data, classes, split, cfg["dataset.seed"])
        manifest.save(out / f"{split}.json")
        print(f"wrote {out / (split + '.mvi')} ({data.views.shape[0]} models)")
    cfg.write(out / "gen-data.effective.cfg")
    return 0


def _train_data_path(args, cfg: RunConfig) -> Path:
    return Path(args.data) if args.data else Path(cfg["data.dir"]) / "train.mvi"


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data = read_mvi(_train_data_path(args, cfg))
    num_classes = int(data.labels.max()) + 1
    if num_classes < 2:
        raise ConfigError("training data contains a single class")
    out = _out_dir(args, cfg)
    net = PCNNModel(cfg.model_config(num_classes),
                    np.random.default_rng([cfg["train.seed"], 8111]))
    trace = train(
        data.views, data.labels, net, cfg.train_config(),
        trace_path=out / "trace.csv",
        final_path=out / "model.pck",
        best_path=out / "best.pck",
    )
    cfg.write(out / "train.effective.cfg")
    last_epoch = trace.rows[-1].epoch
    print(f"steps={len(trace.rows)} epochs={last_epoch} "
          f"final_epoch_loss={trace.epoch_mean(last_epoch):.6f}")
    return 0


def _rebuild_model(cfg: RunConfig, checkpoint_path) -> PCNNModel:
    saved = read_checkpoint(checkpoint_path)
    if "classifier/w" not in saved:
        raise FormatError("checkpoint lacks a classifier")
    num_classes = saved["classifier/w"].shape[1]
    net = PCNNModel(cfg.model_config(num_classes), np.random.default_rng(0))
    load_checkpoint(net, checkpoint_path)
    return net


def cmd_embed(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    data_path = Path(args.data) if args.data else (
        Path(cfg["data.dir"]) / "test.mvi"
    )
    checkpoint = Path(args.checkpoint) if args.checkpoint else out / "model.pck"
    data = read_mvi(data_path)
    net = _rebuild_model(cfg, checkpoint)
    emb = embed(data.views, data.labels, data.model_ids, net)
    emb_path = Path(args.emb) if args.emb else out / "embeddings.emb"
    write_emb(emb_path, emb)
    cfg.write(out / "embed.effective.cfg")
    print(f"wrote {emb_path} ({emb.embeddings.shape[0]} models, "
          f"dim {emb.embeddings.shape[1]})")
    return 0


def cmd_retrieve(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    emb_path = Path(args.emb) if args.emb else out / "embeddings.emb"
    emb = read_emb(emb_path)
    ranked = [
        rank(emb, q, cfg["retrieval.metric"], cfg["retrieval.rerank"])
        for q in range(emb.embeddings.shape[0])
    ]
    write_ranking_csv(out / "ranking.csv", ranked)
    cfg.write(out / "retrieve.effective.cfg")
    print(f"wrote {out / 'ranking.csv'} ({len(ranked)} queries)")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    emb_path = Path(args.emb) if args.emb else out / "embeddings.emb"
    emb = read_emb(emb_path)
    metrics = map_and_pr(emb, cfg["retrieval.metric"],
                         cfg["retrieval.rerank"])
    write_pr_csv(out / "pr.csv", metrics.pr)
    write_metrics_json(out / "metrics.json", metrics)
    cfg.write(out / "eval.effective.cfg")
    print(f"map={metrics.map:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.op is not None and args.op not in gradcheck.CHECKS:
        raise ConfigError(
            f"unknown op {args.op!r}; known: {', '.join(sorted(gradcheck.CHECKS))}"
        )
    names = [args.op] if args.op else None
    rows = gradcheck.run_suite(names=names, n_seeds=args.seeds)
    worst = max(rows, key=lambda r: r.max_rel_err)
    print(f"checked {len(rows)} ops x {args.seeds} seeds")
    print(f"worst={worst.name} rel_err={worst.max_rel_err:.3e}")
    if worst.max_rel_err >= GRAD_TOL:
        for row in rows:
            verdict = "FAIL" if row.max_rel_err >= GRAD_TOL else "ok"
            print(f"{row.name:<28} {row.max_rel_err:.3e} {verdict}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcnn",
        description="multi-view 3D shape retrieval with patch convolution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    common(p)
    p.add_argument("--classes", help="comma-separated solid names")
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--test-per-class", dest="test_per_class", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--res", type=int)
    p.add_argument("--seed", dest="data_seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit the network on a view file")
    common(p)
    p.add_argument("--ablation", choices=sorted(ABLATIONS))
    p.add_argument("--loss", choices=sorted(LOSSES))
    p.add_argument("--data", help="training MVI file")
    p.add_argument("--seed", type=int, help="training seed override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="extract retrieval embeddings")
    common(p)
    p.add_argument("--ablation", choices=sorted(ABLATIONS))
    p.add_argument("--loss", choices=sorted(LOSSES))
    p.add_argument("--data", help="MVI file to embed")
    p.add_argument("--checkpoint", help="trained model file")
    p.add_argument("--emb", help="output embedding file")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("retrieve", help="write the full ranking list")
    common(p)
    p.add_argument("--emb", help="embedding file")
    p.add_argument("--metric", choices=("cosine", "euclidean"))
    p.add_argument("--rerank", dest="rerank", action="store_true",
                   default=None)
    p.add_argument("--no-rerank", dest="rerank", action="store_false")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="mAP and PR curve for an embedding file")
    common(p)
    p.add_argument("--emb", help="embedding file")
    p.add_argument("--metric", choices=("cosine", "euclidean"))
    p.add_argument("--rerank", dest="rerank", action="store_true",
                   default=None)
    p.add_argument("--no-rerank", dest="rerank", action="store_false")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--op", help="restrict to one registered op")
    p.add_argument("--seeds", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
