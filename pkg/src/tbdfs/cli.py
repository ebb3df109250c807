"""Command-line entry point: ``tbdfs <subcommand> [flags]``.

Every report written here embeds the effective config and seed, and
contains no wall-clock values, so identical invocations give identical
files. Per-epoch timings live only in the training log.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import VARIANTS, RunConfig
from .errors import TbdfsError
from .graphstore import Schema, chronological_split, load_csv

log = logging.getLogger("tbdfs")

CONFIG_FLAGS = {
    "dim": int, "layers": int, "heads": int, "fanout": int, "alpha": float, "lr": float,
    "batch_size": int, "epochs": int, "dropout": float, "patience": int,
    "weight_decay": float, "sampling": str,
}


class MissingFile(Exception):
    pass


def _need(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(str(p))
    return p


def _dump(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


# ----------------------------------------------------------------- parsing

def _data_flags(p):
    p.add_argument("--data", required=True, help="edge CSV with src,dst,ts[,features]")
    p.add_argument("--node-features", help="node feature CSV node_id,f1..fn")
    p.add_argument("--bipartite", action="store_true",
                   help="keep src and dst id spaces apart")


def _model_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    for name, typ in CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), type=typ, dest=name)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tbdfs", description="Temporal BFS/DFS graph attention "
                                 "for link prediction.")
    sub = ap.add_subparsers(dest="cmd", required=True, metavar="subcommand")

    p = sub.add_parser("stats", help="print node/edge counts and time range as JSON")
    _data_flags(p)
    p.add_argument("--dim", type=int, default=0)

    p = sub.add_parser("prepare", help="load a dataset and write its chronological split")
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model; writes checkpoint, epoch log, report")
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="JSON report path")

    for name, helptext in (("ablate", "ablation grid over model variants"),
                           ("sweep", "accuracy/F1 across balance values")):
        p = sub.add_parser(name, help=helptext)
        _data_flags(p)
        _model_flags(p)
        p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", required=True, help="output directory")
        if name == "ablate":
            p.add_argument("--variant", action="append", choices=VARIANTS,
                           help="repeatable; default is every variant")
        else:
            p.add_argument("--grid", type=_float_list, help="comma-separated alphas; "
                           "default 0,0.1,...,1")

    p = sub.add_parser("paths", help="print temporal paths ending at a node as JSON lines")
    _data_flags(p)
    p.add_argument("--node", required=True, help="node label as it appears in the CSV")
    p.add_argument("--time", type=float, required=True)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--fanout", type=int, default=20)
    p.add_argument("--exhaustive", action="store_true",
                   help="enumerate over the full adjacency instead of the sampled tree")

    p = sub.add_parser("gen-synth", help="write the planted revisit dataset as CSV")
    p.add_argument("--out", required=True, help="edge CSV path; node features go to "
                   "<stem>.nodes.csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-users", type=int)
    p.add_argument("--n-items", type=int)
    p.add_argument("--n-events", type=int)
    p.add_argument("--revisit-prob", type=float)
    p.add_argument("--noise-edges", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--window", type=int, help="distinct recent items a revisit draws from")
    p.add_argument("--dim", type=int)
    return ap


# ---------------------------------------------------------------- helpers

def _config(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in CONFIG_FLAGS}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "bipartite", False):
        overrides["bipartite"] = True
    if getattr(args, "config", None):
        return RunConfig.from_file(_need(args.config), **overrides)
    return RunConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def _graph(args, d: int):
    nf = _need(args.node_features) if args.node_features else None
    return load_csv(_need(args.data), Schema(bipartite=args.bipartite), d=d, node_features=nf)


def _splits(g, cfg: RunConfig):
    return chronological_split(g, cfg.train_frac, cfg.val_frac)


# -------------------------------------------------------------- subcommands

def cmd_stats(args):
    g = _graph(args, args.dim)
    print(json.dumps(g.stats(), sort_keys=True))


def cmd_prepare(args):
    cfg = _config(args)
    g = _graph(args, cfg.dim)
    sp = _splits(g, cfg)
    _dump({"config": cfg.to_dict(), "stats": g.stats(), "split": sp.as_dict()}, Path(args.out))


def cmd_train(args):
    from .trainer import train

    cfg = _config(args)
    g = _graph(args, cfg.dim)
    sp = _splits(g, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(g, sp, cfg, log_path=out / "train_log.jsonl",
                progress=lambda r: log.info("epoch %d loss %.4f val_acc %.4f",
                                            r["epoch"], r["train_loss"], r["val_acc"]))
    res.checkpoint.save(out / "model.tbdf")
    history = [{k: v for k, v in h.items() if k != "seconds"} for h in res.history]
    _dump({"config": cfg.to_dict(), "seed": cfg.seed, "split": sp.as_dict(),
           "best": res.checkpoint.meta, "history": history}, out / "train_report.json")
    print(json.dumps({"checkpoint": str(out / "model.tbdf"), **res.checkpoint.meta},
                     sort_keys=True))


def cmd_eval(args):
    from .evalbench import evaluate
    from .trainer import Checkpoint

    ck = Checkpoint.load(_need(args.checkpoint))
    cfg = ck.config if args.seed is None else ck.config.replace(seed=args.seed)
    g = _graph(args, cfg.dim)
    sp = _splits(g, cfg)
    acc, f1 = evaluate(ck, g, getattr(sp, args.split), cfg.seed)
    report = {"config": cfg.to_dict(), "seed": cfg.seed, "split": args.split,
              "accuracy": acc, "f1": f1, "checkpoint_meta": ck.meta}
    _dump(report, Path(args.out))
    print(json.dumps({"accuracy": acc, "f1": f1}))


def cmd_ablate(args):
    from .evalbench import ablation_csv, ablation_grid

    cfg = _config(args)
    g = _graph(args, cfg.dim)
    grid = ablation_grid(g, _splits(g, cfg), cfg, args.seeds, tuple(args.variant or VARIANTS),
                         args.threads)
    for row in grid["rows"].values():
        row.pop("histories", None)
    out = Path(args.out)
    _dump(grid, out / "ablation.json")
    (out / "ablation.csv").write_text(ablation_csv(grid))
    print(ablation_csv(grid), end="")


def cmd_sweep(args):
    from .evalbench import alpha_sweep, sweep_csv

    cfg = _config(args)
    g = _graph(args, cfg.dim)
    rows = alpha_sweep(g, _splits(g, cfg), cfg, args.grid, args.seeds, args.threads)
    out = Path(args.out)
    _dump({"config": cfg.to_dict(), "seeds": args.seeds, "rows": rows}, out / "sweep.json")
    (out / "sweep.csv").write_text(sweep_csv(rows))
    print(sweep_csv(rows), end="")


def cmd_paths(args):
    from .sampler import brute_force_paths, collect_paths, expand

    g = _graph(args, 0)
    try:
        node = list(g.labels).index(args.node)
    except ValueError:
        raise TbdfsError(f"unknown node label {args.node!r}") from None
    if args.exhaustive:
        paths = brute_force_paths(g, node, args.time, args.depth)
    else:
        paths = collect_paths(expand(g, node, args.time, args.depth, k=args.fanout))
    for p in paths:
        rec = p.as_dict()
        rec["labels"] = [g.labels[n] for n in p.nodes]
        print(json.dumps(rec))


def cmd_gen_synth(args):
    from dataclasses import fields

    from .planted import PlantedParams, gen_planted

    kw = {f.name: getattr(args, f.name) for f in fields(PlantedParams)
          if getattr(args, f.name, None) is not None}
    params = PlantedParams(**kw)
    data = gen_planted(params, args.seed)
    g = data.graph
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        fh.write("src,dst,ts\n")
        for s, d, t in zip(g.src, g.dst, g.ts):
            fh.write(f"{g.labels[s]},{g.labels[d]},{float(t)!r}\n")
    nodes = out.with_name(out.stem + ".nodes.csv")
    with nodes.open("w") as fh:
        fh.write("node_id," + ",".join(f"f{k + 1}" for k in range(g.d)) + "\n")
        for n in range(g.n_nodes):
            fh.write(g.labels[n] + "," + ",".join(repr(float(v)) for v in g.node_feat[n]) + "\n")
    _dump({"params": vars(params), "seed": args.seed, "stats": g.stats(),
           "revisit_events": int(data.revisit.sum()), "noise_events": int(data.noise.sum())},
          out.with_name(out.stem + ".meta.json"))
    print(json.dumps({"edges": str(out), "node_features": str(nodes)}))


COMMANDS = {"stats": cmd_stats, "prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "sweep": cmd_sweep, "paths": cmd_paths,
            "gen-synth": cmd_gen_synth}


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TBDFS_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.cmd](args)
    except MissingFile as e:
        print(f"tbdfs: file not found: {e}", file=sys.stderr)
        return 1
    except (TbdfsError, ValueError, KeyError) as e:
        print(f"tbdfs: error: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
