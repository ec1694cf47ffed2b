"""Command-line entry points.

Subcommands: train, eval, explain, removal, partition, gen-synthetic,
serve.  Relative data paths resolve under $IALIGN_DATA_DIR when set
(default: current directory).  Exit codes: 0 success, 2 usage error,
1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import alignment as al
from . import checkpoint as ck
from . import explain as xp
from . import report
from .batching import partition_graph
from .kg import (GraphPair, SeedAlignment, gen_synthetic_pair, load_seed_alignment,
                 parse_triples, serialize_seed_alignment, serialize_triples)
from .training import TrainConfig, train

log = logging.getLogger("kgalign")


def _data_path(p: str) -> str:
    root = os.environ.get("IALIGN_DATA_DIR")
    if root and not os.path.isabs(p):
        return os.path.join(root, p)
    return p


def _load_pair(args):
    kg_a = parse_triples(_data_path(args.kg_a), gid="A")
    kg_b = parse_triples(_data_path(args.kg_b), gid="B")
    return kg_a, kg_b


def _load_seeds(args, kg_a, kg_b) -> SeedAlignment:
    return load_seed_alignment(_data_path(args.seed), kg_a, kg_b,
                               train_fraction=args.train_fraction,
                               rng_seed=args.seed_rng)


def _add_data_flags(p, seed_required=True):
    p.add_argument("--kg-a", required=True, help="triple TSV for graph A")
    p.add_argument("--kg-b", required=True, help="triple TSV for graph B")
    p.add_argument("--seed", required=seed_required, help="seed-alignment TSV")
    p.add_argument("--seed-rng", type=int, default=0, help="rng seed")
    p.add_argument("--train-fraction", type=float, default=0.3,
                   help="fraction of seed pairs used for training")


def _add_model_flags(p):
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--parts", type=int, default=None,
                   help="mini-batch parts per graph (default: n/512)")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--char-dim", type=int, default=64)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kgalign",
                                 description="interpretable KG entity alignment")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--checkpoint-every", type=int, default=0)

    p = sub.add_parser("eval", help="Hits@k on the seed test split")
    _add_data_flags(p)
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--metric", choices=["cosine", "l2"], default="cosine")
    p.add_argument("--out", default=None, help="report directory")

    p = sub.add_parser("explain", help="explanation JSON for an entity pair")
    _add_data_flags(p, seed_required=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--top-n", type=int, default=5)
    p.add_argument("entity_a", help="entity label in graph A")
    p.add_argument("entity_b", help="entity label in graph B")

    p = sub.add_parser("removal", help="feature-removal behavior analysis")
    _add_data_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--top-n", type=int, default=5)
    p.add_argument("--norm", default=None,
                   help="JSON file mapping predicate spellings to canonical forms")
    p.add_argument("--out", default=None, help="report directory")

    p = sub.add_parser("partition", help="partition a graph into parts")
    p.add_argument("--kg-a", required=True, help="triple TSV")
    p.add_argument("--parts", type=int, required=True)
    p.add_argument("--seed-rng", type=int, default=0)
    p.add_argument("--out", default=None, help="report directory")

    p = sub.add_parser("gen-synthetic", help="generate a synthetic aligned pair")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--attr-per-entity", type=int, default=4)
    p.add_argument("--rel-density", type=float, default=0.01)
    p.add_argument("--char-noise", type=float, default=0.0)
    p.add_argument("--rel-dropout", type=float, default=0.0)
    p.add_argument("--seed-rng", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("serve", help="run the curation HTTP service")
    _add_data_flags(p, seed_required=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--top-n", type=int, default=5)
    p.add_argument("--out", default=None,
                   help="directory for the decision log (default: data root)")
    p.add_argument("--static", default=None, help="static UI bundle to serve at /")
    return ap


# -- subcommand bodies -----------------------------------------------------------


def _cmd_train(args) -> int:
    kg_a, kg_b = _load_pair(args)
    seeds = _load_seeds(args, kg_a, kg_b)
    cfg = TrainConfig(epochs=args.epochs, margin=args.margin,
                      negatives=args.negatives, d=args.dim, d_c=args.char_dim,
                      layers=args.layers, heads=args.heads, lr=args.lr,
                      rng_seed=args.seed_rng, num_parts=args.parts)
    out = report.ensure_dir(_data_path(args.out))
    ckpt = train(cfg, kg_a, kg_b, seeds, out_dir=out,
                 checkpoint_every=args.checkpoint_every)
    history = ckpt.manifest["loss_history"]
    if history:
        report.plot_loss_curve(history, os.path.join(out, "loss_curve.png"))
    print(f"checkpoint written to {os.path.join(out, 'final')}")
    if ckpt.manifest.get("diverged_at") is not None:
        print(f"warning: diverged at epoch {ckpt.manifest['diverged_at']}; "
              "kept last good state", file=sys.stderr)
    return 0


def _evaluate(args, k_values=(1, 10)):
    kg_a, kg_b = _load_pair(args)
    seeds = _load_seeds(args, kg_a, kg_b)
    pair = GraphPair(kg_a, kg_b)
    ckpt = ck.load_checkpoint(_data_path(args.ckpt))
    model = ck.model_from_checkpoint(ckpt, pair)
    ta = al.embed_all(pair, "A", ckpt, model=model)
    tb = al.embed_all(pair, "B", ckpt, model=model)
    test = seeds.test_pairs()
    preds = al.predict(ta, tb, [p[0] for p in test], [p[1] for p in test],
                       k=max(k_values), gold=dict(test), metric=args.metric)
    return {f"Hits@{k}": al.hits_at_k(preds, k) for k in k_values}


def _cmd_eval(args) -> int:
    metrics = _evaluate(args)
    for name, value in metrics.items():
        print(f"{name}\t{al.format_hits(value)}")
    if args.out:
        out = report.ensure_dir(_data_path(args.out))
        report.write_eval_csv(metrics, os.path.join(out, "eval.csv"))
        report.plot_hits(metrics, os.path.join(out, "eval.png"))
    return 0


def _cmd_explain(args) -> int:
    kg_a, kg_b = _load_pair(args)
    pair = GraphPair(kg_a, kg_b)
    ckpt = ck.load_checkpoint(_data_path(args.ckpt))
    if args.entity_a not in kg_a.entities:
        raise ValueError(f"unknown entity {args.entity_a!r} in graph A")
    if args.entity_b not in kg_b.entities:
        raise ValueError(f"unknown entity {args.entity_b!r} in graph B")
    explainer = xp.Explainer.from_checkpoint(ckpt, pair)
    expl = explainer.explain_pair(kg_a.entities.id(args.entity_a),
                                  kg_b.entities.id(args.entity_b),
                                  top_n=args.top_n)
    print(json.dumps(expl.to_json(), indent=2))
    return 0


def _cmd_removal(args) -> int:
    kg_a, kg_b = _load_pair(args)
    seeds = _load_seeds(args, kg_a, kg_b)
    ckpt = ck.load_checkpoint(_data_path(args.ckpt))
    test = seeds.test_pairs()
    norm = None
    if args.norm:
        with open(_data_path(args.norm)) as fh:
            norm = json.load(fh)
    rows_by_mode = {}
    for mode in ("attributes", "neighbors"):
        rows = xp.removal_analysis(ckpt, kg_a, kg_b, test, runs=args.runs,
                                   mode=mode, top_n=args.top_n, norm=norm)
        rows_by_mode[mode] = rows
        for row in rows:
            print(f"{mode}\trun {row['run']}\tHits@1 {row['hits_at_1']:.2f}\t"
                  f"Jaccard {row['jaccard_attributes']:.4f}/"
                  f"{row['jaccard_neighbors']:.4f}")
    if args.out:
        out = report.ensure_dir(_data_path(args.out))
        report.write_removal_csv(rows_by_mode, os.path.join(out, "removal.csv"))
        report.plot_removal(rows_by_mode, os.path.join(out, "removal.png"))
    return 0


def _cmd_partition(args) -> int:
    kg = parse_triples(_data_path(args.kg_a), gid="A")
    part = partition_graph(kg, args.parts, rng_seed=args.seed_rng)
    sizes = [len(p) for p in part.parts]
    print(f"parts {len(part.parts)}  sizes {sizes}  edge cut {part.edge_cut}")
    if args.out:
        out = report.ensure_dir(_data_path(args.out))
        report.write_partition_csv(part.parts, kg.entities.name,
                                   os.path.join(out, "partition.csv"))
        report.plot_partition_sizes(sizes, part.edge_cut,
                                    os.path.join(out, "partition.png"))
    return 0


def _cmd_gen_synthetic(args) -> int:
    kg_a, kg_b, gold = gen_synthetic_pair(
        args.n, attr_per_entity=args.attr_per_entity,
        rel_density=args.rel_density, char_noise=args.char_noise,
        rel_dropout=args.rel_dropout, rng_seed=args.seed_rng)
    out = report.ensure_dir(_data_path(args.out))
    serialize_triples(kg_a, os.path.join(out, "a.tsv"))
    serialize_triples(kg_b, os.path.join(out, "b.tsv"))
    serialize_seed_alignment(gold, kg_a, kg_b, os.path.join(out, "gold.tsv"))
    print(f"wrote a.tsv, b.tsv, gold.tsv to {out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app, load_state

    kg_a, kg_b = _load_pair(args)
    seeds = _load_seeds(args, kg_a, kg_b) if args.seed else None
    log_dir = _data_path(args.out) if args.out else os.environ.get("IALIGN_DATA_DIR", ".")
    report.ensure_dir(log_dir)
    state = load_state(_data_path(args.ckpt), kg_a, kg_b,
                       log_path=os.path.join(log_dir, "decisions.jsonl"),
                       seeds=seeds, top_n=args.top_n)
    app = create_app(state, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "explain": _cmd_explain,
    "removal": _cmd_removal,
    "partition": _cmd_partition,
    "gen-synthetic": _cmd_gen_synthetic,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # runtime failures map to exit 1, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
