"""Command-line entry point: ``dgpzsl <command> [options]``.

Exit status: 0 on success, 1 when an input is rejected, 2 on a numerical
failure (non-finite loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, data, gradcheck, propagation, sparse
from .errors import NumericalError, ValidationError
from .taxonomy import ANCESTOR, build_dag, graph_stats, khop_decompose
from .training import GraphInputs, TrainConfig, predict_classifiers, train
from .zeroshot import GENERALIZED, UNSEEN_ONLY, EvalProtocol, FeatureBatch, generalized_eval, report_csv

log = logging.getLogger("dgpzsl")

DEFAULT_SYNTH = "n=100"
ABLATION_VARIANTS = {
    "sgcn": dict(model_kind="sgcn"),
    "dgp-w": dict(model_kind="dgp", weighted=False),
    "dgp": dict(model_kind="dgp"),
    "dgp-1phase": dict(model_kind="dgp", two_phase=False),
}


# ---------------------------------------------------------------------------
# argument plumbing


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_inputs(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, default=Path("runs"))
    g.add_argument("--edges", type=Path, help="child<TAB>parent edge list")
    g.add_argument("--embeddings", type=Path, help="node embedding table")
    g.add_argument("--weights", type=Path, help="seen-class classifier table")
    g.add_argument("--synth", metavar="SPEC", help="synthetic task, e.g. 'n=60,S=16'")


def _add_model(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("model and training")
    g.add_argument("--model", choices=["sgcn", "gcn", "dgp", "graph-free"], default=d.model_kind)
    g.add_argument("--layers", type=int, default=d.layers, help="hidden layers for --model gcn")
    g.add_argument("--K", type=int, default=d.K)
    g.add_argument("--hidden", type=int, default=d.hidden_dim)
    g.add_argument("--no-weighting", action="store_true")
    g.add_argument("--no-two-phase", action="store_true")
    g.add_argument("--norm", choices=["nonsym", "sym"], default="nonsym")
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--lr", type=float, default=d.learning_rate)
    g.add_argument("--weight-decay", type=float, default=d.weight_decay)
    g.add_argument("--dropout", type=float, default=d.dropout_rate)
    g.add_argument("--negative-slope", type=float, default=d.negative_slope)


def _config(args, **overrides) -> TrainConfig:
    kw = dict(
        epochs=args.epochs,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        dropout_rate=args.dropout,
        negative_slope=args.negative_slope,
        K=args.K,
        hidden_dim=args.hidden,
        normalization="sym" if args.norm == "sym" else "non-sym",
        seed=args.seed,
        model_kind=args.model,
        layers=args.layers,
        weighted=not args.no_weighting,
        two_phase=not args.no_two_phase,
    )
    kw.update(overrides)
    return TrainConfig(**kw)


class Task:
    """Graph, embeddings, supervision and (optionally) test features."""

    def __init__(self, dag, x, weights, mask, unseen_batch=None, seen_batch=None, source=None):
        self.dag, self.x, self.weights, self.mask = dag, x, weights, mask
        self.unseen_batch, self.seen_batch = unseen_batch, seen_batch
        self.source = source or {}


def _load_task(args, need_features: bool = False) -> Task:
    if args.synth is not None:
        spec = data.SynthSpec.parse(args.synth or DEFAULT_SYNTH, seed=args.seed)
        dag = data.synth_hierarchy(spec)
        t = data.synth_task(dag, spec)
        return Task(dag, t.embeddings.aligned(dag), t.weights.matrix, t.mask, t.unseen_batch, t.seen_batch,
                    {"synth": spec.as_dict()})
    if not (args.edges and args.embeddings and args.weights):
        raise ValidationError("give either --synth SPEC or all of --edges, --embeddings, --weights")
    emb = data.load_embeddings(args.embeddings)
    weights = data.load_weights(args.weights)
    dag = build_dag(data.load_edge_list(args.edges), extra_nodes=list(emb.node_ids))
    mask = weights.mask(dag)
    source = {"edges": str(args.edges), "embeddings": str(args.embeddings), "weights": str(args.weights)}
    unseen_batch = seen_batch = None
    if getattr(args, "features", None):
        batch = data.load_features(args.features, dag)
        unseen_batch = batch.subset(mask.unseen())
        seen_batch = batch.subset(mask.indices)
        source["features"] = str(args.features)
    elif need_features:
        raise ValidationError("--features is required with file inputs")
    return Task(dag, emb.aligned(dag), weights.matrix, mask, unseen_batch, seen_batch, source)


def _write_manifest(out: Path, name: str, args, config, outputs, metrics, started) -> None:
    manifest = {
        "tool": f"dgpzsl {__version__}",
        "command": args.command,
        "argv": args.argv,
        "seed": args.seed,
        "config": asdict(config) if config is not None else None,
        "inputs": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in ("func", "argv")},
        "outputs": [str(p) for p in outputs],
        "wall_clock_seconds": round(time.time() - started, 3),
        "metrics": metrics,
    }
    with open(out / name, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    started = time.time()
    task = _load_task(args)
    config = _config(args)
    graph = GraphInputs(task.dag, config.K)
    result = train(config, graph, task.x, task.weights, task.mask)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    ckpt, loss_csv = out / "checkpoint.txt", out / "loss.csv"
    data.save_checkpoint(ckpt, result.trained)
    _write_rows(loss_csv, ["epoch", "loss"], [(i, data.fmt(v)) for i, v in enumerate(result.losses)])
    outputs = [ckpt, loss_csv]
    alphas = result.alphas
    if alphas is not None:
        alpha_csv = out / "alphas.csv"
        _write_rows(alpha_csv, ["phase"] + [f"hop{k}" for k in range(config.K + 1)],
                    [["descendant", *map(data.fmt, alphas[0])], ["ancestor", *map(data.fmt, alphas[1])]])
        outputs.append(alpha_csv)
    metrics = {"initial_loss": result.losses[0], "final_loss": result.losses[-1]}
    _write_manifest(out, "train_manifest.json", args, config, outputs, metrics, started)
    print(f"{config.variant}: loss {result.losses[0]:.6f} -> {result.losses[-1]:.6f}; wrote {ckpt}")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    ckpt = args.checkpoint or args.out / "checkpoint.txt"
    trained = data.load_checkpoint(ckpt)
    task = _load_task(args, need_features=True)
    graph = GraphInputs(task.dag, trained.config.K)
    pred = predict_classifiers(trained, graph, task.x)
    mode = GENERALIZED if args.generalized else UNSEEN_ONLY
    unseen = tuple(task.mask.unseen().tolist())
    protocol = EvalProtocol(unseen, mode, tuple(args.k))
    batch = task.seen_batch if args.seen_test else task.unseen_batch
    if args.seen_test and mode != GENERALIZED:
        raise ValidationError("--seen-test scores seen-class examples and needs --generalized")
    hits = generalized_eval(pred, task.weights, task.mask.indices, batch, protocol)
    args.out.mkdir(parents=True, exist_ok=True)
    text = report_csv(hits)
    path = args.out / ("hits_generalized.csv" if args.generalized else "hits.csv")
    if args.seen_test:
        path = args.out / "hits_seen.csv"
    path.write_text(text, encoding="utf-8")
    _write_manifest(args.out, path.stem + "_manifest.json", args, trained.config, [path],
                    {f"hit@{k}": v for k, v in hits.items()}, started)
    sys.stdout.write(text)
    return 0


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def cmd_ablate(args) -> int:
    started = time.time()
    task = _load_task(args, need_features=True)
    unseen = tuple(task.mask.unseen().tolist())
    protocol = EvalProtocol(unseen, UNSEEN_ONLY, tuple(args.k))
    per_run, summary = [], []
    for name in args.variants:
        if name not in ABLATION_VARIANTS:
            raise ValidationError(f"unknown variant {name!r}; choose from {sorted(ABLATION_VARIANTS)}")
        runs = []
        for seed in args.seeds:
            config = _config(args, seed=seed, **ABLATION_VARIANTS[name])
            graph = GraphInputs(task.dag, config.K)
            result = train(config, graph, task.x, task.weights, task.mask)
            pred = predict_classifiers(result.trained, graph, task.x)
            hits = generalized_eval(pred, task.weights, task.mask.indices, task.unseen_batch, protocol)
            runs.append(hits)
            per_run.append([config.variant, seed, *(f"{hits[k]:.2f}" for k in protocol.k_values)])
            log.info("%s seed %d: %s", config.variant, seed, hits)
        row = [config.variant, len(runs)]
        for k in protocol.k_values:
            m, s = _mean_std([h[k] for h in runs])
            row += [f"{m:.2f}", f"{s:.2f}"]
        summary.append(row)
    args.out.mkdir(parents=True, exist_ok=True)
    header = ["variant", "runs"]
    for k in protocol.k_values:
        header += [f"hit{k}_mean", f"hit{k}_std"]
    summary_csv, runs_csv = args.out / "ablation.csv", args.out / "ablation_runs.csv"
    _write_rows(summary_csv, header, summary)
    _write_rows(runs_csv, ["variant", "seed"] + [f"hit{k}" for k in protocol.k_values], per_run)
    _write_manifest(args.out, "ablation_manifest.json", args, _config(args), [summary_csv, runs_csv],
                    {"runs": len(per_run)}, started)
    sys.stdout.write(summary_csv.read_text(encoding="utf-8"))
    return 0


def _smooth_graph(kind: str, n: int, rng: np.random.Generator) -> sparse.SparseMatrix:
    if kind == "identity":
        return sparse.identity(n)
    if kind == "complete":
        return sparse.from_dense(np.ones((n, n)))
    if kind == "random":
        return data.random_connected_graph(n, rng)
    raise ValidationError(f"unknown smoothing graph {kind!r}; use random, identity or complete")


def cmd_diagnose(args) -> int:
    status = 0
    if not args.skip_gradcheck:
        results = gradcheck.run_suite(args.seed, args.instances)
        worst = max(results, key=lambda r: r.max_error)
        print(f"gradient check: {len(results)} instances, max relative error {worst.max_error:.3e} "
              f"({worst.label}, {worst.worst()})")
        failed = [r for r in results if r.max_error >= args.tol]
        for r in failed:
            print(f"FAILED {r.label}: parameter {r.worst()} error {r.max_error:.3e}", file=sys.stderr)
        if failed:
            status = 2
    if args.smooth is not None:
        opts = dict(tok.split("=", 1) for tok in " ".join(args.smooth).replace(",", " ").split())
        n, steps = int(opts.get("n", 30)), int(opts.get("steps", 200))
        kind = opts.get("graph", "random")
        rng = np.random.default_rng(int(opts.get("seed", args.seed)))
        a = _smooth_graph(kind, n, rng)
        x = rng.standard_normal((n, int(opts.get("dim", 8))))
        curve = propagation.smoothing_trajectory(a, x, steps, allow_disconnected=(kind == "identity"))
        print("step,dispersion")
        for i, d in enumerate(curve, 1):
            print(f"{i},{d:.6e}")
        print(f"final dispersion after {steps} steps: {curve[-1]:.3e}")
    return status


def cmd_graph_stats(args) -> int:
    if args.synth is not None:
        dag = data.synth_hierarchy(data.SynthSpec.parse(args.synth or DEFAULT_SYNTH, seed=args.seed))
    elif args.edges:
        dag = build_dag(data.load_edge_list(args.edges))
    else:
        raise ValidationError("give --edges PATH or --synth SPEC")
    stats = graph_stats(dag, khop_decompose(dag, args.K, ANCESTOR))
    print("metric,value")
    for k, v in stats.as_dict().items():
        print(f"{k},{v:.6g}" if isinstance(v, float) else f"{k},{v}")
    return 0


def cmd_synth(args) -> int:
    started = time.time()
    spec = data.SynthSpec.parse(args.synth or DEFAULT_SYNTH, seed=args.seed)
    dag = data.synth_hierarchy(spec)
    task = data.synth_task(dag, spec)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    data.save_edge_list(out / "edges.tsv", data.dag_edge_pairs(dag))
    data.save_table(out / "embeddings.txt", task.embeddings.node_ids, task.embeddings.matrix)
    data.save_table(out / "weights.txt", task.weights.node_ids, task.weights.matrix)
    both = np.concatenate([task.unseen_batch.features, task.seen_batch.features])
    labels = np.concatenate([task.unseen_batch.labels, task.seen_batch.labels])
    data.save_features(out / "features.txt", dag, FeatureBatch(both, labels))
    outputs = [out / n for n in ("edges.tsv", "embeddings.txt", "weights.txt", "features.txt")]
    metrics = {"nodes": dag.n_nodes, "edges": dag.n_edges, "seen": task.mask.M, "synth": spec.as_dict()}
    _write_manifest(out, "synth_manifest.json", args, None, outputs, metrics, started)
    print(f"wrote {dag.n_nodes} nodes, {dag.n_edges} edges, {task.mask.M} seen classes to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgpzsl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_inputs(p)
    _add_model(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Hit@k of a checkpoint on test features")
    _add_inputs(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--features", type=Path, help="feature table, ids are class labels")
    p.add_argument("--generalized", action="store_true", help="seen classes are candidates too")
    p.add_argument("--seen-test", action="store_true", help="score seen-class examples (with --generalized)")
    p.add_argument("--k", type=_int_list, default=[1, 2, 5, 10, 20])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="SGCN / DGP(-w) / DGP / one-phase DGP over several seeds")
    _add_inputs(p)
    _add_model(p)
    p.add_argument("--features", type=Path)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--variants", type=lambda s: s.split(","), default=list(ABLATION_VARIANTS))
    p.add_argument("--k", type=_int_list, default=[1, 2, 5, 10, 20])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("diagnose", help="gradient checks and the smoothing demonstration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--skip-gradcheck", action="store_true")
    p.add_argument("--smooth", nargs="*", metavar="KEY=VALUE",
                   help="n=30 steps=200 graph=random|identity|complete")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("graph-stats", help="adjacency densities with and without dense links")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--edges", type=Path)
    p.add_argument("--synth", metavar="SPEC")
    p.add_argument("--K", type=int, default=4)
    p.set_defaults(func=cmd_graph_stats)

    p = sub.add_parser("synth", help="write a synthetic task as files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("synth"))
    p.add_argument("--synth", metavar="SPEC", default=DEFAULT_SYNTH)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
