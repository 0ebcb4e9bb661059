"""Command-line entry point chaining all pipeline stages.

Exit codes: 0 success, 2 argument errors, 3 malformed input files, 4 runtime failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .autodiff import save_checkpoint
from .errors import CellGraphError, MalformedInput
from .evaluate import MetricsReport, cross_validate, load_report, make_folds
from .graph import EdgeRule, _atomic_write_json, assemble_graph, cleanup_graph, load_graph, save_graph
from .ingest import CLASS_NAMES, parse_regions, parse_segmentation, relabel_epithelial
from .models import MODEL_KINDS
from .simplify import AnchorSelection, extract_partition_subgraphs, induced_subgraph, khop_mask, kmeans_split
from .synth import PRESETS, SynthConfig, generate_tissue, load_features, save_features, save_truth
from .train import TrainConfig, predict_epithelial, train_model
from .ingest import serialize_regions, serialize_segmentation


def _workers(args) -> int:
    if getattr(args, "workers", None):
        return args.workers
    return max(1, int(os.environ.get("CELLGRAPH_THREADS", "1")))


def cmd_synth(args) -> int:
    cfg = SynthConfig(seed=args.seed, preset=args.preset)
    if args.scale != 1.0:
        s = args.scale
        cfg = SynthConfig(
            seed=args.seed,
            preset=args.preset,
            n_tumor_epi=int(cfg.n_tumor_epi * s),
            n_healthy_epi=int(cfg.n_healthy_epi * s),
            n_lymphocyte=int(cfg.n_lymphocyte * s),
            n_stromal=int(cfg.n_stromal * s),
            n_granulocyte=int(cfg.n_granulocyte * s),
            n_plasma=int(cfg.n_plasma * s),
            n_unclassified=int(cfg.n_unclassified * s),
        )
    tissue = generate_tissue(cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    serialize_segmentation(tissue.records, out / "segmentation.json")
    serialize_regions(tissue.regions, out / "regions.json")
    save_features(tissue.features, tissue.records, out / "features.json")
    save_truth(tissue.truth, out / "truth.json")
    print(f"wrote {len(tissue.records)} cells, {len(tissue.regions)} tumor regions to {out}")
    return 0


def cmd_build(args) -> int:
    indir = Path(args.input)
    cells = parse_segmentation(indir / "segmentation.json")
    regions = parse_regions(indir / "regions.json")
    cells = relabel_epithelial(cells, regions)
    feat_path = Path(args.features) if args.features else indir / "features.json"
    if not feat_path.exists():
        raise MalformedInput(
            f"{feat_path}: feature sidecar not found; texture features require raster "
            "patches which are not part of the interchange format"
        )
    feat_map = load_features(feat_path)
    missing = [c.id for c in cells if c.id not in feat_map]
    if missing:
        raise MalformedInput(f"features missing for record ids {missing[:5]}...")
    feats = np.array([feat_map[c.id] for c in cells])
    g = assemble_graph(cells, feats, EdgeRule(r0=args.r0), patient_id=args.patient_id)
    g, _ = cleanup_graph(g)
    save_graph(g, args.output)
    print(f"graph: {g.num_nodes} nodes, {g.num_edges} edges -> {args.output}")
    return 0


def _anchor_selection(spec: str) -> AnchorSelection:
    if spec == "epithelial":
        return AnchorSelection()
    s = [0] * 6
    for name in spec.split(","):
        name = name.strip()
        if name not in CLASS_NAMES:
            raise MalformedInput(f"unknown anchor class {name!r}; choose from {CLASS_NAMES}")
        s[CLASS_NAMES.index(name)] = 1
    return AnchorSelection(tuple(s))


def cmd_simplify(args) -> int:
    g = load_graph(args.input)
    mask = khop_mask(g, _anchor_selection(args.anchors), args.k)
    sub, _ = induced_subgraph(g, mask, mode="compact")
    save_graph(sub, args.output)
    print(f"simplified: {g.num_nodes} -> {sub.num_nodes} nodes (k={args.k})")
    return 0


def cmd_split(args) -> int:
    g = load_graph(args.input)
    part = kmeans_split(g, args.kmeans_k, seed=args.seed)
    subs = extract_partition_subgraphs(g, part)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write_json(
        {"K": part.K, "seed": part.seed, "assignment": [int(a) for a in part.assignment]},
        out / "partition.json",
    )
    width = len(str(part.K - 1))
    for i, sub in enumerate(subs):
        save_graph(sub, out / f"sub_{i:0{width}d}.json")
    print(f"split into {part.K} subgraphs in {out}")
    return 0


def _load_graph_input(path):
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("sub_*.json"))
        if not files:
            raise MalformedInput(f"{p}: no sub_*.json graph files found")
        return [load_graph(f) for f in files]
    return [load_graph(p)]


def _train_config(args) -> TrainConfig:
    groups = set(args.features.split(","))
    known = {"morph", "texture", "class"}
    if not groups <= known:
        raise MalformedInput(f"unknown feature group in {args.features!r}; choose from {sorted(known)}")
    return TrainConfig(
        model=args.model,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        hidden=args.hidden,
        layers=args.layers,
        sgc_hops=args.sgc_hops,
        zscore=not args.no_zscore,
        use_morphology="morph" in groups,
        use_texture="texture" in groups,
        use_cell_class="class" in groups,
    )


def cmd_train(args) -> int:
    graphs = _load_graph_input(args.input)
    cfg = _train_config(args)
    train_idx = [np.nonzero(g.epithelial_mask)[0] for g in graphs]
    test_idx = [np.empty(0, dtype=np.int64) for _ in graphs]
    result = train_model(graphs, train_idx, test_idx, cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, out / "checkpoint.json")
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for e, loss in enumerate(result.loss_history):
            fh.write(json.dumps({"epoch": e, "loss": loss}) + "\n")
    preds = predict_epithelial(graphs, result.params, cfg, result.normalizer)
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps({"node_id": p.node_id, "prob": p.prob, "label": p.label}) + "\n")
    print(f"final loss {result.loss_history[-1]:.4f}; artifacts in {out}")
    return 0


def cmd_crossval(args) -> int:
    graphs = _load_graph_input(args.input)
    cfg = _train_config(args)
    data = graphs[0] if args.protocol == "random_node" else graphs
    split = make_folds(data, args.protocol, seed=args.seed, n_folds=args.folds)
    report = cross_validate(data, cfg, split, max_workers=_workers(args))
    report.save(args.output)
    print(
        f"{args.protocol}/{args.model}: mean balanced accuracy "
        f"{report.mean:.4f} +/- {report.stderr:.4f} -> {args.output}"
    )
    return 0


FEATURE_SETS = {
    "morph": ("morph",),
    "morph+texture": ("morph", "texture"),
    "morph+class": ("morph", "class"),
    "morph+texture+class": ("morph", "texture", "class"),
}


def cmd_sweep(args) -> int:
    import csv

    base = load_graph(args.input)
    models = args.models.split(",")
    k_values = [int(k) for k in args.k_values.split(",")]
    feature_sets = args.feature_sets.split(";")
    protocols = args.protocols.split(",")
    rows = []
    for k in k_values:
        mask = khop_mask(base, AnchorSelection(), k)
        simplified, _ = induced_subgraph(base, mask, mode="compact")
        part = kmeans_split(simplified, min(args.kmeans_k, simplified.num_nodes), seed=args.seed)
        subs = extract_partition_subgraphs(simplified, part)
        for fs in feature_sets:
            for model in models:
                for protocol in protocols:
                    a = argparse.Namespace(**vars(args))
                    a.model = model
                    a.features = ",".join(FEATURE_SETS[fs])
                    cfg = _train_config(a)
                    data = simplified if protocol == "random_node" else subs
                    split = make_folds(data, protocol, seed=args.seed, n_folds=args.folds)
                    report = cross_validate(data, cfg, split, max_workers=_workers(args))
                    rows.append((fs, k, model, protocol, report.mean, report.stderr))
                    print(f"{fs} k={k} {model} {protocol}: {report.mean:.4f}")
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_set", "k", "model", "protocol", "mean_bal_acc", "stderr"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} sweep rows to {args.output}")
    return 0


def _render_svg(report: MetricsReport, path) -> None:
    """Static bar chart of per-fold balanced accuracy."""
    n = len(report.folds)
    bar_w, gap, h0, width = 60, 30, 260, 40 + n * 90
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="320">',
        f'<text x="10" y="20" font-size="14">balanced accuracy per fold ({report.protocol})</text>',
    ]
    for i, f in enumerate(report.folds):
        x = 40 + i * (bar_w + gap)
        bh = int(f.bal_acc * 220)
        parts.append(f'<rect x="{x}" y="{h0 - bh}" width="{bar_w}" height="{bh}" fill="#4878a8"/>')
        parts.append(f'<text x="{x}" y="{h0 + 20}" font-size="12">fold {i}</text>')
        parts.append(f'<text x="{x}" y="{h0 - bh - 6}" font-size="12">{f.bal_acc:.3f}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))


def cmd_report(args) -> int:
    report = load_report(args.input)
    lines = [
        f"protocol: {report.protocol}",
        f"{'fold':>6} {'bal_acc':>9} {'tp':>6} {'fp':>6} {'tn':>6} {'fn':>6}",
    ]
    for i, f in enumerate(report.folds):
        lines.append(f"{i:>6} {f.bal_acc:>9.4f} {f.tp:>6} {f.fp:>6} {f.tn:>6} {f.fn:>6}")
    lines.append(f"mean {report.mean:.4f} +/- {report.stderr:.4f} (standard error)")
    text = "\n".join(lines)
    print(text)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    if args.svg:
        _render_svg(report, args.svg)
    return 0


def _add_train_flags(p):
    p.add_argument("--model", default="difformer", choices=MODEL_KINDS)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--sgc-hops", dest="sgc_hops", type=int, default=2)
    p.add_argument("--no-zscore", action="store_true")
    p.add_argument("--features", default="morph,texture,class", help="comma list of morph,texture,class")
    p.add_argument("--workers", type=int, default=None, help="fold worker pool size (or CELLGRAPH_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cellgraph", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic tissue files")
    p.add_argument("--preset", default="easy", choices=PRESETS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="scale all cell counts")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("build", help="segmentation + regions -> cell graph JSON")
    p.add_argument("-i", "--input", required=True, help="directory with segmentation.json and regions.json")
    p.add_argument("--r0", type=float, default=50.0)
    p.add_argument("--features", default=None, help="feature sidecar path (default <input>/features.json)")
    p.add_argument("--patient-id", default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("simplify", help="k-max-hops simplification around anchor classes")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--anchors", default="epithelial")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_simplify)

    p = sub.add_parser("split", help="K-means spatial split into subgraph files")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--kmeans-k", dest="kmeans_k", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train one model on all epithelial nodes")
    p.add_argument("-i", "--input", required=True, help="graph JSON or subgraph directory")
    _add_train_flags(p)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("crossval", help="3-fold cross-validation under a protocol")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--protocol", default="subgraph", choices=("random_node", "subgraph", "patient_grouped"))
    p.add_argument("--folds", type=int, default=3)
    _add_train_flags(p)
    p.add_argument("-o", "--output", default="report.json")
    p.set_defaults(fn=cmd_crossval)

    p = sub.add_parser("sweep", help="feature-set / hop / model / protocol ablation matrix")
    p.add_argument("-i", "--input", required=True, help="built (unsimplified) graph JSON")
    p.add_argument("--models", default="sgformer")
    p.add_argument("--k-values", dest="k_values", default="3")
    p.add_argument("--feature-sets", dest="feature_sets", default="morph;morph+texture+class")
    p.add_argument("--protocols", default="subgraph,random_node")
    p.add_argument("--kmeans-k", dest="kmeans_k", type=int, default=100)
    p.add_argument("--folds", type=int, default=3)
    _add_train_flags(p)
    p.add_argument("-o", "--output", default="sweep.csv")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="render a MetricsReport as a table / SVG chart")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", default=None, help="also write the table to this file")
    p.add_argument("--svg", default=None, help="write an SVG bar chart")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MalformedInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CellGraphError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
