"""End-to-end CLI pipeline smoke tests and exit-code contract."""

import json

import numpy as np
import pytest

from cellgraph.cli import main
from cellgraph.evaluate import load_report
from cellgraph.graph import load_graph


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One shared synth -> build -> simplify -> split run for the smoke tests."""
    root = tmp_path_factory.mktemp("pipeline")
    raw = root / "raw"
    assert run(["synth", "--preset", "easy", "--seed", "0", "--scale", "0.12", "-o", str(raw)]) == 0
    graph = root / "graph.json"
    assert run(["build", "-i", str(raw), "-o", str(graph)]) == 0
    simplified = root / "simplified.json"
    assert run(["simplify", "-i", str(graph), "--k", "3", "-o", str(simplified)]) == 0
    subs = root / "subs"
    assert run(["split", "-i", str(simplified), "--kmeans-k", "8", "-o", str(subs)]) == 0
    return root


def test_synth_writes_all_four_files(pipeline_dir):
    raw = pipeline_dir / "raw"
    for name in ("segmentation.json", "regions.json", "features.json", "truth.json"):
        assert (raw / name).exists(), name


def test_build_produces_valid_graph(pipeline_dir):
    g = load_graph(pipeline_dir / "graph.json")
    assert g.num_nodes > 100
    assert g.num_edges > 0
    # cleanup removed every unclassified node
    assert np.all(g.class_codes != -1)


def test_simplify_shrinks_graph(pipeline_dir):
    g = load_graph(pipeline_dir / "graph.json")
    s = load_graph(pipeline_dir / "simplified.json")
    assert 0 < s.num_nodes <= g.num_nodes
    assert s.epithelial_mask.sum() == g.epithelial_mask.sum()


def test_split_writes_partition_and_subgraphs(pipeline_dir):
    subs = pipeline_dir / "subs"
    part = json.loads((subs / "partition.json").read_text())
    assert part["K"] == 8
    files = sorted(subs.glob("sub_*.json"))
    assert len(files) == 8
    total = sum(load_graph(f).num_nodes for f in files)
    assert total == len(part["assignment"])


def test_train_writes_artifacts(pipeline_dir, tmp_path):
    out = tmp_path / "run"
    code = run(
        ["train", "-i", str(pipeline_dir / "simplified.json"), "--model", "gcn",
         "--epochs", "5", "--hidden", "8", "-o", str(out)]
    )
    assert code == 0
    ckpt = json.loads((out / "checkpoint.json").read_text())
    assert "w_head" in ckpt
    history = [json.loads(l) for l in (out / "history.jsonl").read_text().splitlines()]
    assert [h["epoch"] for h in history] == list(range(5))
    preds = [json.loads(l) for l in (out / "predictions.jsonl").read_text().splitlines()]
    g = load_graph(pipeline_dir / "simplified.json")
    assert len(preds) == int(g.epithelial_mask.sum())
    assert all(0.0 <= p["prob"] <= 1.0 for p in preds)


def test_crossval_report_deterministic(pipeline_dir, tmp_path):
    args = ["crossval", "-i", str(pipeline_dir / "simplified.json"), "--protocol",
            "random_node", "--model", "sgc", "--epochs", "10", "--seed", "1"]
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    assert run(args + ["-o", str(r1)]) == 0
    assert run(args + ["-o", str(r2)]) == 0
    assert r1.read_bytes() == r2.read_bytes()
    rep = load_report(r1)
    assert rep.protocol == "random_node" and len(rep.folds) == 3


def test_crossval_subgraph_protocol(pipeline_dir, tmp_path):
    out = tmp_path / "sub.json"
    code = run(
        ["crossval", "-i", str(pipeline_dir / "subs"), "--protocol", "subgraph",
         "--model", "gcn", "--epochs", "10", "--hidden", "8", "-o", str(out)]
    )
    assert code == 0
    assert load_report(out).protocol == "subgraph"


def test_report_renders_table_and_svg(pipeline_dir, tmp_path, capsys):
    rep_path = tmp_path / "rep.json"
    assert run(
        ["crossval", "-i", str(pipeline_dir / "simplified.json"), "--protocol", "random_node",
         "--model", "sgc", "--epochs", "5", "-o", str(rep_path)]
    ) == 0
    table = tmp_path / "table.txt"
    svg = tmp_path / "chart.svg"
    assert run(["report", "-i", str(rep_path), "-o", str(table), "--svg", str(svg)]) == 0
    out = capsys.readouterr().out
    assert "mean" in out and "fold" in out
    assert table.read_text().startswith("protocol:")
    body = svg.read_text()
    assert body.startswith("<svg") and body.count("<rect") == 3


def test_sweep_csv_schema(pipeline_dir, tmp_path):
    out = tmp_path / "sweep.csv"
    code = run(
        ["sweep", "-i", str(pipeline_dir / "graph.json"), "--models", "sgc",
         "--k-values", "2", "--feature-sets", "morph", "--protocols", "random_node",
         "--epochs", "5", "--kmeans-k", "6", "-o", str(out)]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "feature_set,k,model,protocol,mean_bal_acc,stderr"
    assert len(lines) == 2
    fs, k, model, protocol, mean, stderr = lines[1].split(",")
    assert (fs, k, model, protocol) == ("morph", "2", "sgc", "random_node")
    assert 0.0 <= float(mean) <= 1.0


# ------------------------------------------------------------------ exit codes


def test_argparse_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        run(["simplify"])  # missing required -i/-o
    assert exc.value.code == 2


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 2


def test_malformed_input_exits_3(tmp_path):
    bad = tmp_path / "raw"
    bad.mkdir()
    (bad / "segmentation.json").write_text("{not json")
    (bad / "regions.json").write_text("[]")
    assert run(["build", "-i", str(bad), "-o", str(tmp_path / "g.json")]) == 3


def test_missing_feature_sidecar_exits_3(pipeline_dir, tmp_path):
    raw = pipeline_dir / "raw"
    assert run(
        ["build", "-i", str(raw), "--features", str(tmp_path / "absent.json"),
         "-o", str(tmp_path / "g.json")]
    ) == 3


def test_bad_anchor_class_exits_3(pipeline_dir, tmp_path):
    assert run(
        ["simplify", "-i", str(pipeline_dir / "graph.json"), "--anchors", "Fibroblast",
         "-o", str(tmp_path / "s.json")]
    ) == 3


def test_runtime_failure_exits_4(tmp_path):
    assert run(["report", "-i", str(tmp_path / "missing.json")]) == 4


def test_invalid_kmeans_k_exits_4(pipeline_dir, tmp_path):
    assert run(
        ["split", "-i", str(pipeline_dir / "simplified.json"), "--kmeans-k", "0",
         "-o", str(tmp_path / "subs")]
    ) == 4
