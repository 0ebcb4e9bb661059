"""Cross-validation protocols, balanced accuracy and report aggregation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingPatientIds, SingleClassLabels, TooFewUnits
from .graph import CellGraph, _atomic_write_json
from .train import TrainConfig, train_model

PROTOCOLS = ("random_node", "subgraph", "patient_grouped")


@dataclass
class FoldSplit:
    """Fold assignment per evaluation unit.

    random_node assigns epithelial nodes of one graph (unit_folds is -1 for
    non-epithelial nodes); subgraph and patient_grouped assign whole graphs.
    """

    protocol: str
    unit_folds: np.ndarray
    n_folds: int = 3
    seed: int = 0


def confusion(predictions: np.ndarray, labels: np.ndarray) -> tuple[int, int, int, int]:
    predictions = np.asarray(predictions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = int((predictions & labels).sum())
    fp = int((predictions & ~labels).sum())
    tn = int((~predictions & ~labels).sum())
    fn = int((~predictions & labels).sum())
    return tp, fp, tn, fn


def balanced_accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    """(TPR + TNR) / 2 over binary predictions; requires both classes in labels."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise SingleClassLabels("balanced accuracy needs both classes in the labels")
    tp, fp, tn, fn = confusion(predictions, labels)
    return 0.5 * (tp / (tp + fn) + tn / (tn + fp))


def _deal(n_units: int, n_folds: int, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(n_units)
    folds = np.empty(n_units, dtype=np.int64)
    folds[order] = np.arange(n_units) % n_folds
    return folds


def make_folds(data, protocol: str, seed: int = 0, n_folds: int = 3) -> FoldSplit:
    """Deterministic fold assignment for the three evaluation protocols.

    random_node takes a single CellGraph and stratifies its epithelial nodes by
    label; subgraph and patient_grouped take a list of CellGraphs.
    """
    rng = np.random.default_rng(seed)
    if protocol == "random_node":
        g: CellGraph = data
        epi = np.nonzero(g.epithelial_mask)[0]
        if len(epi) < n_folds:
            raise TooFewUnits(f"{len(epi)} epithelial nodes for {n_folds} folds")
        folds = np.full(g.num_nodes, -1, dtype=np.int64)
        # Stratified dealing keeps the tumor/healthy ratio per fold.
        for lab in (0, 1):
            idx = epi[g.labels[epi] == lab]
            folds[idx] = _deal(len(idx), n_folds, rng)
        return FoldSplit(protocol, folds, n_folds, seed)
    if protocol == "subgraph":
        if len(data) < n_folds:
            raise TooFewUnits(f"{len(data)} subgraphs for {n_folds} folds")
        return FoldSplit(protocol, _deal(len(data), n_folds, rng), n_folds, seed)
    if protocol == "patient_grouped":
        patients = [g.patient_id for g in data]
        if any(p is None for p in patients):
            raise MissingPatientIds("patient_grouped needs a patient id on every graph")
        unique = sorted(set(patients))
        if len(unique) < n_folds:
            raise TooFewUnits(f"{len(unique)} patients for {n_folds} folds")
        pfolds = _deal(len(unique), n_folds, rng)
        by_patient = {p: pfolds[i] for i, p in enumerate(unique)}
        return FoldSplit(protocol, np.array([by_patient[p] for p in patients]), n_folds, seed)
    raise ValueError(f"unknown protocol {protocol!r}")


@dataclass
class FoldResult:
    bal_acc: float
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass
class MetricsReport:
    protocol: str
    folds: list[FoldResult]
    mean: float
    stderr: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "folds": [
                {"bal_acc": f.bal_acc, "tp": f.tp, "fp": f.fp, "tn": f.tn, "fn": f.fn}
                for f in self.folds
            ],
            "mean": self.mean,
            "stderr": self.stderr,
            "config": self.config,
        }

    def save(self, path) -> None:
        _atomic_write_json(self.to_dict(), path)


def load_report(path) -> MetricsReport:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return MetricsReport(
        protocol=doc["protocol"],
        folds=[FoldResult(**f) for f in doc["folds"]],
        mean=doc["mean"],
        stderr=doc["stderr"],
        config=doc.get("config", {}),
    )


def aggregate(protocol: str, fold_results: list[FoldResult], config: dict) -> MetricsReport:
    accs = np.array([f.bal_acc for f in fold_results])
    stderr = float(accs.std(ddof=1) / np.sqrt(len(accs))) if len(accs) > 1 else 0.0
    return MetricsReport(protocol, fold_results, float(accs.mean()), stderr, config)


def _fold_indices(graphs, split: FoldSplit, fold: int):
    """Per-graph train/test epithelial index arrays for one held-out fold."""
    train_idx, test_idx = [], []
    if split.protocol == "random_node":
        g = graphs[0]
        epi = np.nonzero(g.epithelial_mask)[0]
        train_idx.append(epi[split.unit_folds[epi] != fold])
        test_idx.append(epi[split.unit_folds[epi] == fold])
    else:
        for gi, g in enumerate(graphs):
            epi = np.nonzero(g.epithelial_mask)[0]
            if split.unit_folds[gi] == fold:
                train_idx.append(np.empty(0, dtype=np.int64))
                test_idx.append(epi)
            else:
                train_idx.append(epi)
                test_idx.append(np.empty(0, dtype=np.int64))
    return train_idx, test_idx


def run_fold(graphs: list[CellGraph], split: FoldSplit, fold: int, cfg: TrainConfig) -> FoldResult:
    """Train with the given fold held out; score balanced accuracy on its epithelial nodes."""
    fold_cfg = TrainConfig(**{**cfg.__dict__, "seed": cfg.seed + fold})
    train_idx, test_idx = _fold_indices(graphs, split, fold)
    result = train_model(graphs, train_idx, test_idx, fold_cfg)
    preds = np.array([p.prob >= 0.5 for p in result.predictions])
    labels = np.array([p.label for p in result.predictions])
    acc = balanced_accuracy(preds, labels)
    tp, fp, tn, fn = confusion(preds, labels)
    return FoldResult(acc, tp, fp, tn, fn)


def cross_validate(data, cfg: TrainConfig, split: FoldSplit, max_workers: int = 1) -> MetricsReport:
    """3-fold cross-validation: each fold once as test, aggregated mean and standard error."""
    graphs = [data] if isinstance(data, CellGraph) else list(data)
    folds = list(range(split.n_folds))
    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(lambda f: run_fold(graphs, split, f, cfg), folds))
    else:
        results = [run_fold(graphs, split, f, cfg) for f in folds]
    config = {"model": cfg.model, "epochs": cfg.epochs, "seed": cfg.seed}
    return aggregate(split.protocol, results, config)
