"""Training pipeline: feature normalization, label-leakage masking, epithelial BCE
loss and the full-batch Adam loop over one or several graphs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .errors import EmptyEpithelialSet, EmptyTrainingSet
from .graph import CellGraph, CONTINUOUS_COLS, N_FEATURES, ONEHOT_COLS
from .ingest import EPITHELIAL_HEALTHY, EPITHELIAL_TUMOR
from .models import ModelSpec, init_params, model_forward, normalized_adjacency

PROB_CLAMP = 1e-12


@dataclass
class TrainConfig:
    """All training knobs, including the defaults the source protocol leaves unstated."""

    model: str = "difformer"
    epochs: int = 200
    lr: float = 1e-3
    seed: int = 0
    hidden: int = 64
    layers: int = 2
    alpha: float = 0.5
    sgc_hops: int = 2
    zscore: bool = True
    use_morphology: bool = True
    use_texture: bool = True
    use_cell_class: bool = True  # coordinates are always on

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (self.use_morphology or self.use_texture or self.use_cell_class):
            raise ValueError("at least one feature group must stay enabled")

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            kind=self.model,
            hidden=self.hidden,
            layers=self.layers,
            alpha=self.alpha,
            sgc_hops=self.sgc_hops,
        )

    def selected_columns(self) -> np.ndarray:
        """Columns of the 22-wide node matrix kept under the feature-group toggles."""
        cols = []
        if self.use_morphology:
            cols += list(range(7))
        if self.use_texture:
            cols += list(range(7, 14))
        if self.use_cell_class:
            cols += list(range(N_FEATURES, N_FEATURES + 6))
        cols += [N_FEATURES + 6, N_FEATURES + 7]
        return np.array(cols)


@dataclass
class Normalizer:
    """Per-column z-score statistics fitted on training rows only."""

    mean: np.ndarray
    std: np.ndarray
    columns: np.ndarray  # continuous column indices within the working matrix
    fitted_on_train: bool = True

    def apply(self, h: np.ndarray) -> np.ndarray:
        out = h.copy()
        out[:, self.columns] = (h[:, self.columns] - self.mean) / self.std
        return out


def fit_normalizer(train_h: np.ndarray, columns: np.ndarray) -> Normalizer:
    if train_h.shape[0] == 0:
        raise EmptyTrainingSet("no training rows to fit the normalizer")
    mean = train_h[:, columns].mean(axis=0)
    std = np.maximum(train_h[:, columns].std(axis=0), 1e-8)
    return Normalizer(mean=mean, std=std, columns=columns)


def fit_apply_normalizer(
    train_h: np.ndarray, test_h: np.ndarray, columns: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, Normalizer]:
    """Fit on training rows, transform both matrices; one-hot columns pass through."""
    if columns is None:
        columns = CONTINUOUS_COLS
    norm = fit_normalizer(train_h, np.asarray(columns))
    return norm.apply(train_h), norm.apply(test_h), norm


def mask_target_class_features(h: np.ndarray, class_codes: np.ndarray) -> np.ndarray:
    """Zero the six one-hot entries of every epithelial node (prediction targets).

    Non-epithelial nodes keep their class one-hot, so neighborhood composition stays
    visible through message passing. Expects the full 22-column layout.
    """
    out = h.copy()
    epi = np.isin(class_codes, (EPITHELIAL_HEALTHY, EPITHELIAL_TUMOR))
    out[np.nonzero(epi)[0], ONEHOT_COLS] = 0.0
    return out


def bce_loss_epithelial(probs: Tensor, labels: np.ndarray, epi_idx: np.ndarray) -> Tensor:
    """Binary cross-entropy summed over the given epithelial node indices."""
    if len(epi_idx) == 0:
        raise EmptyEpithelialSet("loss requires at least one epithelial node")
    p = ad.clamp(ad.gather_rows(probs, epi_idx), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = Tensor(np.asarray(labels, dtype=np.float64)[epi_idx].reshape(-1, 1))
    one_minus_y = Tensor(1.0 - y.data)
    one_minus_p = ad.add(ad.scale(p, -1.0), Tensor(np.array(1.0)))
    ll = ad.add(ad.mul(y, ad.log(p)), ad.mul(one_minus_y, ad.log(one_minus_p)))
    return ad.scale(ad.tsum(ll), -1.0)


@dataclass
class Prediction:
    node_id: int
    prob: float
    label: int
    graph_index: int = 0


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    loss_history: list[float]
    predictions: list[Prediction]
    normalizer: Normalizer | None = None


def prepare_inputs(
    graphs: list[CellGraph],
    cfg: TrainConfig,
    train_idx: list[np.ndarray],
    test_idx: list[np.ndarray],
) -> tuple[list[np.ndarray], Normalizer | None]:
    """Masked, column-selected, normalized node matrices for every graph.

    Normalization statistics come only from graphs that contribute training nodes,
    excluding their test-fold epithelial rows; pure-test graphs contribute nothing.
    """
    cols = cfg.selected_columns()
    raw = [mask_target_class_features(g.node_matrix(), g.class_codes)[:, cols] for g in graphs]
    if not cfg.zscore:
        return raw, None
    cont = np.nonzero(np.isin(cols, CONTINUOUS_COLS))[0]
    fit_rows = []
    for h, tidx, tr in zip(raw, test_idx, train_idx):
        if len(tr) == 0:
            continue
        keep = np.setdiff1d(np.arange(h.shape[0]), tidx)
        fit_rows.append(h[keep])
    norm = fit_normalizer(np.vstack(fit_rows) if fit_rows else np.zeros((0, len(cols))), cont)
    return [norm.apply(h) for h in raw], norm


def train_model(
    graphs: list[CellGraph],
    train_idx: list[np.ndarray],
    test_idx: list[np.ndarray],
    cfg: TrainConfig,
) -> TrainResult:
    """Full-batch training: one Adam step per epoch over the summed per-graph loss.

    train_idx / test_idx hold epithelial node indices per graph; loss is restricted
    to training indices and predictions are emitted for test indices. Deterministic
    for a fixed seed; no early stopping.
    """
    if sum(len(t) for t in train_idx) == 0:
        raise EmptyTrainingSet("no training epithelial nodes")
    inputs, norm = prepare_inputs(graphs, cfg, train_idx, test_idx)
    a_hats = [normalized_adjacency(g.adjacency) for g in graphs]
    spec = cfg.model_spec()
    params = init_params(spec, inputs[0].shape[1], seed=cfg.seed)
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    train_graphs = [i for i in range(len(graphs)) if len(train_idx[i]) > 0]
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(train_graphs))
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        total = 0.0
        for gi in (train_graphs[o] for o in order):
            leaves = {k: Tensor(v) for k, v in params.items()}
            _, probs = model_forward(spec, leaves, inputs[gi], a_hats[gi])
            loss = bce_loss_epithelial(probs, graphs[gi].labels, train_idx[gi])
            loss.backward()
            total += float(loss.data)
            for k, leaf in leaves.items():
                if leaf.grad is not None:
                    grads[k] += leaf.grad
        adam_step(params, grads, state)
        history.append(total)
    predictions = []
    for gi, tidx in enumerate(test_idx):
        if len(tidx) == 0:
            continue
        leaves = {k: Tensor(v) for k, v in params.items()}
        _, probs = model_forward(spec, leaves, inputs[gi], a_hats[gi])
        for i in tidx:
            predictions.append(
                Prediction(
                    node_id=int(graphs[gi].node_ids[i]),
                    prob=float(probs.data[i, 0]),
                    label=int(graphs[gi].labels[i]),
                    graph_index=gi,
                )
            )
    return TrainResult(params=params, loss_history=history, predictions=predictions, normalizer=norm)


def predict_epithelial(
    graphs: list[CellGraph],
    params: dict[str, np.ndarray],
    cfg: TrainConfig,
    normalizer: Normalizer | None,
) -> list[Prediction]:
    """Probabilities for every epithelial node of the given graphs under trained params."""
    cols = cfg.selected_columns()
    spec = cfg.model_spec()
    out = []
    for gi, g in enumerate(graphs):
        h = mask_target_class_features(g.node_matrix(), g.class_codes)[:, cols]
        if normalizer is not None:
            h = normalizer.apply(h)
        leaves = {k: Tensor(v) for k, v in params.items()}
        _, probs = model_forward(spec, leaves, h, normalized_adjacency(g.adjacency))
        for i in np.nonzero(g.epithelial_mask)[0]:
            out.append(
                Prediction(
                    node_id=int(g.node_ids[i]),
                    prob=float(probs.data[i, 0]),
                    label=int(g.labels[i]),
                    graph_index=gi,
                )
            )
    return out
