"""Normalization, leakage masking, the epithelial BCE loss and the training loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellgraph import autodiff as ad
from cellgraph.autodiff import Tensor
from cellgraph.errors import EmptyEpithelialSet, EmptyTrainingSet
from cellgraph.graph import CONTINUOUS_COLS, CellGraph, N_COLUMNS, edges_to_csr
from cellgraph.ingest import (
    EPITHELIAL_HEALTHY,
    EPITHELIAL_TUMOR,
    LYMPHOCYTE,
    STROMAL,
)
from cellgraph.train import (
    TrainConfig,
    bce_loss_epithelial,
    fit_apply_normalizer,
    fit_normalizer,
    mask_target_class_features,
    prepare_inputs,
    train_model,
)


def make_graph(class_codes, edges, seed=0, feature_shift=None):
    """Small CellGraph with random features; labels follow the epithelial codes."""
    rng = np.random.default_rng(seed)
    codes = np.asarray(class_codes)
    n = len(codes)
    feats = rng.normal(size=(n, 14))
    if feature_shift is not None:
        feats += feature_shift
    labels = np.where(
        codes == EPITHELIAL_TUMOR, 1, np.where(codes == EPITHELIAL_HEALTHY, 0, -1)
    )
    return CellGraph(
        coords=rng.uniform(0, 100, size=(n, 2)),
        features=feats,
        class_codes=codes,
        labels=labels,
        adjacency=edges_to_csr(n, np.array(edges).reshape(-1, 2)),
        node_ids=np.arange(n),
    )


# --------------------------------------------------------------- TrainConfig


def test_selected_columns_default_all_22():
    np.testing.assert_array_equal(TrainConfig().selected_columns(), np.arange(22))


def test_selected_columns_coords_always_present():
    cols = TrainConfig(use_texture=False, use_cell_class=False).selected_columns()
    np.testing.assert_array_equal(cols, list(range(7)) + [20, 21])


def test_config_rejects_all_groups_off():
    with pytest.raises(ValueError):
        TrainConfig(use_morphology=False, use_texture=False, use_cell_class=False)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


# ---------------------------------------------------------------- normalizer


def test_fit_normalizer_hand_example():
    h = np.array([[1.0, 10.0], [3.0, 10.0]])
    norm = fit_normalizer(h, np.array([0, 1]))
    np.testing.assert_allclose(norm.mean, [2.0, 10.0])
    # Zero-variance column falls back to the 1e-8 floor rather than dividing by 0.
    np.testing.assert_allclose(norm.std, [1.0, 1e-8])
    out = norm.apply(h)
    np.testing.assert_allclose(out[:, 0], [-1.0, 1.0])
    assert np.all(np.isfinite(out))


def test_fit_normalizer_empty_raises():
    with pytest.raises(EmptyTrainingSet):
        fit_normalizer(np.zeros((0, 22)), np.array([0]))


def test_fit_apply_normalizer_onehot_passthrough():
    rng = np.random.default_rng(0)
    train = rng.normal(5.0, 2.0, size=(30, N_COLUMNS))
    test = rng.normal(5.0, 2.0, size=(10, N_COLUMNS))
    train[:, 14:20] = rng.integers(0, 2, size=(30, 6))
    test[:, 14:20] = rng.integers(0, 2, size=(10, 6))
    tr, te, norm = fit_apply_normalizer(train, test)
    np.testing.assert_array_equal(tr[:, 14:20], train[:, 14:20])
    np.testing.assert_array_equal(te[:, 14:20], test[:, 14:20])
    # Train rows end up standardized on the continuous columns...
    np.testing.assert_allclose(tr[:, CONTINUOUS_COLS].mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(tr[:, CONTINUOUS_COLS].std(axis=0), 1.0, atol=1e-10)
    # ...while the test transform reuses the train statistics.
    np.testing.assert_allclose(te, norm.apply(test))
    assert not np.allclose(te[:, 0].mean(), 0.0, atol=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_normalizer_is_affine_invariant_property(n, seed):
    # z-scoring is invariant to affine rescaling of the raw columns.
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(n, 3))
    h[0] += 1.0  # guarantee nonzero variance
    cols = np.array([0, 1, 2])
    a = fit_normalizer(h, cols).apply(h)
    b = fit_normalizer(h * 3.0 + 7.0, cols).apply(h * 3.0 + 7.0)
    np.testing.assert_allclose(a, b, atol=1e-8)


# ------------------------------------------------------------------- masking


def test_mask_zeroes_epithelial_onehot_only():
    h = np.ones((4, N_COLUMNS))
    codes = np.array([EPITHELIAL_TUMOR, LYMPHOCYTE, EPITHELIAL_HEALTHY, STROMAL])
    out = mask_target_class_features(h, codes)
    np.testing.assert_array_equal(out[0, 14:20], 0.0)
    np.testing.assert_array_equal(out[2, 14:20], 0.0)
    np.testing.assert_array_equal(out[1, 14:20], 1.0)
    np.testing.assert_array_equal(out[3, 14:20], 1.0)
    # non-one-hot columns untouched everywhere
    np.testing.assert_array_equal(out[:, :14], 1.0)
    np.testing.assert_array_equal(out[:, 20:], 1.0)
    # input not mutated
    np.testing.assert_array_equal(h, 1.0)


def test_prepare_inputs_epithelial_rows_carry_no_label_signal():
    g = make_graph([EPITHELIAL_TUMOR, EPITHELIAL_HEALTHY, LYMPHOCYTE], [[0, 1], [1, 2]])
    cfg = TrainConfig(zscore=False)
    (h,), _ = prepare_inputs([g], cfg, [np.array([0])], [np.array([1])])
    np.testing.assert_array_equal(h[0, 14:20], 0.0)
    np.testing.assert_array_equal(h[1, 14:20], 0.0)
    assert h[2, 14:20].sum() == 1.0  # lymphocyte one-hot intact


def test_prepare_inputs_normalizer_ignores_test_rows():
    # Put an extreme outlier in the test fold; train statistics must not move.
    g = make_graph(
        [EPITHELIAL_TUMOR] * 4 + [EPITHELIAL_HEALTHY] * 4, [[i, i + 1] for i in range(7)]
    )
    g.features[7, :] = 1e6
    train = [np.array([0, 1, 2, 3])]
    test = [np.array([7])]
    _, norm = prepare_inputs([g], TrainConfig(), train, test)
    assert np.all(np.abs(norm.mean[:14]) < 100.0)


def test_prepare_inputs_pure_test_graph_contributes_no_stats():
    g_train = make_graph([EPITHELIAL_TUMOR, EPITHELIAL_HEALTHY], [[0, 1]], seed=1)
    g_test = make_graph([EPITHELIAL_TUMOR, EPITHELIAL_HEALTHY], [[0, 1]], seed=2)
    g_test.features[:] = 1e6
    _, norm = prepare_inputs(
        [g_train, g_test],
        TrainConfig(),
        [np.array([0, 1]), np.array([], dtype=int)],
        [np.array([], dtype=int), np.array([0, 1])],
    )
    assert np.all(np.abs(norm.mean[:14]) < 100.0)


# ----------------------------------------------------------------------- loss


def test_bce_uninformative_prediction_is_n_ln2():
    probs = Tensor(np.full((5, 1), 0.5))
    labels = np.array([1, 0, 1, -1, -1])
    loss = bce_loss_epithelial(probs, labels, np.array([0, 1, 2]))
    assert float(loss.data) == pytest.approx(3 * math.log(2), rel=1e-12)


def test_bce_hand_computed_value():
    probs = Tensor(np.array([[0.9], [0.2]]))
    labels = np.array([1, 0])
    loss = bce_loss_epithelial(probs, labels, np.array([0, 1]))
    expected = -(math.log(0.9) + math.log(0.8))
    assert float(loss.data) == pytest.approx(expected, rel=1e-12)


def test_bce_extreme_probabilities_stay_finite():
    probs = Tensor(np.array([[0.0], [1.0]]))
    labels = np.array([1, 0])
    loss = bce_loss_epithelial(probs, labels, np.array([0, 1]))
    assert np.isfinite(float(loss.data))
    # clamped at 1e-12: loss = -2 ln(1e-12)
    assert float(loss.data) == pytest.approx(-2 * math.log(1e-12), rel=1e-5)


def test_bce_restricted_to_given_indices():
    probs = Tensor(np.array([[0.5], [0.999], [0.5]]))
    labels = np.array([1, 0, 1])
    loss = bce_loss_epithelial(probs, labels, np.array([0]))
    assert float(loss.data) == pytest.approx(math.log(2), rel=1e-12)


def test_bce_empty_indices_raise():
    with pytest.raises(EmptyEpithelialSet):
        bce_loss_epithelial(Tensor(np.ones((2, 1)) * 0.5), np.array([1, 0]), np.array([], dtype=int))


def test_bce_gradient_matches_finite_differences():
    labels = np.array([1, 0, 1])
    idx = np.array([0, 1, 2])
    z0 = np.array([[0.3], [-0.4], [1.2]])

    def fn(lv):
        return bce_loss_epithelial(ad.sigmoid(lv["z"]), labels, idx)

    report = ad.gradcheck(fn, {"z": z0.copy()})
    assert report.passed, report


# -------------------------------------------------------------- training loop


def chain_codes(n):
    return [[i, i + 1] for i in range(n - 1)]


def easy_graph(seed=0):
    """Linearly separable toy tissue: tumor features shifted by +3."""
    codes = [EPITHELIAL_TUMOR] * 10 + [EPITHELIAL_HEALTHY] * 10
    g = make_graph(codes, chain_codes(20), seed=seed)
    g.features[:10] += 3.0
    return g


def test_train_model_loss_decreases_and_predicts():
    g = easy_graph()
    idx = np.arange(20)
    cfg = TrainConfig(model="gcn", epochs=60, seed=0, hidden=8)
    res = train_model([g], [idx[::2]], [idx[1::2]], cfg)
    assert len(res.loss_history) == 60
    assert res.loss_history[-1] < res.loss_history[0]
    assert len(res.predictions) == 10
    correct = sum((p.prob > 0.5) == (p.label == 1) for p in res.predictions)
    assert correct >= 8


def test_train_model_deterministic_per_seed():
    g = easy_graph()
    idx = np.arange(20)
    cfg = TrainConfig(model="difformer", epochs=5, seed=3, hidden=6, layers=1)
    r1 = train_model([g], [idx[::2]], [idx[1::2]], cfg)
    r2 = train_model([g], [idx[::2]], [idx[1::2]], cfg)
    assert r1.loss_history == r2.loss_history
    assert [p.prob for p in r1.predictions] == [p.prob for p in r2.predictions]
    r3 = train_model([g], [idx[::2]], [idx[1::2]], TrainConfig(model="difformer", epochs=5, seed=4, hidden=6, layers=1))
    assert r1.loss_history != r3.loss_history


def test_train_model_empty_training_set_raises():
    g = easy_graph()
    with pytest.raises(EmptyTrainingSet):
        train_model([g], [np.array([], dtype=int)], [np.arange(20)], TrainConfig(epochs=1))


def test_train_model_multiple_graphs_and_pure_test_graph():
    g1, g2 = easy_graph(seed=1), easy_graph(seed=2)
    idx = np.arange(20)
    res = train_model(
        [g1, g2],
        [idx, np.array([], dtype=int)],
        [np.array([], dtype=int), idx],
        TrainConfig(model="gcn", epochs=40, seed=0, hidden=8),
    )
    assert len(res.predictions) == 20
    assert all(p.graph_index == 1 for p in res.predictions)


def test_label_cannot_leak_through_masked_onehot():
    """With identical features and no context, masked one-hots leave only chance."""
    rng = np.random.default_rng(0)
    codes = [EPITHELIAL_TUMOR] * 12 + [EPITHELIAL_HEALTHY] * 12
    g = make_graph(codes, chain_codes(24), seed=5)
    g.features[:] = rng.normal(size=(1, 14))  # identical rows: no intrinsic signal
    g.coords[:] = 0.0
    idx = np.arange(24)
    res = train_model([g], [idx[::2]], [idx[1::2]], TrainConfig(model="sgc", sgc_hops=0, epochs=50, seed=0))
    probs = np.array([p.prob for p in res.predictions])
    # All-identical inputs force identical outputs regardless of the true label.
    assert np.ptp(probs) < 1e-9


def test_context_signal_propagates_through_neighbors():
    # Intrinsic epithelial features identical; tumor nodes neighbor lymphocytes,
    # healthy nodes neighbor stromal cells. A 2-layer GCN must separate them.
    codes, edges = [], []
    nid = 0
    for i in range(16):
        tumor = i % 2 == 0
        codes.append(EPITHELIAL_TUMOR if tumor else EPITHELIAL_HEALTHY)
        codes.append(LYMPHOCYTE if tumor else STROMAL)
        edges.append([nid, nid + 1])
        nid += 2
    g = make_graph(codes, edges, seed=7)
    epi = np.nonzero(g.epithelial_mask)[0]
    g.features[:] = 0.0  # one-hot class composition is the only signal left
    g.coords[:] = 0.0
    train, test = epi[:10], epi[10:]
    res = train_model([g], [train], [test], TrainConfig(model="gcn", epochs=250, lr=0.05, seed=0, hidden=8))
    correct = sum((p.prob > 0.5) == (p.label == 1) for p in res.predictions)
    assert correct == len(test)
