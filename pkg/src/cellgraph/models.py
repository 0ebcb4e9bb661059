"""Node-classification architectures: GCN and SGC baselines plus linear-attention
graph transformer layers in the DIFFormer/SGFormer style, with a shared logit head.

All forwards build a recorded autodiff expression; params enter as leaf Tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch

MODEL_KINDS = ("gcn", "sgc", "difformer", "sgformer")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters (defaults are declared, not tuned)."""

    kind: str = "difformer"
    hidden: int = 64
    layers: int = 2  # transformer/GCN depth
    alpha: float = 0.5  # sgformer attention/GCN mixing coefficient
    sgc_hops: int = 2
    sgformer_gcn_layers: int = 2

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def normalized_adjacency(adj: sp.csr_matrix) -> sp.csr_matrix:
    """Symmetric GCN propagation matrix D^-1/2 (A + I) D^-1/2."""
    n = adj.shape[0]
    a_hat = (adj + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(d_inv_sqrt)
    out = (d @ a_hat @ d).tocsr()
    out.sort_indices()
    return out


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(spec: ModelSpec, in_dim: int, seed: int = 0) -> dict[str, np.ndarray]:
    """Initialize all weights for the given architecture, deterministic per seed."""
    rng = np.random.default_rng(seed)
    d = spec.hidden
    p: dict[str, np.ndarray] = {}
    if spec.kind == "gcn":
        dims = [in_dim] + [d] * spec.layers
        for l in range(spec.layers):
            p[f"W{l}"] = _glorot(rng, dims[l], dims[l + 1])
            p[f"b{l}"] = np.zeros(dims[l + 1])
    elif spec.kind == "sgc":
        d = in_dim  # no hidden layer: propagated features feed the head directly
    elif spec.kind == "difformer":
        p["W_in"] = _glorot(rng, in_dim, d)
        p["b_in"] = np.zeros(d)
        for l in range(spec.layers):
            p[f"Wq{l}"] = _glorot(rng, d, d)
            p[f"Wk{l}"] = _glorot(rng, d, d)
            p[f"Wv{l}"] = _glorot(rng, d, d)
    elif spec.kind == "sgformer":
        p["W_in"] = _glorot(rng, in_dim, d)
        p["b_in"] = np.zeros(d)
        p["Wq"] = _glorot(rng, d, d)
        p["Wk"] = _glorot(rng, d, d)
        p["Wv"] = _glorot(rng, d, d)
        for l in range(spec.sgformer_gcn_layers):
            p[f"Wg{l}"] = _glorot(rng, d, d)
            p[f"bg{l}"] = np.zeros(d)
    p["w_head"] = _glorot(rng, d, 1)
    p["b_head"] = np.zeros(1)
    return p


def linear_attention(
    h: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, mode: str = "linear"
) -> Tensor:
    """All-pair attention with similarity f(q_i, k_j) = 1 + q̂_i·k̂_j.

    Rows of the query/key projections are L2-normalized, so f >= 0 and the row
    normalizer is bounded below by ~N. 'linear' reorders the matrix products to
    avoid the N x N similarity matrix; 'dense_oracle' materializes it.
    """
    n = h.data.shape[0]
    q = ad.row_normalize(ad.matmul(h, wq))
    k = ad.row_normalize(ad.matmul(h, wk))
    v = ad.matmul(h, wv)
    if mode == "dense_oracle":
        sim = add_const(ad.matmul(q, ad.transpose(k)), 1.0)  # (N, N)
        num = ad.matmul(sim, v)
        den = ad.tsum(sim, axis=1, keepdims=True)
        return ad.div(num, guard(den))
    if mode != "linear":
        raise ValueError(f"unknown attention mode {mode!r}")
    kv = ad.matmul(ad.transpose(k), v)  # (d, d)
    col_sum_v = ad.tsum(v, axis=0, keepdims=True)  # (1, d), broadcasts over rows
    num = ad.add(ad.matmul(q, kv), col_sum_v)
    k_sum = ad.tsum(k, axis=0, keepdims=True)  # (1, d)
    den = add_const(ad.matmul(q, ad.transpose(k_sum)), float(n))  # (N, 1)
    return ad.div(num, guard(den))


def add_const(t: Tensor, c: float) -> Tensor:
    return ad.add(t, Tensor(np.array(c)))


def guard(t: Tensor, eps: float = 1e-12) -> Tensor:
    """Lower-bound a positive normalizer away from zero."""
    return clamp_min(t, eps)


def clamp_min(t: Tensor, lo: float) -> Tensor:
    return ad.clamp(t, lo, np.inf)


def gcn_forward(x: Tensor, a_hat: sp.csr_matrix, params: dict[str, Tensor], layers: int) -> Tensor:
    """Stacked H' = ReLU(Â H W + b); final layer linear."""
    h = x
    for l in range(layers):
        h = ad.add(ad.matmul(spmm_checked(a_hat, h), params[f"W{l}"]), params[f"b{l}"])
        if l < layers - 1:
            h = ad.relu(h)
    return h


def spmm_checked(a_hat: sp.csr_matrix, h: Tensor) -> Tensor:
    if a_hat.shape[1] != h.data.shape[0]:
        raise ShapeMismatch(f"spmm {a_hat.shape} @ {h.shape}")
    return ad.spmm(a_hat, h)


def sgc_propagate(x: np.ndarray, a_hat: sp.csr_matrix, hops: int) -> np.ndarray:
    """Parameter-free Â^hops X, precomputed once per training run."""
    p = x
    for _ in range(hops):
        p = a_hat @ p
    return p


def difformer_layer(
    h: Tensor, a_hat: sp.csr_matrix, wq: Tensor, wk: Tensor, wv: Tensor, mode: str = "linear"
) -> Tensor:
    """One diffusion-transformer layer: half attention, half graph propagation, plus residual."""
    attn = linear_attention(h, wq, wk, wv, mode)
    prop = spmm_checked(a_hat, h)
    return ad.add(ad.add(ad.scale(attn, 0.5), ad.scale(prop, 0.5)), h)


def difformer_forward(
    x: Tensor, a_hat: sp.csr_matrix, params: dict[str, Tensor], layers: int, mode: str = "linear"
) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, params["W_in"]), params["b_in"]))
    for l in range(layers):
        h = difformer_layer(h, a_hat, params[f"Wq{l}"], params[f"Wk{l}"], params[f"Wv{l}"], mode)
    return h


def sgformer_forward(
    x: Tensor,
    a_hat: sp.csr_matrix,
    params: dict[str, Tensor],
    alpha: float,
    gcn_layers: int,
    mode: str = "linear",
) -> Tensor:
    """alpha * one-layer global attention + (1 - alpha) * shallow GCN branch."""
    h0 = ad.add(ad.matmul(x, params["W_in"]), params["b_in"])
    attn = linear_attention(h0, params["Wq"], params["Wk"], params["Wv"], mode)
    g = h0
    for l in range(gcn_layers):
        g = ad.add(ad.matmul(spmm_checked(a_hat, g), params[f"Wg{l}"]), params[f"bg{l}"])
        if l < gcn_layers - 1:
            g = ad.relu(g)
    return ad.add(ad.scale(attn, alpha), ad.scale(g, 1.0 - alpha))


def predict_logits(embeddings: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Shared head: z = Hw + b, probability = sigmoid(z). Returns (logits, probs), both (N, 1)."""
    z = ad.add(ad.matmul(embeddings, w), b)
    return z, ad.sigmoid(z)


def model_forward(
    spec: ModelSpec,
    params: dict[str, Tensor],
    x: np.ndarray,
    a_hat: sp.csr_matrix,
    attention_mode: str = "linear",
) -> tuple[Tensor, Tensor]:
    """Full forward of any architecture from raw node matrix to (logits, probabilities)."""
    if spec.kind == "sgc":
        emb = Tensor(sgc_propagate(x, a_hat, spec.sgc_hops))
    else:
        xt = Tensor(x)
        if spec.kind == "gcn":
            emb = gcn_forward(xt, a_hat, params, spec.layers)
        elif spec.kind == "difformer":
            emb = difformer_forward(xt, a_hat, params, spec.layers, attention_mode)
        else:
            emb = sgformer_forward(
                xt, a_hat, params, spec.alpha, spec.sgformer_gcn_layers, attention_mode
            )
    return predict_logits(emb, params["w_head"], params["b_head"])
