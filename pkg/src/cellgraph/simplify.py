"""Anchor-based k-max-hops graph simplification and K-means spatial splitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidK, NoAnchors
from .graph import CellGraph, LABEL_ABSENT, subset_graph
from .ingest import EPITHELIAL_HEALTHY, EPITHELIAL_TUMOR, UNCLASSIFIED

DEFAULT_SELECTION = np.zeros(6, dtype=np.int64)
DEFAULT_SELECTION[[EPITHELIAL_HEALTHY, EPITHELIAL_TUMOR]] = 1


@dataclass(frozen=True)
class AnchorSelection:
    """Binary class-selection vector over the fixed 6-class order."""

    s: tuple[int, ...] = tuple(DEFAULT_SELECTION)

    def anchor_indices(self, class_codes: np.ndarray) -> np.ndarray:
        s = np.asarray(self.s)
        valid = class_codes >= 0
        hit = np.zeros(len(class_codes), dtype=bool)
        hit[valid] = s[class_codes[valid]] > 0
        return np.nonzero(hit)[0]


@dataclass
class HopMask:
    m: np.ndarray  # (N,) bool retention mask
    k: int
    anchors: np.ndarray  # anchor node indices


def _bfs_mask(adj: sp.csr_matrix, anchors: np.ndarray, k: int) -> np.ndarray:
    """Multi-source BFS with depth cap k, over CSR neighbor lists."""
    n = adj.shape[0]
    visited = np.zeros(n, dtype=bool)
    visited[anchors] = True
    frontier = anchors
    indptr, indices = adj.indptr, adj.indices
    for _ in range(k):
        if len(frontier) == 0:
            break
        nbrs = np.concatenate(
            [indices[indptr[i] : indptr[i + 1]] for i in frontier]
        ) if len(frontier) else np.empty(0, dtype=np.int64)
        nbrs = np.unique(nbrs)
        new = nbrs[~visited[nbrs]]
        visited[new] = True
        frontier = new
    return visited


def _matpow_mask(adj: sp.csr_matrix, anchors: np.ndarray, k: int) -> np.ndarray:
    """Boolean adjacency-power oracle: mask_i = [(sum_{q=0..k} A^q) a]_i > 0."""
    n = adj.shape[0]
    dense = adj.toarray()
    a = np.zeros(n)
    a[anchors] = 1.0
    mask = a > 0
    cur = a
    for _ in range(k):
        cur = (dense @ cur > 0).astype(np.float64)
        mask |= cur > 0
    return mask


def khop_mask(g: CellGraph, sel: AnchorSelection, k: int, method: str = "bfs") -> HopMask:
    """Nodes within geodesic distance <= k of any anchor. Anchors always retained.

    'matpow' is the adjacency-power oracle and is only permitted for N <= 5000.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    anchors = sel.anchor_indices(g.class_codes)
    if len(anchors) == 0:
        raise NoAnchors("anchor selection matches no node")
    if method == "bfs":
        m = _bfs_mask(g.adjacency, anchors, k)
    elif method == "matpow":
        if g.num_nodes > 5000:
            raise ValueError("matpow oracle restricted to N <= 5000")
        m = _matpow_mask(g.adjacency, anchors, k)
    else:
        raise ValueError(f"unknown method {method!r}")
    return HopMask(m=m, k=k, anchors=anchors)


def induced_subgraph(g: CellGraph, mask: HopMask, mode: str = "compact"):
    """Apply a retention mask.

    'masked' keeps N fixed and zeroes masked-out rows/columns of A and rows of the
    node matrix (A' = M A M, H' = M H with M = diag(m)). 'compact' drops masked-out
    nodes and re-indexes; returns (graph, kept_index_array).
    """
    m = np.asarray(mask.m, dtype=bool)
    if len(m) != g.num_nodes:
        raise ValueError("mask length does not match graph")
    if mode == "compact":
        keep = np.nonzero(m)[0]
        return subset_graph(g, keep), keep
    if mode == "masked":
        diag = sp.diags(m.astype(np.float64))
        adj = (diag @ g.adjacency @ diag).tocsr()
        adj.eliminate_zeros()
        adj.sort_indices()
        mf = m.astype(np.float64)[:, None]
        out = CellGraph(
            g.coords * mf,
            g.features * mf,
            np.where(m, g.class_codes, UNCLASSIFIED),
            np.where(m, g.labels, LABEL_ABSENT),
            adj,
            g.node_ids,
            g.r0,
            g.patient_id,
        )
        return out, np.nonzero(m)[0]
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class Partition:
    assignment: np.ndarray  # (N,) ints in 0..K-1
    K: int
    centroids: np.ndarray  # (K, 2)
    seed: int = 0


def kmeans_split(g: CellGraph, K: int, seed: int = 0, max_iter: int = 300) -> Partition:
    """Lloyd's algorithm on node coordinates with k-means++ seeding.

    Deterministic for a given seed; empty clusters are re-seeded from the point
    farthest from its assigned centroid so all K clusters end non-empty.
    """
    n = g.num_nodes
    if K <= 0 or K > n:
        raise InvalidK(f"K={K} with N={n}")
    coords = g.coords
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(coords, K, rng)
    assignment = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((coords[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignment = d2.argmin(axis=1)
        dist_to_own = d2[np.arange(n), new_assignment]
        for c in range(K):
            if not (new_assignment == c).any():
                counts = np.bincount(new_assignment, minlength=K)
                # farthest point whose departure cannot empty its own cluster
                eligible = counts[new_assignment] > 1
                cand = np.where(eligible, dist_to_own, -1.0)
                far = int(cand.argmax())
                new_assignment[far] = c
                centroids[c] = coords[far]
                dist_to_own[far] = -1.0
        if (new_assignment == assignment).all():
            break
        assignment = new_assignment
        for c in range(K):
            centroids[c] = coords[assignment == c].mean(axis=0)
    return Partition(assignment=assignment, K=K, centroids=centroids, seed=seed)


def _kmeanspp_init(coords: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = coords.shape[0]
    centroids = np.empty((K, 2))
    centroids[0] = coords[rng.integers(n)]
    d2 = ((coords - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, K):
        total = d2.sum()
        if total <= 0:
            centroids[c] = coords[rng.integers(n)]
        else:
            centroids[c] = coords[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((coords - centroids[c]) ** 2).sum(axis=1))
    return centroids


def extract_partition_subgraphs(g: CellGraph, p: Partition) -> list[CellGraph]:
    """One induced subgraph per cluster; cross-cluster edges are dropped."""
    return [subset_graph(g, np.nonzero(p.assignment == c)[0]) for c in range(p.K)]
