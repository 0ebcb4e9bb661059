"""Node-attributed cell graph: radius-rule edges, assembly, cleanup, JSON interchange."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import LengthMismatch, MalformedInput
from .features import FEATURE_NAMES
from .ingest import CLASS_NAMES, EPITHELIAL_HEALTHY, EPITHELIAL_TUMOR, UNCLASSIFIED, CellRecord

LABEL_ABSENT = -1


@dataclass(frozen=True)
class EdgeRule:
    """Connect two nuclei iff their centroid distance is strictly below r0 pixels."""

    r0: float = 50.0

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")


@dataclass
class CellGraph:
    """Undirected node-attributed graph over segmented nuclei.

    adjacency is a symmetric binary CSR matrix with sorted neighbor lists, no
    self-loops and no duplicates. labels hold 0 (healthy) / 1 (tumor) for
    epithelial nodes and LABEL_ABSENT otherwise.
    """

    coords: np.ndarray  # (N, 2) float
    features: np.ndarray  # (N, 14) float
    class_codes: np.ndarray  # (N,) int, 0..5 or UNCLASSIFIED
    labels: np.ndarray  # (N,) int, {0, 1, LABEL_ABSENT}
    adjacency: sp.csr_matrix
    node_ids: np.ndarray  # (N,) original CellRecord ids
    r0: float = 50.0
    patient_id: str | None = None

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i] : a.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    @property
    def epithelial_mask(self) -> np.ndarray:
        return np.isin(self.class_codes, (EPITHELIAL_HEALTHY, EPITHELIAL_TUMOR))

    def edge_list(self) -> np.ndarray:
        """Edges as an (E, 2) array with i < j, sorted lexicographically."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        edges = np.column_stack([coo.row, coo.col])
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        return edges[order]

    def node_matrix(self) -> np.ndarray:
        """Assemble the 22-column node matrix [features | one-hot class | coords]."""
        return assemble_node_matrix(self.features, self.class_codes, self.coords)


# Column layout of the 22-entry node matrix.
N_FEATURES = len(FEATURE_NAMES)
ONEHOT_COLS = slice(N_FEATURES, N_FEATURES + 6)
COORD_COLS = slice(N_FEATURES + 6, N_FEATURES + 8)
N_COLUMNS = N_FEATURES + 8
CONTINUOUS_COLS = np.array(list(range(N_FEATURES)) + [N_FEATURES + 6, N_FEATURES + 7])


def assemble_node_matrix(features, class_codes, coords) -> np.ndarray:
    n = len(class_codes)
    onehot = np.zeros((n, 6))
    valid = class_codes >= 0
    onehot[np.arange(n)[valid], class_codes[valid]] = 1.0
    return np.hstack([features, onehot, coords])


def edges_to_csr(n: int, edges: np.ndarray) -> sp.csr_matrix:
    """Symmetric binary CSR from an undirected edge list (duplicates collapsed)."""
    if len(edges) == 0:
        return sp.csr_matrix((n, n))
    edges = np.asarray(edges)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    a.data[:] = 1.0
    a.sort_indices()
    return a


def build_edges(coords: np.ndarray, rule: EdgeRule) -> np.ndarray:
    """All pairs {i, j} with d(i, j) < r0, via a uniform grid of cell size r0.

    Expected near-linear cost for bounded point density. Output is (E, 2) with
    i < j, sorted lexicographically, deterministic regardless of input order.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    r0 = rule.r0
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)
    cell = np.floor(coords / r0).astype(np.int64)
    buckets: dict[tuple[int, int], list[int]] = {}
    for i in range(n):
        buckets.setdefault((cell[i, 0], cell[i, 1]), []).append(i)
    r2 = r0 * r0
    out = []
    for (cx, cy), members in buckets.items():
        members_arr = np.array(members)
        # Within-bucket pairs plus pairs against 4 forward neighbor buckets:
        # each unordered bucket pair is visited exactly once.
        for dx, dy in ((0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)):
            other = members_arr if (dx, dy) == (0, 0) else buckets.get((cx + dx, cy + dy))
            if other is None:
                continue
            other_arr = other if (dx, dy) == (0, 0) else np.array(other)
            d2 = ((coords[members_arr, None, :] - coords[None, other_arr, :]) ** 2).sum(axis=2)
            ii, jj = np.nonzero(d2 < r2)
            a = members_arr[ii]
            b = other_arr[jj]
            if (dx, dy) == (0, 0):
                keep = a < b
                a, b = a[keep], b[keep]
            lo = np.minimum(a, b)
            hi = np.maximum(a, b)
            if len(lo):
                out.append(np.column_stack([lo, hi]))
    if not out:
        return np.empty((0, 2), dtype=np.int64)
    edges = np.vstack(out)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


def build_edges_bruteforce(coords: np.ndarray, rule: EdgeRule) -> np.ndarray:
    """O(N^2) all-pairs reference used as an oracle against build_edges."""
    coords = np.asarray(coords, dtype=np.float64)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    ii, jj = np.nonzero(d2 < rule.r0**2)
    keep = ii < jj
    return np.column_stack([ii[keep], jj[keep]])


def assemble_graph(
    cells: list[CellRecord],
    feats: np.ndarray,
    rule: EdgeRule = EdgeRule(),
    patient_id: str | None = None,
) -> CellGraph:
    """Build a CellGraph from relabeled records and per-record feature vectors (aligned by position)."""
    feats = np.asarray(feats, dtype=np.float64) if len(cells) else np.zeros((0, N_FEATURES))
    if feats.ndim != 2 or feats.shape[0] != len(cells):
        raise LengthMismatch(f"{len(cells)} cells vs {feats.shape[0]} feature rows")
    coords = np.array([c.centroid for c in cells], dtype=np.float64).reshape(len(cells), 2)
    codes = np.array([c.class_code for c in cells], dtype=np.int64)
    labels = np.full(len(cells), LABEL_ABSENT, dtype=np.int64)
    labels[codes == EPITHELIAL_HEALTHY] = 0
    labels[codes == EPITHELIAL_TUMOR] = 1
    ids = np.array([c.id for c in cells], dtype=np.int64)
    edges = build_edges(coords, rule)
    return CellGraph(coords, feats, codes, labels, edges_to_csr(len(cells), edges), ids, rule.r0, patient_id)


def subset_graph(g: CellGraph, keep: np.ndarray) -> CellGraph:
    """Graph induced on the given node index array (compacted, order preserved)."""
    keep = np.asarray(keep)
    adj = g.adjacency[keep][:, keep].tocsr()
    adj.sort_indices()
    return CellGraph(
        g.coords[keep],
        g.features[keep],
        g.class_codes[keep],
        g.labels[keep],
        adj,
        g.node_ids[keep],
        g.r0,
        g.patient_id,
    )


def cleanup_graph(g: CellGraph) -> tuple[CellGraph, np.ndarray]:
    """Remove Unclassified nodes, then epithelial nodes left with degree 0.

    Returns the compacted graph and the kept old-index array (the old->new map).
    """
    keep = np.nonzero(g.class_codes != UNCLASSIFIED)[0]
    h = subset_graph(g, keep)
    isolated_epi = (h.degrees() == 0) & h.epithelial_mask
    keep2 = np.nonzero(~isolated_epi)[0]
    return subset_graph(h, keep2), keep[keep2]


def save_graph(g: CellGraph, path) -> None:
    """Write the Graph JSON interchange file atomically (temp file + rename)."""
    doc = {
        "format_version": 1,
        "r0": g.r0,
        "num_nodes": g.num_nodes,
        "feature_names": list(FEATURE_NAMES),
        "class_names": list(CLASS_NAMES),
        "nodes": [
            {
                "id": int(g.node_ids[i]),
                "coord": [float(g.coords[i, 0]), float(g.coords[i, 1])],
                "features": [float(v) for v in g.features[i]],
                "class": int(g.class_codes[i]),
                "label": None if g.labels[i] == LABEL_ABSENT else int(g.labels[i]),
            }
            for i in range(g.num_nodes)
        ],
        "edges": [[int(i), int(j)] for i, j in g.edge_list()],
    }
    if g.patient_id is not None:
        doc["patient_id"] = g.patient_id
    _atomic_write_json(doc, path)


def _atomic_write_json(doc, path) -> None:
    path = str(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_graph(path) -> CellGraph:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"{path}: invalid JSON: {exc}") from exc
    for key in ("num_nodes", "nodes", "edges"):
        if key not in doc:
            raise MalformedInput(f"{path}: missing '{key}'")
    nodes = doc["nodes"]
    n = doc["num_nodes"]
    if len(nodes) != n:
        raise MalformedInput(f"{path}: num_nodes {n} != len(nodes) {len(nodes)}")
    coords = np.array([nd["coord"] for nd in nodes], dtype=np.float64).reshape(n, 2)
    feats = np.array([nd["features"] for nd in nodes], dtype=np.float64).reshape(n, -1)
    codes = np.array([nd["class"] for nd in nodes], dtype=np.int64)
    labels = np.array(
        [LABEL_ABSENT if nd["label"] is None else nd["label"] for nd in nodes], dtype=np.int64
    )
    ids = np.array([nd["id"] for nd in nodes], dtype=np.int64)
    edges = np.array(doc["edges"], dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= n):
        raise MalformedInput(f"{path}: edge endpoint out of range")
    return CellGraph(
        coords, feats, codes, labels, edges_to_csr(n, edges), ids,
        float(doc.get("r0", 50.0)), doc.get("patient_id"),
    )
