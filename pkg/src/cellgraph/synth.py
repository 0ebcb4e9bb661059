"""Synthetic labeled tissue with controllable difficulty.

Stands in for unavailable slide data: it emits the same segmentation/region JSON
the ingest module reads, plus a ground-truth label sidecar and sampled node
features, so synthetic and real data share one pipeline path.

Presets:
  easy                - tumor and healthy epithelial features from well-separated
                        distributions; any model should score highly.
  context_only        - both epithelial classes share the same intrinsic feature
                        distribution; the only discriminative signal is neighborhood
                        composition (lymphocytes interleaved in tumor clusters,
                        stromal cells in healthy clusters).
  spatially_clustered - context_only structure plus per-cluster feature offsets,
                        so transductive (random-node) evaluation can memorize
                        cluster identity while spatially disjoint evaluation cannot.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleDensity
from .features import FEATURE_NAMES
from .ingest import (
    CellRecord,
    EPITHELIAL_GENERIC,
    GRANULOCYTE,
    LYMPHOCYTE,
    PLASMA_CELL,
    RegionAnnotation,
    STROMAL,
    UNCLASSIFIED,
    point_in_polygon,
)

PRESETS = ("easy", "context_only", "spatially_clustered")

# Class-conditional feature means in FEATURE_NAMES order:
# area, perimeter, ecc, solidity, major, minor, extent,
# roughness, contrast, dissim, homog, entropy, asm, dispersion
_BASE_MEANS = {
    GRANULOCYTE: [180, 50, 0.45, 0.95, 17, 13, 0.72, 14, 3.0, 1.2, 0.55, 2.2, 0.08, 0.12],
    PLASMA_CELL: [240, 58, 0.55, 0.94, 21, 14, 0.70, 16, 3.5, 1.3, 0.52, 2.4, 0.07, 0.14],
    LYMPHOCYTE: [150, 45, 0.30, 0.97, 15, 13, 0.75, 12, 2.0, 1.0, 0.60, 2.0, 0.10, 0.10],
    STROMAL: [220, 75, 0.85, 0.90, 32, 10, 0.60, 15, 3.0, 1.1, 0.55, 2.3, 0.08, 0.13],
}
_HEALTHY_EPI_MEAN = [350, 70, 0.55, 0.93, 26, 18, 0.70, 18, 4.0, 1.5, 0.50, 2.5, 0.06, 0.15]
_TUMOR_EPI_MEAN_EASY = [650, 100, 0.72, 0.88, 38, 22, 0.62, 30, 8.0, 2.4, 0.38, 3.2, 0.03, 0.25]
_REL_STD = 0.10


@dataclass
class SynthConfig:
    seed: int = 0
    preset: str = "easy"
    canvas: tuple[float, float] = (4200.0, 4200.0)
    n_tumor_epi: int = 1200
    n_healthy_epi: int = 1200
    n_lymphocyte: int = 800
    n_stromal: int = 800
    n_granulocyte: int = 250
    n_plasma: int = 250
    n_unclassified: int = 40
    n_tumor_regions: int = 4
    n_healthy_clusters: int = 4
    region_radius: tuple[float, float] = (280.0, 360.0)
    cluster_spacing: float = 15.0  # Poisson-disk spacing inside clusters
    scatter_spacing: float = 14.0  # minimum spacing for scattered cells
    cluster_offset_scale: float = 1.5  # spatially_clustered per-cluster feature shift, in stds

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")


@dataclass
class SynthTissue:
    records: list[CellRecord]
    regions: list[RegionAnnotation]
    features: np.ndarray  # (N, 14) aligned with records
    truth: dict[int, int]  # epithelial record id -> 0 healthy / 1 tumor


class _SpacedSampler:
    """Dart-throwing point placement with a global minimum-distance grid."""

    def __init__(self, canvas, base_spacing):
        self.canvas = canvas
        self.cell = base_spacing
        self.grid: dict[tuple[int, int], list[tuple[float, float]]] = {}

    def try_place(self, x, y, min_d) -> bool:
        if not (0 <= x <= self.canvas[0] and 0 <= y <= self.canvas[1]):
            return False
        cx, cy = int(x // self.cell), int(y // self.cell)
        reach = int(math.ceil(min_d / self.cell))
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                for px, py in self.grid.get((cx + dx, cy + dy), ()):
                    if (px - x) ** 2 + (py - y) ** 2 < min_d * min_d:
                        return False
        self.grid.setdefault((cx, cy), []).append((x, y))
        return True


def _disk_points(rng, sampler, center, radius, count, spacing, what):
    """Poisson-disk style fill of a disk; raises when the density is infeasible."""
    pts = []
    attempts = 0
    max_attempts = count * 400 + 2000
    while len(pts) < count:
        attempts += 1
        if attempts > max_attempts:
            raise InfeasibleDensity(f"could not place {count} {what} points in radius {radius}")
        r = radius * math.sqrt(rng.uniform())
        t = rng.uniform(0, 2 * math.pi)
        x, y = center[0] + r * math.cos(t), center[1] + r * math.sin(t)
        if sampler.try_place(x, y, spacing):
            pts.append((x, y))
    return pts


def _scatter_points(rng, sampler, cfg, count, what, avoid=None):
    pts = []
    attempts = 0
    max_attempts = count * 400 + 2000
    while len(pts) < count:
        attempts += 1
        if attempts > max_attempts:
            raise InfeasibleDensity(f"could not scatter {count} {what} points")
        x = rng.uniform(0, cfg.canvas[0])
        y = rng.uniform(0, cfg.canvas[1])
        if avoid is not None and avoid(x, y):
            continue
        if sampler.try_place(x, y, cfg.scatter_spacing):
            pts.append((x, y))
    return pts


def _region_polygon(rng, center, radius, n_vertices=24):
    """Star-shaped closed polygon with mild radial jitter; always simple."""
    angles = np.linspace(0, 2 * math.pi, n_vertices, endpoint=False)
    radii = radius * rng.uniform(0.92, 1.0, size=n_vertices)
    return tuple(
        (center[0] + r * math.cos(a), center[1] + r * math.sin(a)) for r, a in zip(radii, angles)
    )


def _pick_centers(rng, cfg, n, min_gap, existing, margin):
    centers = []
    if cfg.canvas[0] <= 2 * margin or cfg.canvas[1] <= 2 * margin:
        raise InfeasibleDensity("canvas too small for the cluster radius margin")
    attempts = 0
    while len(centers) < n:
        attempts += 1
        if attempts > 20000:
            raise InfeasibleDensity("could not place cluster centers on the canvas")
        c = (rng.uniform(margin, cfg.canvas[0] - margin), rng.uniform(margin, cfg.canvas[1] - margin))
        if all(math.dist(c, o) >= min_gap for o in existing + centers):
            centers.append(c)
    return centers


def _sample_features(rng, mean, n):
    mean = np.asarray(mean, dtype=np.float64)
    std = _REL_STD * mean
    f = rng.normal(mean, std, size=(n, len(mean)))
    return _clip_features(f)


def _clip_features(f):
    f = np.asarray(f, dtype=np.float64)
    f[:, 0] = np.maximum(f[:, 0], 5.0)  # area
    f[:, 1] = np.maximum(f[:, 1], 4.0)  # perimeter
    f[:, 2] = np.clip(f[:, 2], 0.0, 0.99)  # eccentricity
    f[:, 3] = np.clip(f[:, 3], 0.05, 1.0)  # solidity
    f[:, 4] = np.maximum(f[:, 4], 2.0)  # major axis
    f[:, 5] = np.maximum(f[:, 5], 1.0)  # minor axis
    lo = np.minimum(f[:, 4], f[:, 5])
    hi = np.maximum(f[:, 4], f[:, 5])
    f[:, 4], f[:, 5] = hi, lo
    f[:, 6] = np.clip(f[:, 6], 0.05, 1.0)  # extent
    f[:, 7] = np.maximum(f[:, 7], 0.0)  # roughness
    f[:, 8] = np.maximum(f[:, 8], 0.0)  # contrast
    f[:, 9] = np.maximum(f[:, 9], 0.0)  # dissimilarity
    f[:, 10] = np.clip(f[:, 10], 0.0, 1.0)  # homogeneity
    f[:, 11] = np.maximum(f[:, 11], 0.0)  # entropy
    f[:, 12] = np.clip(f[:, 12], 1e-4, 1.0)  # ASM
    f[:, 13] = np.maximum(f[:, 13], 0.0)  # dispersion
    return f


def _ellipse_contour(rng, centroid, major, minor, n=16):
    theta = rng.uniform(0, math.pi)
    ct, st = math.cos(theta), math.sin(theta)
    a, b = major / 2.0, minor / 2.0
    angles = np.linspace(0, 2 * math.pi, n, endpoint=False)
    xs = a * np.cos(angles)
    ys = b * np.sin(angles)
    return tuple(
        (centroid[0] + x * ct - y * st, centroid[1] + x * st + y * ct) for x, y in zip(xs, ys)
    )


def generate_tissue(cfg: SynthConfig) -> SynthTissue:
    """Generate cell records, tumor regions, node features and ground-truth labels.

    Tumor epithelial centroids always fall inside a tumor polygon and healthy
    epithelial centroids outside all of them, so relabeling by containment exactly
    recovers the generation labels. Deterministic per seed.
    """
    rng = np.random.default_rng(cfg.seed)
    sampler = _SpacedSampler(cfg.canvas, cfg.cluster_spacing)
    r_lo, r_hi = cfg.region_radius
    n_tumor_clusters, n_healthy_clusters = cfg.n_tumor_regions, cfg.n_healthy_clusters
    if cfg.preset == "spatially_clustered":
        # Many small clusters, each roughly the size of one spatial partition
        # cell, so a subgraph split can hold out whole clusters.
        n_tumor_clusters, n_healthy_clusters = 4 * n_tumor_clusters, 4 * n_healthy_clusters
        r_lo, r_hi = r_lo / 2.2, r_hi / 2.2
    min_gap = 2.0 * r_hi + 120.0
    # Alternating tumor/healthy assignment by angle around the canvas center keeps
    # the two cluster families spatially interleaved, so raw coordinates alone are
    # not linearly informative about the epithelial class.
    n_centers = n_tumor_clusters + n_healthy_clusters
    centers = _pick_centers(rng, cfg, n_centers, min_gap, [], margin=r_hi + 40.0)
    mid = (cfg.canvas[0] / 2.0, cfg.canvas[1] / 2.0)
    centers.sort(key=lambda c: math.atan2(c[1] - mid[1], c[0] - mid[0]))
    tumor_centers, healthy_centers = [], []
    for i, c in enumerate(centers):
        if i % 2 == 0 and len(tumor_centers) < n_tumor_clusters or len(healthy_centers) >= n_healthy_clusters:
            tumor_centers.append(c)
        else:
            healthy_centers.append(c)
    tumor_radii = [rng.uniform(r_lo, r_hi) for _ in tumor_centers]
    healthy_radii = [rng.uniform(r_lo, r_hi) for _ in healthy_centers]
    regions = [
        RegionAnnotation("tumor", _region_polygon(rng, c, r))
        for c, r in zip(tumor_centers, tumor_radii)
    ]

    # context_only: lymphocytes interleave tumor clusters and stromal cells the
    # healthy ones, so neighborhood composition carries the class signal.
    # spatially_clustered: lymphocytes interleave BOTH cluster families at the same
    # rate, leaving no generalizable context signal; only cluster-specific feature
    # offsets and coordinates (memorizable transductively) separate the classes.
    if cfg.preset == "context_only":
        n_lym_tumor = int(0.7 * cfg.n_lymphocyte)
        n_lym_healthy = 0
        n_str_in = int(0.7 * cfg.n_stromal)
        healthy_fill = STROMAL
    elif cfg.preset == "spatially_clustered":
        # Deliberately weak, noisy context: a thin lymphocyte interleave in tumor
        # clusters only, diluted by lymphocytes scattered everywhere.
        n_lym_tumor = int(0.15 * cfg.n_lymphocyte)
        n_lym_healthy = 0
        n_str_in = 0
        healthy_fill = STROMAL
    else:
        n_lym_tumor = n_lym_healthy = n_str_in = 0
        healthy_fill = STROMAL

    def split_counts(total, n_clusters):
        base = total // n_clusters
        counts = [base] * n_clusters
        for i in range(total - base * n_clusters):
            counts[i] += 1
        return counts

    placements = []  # (x, y, code_for_generation, cluster_tag)
    # Tumor clusters: epithelial plus interleaved lymphocytes, inside the polygon.
    epi_counts = split_counts(cfg.n_tumor_epi, len(tumor_centers))
    lym_counts = split_counts(n_lym_tumor, len(tumor_centers))
    for ci, (c, r) in enumerate(zip(tumor_centers, tumor_radii)):
        total = epi_counts[ci] + lym_counts[ci]
        pts = _disk_points(rng, sampler, c, 0.85 * r, total, cfg.cluster_spacing, "tumor-cluster")
        order = rng.permutation(total)
        for rank, pi in enumerate(order):
            code = "tumor_epi" if rank < epi_counts[ci] else LYMPHOCYTE
            placements.append((pts[pi][0], pts[pi][1], code, ("t", ci)))
    # Healthy clusters: epithelial plus the preset's interleaved filler class.
    epi_counts = split_counts(cfg.n_healthy_epi, len(healthy_centers))
    fill_counts = split_counts(n_str_in + n_lym_healthy, len(healthy_centers))
    for ci, (c, r) in enumerate(zip(healthy_centers, healthy_radii)):
        total = epi_counts[ci] + fill_counts[ci]
        pts = _disk_points(rng, sampler, c, 0.85 * r, total, cfg.cluster_spacing, "healthy-cluster")
        order = rng.permutation(total)
        for rank, pi in enumerate(order):
            code = "healthy_epi" if rank < epi_counts[ci] else healthy_fill
            placements.append((pts[pi][0], pts[pi][1], code, ("h", ci)))

    def inside_tumor(x, y):
        return any(point_in_polygon((x, y), reg.polygon) for reg in regions)

    scatter_plan = [
        (LYMPHOCYTE, cfg.n_lymphocyte - n_lym_tumor - n_lym_healthy),
        (STROMAL, cfg.n_stromal - n_str_in),
        (GRANULOCYTE, cfg.n_granulocyte),
        (PLASMA_CELL, cfg.n_plasma),
        (UNCLASSIFIED, cfg.n_unclassified),
    ]
    for code, count in scatter_plan:
        for x, y in _scatter_points(rng, sampler, cfg, count, f"class-{code}"):
            placements.append((x, y, code, None))

    tumor_mean = _TUMOR_EPI_MEAN_EASY if cfg.preset == "easy" else _HEALTHY_EPI_MEAN
    cluster_shift: dict[tuple, np.ndarray] = {}
    if cfg.preset == "spatially_clustered":
        std = _REL_STD * np.asarray(_HEALTHY_EPI_MEAN)
        for tag in {p[3] for p in placements if p[3] is not None}:
            cluster_shift[tag] = rng.normal(0.0, cfg.cluster_offset_scale * std)

    records = []
    feats = []
    truth = {}
    for rid, (x, y, code, tag) in enumerate(placements):
        if code == "tumor_epi":
            mean, out_code = tumor_mean, EPITHELIAL_GENERIC
            truth[rid] = 1
        elif code == "healthy_epi":
            mean, out_code = _HEALTHY_EPI_MEAN, EPITHELIAL_GENERIC
            truth[rid] = 0
        elif code == UNCLASSIFIED:
            mean, out_code = _HEALTHY_EPI_MEAN, UNCLASSIFIED
        else:
            mean, out_code = _BASE_MEANS[code], code
        f = _sample_features(rng, mean, 1)
        if tag is not None and tag in cluster_shift and out_code == EPITHELIAL_GENERIC:
            f = _clip_features(f + cluster_shift[tag])
        f = f[0]
        contour = _ellipse_contour(rng, (x, y), f[4], f[5])
        records.append(
            CellRecord(rid, (x, y), contour, out_code, round(float(rng.uniform(0.7, 1.0)), 6))
        )
        feats.append(f)
    return SynthTissue(records, regions, np.array(feats), truth)


def save_features(features: np.ndarray, records: list[CellRecord], path) -> None:
    """Sidecar features file: record id -> the 14 sampled feature values."""
    doc = {
        "format_version": 1,
        "feature_names": list(FEATURE_NAMES),
        "features": {str(r.id): [float(v) for v in features[i]] for i, r in enumerate(records)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_features(path) -> dict[int, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return {int(k): np.asarray(v, dtype=np.float64) for k, v in doc["features"].items()}


def save_truth(truth: dict[int, int], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({str(k): int(v) for k, v in truth.items()}, fh)


def render_nucleus(
    rng: np.random.Generator, major: float, minor: float, base_gray: int = 120, noise: float = 20.0
) -> tuple[np.ndarray, np.ndarray]:
    """Optional raster mode: a small grayscale patch and elliptical mask for one nucleus."""
    pad = 3
    h = int(math.ceil(minor)) + 2 * pad
    w = int(math.ceil(major)) + 2 * pad
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    mask = ((xx - cx) / (major / 2.0)) ** 2 + ((yy - cy) / (minor / 2.0)) ** 2 <= 1.0
    gray = np.clip(rng.normal(base_gray, noise, size=(h, w)), 0, 255).astype(np.uint8)
    return gray, mask
