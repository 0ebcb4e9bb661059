"""Parse nucleus segmentations and region annotations; relabel epithelial cells by tumor containment.

Coordinates are pixel units at 40x magnification, origin top-left, y pointing down.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

from .errors import MalformedInput

log = logging.getLogger(__name__)

# Fixed class encoding, identical everywhere in the pipeline.
CLASS_NAMES = (
    "granulocyte",
    "plasma_cell",
    "lymphocyte",
    "stromal",
    "epithelial_healthy",
    "epithelial_tumor",
)
GRANULOCYTE = 0
PLASMA_CELL = 1
LYMPHOCYTE = 2
STROMAL = 3
EPITHELIAL_HEALTHY = 4
EPITHELIAL_TUMOR = 5
UNCLASSIFIED = -1

# Pre-relabel code 4 means "generic epithelial"; relabeling resolves it to 4 or 5.
EPITHELIAL_GENERIC = 4


@dataclass(frozen=True)
class CellRecord:
    """One segmented nucleus."""

    id: int
    centroid: tuple[float, float]
    contour: tuple[tuple[float, float], ...]
    class_code: int  # 0..5 or UNCLASSIFIED
    confidence: float

    @property
    def is_epithelial(self) -> bool:
        return self.class_code in (EPITHELIAL_HEALTHY, EPITHELIAL_TUMOR)


@dataclass(frozen=True)
class RegionAnnotation:
    label: str
    polygon: tuple[tuple[float, float], ...]

    @property
    def is_tumor(self) -> bool:
        return self.label == "tumor"


def _check_point(pt, rid):
    if (
        not isinstance(pt, (list, tuple))
        or len(pt) != 2
        or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in pt)
    ):
        raise MalformedInput(f"non-finite or malformed coordinate {pt!r}", rid)
    return (float(pt[0]), float(pt[1]))


def parse_segmentation(path) -> list[CellRecord]:
    """Read a segmentation JSON file into CellRecords, sorted by id.

    Entries with a null class map to UNCLASSIFIED; unknown class codes also map to
    UNCLASSIFIED with a warning (forward compatibility with richer taxonomies).
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "nuclei" not in doc:
        raise MalformedInput(f"{path}: missing 'nuclei' key")
    records = []
    seen = set()
    for entry in doc["nuclei"]:
        rid = entry.get("id")
        if not isinstance(rid, int) or rid < 0:
            raise MalformedInput(f"bad or missing id {rid!r}", rid)
        if rid in seen:
            raise MalformedInput("duplicate id", rid)
        seen.add(rid)
        for field in ("centroid", "contour", "confidence"):
            if field not in entry:
                raise MalformedInput(f"missing field '{field}'", rid)
        centroid = _check_point(entry["centroid"], rid)
        contour = entry["contour"]
        if not isinstance(contour, list) or len(contour) < 3:
            raise MalformedInput("contour has fewer than 3 points", rid)
        contour = tuple(_check_point(p, rid) for p in contour)
        cls = entry.get("class")
        if cls is None:
            code = UNCLASSIFIED
        elif isinstance(cls, int) and 0 <= cls <= 5:
            code = cls
        else:
            log.warning("record %s: unknown class code %r mapped to Unclassified", rid, cls)
            code = UNCLASSIFIED
        conf = entry["confidence"]
        if not isinstance(conf, (int, float)) or not (0.0 <= conf <= 1.0):
            raise MalformedInput(f"confidence {conf!r} outside [0,1]", rid)
        records.append(CellRecord(rid, centroid, contour, code, float(conf)))
    records.sort(key=lambda r: r.id)
    return records


def serialize_segmentation(records: list[CellRecord], path) -> None:
    """Write CellRecords back to the segmentation JSON format (inverse of parse)."""
    doc = {
        "format_version": 1,
        "magnification": 40,
        "nuclei": [
            {
                "id": r.id,
                "centroid": list(r.centroid),
                "contour": [list(p) for p in r.contour],
                "class": None if r.class_code == UNCLASSIFIED else r.class_code,
                "confidence": r.confidence,
            }
            for r in records
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def parse_regions(path) -> list[RegionAnnotation]:
    """Read a region-annotation JSON file. Non-"tumor" labels are kept but flagged unused."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "regions" not in doc:
        raise MalformedInput(f"{path}: missing 'regions' key")
    regions = []
    for i, entry in enumerate(doc["regions"]):
        poly = entry.get("polygon")
        if not isinstance(poly, list) or len(poly) < 3:
            raise MalformedInput(f"region {i}: polygon needs >= 3 vertices")
        poly = tuple(_check_point(p, None) for p in poly)
        label = str(entry.get("label", ""))
        if label != "tumor":
            log.warning("region %d has label %r; it will be ignored by relabeling", i, label)
        regions.append(RegionAnnotation(label, poly))
    return regions


def serialize_regions(regions: list[RegionAnnotation], path) -> None:
    doc = {
        "format_version": 1,
        "regions": [{"label": r.label, "polygon": [list(p) for p in r.polygon]} for r in regions],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def _on_segment(px, py, ax, ay, bx, by, eps=1e-9):
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > eps * max(1.0, abs(bx - ax) + abs(by - ay)):
        return False
    dot = (px - ax) * (bx - ax) + (py - ay) * (by - ay)
    return -eps <= dot <= (bx - ax) ** 2 + (by - ay) ** 2 + eps


def point_in_polygon(point, polygon) -> bool:
    """Ray-casting containment test. Points exactly on an edge count as inside."""
    px, py = point
    n = len(polygon)
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        if _on_segment(px, py, ax, ay, bx, by):
            return True
    inside = False
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        if (ay > py) != (by > py):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < x_cross:
                inside = not inside
    return inside


def point_in_polygon_winding(point, polygon) -> bool:
    """Winding-number containment test; independent cross-check of point_in_polygon."""
    px, py = point
    n = len(polygon)
    winding = 0
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        if _on_segment(px, py, ax, ay, bx, by):
            return True
        if ay <= py:
            if by > py and (bx - ax) * (py - ay) - (by - ay) * (px - ax) > 0:
                winding += 1
        elif by <= py and (bx - ax) * (py - ay) - (by - ay) * (px - ax) < 0:
            winding -= 1
    return winding != 0


def relabel_epithelial(
    cells: list[CellRecord], regions: list[RegionAnnotation]
) -> list[CellRecord]:
    """Resolve generic-epithelial cells into tumor/healthy by tumor-region containment.

    Containment is tested on the centroid only; overlapping tumor polygons act as a
    union. Non-epithelial classes pass through unchanged.
    """
    tumor_polys = [r.polygon for r in regions if r.is_tumor]
    out = []
    for cell in cells:
        if cell.class_code == EPITHELIAL_GENERIC:
            inside = any(point_in_polygon(cell.centroid, poly) for poly in tumor_polys)
            code = EPITHELIAL_TUMOR if inside else EPITHELIAL_HEALTHY
            out.append(replace(cell, class_code=code))
        else:
            out.append(cell)
    return out
