"""Per-nucleus morphology and texture features.

The node feature vector f_i has 14 entries in a fixed order: 7 morphology values
followed by 7 texture values (see FEATURE_NAMES).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage.measure import regionprops

from .errors import EmptyMask, MultipleComponents, ShapeMismatch

MORPHOLOGY_NAMES = (
    "area",
    "perimeter",
    "eccentricity",
    "solidity",
    "major_axis_length",
    "minor_axis_length",
    "extent",
)
TEXTURE_NAMES = (
    "roughness",
    "contrast",
    "dissimilarity",
    "homogeneity",
    "entropy",
    "angular_second_moment",
    "dispersion",
)
FEATURE_NAMES = MORPHOLOGY_NAMES + TEXTURE_NAMES

# GLCM configuration: 32 gray levels by uniform quantization of [0,255],
# offsets (right, down) accumulated symmetrically into one matrix.
GLCM_LEVELS = 32
GLCM_OFFSETS = ((0, 1), (1, 0))  # (drow, dcol)


def morphology_features(mask: np.ndarray) -> np.ndarray:
    """Compute the 7 morphology features of a single-nucleus binary mask.

    Eccentricity and axis lengths come from the equivalent ellipse of the second
    central image moments; solidity uses the convex hull, extent the bounding box.
    """
    mask = np.asarray(mask).astype(bool)
    if not mask.any():
        raise EmptyMask("morphology_features: mask has no foreground pixels")
    _, n_comp = ndimage.label(mask)
    if n_comp > 1:
        raise MultipleComponents(f"mask has {n_comp} connected components, expected 1")
    props = regionprops(mask.astype(np.uint8))[0]
    return np.array(
        [
            float(props.area),
            float(props.perimeter),
            float(props.eccentricity),
            float(props.solidity),
            float(props.major_axis_length),
            float(props.minor_axis_length),
            float(props.extent),
        ]
    )


def quantize_gray(gray: np.ndarray, levels: int = GLCM_LEVELS) -> np.ndarray:
    """Uniformly quantize 8-bit intensities into the given number of levels."""
    gray = np.asarray(gray)
    return (gray.astype(np.int64) * levels) // 256


def glcm_matrix(gray: np.ndarray, mask: np.ndarray, levels: int = GLCM_LEVELS) -> np.ndarray:
    """Normalized symmetric co-occurrence matrix over masked pixel pairs.

    A pair is counted only when both pixels fall inside the mask; neighbors outside
    the mask are skipped rather than clamped. Returns the all-diagonal-at-origin
    convention (single unit at [0, 0]) when no valid pair exists, which reproduces
    the constant-patch feature values.
    """
    q = quantize_gray(gray, levels)
    mask = np.asarray(mask).astype(bool)
    counts = np.zeros((levels, levels), dtype=np.float64)
    for drow, dcol in GLCM_OFFSETS:
        a = q[: q.shape[0] - drow, : q.shape[1] - dcol]
        b = q[drow:, dcol:]
        valid = mask[: q.shape[0] - drow, : q.shape[1] - dcol] & mask[drow:, dcol:]
        i = a[valid].ravel()
        j = b[valid].ravel()
        np.add.at(counts, (i, j), 1.0)
        np.add.at(counts, (j, i), 1.0)
    total = counts.sum()
    if total == 0:
        counts[0, 0] = 1.0
        total = 1.0
    return counts / total


def glcm_features(p: np.ndarray) -> tuple[float, float, float, float, float]:
    """(contrast, dissimilarity, homogeneity, entropy, ASM) of a normalized GLCM."""
    levels = p.shape[0]
    i, j = np.meshgrid(np.arange(levels), np.arange(levels), indexing="ij")
    diff = (i - j).astype(np.float64)
    contrast = float((p * diff**2).sum())
    dissimilarity = float((p * np.abs(diff)).sum())
    homogeneity = float((p / (1.0 + diff**2)).sum())
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    asm = float((p**2).sum())
    return contrast, dissimilarity, homogeneity, entropy, asm


def texture_features(gray: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Compute the 7 texture features from an 8-bit grayscale patch and its mask.

    Roughness is the standard deviation of masked intensities; dispersion is the
    coefficient of variation (std/mean, 0 when the mean is 0).
    """
    gray = np.asarray(gray)
    mask = np.asarray(mask).astype(bool)
    if gray.shape != mask.shape:
        raise ShapeMismatch(f"gray {gray.shape} vs mask {mask.shape}")
    if not mask.any():
        raise EmptyMask("texture_features: mask has no foreground pixels")
    contrast, dissimilarity, homogeneity, entropy, asm = glcm_features(glcm_matrix(gray, mask))
    vals = gray[mask].astype(np.float64)
    roughness = float(vals.std())
    mean = float(vals.mean())
    dispersion = roughness / mean if mean != 0.0 else 0.0
    return np.array([roughness, contrast, dissimilarity, homogeneity, entropy, asm, dispersion])


def node_features(gray: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Full 14-entry feature vector in FEATURE_NAMES order."""
    return np.concatenate([morphology_features(mask), texture_features(gray, mask)])
