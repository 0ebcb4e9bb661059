"""Cell graphs from nucleus segmentations, k-hop simplification and
linear-attention graph transformers for epithelial node classification."""

from .graph import CellGraph, EdgeRule, build_edges, assemble_graph, cleanup_graph
from .ingest import CellRecord, RegionAnnotation, parse_segmentation, parse_regions, relabel_epithelial
from .simplify import AnchorSelection, HopMask, Partition, khop_mask, induced_subgraph, kmeans_split
from .train import TrainConfig, train_model
from .evaluate import FoldSplit, MetricsReport, balanced_accuracy, cross_validate, make_folds
from .synth import SynthConfig, generate_tissue

__all__ = [
    "AnchorSelection",
    "CellGraph",
    "CellRecord",
    "EdgeRule",
    "FoldSplit",
    "HopMask",
    "MetricsReport",
    "Partition",
    "RegionAnnotation",
    "SynthConfig",
    "TrainConfig",
    "assemble_graph",
    "balanced_accuracy",
    "build_edges",
    "cleanup_graph",
    "cross_validate",
    "generate_tissue",
    "induced_subgraph",
    "khop_mask",
    "kmeans_split",
    "make_folds",
    "parse_regions",
    "parse_segmentation",
    "relabel_epithelial",
    "train_model",
]

__version__ = "0.1.0"
