"""Garment segmentation for colored 3D human scans.

Predicts one of 18 fine-grained clothing labels per point of a colored
point cloud, conditioned on a parametric body fit and the set of garments
present, and supports human-in-the-loop continual-learning refinement.
"""

from .body import (BodyFeatureField, BodyModel, encode_body, load_body_model,
                   pose_body, save_body_model)
from .errors import (GarmsegError, RuntimeFailure, ScanParseError,
                     ValidationError)
from .graph import KnnGraph, build_knn_graph
from .metrics import confusion_matrix, iou
from .network import (NetworkConfig, SegmentationNet, ce_loss,
                      export_attention_map, load_checkpoint, save_checkpoint)
from .refinement import (RefinementSession, create_session, refine,
                         refine_loss, regression_guard)
from .scan import BodyParams, NormalizationRecord, ScanSample, normalize
from .scan_io import load_scan, save_scan
from .synth import GarmentSpec, SynthConfig, generate, generate_suite, load_suite
from .taxonomy import (CLASS_NAMES, DEFAULT_TAXONOMY, GarmentVector,
                       LabelTaxonomy, NUM_CLASSES, merge_to_3class)
from .training import EvalReport, TrainConfig, evaluate, segment, train

__version__ = "0.1.0"

__all__ = [
    "BodyFeatureField", "BodyModel", "BodyParams", "CLASS_NAMES",
    "DEFAULT_TAXONOMY", "EvalReport", "GarmentSpec", "GarmentVector",
    "GarmsegError", "KnnGraph", "LabelTaxonomy", "NetworkConfig",
    "NormalizationRecord", "NUM_CLASSES", "RefinementSession",
    "RuntimeFailure", "ScanParseError", "ScanSample", "SegmentationNet",
    "SynthConfig", "TrainConfig", "ValidationError", "build_knn_graph",
    "ce_loss", "confusion_matrix", "create_session", "encode_body",
    "evaluate", "export_attention_map", "generate", "generate_suite",
    "iou", "load_body_model", "load_checkpoint", "load_scan", "load_suite",
    "merge_to_3class", "normalize", "pose_body", "refine", "refine_loss",
    "regression_guard", "save_body_model", "save_checkpoint", "save_scan",
    "segment", "train",
]
