"""alsim: budgeted annotation-cycle simulation with box-in-box failure mining.

The package simulates active-learning annotation rounds over detector
outputs: strategies pick images to annotate each cycle, a pluggable
detector source supplies predictions, and detection metrics plus
box-in-box diagnostics track the effect of each selection policy.
"""

__version__ = "0.1.0"

from alsim.bib import BibParams, BibPair, PairStore, bib_select, count_bib, find_bib, is_bib
from alsim.detections import (
    Dataset,
    DatasetImage,
    Detection,
    GroundTruthBox,
    ImagePredictions,
)
from alsim.geometry import BBox, area, intersection_area, ioa_first, iou

__all__ = [
    "__version__",
    "BBox",
    "area",
    "intersection_area",
    "iou",
    "ioa_first",
    "BibParams",
    "BibPair",
    "PairStore",
    "is_bib",
    "find_bib",
    "bib_select",
    "count_bib",
    "Dataset",
    "DatasetImage",
    "Detection",
    "GroundTruthBox",
    "ImagePredictions",
]
