"""Action tube detection toolkit.

Turns per-frame region proposals, optical-flow magnitude maps and precomputed
region features into classified, temporally linked action tubes, and scores
them with frame-AP, video-AP, truncated ROC/AUC and a confusion matrix.
"""

__version__ = "0.1.0"

from tubekit.errors import (
    InvalidInputError,
    LoadError,
    NoFeasiblePathError,
    ParseError,
    StageError,
    TrainingError,
    TubekitError,
    UndefinedMetricError,
)
from tubekit.geometry import Box, iou, mean_frame_iou

__all__ = [
    "Box",
    "iou",
    "mean_frame_iou",
    "TubekitError",
    "InvalidInputError",
    "LoadError",
    "ParseError",
    "TrainingError",
    "NoFeasiblePathError",
    "UndefinedMetricError",
    "StageError",
]
