"""Detection post-processing and ensembling: NMS, SoftNMS, top-k voting-NMS, mAP."""

from .detections import (
    BoxfuseError,
    Detection,
    DetectionSet,
    GroundTruthBox,
    GroundTruthSet,
    ParseError,
    pool,
    read_ground_truth,
    read_predictions,
    read_submission,
    write_ground_truth,
    write_predictions,
    write_submission,
)
from .evaluation import EvalReport, MatchParams, average_precision, evaluate, match_class
from .geometry import BBox, area, iou, mean_box
from .suppression import SoftNmsMethod, SoftNmsParams, hard_nms, soft_nms, suppress_set
from .voting import Cluster, VotingMode, VotingParams, cluster_once, ensemble, topk_voting_nms, vote

__version__ = "0.1.0"
