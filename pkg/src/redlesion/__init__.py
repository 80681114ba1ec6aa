"""Two-stream red lesion (microaneurysm / hemorrhage) detection toolkit
for retinal fundus images."""

from .boxes import RoiBox, decode_offsets, encode_offsets, iou
from .config import PipelineConfig
from .detector import Detection, detect_stream, nms, train_stream
from .evalkit import FrocCurve, MatchPolicy, cpm_score, froc_curve, roc_auc
from .pipeline import Models, preprocess_image, run_pipeline

__version__ = "0.1.0"
