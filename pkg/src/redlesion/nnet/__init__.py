from .layers import (
    Conv2d, ReLU, MaxPool2, Linear, Dropout, Upsample, RoiPool,
    softmax, softmax_cross_entropy, NnetError,
)
from .models import DetectorNet, SegNet
from .train import SgdMomentum, sgd_momentum_step, train_segmenter, TrainingError
from .checkpoint import save_model, load_model

__all__ = [
    "Conv2d", "ReLU", "MaxPool2", "Linear", "Dropout", "Upsample", "RoiPool",
    "softmax", "softmax_cross_entropy", "NnetError",
    "DetectorNet", "SegNet",
    "SgdMomentum", "sgd_momentum_step", "train_segmenter", "TrainingError",
    "save_model", "load_model",
]
