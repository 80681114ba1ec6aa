"""Network assemblies: the detection backbone with ROI-pooled heads, and a
skip-fused fully convolutional segmenter."""

from __future__ import annotations

import numpy as np

from .layers import (
    Conv2d, Dropout, Linear, MaxPool2, NnetError, ReLU, RoiPool, Upsample,
    softmax,
)

DEFAULT_CHANNELS = (16, 32, 64, 64)
FEATURE_STRIDE = 8


def _run(layers, x, train, rng):
    for layer in layers:
        x = layer.forward(x, train=train, rng=rng)
    return x


def _run_back(layers, dy):
    for layer in reversed(layers):
        dy = layer.backward(dy)
    return dy


class _Net:
    """Common parameter plumbing for the concrete nets."""

    def _modules(self):
        raise NotImplementedError

    def named_params(self):
        out = []
        for mname, mod in self._modules():
            for pname, p in mod.named_params():
                out.append((f"{mname}.{pname}", p))
        return out

    def named_grads(self):
        out = []
        for mname, mod in self._modules():
            for pname, g in mod.named_grads():
                out.append((f"{mname}.{pname}", g))
        return out

    def param_arrays(self):
        return [p for _, p in self.named_params()]

    def grad_arrays(self):
        return [g for _, g in self.named_grads()]

    def load_param_dict(self, params):
        for name, p in self.named_params():
            p[...] = params[name]


class DetectorNet(_Net):
    """Compact detection backbone: 4 conv blocks (3 max-pools, stride 8),
    ROI max-pooling to a fixed grid, two dropout-regularized FC layers, and
    classification (2-way) + box regression (4 offsets) heads."""

    kind = "detector"

    def __init__(self, seed=0, channels=DEFAULT_CHANNELS, fc_units=256,
                 roi_out=4, dropout=0.8, in_channels=3):
        self.config = dict(seed=seed, channels=tuple(channels), fc_units=fc_units,
                           roi_out=roi_out, dropout=dropout, in_channels=in_channels)
        rng = np.random.default_rng(seed)
        c1, c2, c3, c4 = channels
        self.trunk = [
            Conv2d(in_channels, c1, rng=rng), ReLU(), MaxPool2(),
            Conv2d(c1, c2, rng=rng), ReLU(), MaxPool2(),
            Conv2d(c2, c3, rng=rng), ReLU(), MaxPool2(),
            Conv2d(c3, c4, rng=rng), ReLU(),
        ]
        self.roipool = RoiPool(roi_out, roi_out, 1.0 / FEATURE_STRIDE)
        feat_dim = c4 * roi_out * roi_out
        self.fc1 = Linear(feat_dim, fc_units, rng=rng)
        self.relu_fc1 = ReLU()
        self.drop1 = Dropout(dropout)
        self.fc2 = Linear(fc_units, fc_units, rng=rng)
        self.relu_fc2 = ReLU()
        self.drop2 = Dropout(dropout)
        self.cls_head = Linear(fc_units, 2, rng=rng)
        self.reg_head = Linear(fc_units, 4, rng=rng)

    def _modules(self):
        mods = []
        for i, layer in enumerate(self.trunk):
            if isinstance(layer, Conv2d):
                mods.append((f"trunk{i}", layer))
        mods += [("fc1", self.fc1), ("fc2", self.fc2),
                 ("cls", self.cls_head), ("reg", self.reg_head)]
        return mods

    def forward(self, x, rois, train=False, rng=None):
        """x: (1,3,H,W) normalized patch; rois in patch pixel coordinates.
        Returns (cls_logits (R,2), reg (R,4))."""
        if not rois:
            raise NnetError("DetectorNet.forward: empty ROI list")
        feat = _run(self.trunk, x, train, rng)
        pooled = self.roipool.forward(feat, rois)
        self._pooled_shape = pooled.shape
        flat = pooled.reshape(pooled.shape[0], -1)
        h = self.fc1.forward(flat)
        h = self.relu_fc1.forward(h)
        h = self.drop1.forward(h, train=train, rng=rng)
        h = self.fc2.forward(h)
        h = self.relu_fc2.forward(h)
        h = self.drop2.forward(h, train=train, rng=rng)
        return self.cls_head.forward(h), self.reg_head.forward(h)

    def backward(self, dcls, dreg):
        dh = self.cls_head.backward(dcls) + self.reg_head.backward(dreg)
        dh = self.drop2.backward(dh)
        dh = self.relu_fc2.backward(dh)
        dh = self.fc2.backward(dh)
        dh = self.drop1.backward(dh)
        dh = self.relu_fc1.backward(dh)
        dflat = self.fc1.backward(dh)
        dpooled = dflat.reshape(self._pooled_shape)
        dfeat = self.roipool.backward(dpooled)
        return _run_back(self.trunk, dfeat)

    def predict(self, x, rois):
        logits, reg = self.forward(x, rois, train=False)
        return softmax(logits, axis=1), reg


class SegNet(_Net):
    """Pixelwise 2-class segmenter: the conv encoder with taps at strides 4
    and 8, a 1x1 score layer on the deep features, bilinear upsampling with
    a learnable 1x1 skip projection, and final upsampling to input size."""

    kind = "segmenter"

    def __init__(self, seed=0, channels=DEFAULT_CHANNELS, in_channels=3, n_classes=2):
        self.config = dict(seed=seed, channels=tuple(channels),
                           in_channels=in_channels, n_classes=n_classes)
        rng = np.random.default_rng(seed)
        c1, c2, c3, c4 = channels
        self.enc_a = [
            Conv2d(in_channels, c1, rng=rng), ReLU(), MaxPool2(),
            Conv2d(c1, c2, rng=rng), ReLU(), MaxPool2(),
        ]
        self.enc_b = [
            Conv2d(c2, c3, rng=rng), ReLU(), MaxPool2(),
            Conv2d(c3, c4, rng=rng), ReLU(),
        ]
        self.score8 = Conv2d(c4, n_classes, k=1, rng=rng)
        self.skip4 = Conv2d(c2, n_classes, k=1, rng=rng)

    def _modules(self):
        mods = []
        for name, group in (("enc_a", self.enc_a), ("enc_b", self.enc_b)):
            for i, layer in enumerate(group):
                if isinstance(layer, Conv2d):
                    mods.append((f"{name}{i}", layer))
        mods += [("score8", self.score8), ("skip4", self.skip4)]
        return mods

    def forward(self, x, train=False, rng=None):
        h, w = x.shape[2], x.shape[3]
        t4 = _run(self.enc_a, x, train, rng)
        t8 = _run(self.enc_b, t4, train, rng)
        s8 = self.score8.forward(t8)
        self.up_mid = Upsample(t4.shape[2], t4.shape[3])
        fused = self.up_mid.forward(s8) + self.skip4.forward(t4)
        self.up_out = Upsample(h, w)
        return self.up_out.forward(fused)

    def backward(self, dlogits):
        dfused = self.up_out.backward(dlogits)
        dt4 = self.skip4.backward(dfused)
        ds8 = self.up_mid.backward(dfused)
        dt8 = self.score8.backward(ds8)
        dt4 = dt4 + _run_back(self.enc_b, dt8)
        return _run_back(self.enc_a, dt4)

    def predict_proba(self, x):
        return softmax(self.forward(x, train=False), axis=1)
