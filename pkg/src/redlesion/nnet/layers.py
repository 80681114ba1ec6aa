"""Trainable layers with exact backpropagation, numpy only.

Tensors are float64 arrays in (batch, channels, height, width) layout.
Every layer caches what its backward pass needs during forward; backward
returns the gradient w.r.t. the layer input and stores parameter gradients
on the layer (dW, db).
"""

from __future__ import annotations

import math

import numpy as np


class NnetError(ValueError):
    pass


class Layer:
    def named_params(self):
        return []

    def named_grads(self):
        return []

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2d(Layer):
    """2-D convolution (cross-correlation), stride 1, 'same' padding by default."""

    def __init__(self, cin, cout, k=3, stride=1, pad=None, rng=None):
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride
        self.pad = k // 2 if pad is None else pad
        rng = rng or np.random.default_rng(0)
        scale = math.sqrt(2.0 / (cin * k * k))
        self.W = rng.normal(0.0, scale, size=(cout, cin, k, k))
        self.b = np.zeros(cout)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._cols = None
        self._xshape = None

    def named_params(self):
        return [("W", self.W), ("b", self.b)]

    def named_grads(self):
        return [("W", self.dW), ("b", self.db)]

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise NnetError(f"Conv2d: expected (N,{self.cin},H,W), got {x.shape}")
        n, _, h, w = x.shape
        k, s, p = self.k, self.stride, self.pad
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = np.empty((n, self.cin, k, k, oh, ow))
        for ki in range(k):
            for kj in range(k):
                cols[:, :, ki, kj] = xp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s]
        self._cols = cols
        self._xshape = x.shape
        y = np.tensordot(cols, self.W, axes=([1, 2, 3], [1, 2, 3]))  # (n, oh, ow, cout)
        y = y.transpose(0, 3, 1, 2) + self.b[None, :, None, None]
        return y

    def backward(self, dy):
        if self._cols is None:
            raise NnetError("Conv2d.backward: no cached forward")
        cols = self._cols
        n, _, h, w = self._xshape
        k, s, p = self.k, self.stride, self.pad
        self.dW[...] = np.tensordot(dy, cols, axes=([0, 2, 3], [0, 4, 5]))
        self.db[...] = dy.sum(axis=(0, 2, 3))
        dcols = np.tensordot(self.W, dy, axes=([0], [1]))  # (cin,k,k,n,oh,ow)
        dxp = np.zeros((n, self.cin, h + 2 * p, w + 2 * p))
        oh, ow = dy.shape[2], dy.shape[3]
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += \
                    dcols[:, ki, kj].transpose(1, 0, 2, 3)
        return dxp[:, :, p:p + h, p:p + w] if p else dxp


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class MaxPool2(Layer):
    """2x2 max pooling, stride 2, ceil mode (odd sizes padded with -inf)."""

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        oh, ow = (h + 1) // 2, (w + 1) // 2
        xp = x
        if h % 2 or w % 2:
            xp = np.full((n, c, 2 * oh, 2 * ow), -np.inf)
            xp[:, :, :h, :w] = x
        v = xp.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
        self._arg = v.argmax(axis=-1)
        self._inshape = (h, w)
        return np.take_along_axis(v, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        n, c, oh, ow = dy.shape
        h, w = self._inshape
        dv = np.zeros((n, c, oh, ow, 4))
        np.put_along_axis(dv, self._arg[..., None], dy[..., None], axis=-1)
        dxp = dv.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
        return dxp[:, :, :h, :w]


class Linear(Layer):
    def __init__(self, nin, nout, rng=None):
        rng = rng or np.random.default_rng(0)
        self.W = rng.normal(0.0, math.sqrt(2.0 / nin), size=(nout, nin))
        self.b = np.zeros(nout)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def named_params(self):
        return [("W", self.W), ("b", self.b)]

    def named_grads(self):
        return [("W", self.dW), ("b", self.db)]

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, dy):
        self.dW[...] = dy.T @ self._x
        self.db[...] = dy.sum(axis=0)
        return dy @ self.W


class Dropout(Layer):
    """Inverted dropout: train mode zeroes a `rate` fraction and rescales
    survivors by 1/(1-rate); eval mode is the identity."""

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise NnetError("Dropout: rate must be in [0, 1)")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise NnetError("Dropout: train mode needs an rng")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) >= self.rate) / keep
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


def _interp_matrix(n_out, n_in):
    """Bilinear interpolation matrix (half-pixel convention, edge clamp)."""
    src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


class Upsample(Layer):
    """Bilinear upsampling to a target spatial size; backward is the exact
    adjoint of the interpolation."""

    def __init__(self, out_h, out_w):
        self.out_h, self.out_w = out_h, out_w
        self._mats = {}

    def _matrices(self, h, w):
        key = (h, w)
        if key not in self._mats:
            self._mats[key] = (_interp_matrix(self.out_h, h), _interp_matrix(self.out_w, w))
        return self._mats[key]

    def forward(self, x, train=False, rng=None):
        self._inshape = x.shape
        mr, mc = self._matrices(x.shape[2], x.shape[3])
        y = np.tensordot(x, mc, axes=([3], [1]))        # (n,c,h,out_w)
        y = np.tensordot(y, mr, axes=([2], [1]))        # (n,c,out_w,out_h)
        return y.transpose(0, 1, 3, 2)

    def backward(self, dy):
        mr, mc = self._matrices(self._inshape[2], self._inshape[3])
        dx = np.tensordot(dy, mr, axes=([2], [0]))      # (n,c,out_w,h)
        dx = np.tensordot(dx, mc, axes=([2], [0]))      # (n,c,h,w)
        return dx


class RoiPool(Layer):
    """ROI max pooling of a (1,C,H,W) feature map into fixed out_h x out_w
    grids, one per ROI. Bin edges use floor/ceil of the proportional
    division; argmax positions are cached for gradient routing."""

    def __init__(self, out_h, out_w, spatial_scale):
        self.out_h, self.out_w = out_h, out_w
        self.spatial_scale = spatial_scale

    def forward(self, x, rois, train=False, rng=None):
        if x.ndim != 4 or x.shape[0] != 1:
            raise NnetError("RoiPool: expected a (1,C,H,W) feature map")
        _, c, h, w = x.shape
        scale = self.spatial_scale
        out = np.empty((len(rois), c, self.out_h, self.out_w))
        self._routes = []
        self._xshape = x.shape
        feat = x[0]
        for ridx, roi in enumerate(rois):
            r0 = int(np.floor((roi.r - roi.h / 2.0) * scale))
            c0 = int(np.floor((roi.c - roi.w / 2.0) * scale))
            r1 = int(np.ceil((roi.r + roi.h / 2.0) * scale))
            c1 = int(np.ceil((roi.c + roi.w / 2.0) * scale))
            r0, c0 = min(max(r0, 0), h - 1), min(max(c0, 0), w - 1)
            r1, c1 = max(min(r1, h), r0 + 1), max(min(c1, w), c0 + 1)
            hh, ww = r1 - r0, c1 - c0
            for i in range(self.out_h):
                bs = r0 + (i * hh) // self.out_h
                be = r0 + max(-(-((i + 1) * hh) // self.out_h), (i * hh) // self.out_h + 1)
                be = min(be, r1)
                for j in range(self.out_w):
                    cs = c0 + (j * ww) // self.out_w
                    ce = c0 + max(-(-((j + 1) * ww) // self.out_w), (j * ww) // self.out_w + 1)
                    ce = min(ce, c1)
                    window = feat[:, bs:be, cs:ce].reshape(c, -1)
                    am = window.argmax(axis=1)
                    out[ridx, :, i, j] = window[np.arange(c), am]
                    rows = bs + am // (ce - cs)
                    cols = cs + am % (ce - cs)
                    self._routes.append((ridx, i, j, rows, cols))
        return out

    def backward(self, dy):
        dx = np.zeros(self._xshape)
        c = self._xshape[1]
        ch = np.arange(c)
        for ridx, i, j, rows, cols in self._routes:
            np.add.at(dx[0], (ch, rows, cols), dy[ridx, :, i, j])
        return dx


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, labels, axis=1):
    """Mean softmax cross-entropy over all label positions.

    logits: (..., K, ...) with class axis `axis`; labels: integer array of
    matching shape without the class axis. Returns (loss, dlogits).
    """
    probs = softmax(logits, axis=axis)
    lab = np.expand_dims(labels, axis=axis)
    picked = np.take_along_axis(probs, lab, axis=axis)
    n = labels.size
    loss = -np.log(np.maximum(picked, 1e-12)).sum() / n
    dlogits = probs.copy()
    np.put_along_axis(dlogits, lab, picked - 1.0, axis=axis)
    dlogits /= n
    return loss, dlogits
