"""Optimizer and the segmenter training loop."""

from __future__ import annotations

import numpy as np

from .layers import softmax_cross_entropy
from .models import SegNet


class TrainingError(RuntimeError):
    pass


def sgd_momentum_step(params, grads, velocities, lr, momentum=0.9):
    """v <- momentum*v + g; p <- p - lr*v, all in place."""
    for p, g, v in zip(params, grads, velocities):
        if not np.all(np.isfinite(g)):
            raise TrainingError("sgd_momentum_step: non-finite gradient")
        v *= momentum
        v += g
        p -= lr * v


class SgdMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocities = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        sgd_momentum_step(self.params, grads, self.velocities, self.lr, self.momentum)


def train_segmenter(images, labels, epochs, batch_size=20, lr=1e-4,
                    momentum=0.9, seed=0, channels=None, model=None,
                    log_every=0):
    """Train a pixelwise segmenter with SGD + momentum.

    images: (N,3,H,W) floats in [0,1]; labels: (N,H,W) ints in {0,1}.
    Returns (model, per-update losses).
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.ndim != 4 or labels.shape != (images.shape[0],) + images.shape[2:]:
        raise TrainingError("train_segmenter: image/label shape mismatch")
    if images.shape[0] < 1:
        raise TrainingError("train_segmenter: need at least one labeled patch")

    if model is None:
        kwargs = {} if channels is None else {"channels": channels}
        model = SegNet(seed=seed, **kwargs)
    rng = np.random.default_rng(seed)
    opt = SgdMomentum(model.param_arrays(), lr=lr, momentum=momentum)

    n = images.shape[0]
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            logits = model.forward(images[idx], train=True, rng=rng)
            loss, dlogits = softmax_cross_entropy(logits, labels[idx], axis=1)
            model.backward(dlogits)
            opt.step(model.grad_arrays())
            losses.append(loss)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: loss {losses[-1]:.4f}")
    return model, losses


def pixel_accuracy(model, images, labels):
    images = np.asarray(images, dtype=np.float64)
    pred = model.predict_proba(images).argmax(axis=1)
    return float((pred == np.asarray(labels)).mean())
