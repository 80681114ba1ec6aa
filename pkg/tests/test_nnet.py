"""Tests for the numpy nnet: layer forwards against brute-force oracles,
finite-difference gradient checks for every layer kind and for composed
nets, ROI pooling routing, dropout statistics, and the training loop."""

import numpy as np
import pytest

from redlesion.boxes import RoiBox
from redlesion.nnet.layers import (
    Conv2d,
    Dropout,
    Linear,
    MaxPool2,
    NnetError,
    ReLU,
    RoiPool,
    Upsample,
    softmax,
    softmax_cross_entropy,
)
from redlesion.nnet.models import DetectorNet, SegNet
from redlesion.nnet.train import (
    SgdMomentum,
    TrainingError,
    pixel_accuracy,
    sgd_momentum_step,
    train_segmenter,
)


def oracle_conv(x, W, b, pad):
    """Nested-loop same-stride-1 cross-correlation."""
    n, cin, h, w = x.shape
    cout, _, k, _ = W.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, cout, h, w))
    for ni in range(n):
        for co in range(cout):
            for i in range(h):
                for j in range(w):
                    acc = b[co]
                    for ci in range(cin):
                        for ki in range(k):
                            for kj in range(k):
                                acc += W[co, ci, ki, kj] * xp[ni, ci, i + ki, j + kj]
                    out[ni, co, i, j] = acc
    return out


def fd_check(params, loss_fn, grads, eps=1e-5, tol=1e-3):
    """Central finite differences on every parameter entry vs analytic grads."""
    for p, g in zip(params, grads):
        flat_p, flat_g = p.ravel(), g.ravel()
        idx = np.linspace(0, flat_p.size - 1, min(flat_p.size, 12)).astype(int)
        for i in idx:
            orig = flat_p[i]
            flat_p[i] = orig + eps
            lp = loss_fn()
            flat_p[i] = orig - eps
            lm = loss_fn()
            flat_p[i] = orig
            fd = (lp - lm) / (2 * eps)
            denom = max(abs(fd), abs(flat_g[i]), 1e-8)
            assert abs(fd - flat_g[i]) / denom < tol, (fd, flat_g[i])


class TestForward:
    def test_identity_conv(self):
        conv = Conv2d(2, 2, k=1)
        conv.W[...] = np.eye(2).reshape(2, 2, 1, 1)
        conv.b[...] = 0.0
        x = np.random.default_rng(0).normal(size=(1, 2, 5, 5))
        assert conv.forward(x) == pytest.approx(x)

    def test_relu_all_negative(self):
        x = -np.abs(np.random.default_rng(1).normal(size=(2, 3, 4, 4))) - 0.1
        assert (ReLU().forward(x) == 0).all()

    def test_conv_matches_oracle(self):
        rng = np.random.default_rng(2)
        conv = Conv2d(3, 4, k=3, rng=rng)
        x = rng.normal(size=(2, 3, 6, 7))
        got = conv.forward(x)
        want = oracle_conv(x, conv.W, conv.b, pad=1)
        assert got == pytest.approx(want, abs=1e-10)

    def test_two_layer_net_matches_oracle(self):
        rng = np.random.default_rng(3)
        c1 = Conv2d(2, 3, k=3, rng=rng)
        c2 = Conv2d(3, 2, k=3, rng=rng)
        x = rng.normal(size=(1, 2, 6, 6))
        h = np.maximum(oracle_conv(x, c1.W, c1.b, pad=1), 0.0)
        want = oracle_conv(h, c2.W, c2.b, pad=1)
        got = c2.forward(ReLU().forward(c1.forward(x)))
        assert got == pytest.approx(want, abs=1e-6)

    def test_maxpool_odd_size(self):
        x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
        y = MaxPool2().forward(x)
        assert y[0, 0].tolist() == [[4.0, 5.0], [7.0, 8.0]]

    def test_conv_shape_mismatch(self):
        with pytest.raises(NnetError):
            Conv2d(3, 4).forward(np.zeros((1, 2, 5, 5)))


class TestGradients:
    """Central finite differences for every layer kind in isolation."""

    def run_layer(self, layer, x, n_seeds=3, needs_rng=False):
        for seed in range(n_seeds):
            rng = np.random.default_rng(100 + seed)
            xs = x + 0.01 * rng.normal(size=x.shape)
            drng = np.random.default_rng(seed)
            kwargs = {"train": True, "rng": drng} if needs_rng else {}

            def loss_fn(xs=xs, kwargs=kwargs, seed=seed):
                if needs_rng:
                    kwargs = {"train": True, "rng": np.random.default_rng(seed)}
                y = layer.forward(xs, **kwargs)
                return float((y ** 2).sum())

            y = layer.forward(xs, **({"train": True, "rng": np.random.default_rng(seed)}
                                     if needs_rng else {}))
            dx = layer.backward(2.0 * y)
            params = [p for _, p in layer.named_params()]
            grads = [g for _, g in layer.named_grads()]
            fd_check(params + [xs], loss_fn, grads + [dx])

    def test_conv(self):
        rng = np.random.default_rng(0)
        self.run_layer(Conv2d(2, 3, k=3, rng=rng), rng.normal(size=(2, 2, 5, 5)))

    def test_linear(self):
        rng = np.random.default_rng(1)
        self.run_layer(Linear(6, 4, rng=rng), rng.normal(size=(3, 6)))

    def test_relu(self):
        rng = np.random.default_rng(2)
        self.run_layer(ReLU(), rng.normal(size=(2, 3, 4, 4)) + 0.2)

    def test_maxpool(self):
        rng = np.random.default_rng(3)
        self.run_layer(MaxPool2(), rng.normal(size=(2, 2, 6, 6)))

    def test_upsample(self):
        rng = np.random.default_rng(4)
        self.run_layer(Upsample(7, 9), rng.normal(size=(1, 2, 4, 5)))

    def test_dropout(self):
        rng = np.random.default_rng(5)
        self.run_layer(Dropout(0.3), rng.normal(size=(2, 3, 4, 4)), needs_rng=True)

    def test_softmax_cross_entropy_grad(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(5, 3))
        labels = rng.integers(0, 3, size=5)
        _, dlogits = softmax_cross_entropy(logits, labels, axis=1)

        def loss_fn():
            return softmax_cross_entropy(logits, labels, axis=1)[0]

        fd_check([logits], loss_fn, [dlogits])

    def test_zero_output_grad_zero_param_grads(self):
        rng = np.random.default_rng(7)
        conv = Conv2d(2, 2, rng=rng)
        conv.forward(rng.normal(size=(1, 2, 5, 5)))
        dx = conv.backward(np.zeros((1, 2, 5, 5)))
        assert (conv.dW == 0).all() and (conv.db == 0).all() and (dx == 0).all()

    def test_linear_sum_loss_analytic(self):
        # L = sum(output): dW[o, i] = sum over batch of x[:, i]
        rng = np.random.default_rng(8)
        lin = Linear(4, 3, rng=rng)
        x = rng.normal(size=(5, 4))
        y = lin.forward(x)
        lin.backward(np.ones_like(y))
        assert lin.dW == pytest.approx(np.tile(x.sum(axis=0), (3, 1)))
        assert lin.db == pytest.approx(np.full(3, 5.0))

    def test_backward_without_forward(self):
        with pytest.raises(NnetError):
            Conv2d(1, 1).backward(np.zeros((1, 1, 3, 3)))


class TestComposedGradients:
    def test_segnet_loss_gradcheck(self):
        rng = np.random.default_rng(0)
        model = SegNet(seed=0, channels=(2, 3, 4, 4))
        x = rng.random((1, 3, 16, 16))
        labels = rng.integers(0, 2, size=(1, 16, 16))

        def loss_fn():
            return softmax_cross_entropy(model.forward(x), labels, axis=1)[0]

        _, dlogits = softmax_cross_entropy(model.forward(x), labels, axis=1)
        model.backward(dlogits)
        fd_check(model.param_arrays(), loss_fn, model.grad_arrays(), tol=2e-3)

    def test_detector_loss_gradcheck_many_seeds(self):
        # composed detector multitask loss, >= 20 seeds
        from redlesion.detector import batch_loss_and_grads

        for seed in range(20):
            rng = np.random.default_rng(seed)
            model = DetectorNet(seed=seed, channels=(2, 3, 4, 4), fc_units=16)
            x = rng.random((1, 3, 24, 24))
            rois = [RoiBox(r=12.0, c=12.0, h=16.0, w=16.0),
                    RoiBox(r=8.0, c=14.0, h=12.0, w=12.0)]
            labels = np.array([1, 0])
            targets = np.array([[0.1, -0.1, 0.05, 0.02], [0.0, 0.0, 0.0, 0.0]])

            def loss_fn():
                logits, reg = model.forward(x, rois)
                loss, _, _ = batch_loss_and_grads(logits, reg, labels, targets)
                return loss

            logits, reg = model.forward(x, rois)
            loss, dcls, dreg = batch_loss_and_grads(logits, reg, labels, targets)
            model.backward(dcls, dreg)
            params = model.param_arrays()
            grads = model.grad_arrays()
            # spot-check a couple of tensors per seed to keep runtime low
            pick = [0, len(params) // 2, len(params) - 1]
            fd_check([params[i] for i in pick], loss_fn,
                     [grads[i] for i in pick], tol=2e-3)


def oracle_roi_pool(feat, roi, out_h, out_w, scale):
    """Brute-force floor/ceil binning oracle for one ROI on (C,H,W)."""
    c, h, w = feat.shape
    r0 = int(np.floor((roi.r - roi.h / 2.0) * scale))
    c0 = int(np.floor((roi.c - roi.w / 2.0) * scale))
    r1 = int(np.ceil((roi.r + roi.h / 2.0) * scale))
    c1 = int(np.ceil((roi.c + roi.w / 2.0) * scale))
    r0, c0 = min(max(r0, 0), h - 1), min(max(c0, 0), w - 1)
    r1, c1 = max(min(r1, h), r0 + 1), max(min(c1, w), c0 + 1)
    hh, ww = r1 - r0, c1 - c0
    out = np.empty((c, out_h, out_w))
    for i in range(out_h):
        bs = r0 + (i * hh) // out_h
        be = r0 + max(int(np.ceil((i + 1) * hh / out_h)), (i * hh) // out_h + 1)
        be = min(be, r1)
        for j in range(out_w):
            cs = c0 + (j * ww) // out_w
            ce = c0 + max(int(np.ceil((j + 1) * ww / out_w)), (j * ww) // out_w + 1)
            ce = min(ce, c1)
            out[:, i, j] = feat[:, bs:be, cs:ce].max(axis=(1, 2))
    return out


class TestRoiPool:
    def test_whole_map_quadrants(self):
        x = np.arange(1, 17, dtype=np.float64).reshape(1, 1, 4, 4)
        roi = RoiBox(r=2.0, c=2.0, h=4.0, w=4.0)
        y = RoiPool(2, 2, 1.0).forward(x, [roi])
        assert y[0, 0].tolist() == [[6.0, 8.0], [14.0, 16.0]]

    def test_single_cell_replicated(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        roi = RoiBox(r=1.5, c=2.5, h=1.0, w=1.0)
        y = RoiPool(2, 2, 1.0).forward(x, [roi])
        assert (y[0, 0] == x[0, 0, 1, 2]).all()

    def test_random_rois_match_oracle(self):
        rng = np.random.default_rng(0)
        pool = RoiPool(3, 3, 0.5)
        for _ in range(200):
            feat = rng.normal(size=(1, 2, 8, 8))
            r = rng.uniform(2, 14)
            c = rng.uniform(2, 14)
            h = rng.uniform(2, 12)
            w = rng.uniform(2, 12)
            roi = RoiBox(r=r, c=c, h=h, w=w)
            got = pool.forward(feat, [roi])[0]
            want = oracle_roi_pool(feat[0], roi, 3, 3, 0.5)
            assert got == pytest.approx(want, abs=0)

    def test_backward_routes_and_conserves(self):
        rng = np.random.default_rng(1)
        pool = RoiPool(2, 2, 1.0)
        feat = rng.normal(size=(1, 3, 8, 8))
        rois = [RoiBox(r=4.0, c=4.0, h=6.0, w=6.0),
                RoiBox(r=2.5, c=5.5, h=3.0, w=3.0)]
        y = pool.forward(feat, rois)
        dy = rng.normal(size=y.shape)
        dx = pool.backward(dy)
        assert dx.sum() == pytest.approx(dy.sum())
        # gradient lands only where a forward max came from
        pooled = set(np.round(y, 12).ravel().tolist())
        for v in feat[0][np.nonzero(dx[0])]:
            assert round(float(v), 12) in pooled

    def test_degenerate_roi_clamped(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        roi = RoiBox(r=2.0, c=2.0, h=0.01, w=0.01)
        y = RoiPool(2, 2, 1.0).forward(x, [roi])
        assert np.isfinite(y).all()


class TestDropout:
    def test_statistics(self):
        rng = np.random.default_rng(0)
        x = np.ones((100, 1000))
        drop = Dropout(0.3)
        y = drop.forward(x, train=True, rng=rng)
        frac = (y == 0).mean()
        assert abs(frac - 0.3) < 0.02
        assert y[y != 0][0] == pytest.approx(1.0 / 0.7)

    def test_eval_identity(self):
        x = np.random.default_rng(1).normal(size=(10, 10))
        assert Dropout(0.5).forward(x, train=False) is x

    def test_train_needs_rng(self):
        with pytest.raises(NnetError):
            Dropout(0.5).forward(np.ones((2, 2)), train=True)

    def test_bad_rate(self):
        with pytest.raises(NnetError):
            Dropout(1.0)


class TestSgdMomentum:
    def test_zero_grads_unchanged(self):
        p = np.array([1.0, 2.0])
        sgd_momentum_step([p], [np.zeros(2)], [np.zeros(2)], lr=0.1)
        assert p.tolist() == [1.0, 2.0]

    def test_single_step(self):
        p = np.array([1.0])
        sgd_momentum_step([p], [np.array([2.0])], [np.zeros(1)], lr=0.1)
        assert p[0] == pytest.approx(1.0 - 0.1 * 2.0)

    def test_two_steps_unrolled(self):
        # v1 = g, v2 = 0.9 g + g = 1.9 g: total change lr*g*(1 + 1.9)
        p = np.array([0.0])
        opt = SgdMomentum([p], lr=0.1, momentum=0.9)
        g = np.array([1.0])
        opt.step([g])
        opt.step([g])
        assert p[0] == pytest.approx(-0.1 * 1.0 * (1.0 + 1.9))

    def test_non_finite_grad_rejected(self):
        with pytest.raises(TrainingError):
            sgd_momentum_step([np.zeros(1)], [np.array([np.nan])],
                              [np.zeros(1)], lr=0.1)


def toy_seg_data(n=4, size=16, seed=0):
    # 4 px wide dark ridges on a stride-4 grid: resolvable at the net's
    # finest skip resolution, so a toy set is fully learnable
    rng = np.random.default_rng(seed)
    images = np.full((n, 3, size, size), 0.6)
    labels = np.zeros((n, size, size), dtype=np.int64)
    for i in range(n):
        c = int(rng.integers(1, (size - 4) // 4)) * 4
        images[i, :, :, c:c + 4] = 0.1
        labels[i, :, c:c + 4] = 1
    return images, labels


class TestTrainSegmenter:
    def test_zero_epochs_params_unchanged(self):
        images, labels = toy_seg_data()
        model, losses = train_segmenter(images, labels, epochs=0, seed=3,
                                        channels=(2, 3, 4, 4))
        fresh = SegNet(seed=3, channels=(2, 3, 4, 4))
        for a, b in zip(model.param_arrays(), fresh.param_arrays()):
            assert a == pytest.approx(b)
        assert losses == []

    def test_duplicated_dataset_same_updates(self):
        # a full-batch update over the doubled dataset averages the same
        # gradient, so losses and parameters track the original exactly
        images, labels = toy_seg_data(n=4)
        m1, l1 = train_segmenter(images, labels, epochs=1, batch_size=4,
                                 seed=0, channels=(2, 3, 4, 4))
        doubled = np.concatenate([images, images])
        dlabels = np.concatenate([labels, labels])
        m2, l2 = train_segmenter(doubled, dlabels, epochs=1, batch_size=8,
                                 seed=0, channels=(2, 3, 4, 4))
        assert l1 == pytest.approx(l2)
        for a, b in zip(m1.param_arrays(), m2.param_arrays()):
            assert a == pytest.approx(b)

    def test_shape_mismatch(self):
        with pytest.raises(TrainingError):
            train_segmenter(np.zeros((2, 3, 8, 8)), np.zeros((2, 7, 7)), epochs=1)

    def test_empty_dataset(self):
        with pytest.raises(TrainingError):
            train_segmenter(np.zeros((0, 3, 8, 8)), np.zeros((0, 8, 8)), epochs=1)

    def test_overfits_toy_ridges(self):
        images, labels = toy_seg_data(n=5, size=16, seed=1)
        model, losses = train_segmenter(images, labels, epochs=100, lr=1e-1,
                                        seed=0, channels=(4, 8, 8, 8))
        acc = pixel_accuracy(model, images, labels)
        assert acc >= 0.99
        # moving-average loss decreases
        third = len(losses) // 3
        assert np.mean(losses[-third:]) < np.mean(losses[:third])


class TestModels:
    def test_forward_deterministic(self):
        rng = np.random.default_rng(0)
        x = rng.random((1, 3, 24, 24))
        rois = [RoiBox(r=12.0, c=12.0, h=16.0, w=16.0)]
        m = DetectorNet(seed=5, channels=(2, 3, 4, 4), fc_units=16)
        a = m.forward(x, rois, train=True, rng=np.random.default_rng(7))
        b = m.forward(x, rois, train=True, rng=np.random.default_rng(7))
        assert a[0] == pytest.approx(b[0]) and a[1] == pytest.approx(b[1])

    def test_segnet_output_shape(self):
        m = SegNet(seed=0, channels=(2, 3, 4, 4))
        y = m.forward(np.random.default_rng(0).random((2, 3, 24, 24)))
        assert y.shape == (2, 2, 24, 24)

    def test_detector_predict_probabilities(self):
        m = DetectorNet(seed=0, channels=(2, 3, 4, 4), fc_units=16)
        x = np.random.default_rng(1).random((1, 3, 24, 24))
        rois = [RoiBox(r=12.0, c=12.0, h=16.0, w=16.0)]
        probs, reg = m.predict(x, rois)
        assert probs.shape == (1, 2)
        assert probs.sum(axis=1) == pytest.approx(np.ones(1))
        assert reg.shape == (1, 4)

    def test_softmax_rows_sum_to_one(self):
        z = np.random.default_rng(2).normal(size=(6, 4)) * 10
        p = softmax(z, axis=1)
        assert p.sum(axis=1) == pytest.approx(np.ones(6))
        assert (p >= 0).all()
