"""Two-stream red-lesion detection head.

Candidate labeling against ground truth, minibatch sampling, the joint
classification + box-regression loss, the per-stream training loop with
rotation augmentation, and inference with score thresholding and NMS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import RoiBox, decode_offsets, encode_offsets, iou
from .nnet import DetectorNet, SgdMomentum, TrainingError
from .nnet.layers import softmax

BOX_EXTEND_PX = 10
ROTATION_ANGLES = (-45.0, 79.0, 90.0)


@dataclass
class LabeledRoi:
    box: RoiBox                 # tight candidate box; extended only for pooling
    u: int                      # 1 = red lesion, 0 = background
    v: tuple = (0.0, 0.0, 0.0, 0.0)  # gt offsets, meaningful when u=1


@dataclass
class Detection:
    box: RoiBox
    score: float
    stream: str = "MA"


@dataclass
class TrainingPatch:
    """One training patch: normalized image (H,W,3), candidate boxes
    (tight, un-extended), and ground-truth lesion boxes."""
    image: np.ndarray
    candidates: list
    gt: list


def label_candidates(candidates, gt, iou_threshold=0.5):
    """Label each candidate box against the best-IoU ground truth.

    u=1 with encoded offsets when the best IoU exceeds the threshold."""
    labeled = []
    for cand in candidates:
        best, best_iou = None, 0.0
        for g in gt:
            val = iou(cand, g)
            if val > best_iou:
                best, best_iou = g, val
        if best is not None and best_iou > iou_threshold:
            labeled.append(LabeledRoi(box=cand, u=1, v=encode_offsets(cand, best)))
        else:
            labeled.append(LabeledRoi(box=cand, u=0))
    return labeled


def smooth_l1(x):
    ax = abs(x)
    return 0.5 * x * x if ax < 1.0 else ax - 0.5


def smooth_l1_grad(x):
    return x if abs(x) < 1.0 else math.copysign(1.0, x)


def multitask_loss(p_r, u, t, v):
    """Cross-entropy of the true class plus, for lesions, the smooth-L1
    localization term over the four offsets."""
    p_true = p_r[1] if u == 1 else p_r[0]
    loss = -math.log(max(p_true, 1e-12))
    if u >= 1:
        loss += sum(smooth_l1(ti - vi) for ti, vi in zip(t, v))
    return loss


def batch_loss_and_grads(cls_logits, reg, labels, targets):
    """Mean per-ROI joint loss and its gradients w.r.t. head outputs.

    labels: (R,) ints; targets: (R,4) gt offsets (zeros for negatives).
    Class index 1 is the lesion class.
    """
    r = cls_logits.shape[0]
    probs = softmax(cls_logits, axis=1)
    picked = probs[np.arange(r), labels]
    loss = -np.log(np.maximum(picked, 1e-12)).sum()
    dlogits = probs.copy()
    dlogits[np.arange(r), labels] -= 1.0
    dreg = np.zeros_like(reg)
    pos = labels == 1
    if pos.any():
        diff = reg[pos] - targets[pos]
        small = np.abs(diff) < 1.0
        loss += np.where(small, 0.5 * diff * diff, np.abs(diff) - 0.5).sum()
        dreg[pos] = np.where(small, diff, np.sign(diff))
    return loss / r, dlogits / r, dreg / r


def sample_minibatch(pools, n_images=2, r_rois=64, pos_fraction=0.25, rng=None):
    """Sample R ROIs from N images out of per-image labeled-ROI pools.

    Positives are capped at pos_fraction * R; the remainder is filled with
    negatives. Within a stratum sampling is without replacement, falling
    back to replacement only when the stratum cannot fill its quota.
    Returns (image_indices, list of per-image LabeledRoi lists).
    """
    rng = rng or np.random.default_rng(0)
    nonempty = [i for i, pool in enumerate(pools) if pool]
    if not nonempty:
        raise TrainingError("sample_minibatch: no image has candidates")
    n_images = min(n_images, len(nonempty))
    chosen = list(rng.choice(len(nonempty), size=n_images, replace=False))
    chosen = [nonempty[i] for i in chosen]

    tagged = []
    for img in chosen:
        tagged.extend((img, roi) for roi in pools[img])
    pos = [t for t in tagged if t[1].u == 1]
    neg = [t for t in tagged if t[1].u == 0]

    n_pos = min(len(pos), int(round(pos_fraction * r_rois)))
    n_neg = r_rois - n_pos

    def draw(stratum, count):
        if not stratum:
            return []
        if count <= len(stratum):
            idx = rng.choice(len(stratum), size=count, replace=False)
        else:
            idx = rng.choice(len(stratum), size=count, replace=True)
        return [stratum[i] for i in idx]

    picked = draw(pos, n_pos) + draw(neg, n_neg if neg else 0)
    if len(picked) < r_rois:  # one stratum empty: fill from the other
        extra = r_rois - len(picked)
        filler = pos if not neg else neg
        picked += draw(filler, extra)

    per_image = {img: [] for img in chosen}
    for img, roi in picked:
        per_image[img].append(roi)
    chosen = [img for img in chosen if per_image[img]]
    return chosen, [per_image[img] for img in chosen]


def rotate_patch_nn(image, angle_deg):
    """Rotate about the patch center with nearest-neighbor interpolation;
    samples falling outside keep value 0."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    theta = math.radians(angle_deg)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc_idx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dr, dc = rr - cr, cc_idx - cc
    # inverse rotation: source coordinates for each output pixel
    src_r = np.round(cr + math.cos(theta) * dr - math.sin(theta) * dc).astype(int)
    src_c = np.round(cc + math.sin(theta) * dr + math.cos(theta) * dc).astype(int)
    valid = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    out = np.zeros_like(img)
    out[valid] = img[src_r[valid], src_c[valid]]
    return out


def rotate_box(box, angle_deg, height, width):
    """Axis-aligned bounding box of the rotated corners, or None if the
    rotated box falls outside the frame."""
    theta = math.radians(angle_deg)
    cr, cc = (height - 1) / 2.0, (width - 1) / 2.0
    r0, c0, r1, c1 = box.edges()
    corners = [(r0, c0), (r0, c1), (r1, c0), (r1, c1)]
    # forward rotation of corner coordinates (inverse of the sampling map)
    rot = [(cr + math.cos(theta) * (r - cr) + math.sin(theta) * (c - cc),
            cc - math.sin(theta) * (r - cr) + math.cos(theta) * (c - cc))
           for r, c in corners]
    rs = [p[0] for p in rot]
    cs = [p[1] for p in rot]
    nr0, nr1 = max(min(rs), 0.0), min(max(rs), float(height))
    nc0, nc1 = max(min(cs), 0.0), min(max(cs), float(width))
    if nr1 - nr0 <= 1.0 or nc1 - nc0 <= 1.0:
        return None
    return RoiBox((nr0 + nr1) / 2.0, (nc0 + nc1) / 2.0, nr1 - nr0, nc1 - nc0)


@dataclass
class StreamConfig:
    theta: float = 0.6
    nms_iou: float = 0.9
    dropout: float = 0.8
    lr: float = 1e-3
    momentum: float = 0.9
    n_images: int = 2
    r_rois: int = 64
    pos_fraction: float = 0.25
    iterations: int = 500
    augment: bool = True
    seed: int = 0
    channels: tuple = (16, 32, 64, 64)
    fc_units: int = 256
    extend_px: int = BOX_EXTEND_PX


def _to_input(image):
    return np.ascontiguousarray(np.asarray(image, dtype=np.float64).transpose(2, 0, 1))[None]


def train_stream(data, config: StreamConfig, model=None, log_every=0):
    """Train one detection stream on labeled candidate data.

    data: list of TrainingPatch. Minimizes the joint loss with SGD momentum;
    the learning rate decays x0.1 at 2/3 of the iterations. Rotation
    augmentation draws an angle per sampled image.
    """
    if not data:
        raise TrainingError("train_stream: no training data")
    if model is None:
        model = DetectorNet(seed=config.seed, channels=config.channels,
                            fc_units=config.fc_units, dropout=config.dropout)
    rng = np.random.default_rng(config.seed + 1)
    opt = SgdMomentum(model.param_arrays(), lr=config.lr, momentum=config.momentum)

    base_pools = [label_candidates(d.candidates, d.gt) for d in data]
    decay_at = (2 * config.iterations) // 3
    losses = []
    for it in range(config.iterations):
        if it == decay_at:
            opt.lr = config.lr * 0.1
        angles = {}
        pools = base_pools
        if config.augment:
            pools = []
            for i, d in enumerate(data):
                angle = rng.choice([0.0, *ROTATION_ANGLES])
                angles[i] = angle
                if angle == 0.0:
                    pools.append(base_pools[i])
                else:
                    h, w = d.image.shape[:2]
                    cands = [rotate_box(b, angle, h, w) for b in d.candidates]
                    gts = [rotate_box(b, angle, h, w) for b in d.gt]
                    cands = [b for b in cands if b is not None]
                    gts = [b for b in gts if b is not None]
                    pools.append(label_candidates(cands, gts))

        img_idx, roi_lists = sample_minibatch(
            pools, config.n_images, config.r_rois, config.pos_fraction, rng)

        total_loss = 0.0
        grad_accum = None
        n_rois_total = sum(len(rois) for rois in roi_lists)
        for img, rois in zip(img_idx, roi_lists):
            image = data[img].image
            if config.augment and angles.get(img, 0.0) != 0.0:
                image = rotate_patch_nn(image, angles[img])
            x = _to_input(image)
            h, w = image.shape[:2]
            boxes_in = [r.box.extended(config.extend_px).clamped(h, w) for r in rois]
            labels = np.array([r.u for r in rois])
            targets = np.array([r.v for r in rois])
            logits, reg = model.forward(x, boxes_in, train=True, rng=rng)
            loss, dlogits, dreg = batch_loss_and_grads(logits, reg, labels, targets)
            weight = len(rois) / n_rois_total
            total_loss += loss * weight
            model.backward(dlogits * weight, dreg * weight)
            grads = [g.copy() for g in model.grad_arrays()]
            if grad_accum is None:
                grad_accum = grads
            else:
                for a, g in zip(grad_accum, grads):
                    a += g
        opt.step(grad_accum)
        losses.append(total_loss)
        if log_every and (it + 1) % log_every == 0:
            print(f"iter {it + 1}: loss {total_loss:.4f}")
    model.losses = losses
    return model


def nms(detections, iou_threshold):
    """Greedy NMS: keep by descending score, suppress IoU > threshold
    against any kept box. Ties break on (score, smaller r, smaller c)."""
    order = sorted(detections, key=lambda d: (-d.score, d.box.r, d.box.c))
    kept = []
    for det in order:
        if all(iou(det.box, k.box) <= iou_threshold for k in kept):
            kept.append(det)
    return kept


def detect_stream(patch, candidates, model, theta=0.6, nms_t=0.9,
                  extend_px=BOX_EXTEND_PX, stream="MA"):
    """Score all candidates of a patch in one backbone pass.

    Candidate boxes are extended, ROI-pooled and classified; regression
    offsets refine the boxes; detections with lesion probability >= theta
    survive NMS.
    """
    if not candidates:
        return []
    h, w = patch.shape[:2]
    rois = [b.extended(extend_px).clamped(h, w) for b in candidates]
    x = _to_input(patch)
    probs, reg = model.predict(x, rois)
    detections = []
    for i, cand in enumerate(candidates):
        score = float(probs[i, 1])
        if score < theta:
            continue
        box = decode_offsets(cand, reg[i])
        try:
            box = box.clamped(h, w)
        except ValueError:
            continue
        detections.append(Detection(box=box, score=score, stream=stream))
    return nms(detections, nms_t)
