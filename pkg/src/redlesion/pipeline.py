"""End-to-end orchestration: preprocessing, per-stream candidate generation
and detection, patch-to-frame merging, and metric computation."""

from __future__ import annotations

import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import boxes as boxlib
from .cand_large import dark_region_mask, generate_large_candidates, ridge_vessel_mask, segment_vessels
from .cand_small import generate_small_candidates
from .config import PipelineConfig
from .detector import Detection, StreamConfig, TrainingPatch, detect_stream, nms, train_stream
from .evalkit import FrocCurve, MatchPolicy, cpm_score, froc_curve, per_image_probability, roc_auc
from .imgproc import contrast_equalize, extract_fov_mask, pad_aperture
from .io_utils import write_detections_csv, write_detections_jsonl, write_froc_csv, write_curve_svg
from .manifest import ingest_ground_truth
from .patches import crop_and_resize, split_patches
from . import io_utils

STREAMS = ("MA", "HM")


class PipelineError(RuntimeError):
    pass


@dataclass
class Models:
    det_ma: object = None
    det_hm: object = None
    seg: object = None  # None selects the ridge fallback segmenter


@dataclass
class PreprocessedImage:
    frame: np.ndarray       # 700x700x3 contrast-equalized
    mask: np.ndarray        # 700x700 boolean FOV
    transform: object       # CropTransform back to original coordinates
    patches: list           # 4 RGB patches
    mask_patches: list      # 4 boolean patches
    origins: tuple


def preprocess_image(image, config: PipelineConfig):
    mask = extract_fov_mask(image)
    padded = pad_aperture(image, mask)
    ce = contrast_equalize(padded, mask, alpha=config.ce_alpha,
                           tau=config.ce_tau, gamma=config.ce_gamma)
    frame, mask700, transform = crop_and_resize(ce, mask)
    pset = split_patches(frame)
    mset = split_patches(mask700.astype(np.float64))
    return PreprocessedImage(
        frame=frame, mask=mask700, transform=transform,
        patches=pset.patches, mask_patches=[m >= 0.5 for m in mset.patches],
        origins=pset.origins,
    )


def patch_candidates(patch, mask_patch, stream, config: PipelineConfig, seg_model=None):
    """Candidate boxes for one patch and stream (un-extended)."""
    if stream == "MA":
        cmap = generate_small_candidates(
            patch, mask_patch, r=config.poly_r,
            k_max=config.k_max, min_pixels=config.min_small_px)
    else:
        green01 = patch[:, :, 1] / 255.0
        dark = dark_region_mask(green01, fov=mask_patch, threshold=config.dark_threshold)
        if seg_model is not None:
            vessels = segment_vessels(patch, seg_model)
        else:
            vessels = ridge_vessel_mask(green01, fov=mask_patch,
                                        threshold=config.ridge_threshold / 255.0,
                                        support=dark)
        cmap = generate_large_candidates(dark, vessels, min_pixels=config.min_large_px)
    return [c.box for c in cmap.components]


def normalize_patch(patch, mean):
    return patch / 255.0 - mean


def dataset_patch_mean(preprocessed):
    total, count = 0.0, 0
    for pre in preprocessed:
        for p in pre.patches:
            total += float(np.asarray(p).sum())
            count += np.asarray(p).size
    return total / (255.0 * count) if count else 0.0


def detect_image(pre: PreprocessedImage, models: Models, config: PipelineConfig,
                 mean=0.5):
    """Per-stream detections for one image, in original image coordinates."""
    out = {}
    for stream in STREAMS:
        model = models.det_ma if stream == "MA" else models.det_hm
        if model is None:
            out[stream] = []
            continue
        theta = config.theta_ma if stream == "MA" else config.theta_hm
        nms_t = config.nms_ma if stream == "MA" else config.nms_hm
        frame_dets = []
        for (r0, c0), patch, mpatch in zip(pre.origins, pre.patches, pre.mask_patches):
            cands = patch_candidates(patch, mpatch, stream, config, models.seg)
            norm = normalize_patch(patch, mean)
            dets = detect_stream(norm, cands, model, theta=theta, nms_t=nms_t,
                                 extend_px=config.box_extend, stream=stream)
            frame_dets.extend(
                Detection(box=d.box.shifted(r0, c0), score=d.score, stream=stream)
                for d in dets)
        frame_dets = nms(frame_dets, nms_t)  # dedupe across overlap zones
        tr = pre.transform
        out[stream] = [
            Detection(
                box=boxlib.RoiBox(
                    tr.row0 + d.box.r * tr.row_scale,
                    tr.col0 + d.box.c * tr.col_scale,
                    d.box.h * tr.row_scale,
                    d.box.w * tr.col_scale,
                ),
                score=d.score, stream=stream)
            for d in frame_dets
        ]
    return out


def _gt_to_frame(gt_boxes, transform):
    """Map original-coordinate boxes into the 700x700 working frame."""
    out = []
    for b in gt_boxes:
        out.append(boxlib.RoiBox(
            (b.r - transform.row0) / transform.row_scale,
            (b.c - transform.col0) / transform.col_scale,
            b.h / transform.row_scale,
            b.w / transform.col_scale,
        ))
    return out


def build_training_data(manifest, config: PipelineConfig, stream,
                        seg_model=None, log=None):
    """TrainingPatch list for one stream from a manifest with ground truth.

    Candidates are generated exactly as at inference time; boxes stay tight
    (they are extended only when pooled); gt boxes are mapped into patch
    coordinates.
    """
    pres, gt_frames = [], []
    for entry in manifest.entries:
        img = io_utils.read_image(manifest.resolve(entry.image))
        pre = preprocess_image(img, config)
        gt_path = entry.ma_gt if stream == "MA" else entry.hm_gt
        gt = []
        if gt_path:
            lesions = ingest_ground_truth(manifest.resolve(gt_path),
                                          entry.gt_format, lesion_class=stream,
                                          image_shape=img.shape)
            gt = _gt_to_frame([l.box for l in lesions], pre.transform)
        pres.append(pre)
        gt_frames.append(gt)
        if log:
            log(f"preprocessed {entry.image}: {len(gt)} {stream} lesions")

    mean = dataset_patch_mean(pres) if config.normalization == "overall-mean" else None
    data = []
    for pre, gt_frame in zip(pres, gt_frames):
        for (r0, c0), patch, mpatch in zip(pre.origins, pre.patches, pre.mask_patches):
            cands = patch_candidates(patch, mpatch, stream, config, seg_model)
            if not cands:
                continue
            patch_gt = []
            for b in gt_frame:
                shifted = b.shifted(-r0, -c0)
                if 0 <= shifted.r < patch.shape[0] and 0 <= shifted.c < patch.shape[1]:
                    patch_gt.append(shifted)
            m = mean if mean is not None else float(patch.mean()) / 255.0
            data.append(TrainingPatch(
                image=normalize_patch(patch, m),
                candidates=cands,
                gt=patch_gt,
            ))
    return data


def train_detector_stream(manifest, config: PipelineConfig, stream,
                          seg_model=None, log=None):
    data = build_training_data(manifest, config, stream, seg_model, log=log)
    if not data:
        raise PipelineError(f"train_detector_stream: no usable {stream} training patches")
    sc = StreamConfig(
        theta=config.theta_ma if stream == "MA" else config.theta_hm,
        nms_iou=config.nms_ma if stream == "MA" else config.nms_hm,
        dropout=config.drop_ma if stream == "MA" else config.drop_hm,
        lr=config.detector_lr, momentum=config.momentum,
        n_images=config.n_images, r_rois=config.r_rois,
        pos_fraction=config.pos_fraction, iterations=config.iterations,
        augment=config.augment, seed=config.seed, extend_px=config.box_extend,
    )
    return train_stream(data, sc)


def run_pipeline(manifest, config: PipelineConfig, models: Models, out_dir,
                 policy=None, thresholds=None, log=sys.stderr):
    """Process every manifest entry; write detections and, when ground truth
    is present, FROC/CPM/ROC metrics. Returns a summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    config.validate()
    policy = policy or MatchPolicy()

    def say(msg):
        if log:
            print(msg, file=log)

    pres, ok_entries, failures = [], [], []
    for entry in manifest.entries:
        t0 = time.time()
        try:
            img = io_utils.read_image(manifest.resolve(entry.image))
            pres.append(preprocess_image(img, config))
            ok_entries.append((entry, img.shape))
            say(f"[preprocess] {entry.image} ({time.time() - t0:.1f}s)")
        except Exception as exc:  # per-image failures are logged and skipped
            failures.append(entry.image)
            say(f"[error] {entry.image}: {exc}")

    mean = dataset_patch_mean(pres) if config.normalization == "overall-mean" else 0.5

    per_image = []
    for pre, (entry, shape) in zip(pres, ok_entries):
        t0 = time.time()
        m = mean if config.normalization == "overall-mean" else \
            float(np.mean([p.mean() for p in pre.patches])) / 255.0
        dets = detect_image(pre, models, config, mean=m)
        image_id = os.path.splitext(os.path.basename(entry.image))[0]
        merged = dets["MA"] + dets["HM"]
        write_detections_jsonl(os.path.join(out_dir, f"{image_id}.jsonl"), image_id, merged)
        write_detections_csv(os.path.join(out_dir, f"{image_id}.csv"), image_id, merged)
        gt = {}
        for stream, path in (("MA", entry.ma_gt), ("HM", entry.hm_gt)):
            if path:
                lesions = ingest_ground_truth(manifest.resolve(path), entry.gt_format,
                                              lesion_class=stream, image_shape=shape)
                gt[stream] = [l.box for l in lesions]
        per_image.append({"entry": entry, "detections": dets, "gt": gt})
        say(f"[detect] {entry.image}: MA={len(dets['MA'])} HM={len(dets['HM'])} "
            f"({time.time() - t0:.1f}s)")

    summary = {"images": len(per_image), "failures": failures, "streams": {}}
    for stream in STREAMS:
        with_gt = [r for r in per_image if stream in r["gt"]]
        total_lesions = sum(len(r["gt"][stream]) for r in with_gt)
        if not with_gt or total_lesions == 0:
            say(f"[eval] {stream}: no ground truth, metrics skipped")
            continue
        curve = froc_curve([r["detections"][stream] for r in with_gt],
                           [r["gt"][stream] for r in with_gt],
                           policy=policy, thresholds=thresholds)
        cpm = cpm_score(curve)
        write_froc_csv(os.path.join(out_dir, f"froc_{stream.lower()}.csv"), curve)
        write_curve_svg(os.path.join(out_dir, f"froc_{stream.lower()}.svg"),
                        [p.fpi for p in curve.points],
                        [p.sensitivity for p in curve.points],
                        f"FROC ({stream})", "false positives per image", "sensitivity")
        summary["streams"][stream] = {"cpm": cpm,
                                      "lesions": total_lesions}
        say(f"[eval] {stream}: CPM = {cpm:.4f} over {total_lesions} lesions")

    labels = [r["entry"].label == "DR" for r in per_image]
    if len(set(labels)) == 2:
        probs = [per_image_probability(r["detections"]["MA"] + r["detections"]["HM"])
                 for r in per_image]
        auc = roc_auc(probs, labels)
        summary["auc"] = auc
        xs = sorted(probs)
        write_curve_svg(os.path.join(out_dir, "roc.svg"), xs,
                        np.linspace(0, 1, len(xs)), "score distribution",
                        "p(I)", "quantile")
        say(f"[eval] DR screening AUC = {auc:.4f}")

    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary
