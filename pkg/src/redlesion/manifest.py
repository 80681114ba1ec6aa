"""Dataset manifests and ground-truth ingestion."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import boxes
from .cand_small import components_from_mask
from .io_utils import IoError, read_mask


class ManifestError(ValueError):
    pass


@dataclass
class GroundTruthLesion:
    box: boxes.RoiBox
    lesion_class: str  # MA | HM


@dataclass
class ManifestEntry:
    image: str
    ma_gt: str | None = None
    hm_gt: str | None = None
    gt_format: str = "box-json"  # or "mask-png"
    label: str = "noDR"          # DR | noDR


@dataclass
class DatasetManifest:
    entries: list
    root: str = "."

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.root, path)


def load_manifest(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot load manifest {path}: {exc}") from exc
    entries = []
    for i, e in enumerate(raw.get("entries", [])):
        if "image" not in e:
            raise ManifestError(f"{path}: entry {i} missing 'image'")
        entries.append(ManifestEntry(
            image=e["image"], ma_gt=e.get("ma_gt"), hm_gt=e.get("hm_gt"),
            gt_format=e.get("gt_format", "box-json"),
            label=e.get("label", "noDR"),
        ))
    manifest = DatasetManifest(entries=entries, root=os.path.dirname(os.path.abspath(path)))
    for e in entries:
        for p in (e.image, e.ma_gt, e.hm_gt):
            if p and not os.path.exists(manifest.resolve(p)):
                raise ManifestError(f"{path}: referenced file missing: {p}")
        if e.label not in ("DR", "noDR"):
            raise ManifestError(f"{path}: bad label {e.label!r} for {e.image}")
    return manifest


def save_manifest(path, manifest):
    payload = {"entries": [
        {k: v for k, v in dict(
            image=e.image, ma_gt=e.ma_gt, hm_gt=e.hm_gt,
            gt_format=e.gt_format, label=e.label).items() if v is not None}
        for e in manifest.entries
    ]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def ingest_ground_truth(path, fmt, lesion_class="MA", image_shape=None):
    """Load ground-truth lesions from a mask PNG or a box-json file.

    mask-png: 8-connected components of the foreground become lesion boxes.
    box-json: {"boxes": [[r, c, h, w], ...]}. Boxes are clamped to the image
    bounds when image_shape is given.
    """
    if fmt == "mask-png":
        try:
            mask = read_mask(path)
        except (OSError, IoError) as exc:
            raise ManifestError(f"cannot read gt mask {path}: {exc}") from exc
        cmap = components_from_mask(mask)
        out = [GroundTruthLesion(box=c.box, lesion_class=lesion_class)
               for c in cmap.components]
    elif fmt == "box-json":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"cannot read gt boxes {path}: {exc}") from exc
        out = []
        for i, b in enumerate(raw.get("boxes", [])):
            if len(b) != 4:
                raise ManifestError(f"{path}: box {i} must be [r, c, h, w]")
            out.append(GroundTruthLesion(
                box=boxes.RoiBox(*map(float, b)), lesion_class=lesion_class))
    else:
        raise ManifestError(f"unknown ground-truth format {fmt!r}")

    if image_shape is not None:
        h, w = image_shape[:2]
        clamped = []
        for g in out:
            try:
                clamped.append(GroundTruthLesion(
                    box=g.box.clamped(h, w), lesion_class=g.lesion_class))
            except ValueError as exc:
                raise ManifestError(f"{path}: box outside image bounds") from exc
        out = clamped
    return out
