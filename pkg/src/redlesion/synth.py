"""Synthetic fundus-like image generator.

Produces desk-scale test images: a circular field of view on a dark frame,
textured reddish background with slow illumination drift, vessel-like
curvilinear ridges, small dark dots standing in for microaneurysms and
larger irregular blobs standing in for hemorrhages, with exact ground-truth
boxes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import boxes
from .imgproc import gaussian_blur
from .io_utils import write_image
from .manifest import DatasetManifest, ManifestEntry, save_manifest


@dataclass
class SyntheticImage:
    image: np.ndarray          # (H,W,3) uint8
    fov: np.ndarray            # boolean
    vessels: np.ndarray        # boolean
    ma_boxes: list = field(default_factory=list)
    hm_boxes: list = field(default_factory=list)

    @property
    def has_lesions(self):
        return bool(self.ma_boxes or self.hm_boxes)


def _disk(shape, r, c, radius):
    rr, cc = np.ogrid[:shape[0], :shape[1]]
    return (rr - r) ** 2 + (cc - c) ** 2 <= radius ** 2


def _illumination(shape, rng):
    field_lo = rng.normal(0.0, 1.0, size=(8, 8))
    ys = np.linspace(0, 7, shape[0])
    xs = np.linspace(0, 7, shape[1])
    yi = np.clip(ys.astype(int), 0, 6)
    xi = np.clip(xs.astype(int), 0, 6)
    fy = ys - yi
    fx = xs - xi
    a = field_lo[yi][:, xi]
    b = field_lo[yi][:, xi + 1]
    c = field_lo[yi + 1][:, xi]
    d = field_lo[yi + 1][:, xi + 1]
    interp = (a * (1 - fy)[:, None] * (1 - fx)[None, :] + b * (1 - fy)[:, None] * fx[None, :]
              + c * fy[:, None] * (1 - fx)[None, :] + d * fy[:, None] * fx[None, :])
    return 1.0 + 0.08 * interp


def _draw_vessels(depth, fov, rng, n_vessels, size):
    """Random smooth curvilinear ridges; returns the vessel support mask."""
    support = np.zeros(depth.shape, dtype=bool)
    cr, cc = size / 2.0, size / 2.0
    for _ in range(n_vessels):
        angle = rng.uniform(0, 2 * np.pi)
        r = cr + rng.uniform(-0.1, 0.1) * size
        c = cc + rng.uniform(-0.1, 0.1) * size
        heading = angle
        width = rng.integers(2, 4)
        strength = rng.uniform(45, 70)
        curvature = rng.uniform(-0.03, 0.03)
        for _ in range(int(size * 0.8)):
            rr, cc2 = int(round(r)), int(round(c))
            if not (0 <= rr < size and 0 <= cc2 < size) or not fov[rr, cc2]:
                break
            mask = _disk(depth.shape, rr, cc2, width)
            depth[mask] = np.maximum(depth[mask], strength)
            support |= mask
            heading += curvature + rng.normal(0, 0.02)
            r += np.sin(heading) * 2.0
            c += np.cos(heading) * 2.0
    return support


def _place_center(rng, size, margin, occupied, min_gap, clearance=None,
                  min_clear=0.0, tries=50):
    for _ in range(tries):
        r = rng.uniform(margin, size - margin)
        c = rng.uniform(margin, size - margin)
        if ((r - size / 2) ** 2 + (c - size / 2) ** 2) > (size / 2 - margin) ** 2:
            continue
        if clearance is not None and clearance[int(r), int(c)] <= min_clear:
            continue
        if all((r - orr) ** 2 + (c - occ) ** 2 > min_gap ** 2 for orr, occ in occupied):
            occupied.append((r, c))
            return r, c
    return None


def make_image(rng, size=700, with_lesions=True, n_ma=(3, 7), n_hm=(2, 5),
               n_vessels=(4, 7)):
    """Generate one synthetic fundus-like image with exact ground truth."""
    radius = int(size * 0.47)
    fov = _disk((size, size), size // 2, size // 2, radius)

    illum = _illumination((size, size), rng)
    base_r = 185.0 * illum
    base_g = 125.0 * illum
    base_b = 60.0 * illum

    # depth = how much darker than background a pixel is (applied to R and G)
    depth = np.zeros((size, size))
    vessels = _draw_vessels(depth, fov, rng, int(rng.integers(*n_vessels)), size)

    ma_boxes, hm_boxes = [], []
    occupied = []
    margin = size * 0.1
    if with_lesions:
        # lesions stay clear of vessels so each has its own dark component
        clearance = ndimage.distance_transform_edt(~vessels)
        for _ in range(int(rng.integers(*n_ma))):
            pos = _place_center(rng, size, margin, occupied, min_gap=40,
                                clearance=clearance, min_clear=12.0)
            if pos is None:
                continue
            r, c = pos
            d = rng.uniform(5, 13)
            mask = _disk((size, size), r, c, d / 2.0)
            depth[mask] = np.maximum(depth[mask], rng.uniform(70, 95))
            ma_boxes.append(boxes.RoiBox(r, c, d + 2, d + 2))
        for _ in range(int(rng.integers(*n_hm))):
            pos = _place_center(rng, size, margin, occupied, min_gap=60,
                                clearance=clearance, min_clear=22.0)
            if pos is None:
                continue
            r, c = pos
            blob = np.zeros((size, size), dtype=bool)
            n_lobes = int(rng.integers(3, 7))
            lobe_r = rng.uniform(6, 9)
            for _ in range(n_lobes):
                dr = rng.uniform(-6, 6)
                dc = rng.uniform(-6, 6)
                blob |= _disk((size, size), r + dr, c + dc, lobe_r)
            depth[blob] = np.maximum(depth[blob], rng.uniform(70, 95))
            rows = np.where(blob.any(axis=1))[0]
            cols = np.where(blob.any(axis=0))[0]
            hm_boxes.append(boxes.from_slices(rows[0], rows[-1], cols[0], cols[-1]))

    depth = gaussian_blur(depth, 1.0)
    red = base_r - 0.5 * depth + rng.normal(0, 2.0, (size, size))
    green = base_g - depth + rng.normal(0, 2.0, (size, size))
    blue = base_b + rng.normal(0, 2.0, (size, size))
    img = np.dstack([red, green, blue])
    img[~fov] = 0.0
    img = np.clip(img, 0, 255).astype(np.uint8)
    return SyntheticImage(image=img, fov=fov, vessels=vessels,
                          ma_boxes=ma_boxes, hm_boxes=hm_boxes)


def generate_dataset(out_dir, n_images, lesion_fraction=0.5, seed=0, size=700):
    """Write a synthetic dataset (images, box-json ground truth, manifest).

    Returns the manifest path. Images beyond the lesion fraction are clean
    (vessels only) and labeled noDR.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_lesion = int(round(n_images * lesion_fraction))
    entries = []
    for i in range(n_images):
        with_lesions = i < n_lesion
        sample = make_image(rng, size=size, with_lesions=with_lesions)
        name = f"img{i:03d}"
        write_image(os.path.join(out_dir, f"{name}.png"), sample.image)
        entry = ManifestEntry(image=f"{name}.png",
                              label="DR" if sample.has_lesions else "noDR")
        for tag, bxs in (("ma", sample.ma_boxes), ("hm", sample.hm_boxes)):
            gt_path = f"{name}_{tag}.json"
            with open(os.path.join(out_dir, gt_path), "w") as fh:
                json.dump({"boxes": [[b.r, b.c, b.h, b.w] for b in bxs]}, fh)
            if tag == "ma":
                entry.ma_gt = gt_path
            else:
                entry.hm_gt = gt_path
        entries.append(entry)
    manifest_path = os.path.join(out_dir, "manifest.json")
    save_manifest(manifest_path, DatasetManifest(entries=entries, root=out_dir))
    return manifest_path
