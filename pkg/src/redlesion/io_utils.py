"""Raster and detection file I/O."""

from __future__ import annotations

import csv
import json

import numpy as np
from PIL import Image


class IoError(ValueError):
    pass


def read_image(path):
    """Read a PNG/PPM/PGM/JPEG raster as float64 (H,W) or (H,W,3) in [0,255]."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise IoError(f"cannot read image {path}: {exc}") from exc


def write_image(path, array):
    arr = np.clip(np.asarray(array, dtype=np.float64), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def read_mask(path):
    """Read a binary mask image; any value > 127 is foreground."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def write_mask(path, mask):
    write_image(path, np.asarray(mask, dtype=np.uint8) * 255)


def write_detections_jsonl(path, image_id, detections):
    with open(path, "w") as fh:
        for d in detections:
            fh.write(json.dumps({
                "image": image_id, "stream": d.stream,
                "r": round(d.box.r, 4), "c": round(d.box.c, 4),
                "h": round(d.box.h, 4), "w": round(d.box.w, 4),
                "score": round(d.score, 6),
            }, sort_keys=True) + "\n")


def write_detections_csv(path, image_id, detections):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "stream", "r", "c", "h", "w", "score"])
        for d in detections:
            writer.writerow([image_id, d.stream,
                             f"{d.box.r:.4f}", f"{d.box.c:.4f}",
                             f"{d.box.h:.4f}", f"{d.box.w:.4f}",
                             f"{d.score:.6f}"])


def write_froc_csv(path, curve):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fpi", "sensitivity"])
        for p in curve.points:
            writer.writerow([f"{p.threshold:.6f}", f"{p.fpi:.6f}", f"{p.sensitivity:.6f}"])


def write_curve_svg(path, xs, ys, title, xlabel, ylabel, logx=False):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(xs, ys, marker=".", lw=1)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
