"""FOV cropping, resize to the 700x700 working frame, 2x2 overlapped patch
extraction, and pixelwise-max patch merging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FRAME_SIZE = 700
PATCH_SIZE = 500
PATCH_ORIGINS = ((0, 0), (0, 200), (200, 0), (200, 200))


class PatchError(ValueError):
    pass


@dataclass
class CropTransform:
    """Maps 700x700 frame coordinates back to the original image."""
    row0: float
    col0: float
    row_scale: float  # original rows per frame row
    col_scale: float

    def to_original(self, r, c):
        return self.row0 + r * self.row_scale, self.col0 + c * self.col_scale


@dataclass
class PatchSet:
    patches: list            # 4 arrays, 500x500(xC)
    origins: tuple = PATCH_ORIGINS
    stream_tag: str = "none"  # MA | HM | none


def bilinear_resize(image, out_h, out_w):
    """Bilinear resize with half-pixel sampling and edge clamping."""
    img = np.asarray(image, dtype=np.float64)
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()

    def axis_coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    r_lo, r_hi, r_f = axis_coords(out_h, in_h)
    c_lo, c_hi, c_f = axis_coords(out_w, in_w)
    r_f = r_f[:, None] if img.ndim == 2 else r_f[:, None, None]
    c_f = c_f[None, :] if img.ndim == 2 else c_f[None, :, None]

    top = img[r_lo][:, c_lo] * (1 - c_f) + img[r_lo][:, c_hi] * c_f
    bot = img[r_hi][:, c_lo] * (1 - c_f) + img[r_hi][:, c_hi] * c_f
    return top * (1 - r_f) + bot * r_f


def crop_and_resize(image, mask, size=FRAME_SIZE):
    """Crop to the mask's foreground bounding box and resize to size x size.

    Returns (image, mask, transform); the mask is transformed identically
    (bilinear on the 0/1 raster, re-thresholded at 0.5).
    """
    mask = np.asarray(mask, dtype=bool)
    rows = np.where(mask.any(axis=1))[0]
    cols = np.where(mask.any(axis=0))[0]
    if rows.size == 0:
        raise PatchError("crop_and_resize: empty mask")
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1

    img = np.asarray(image, dtype=np.float64)[r0:r1, c0:c1]
    msk = mask[r0:r1, c0:c1].astype(np.float64)
    out_img = bilinear_resize(img, size, size)
    out_mask = bilinear_resize(msk, size, size) >= 0.5
    transform = CropTransform(
        row0=float(r0), col0=float(c0),
        row_scale=(r1 - r0) / float(size), col_scale=(c1 - c0) / float(size),
    )
    return out_img, out_mask, transform


def split_patches(image, stream_tag="none", patch=PATCH_SIZE):
    """Split a 700x700 frame into the 4 fixed overlapped 500x500 patches."""
    img = np.asarray(image)
    if img.shape[:2] != (FRAME_SIZE, FRAME_SIZE):
        raise PatchError(f"split_patches: expected {FRAME_SIZE}x{FRAME_SIZE}, got {img.shape[:2]}")
    patches = [np.array(img[r0:r0 + patch, c0:c0 + patch]) for r0, c0 in PATCH_ORIGINS]
    return PatchSet(patches=patches, origins=PATCH_ORIGINS, stream_tag=stream_tag)


def merge_patches(ma_patches: PatchSet, hm_patches: PatchSet):
    """Merge per-stream score patches into one 700x700 score image.

    Per-origin max across the two streams, then pixelwise max across the
    overlapped patches.
    """
    if ma_patches.origins != hm_patches.origins:
        raise PatchError("merge_patches: misaligned patch origins")
    out = np.zeros((FRAME_SIZE, FRAME_SIZE), dtype=np.float64)
    for (r0, c0), pm, ph in zip(ma_patches.origins, ma_patches.patches, hm_patches.patches):
        merged = np.maximum(np.asarray(pm, dtype=np.float64), np.asarray(ph, dtype=np.float64))
        h, w = merged.shape[:2]
        region = out[r0:r0 + h, c0:c0 + w]
        np.maximum(region, merged, out=region)
    return out
