"""Preprocessing primitives for fundus images.

FOV mask extraction via fuzzy c-means on the red channel, aperture padding,
Gaussian filtering, and contrast equalization. All functions are pure and
operate on float arrays: images are (H, W) or (H, W, C) with raw values in
[0, 255], masks are boolean (H, W).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

EIGHT_CONN = np.ones((3, 3), dtype=bool)


class ImgprocError(ValueError):
    pass


class MaskExtractionError(ImgprocError):
    pass


@dataclass
class FcmResult:
    centers: np.ndarray      # (k,)
    memberships: np.ndarray  # (n, k), rows sum to 1


def fcm_cluster(samples, k, fuzzifier=2.0, tol=1e-5, max_iter=300):
    """Fuzzy c-means on scalar samples.

    Returns an FcmResult with k centers and per-sample memberships.
    Centers are initialized at evenly spaced quantiles, so the result is
    deterministic.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ImgprocError("fcm_cluster: empty sample set")
    if k < 1:
        raise ImgprocError("fcm_cluster: k must be >= 1")
    if fuzzifier <= 1.0:
        raise ImgprocError("fcm_cluster: fuzzifier must be > 1")
    distinct = np.unique(x)
    if k > distinct.size:
        raise ImgprocError(
            f"fcm_cluster: k={k} exceeds {distinct.size} distinct sample value(s)"
        )

    # Quantile init keeps the run deterministic and well spread.
    qs = (np.arange(k) + 0.5) / k
    centers = np.quantile(distinct, qs)

    expo = 1.0 / (fuzzifier - 1.0)
    memberships = None
    for _ in range(max_iter):
        d2 = (x[:, None] - centers[None, :]) ** 2
        memberships = _memberships_from_dist(d2, expo)
        um = memberships ** fuzzifier
        new_centers = (um * x[:, None]).sum(axis=0) / um.sum(axis=0)
        shift = np.max(np.abs(new_centers - centers))
        centers = new_centers
        if shift < tol:
            break
    d2 = (x[:, None] - centers[None, :]) ** 2
    memberships = _memberships_from_dist(d2, expo)
    return FcmResult(centers=centers, memberships=memberships)


def _memberships_from_dist(d2, expo):
    zero = d2 <= 0.0
    any_zero = zero.any(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = d2 ** -expo
        memberships = inv / inv.sum(axis=1, keepdims=True)
    if any_zero.any():
        rows = np.where(any_zero)[0]
        memberships[rows] = 0.0
        memberships[rows] = zero[rows] / zero[rows].sum(axis=1, keepdims=True)
    return memberships


def label_components(mask, connectivity=8):
    """Connected components of a boolean mask. Returns (labels, count)."""
    structure = EIGHT_CONN if connectivity == 8 else None
    labels, n = ndimage.label(mask, structure=structure)
    return labels, n


def extract_fov_mask(image):
    """FOV mask from the red channel.

    The red channel (scaled to [0, 1]) is contrast-enhanced with a power
    transform (power 0.25) and clustered into 2 groups with fuzzy c-means;
    the cluster with the brighter center is foreground. Only the largest
    connected component is kept.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImgprocError("extract_fov_mask: expected a 3-channel image")
    red = img[:, :, 0] / 255.0
    if np.unique(red).size < 2:
        raise MaskExtractionError("extract_fov_mask: single intensity level, no separable clusters")
    enhanced = np.power(np.clip(red, 0.0, 1.0), 0.25)

    res = fcm_cluster(enhanced.ravel(), k=2)
    bright = int(np.argmax(res.centers))
    fg = (np.argmax(res.memberships, axis=1) == bright).reshape(red.shape)
    if not fg.any():
        raise MaskExtractionError("extract_fov_mask: empty foreground")

    labels, n = label_components(fg)
    if n > 1:
        areas = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
        fg = labels == (1 + int(np.argmax(areas)))
    return fg


def fov_width(mask):
    """Width in pixels of the FOV foreground bounding box."""
    cols = np.where(mask.any(axis=0))[0]
    if cols.size == 0:
        raise ImgprocError("fov_width: empty mask")
    return int(cols[-1] - cols[0] + 1)


def pad_aperture(image, mask, width=None):
    """Simulate a wider aperture by filling a band outside the FOV.

    Runs `width` border-fill iterations (default (3/30) * FOV width); each
    iteration fills the ring of not-yet-valid pixels that touch valid ones
    with the mean of their valid 8-neighbors. In-FOV pixels are unchanged.
    """
    img = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if img.shape[:2] != mask.shape:
        raise ImgprocError("pad_aperture: image/mask dimension mismatch")
    if width is None:
        width = int(round(fov_width(mask) * 3.0 / 30.0))

    single = img.ndim == 2
    work = img[:, :, None].copy() if single else img.copy()
    valid = mask.copy()
    for _ in range(width):
        ring = ndimage.binary_dilation(valid, structure=EIGHT_CONN) & ~valid
        if not ring.any():
            break
        vsum = np.zeros_like(work)
        vcnt = np.zeros(valid.shape, dtype=np.float64)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                sv = _shift2d(valid.astype(np.float64), dr, dc)
                vsum += _shift2d(work * valid[:, :, None], dr, dc)
                vcnt += sv
        rows, cols = np.where(ring & (vcnt > 0))
        work[rows, cols, :] = vsum[rows, cols, :] / vcnt[rows, cols, None]
        valid[rows, cols] = True
    return work[:, :, 0] if single else work


def _shift2d(a, dr, dc):
    """Shift so that out[i, j] = a[i + dr, j + dc], zero-filled."""
    out = np.zeros_like(a)
    h, w = a.shape[:2]
    rs, re = max(0, -dr), min(h, h - dr)
    cs, ce = max(0, -dc), min(w, w - dc)
    out[rs:re, cs:ce] = a[rs + dr:re + dr, cs + dc:ce + dc]
    return out


def gaussian_kernel(sigma):
    if sigma <= 0:
        raise ImgprocError("gaussian kernel: sigma must be > 0")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, sigma):
    """Separable Gaussian blur, kernel radius ceil(3*sigma).

    Borders use symmetric reflection, which preserves total mass exactly.
    """
    img = np.asarray(image, dtype=np.float64)
    k = gaussian_kernel(sigma)
    r = (k.size - 1) // 2
    if img.ndim == 3:
        return np.dstack([gaussian_blur(img[:, :, c], sigma) for c in range(img.shape[2])])

    padded = np.pad(img, ((r, r), (0, 0)), mode="symmetric")
    out = np.zeros_like(img)
    for i, w in enumerate(k):
        out += w * padded[i:i + img.shape[0], :]
    padded = np.pad(out, ((0, 0), (r, r)), mode="symmetric")
    out = np.zeros_like(img)
    for i, w in enumerate(k):
        out += w * padded[:, i:i + img.shape[1]]
    return out


def contrast_equalize(image, mask, alpha=4.0, tau=-4.0, gamma=128.0, sigma=None):
    """Contrast equalization against illumination variation.

    Per channel: alpha*I + tau*Gaussian(sigma)*I + gamma, multiplied by the
    FOV mask and clipped to [0, 255]. sigma defaults to FOV width / 30.
    The image should already be aperture-padded.
    """
    img = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if img.shape[:2] != mask.shape:
        raise ImgprocError("contrast_equalize: image/mask dimension mismatch")
    if sigma is None:
        sigma = fov_width(mask) / 30.0

    single = img.ndim == 2
    chans = img[:, :, None] if single else img
    out = np.empty_like(chans)
    for c in range(chans.shape[2]):
        band = chans[:, :, c]
        out[:, :, c] = alpha * band + tau * gaussian_blur(band, sigma) + gamma
    out *= mask[:, :, None]
    out = np.clip(out, 0.0, 255.0)
    return out[:, :, 0] if single else out
