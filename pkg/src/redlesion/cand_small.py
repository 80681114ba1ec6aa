"""Unsupervised small-red-lesion (MA) candidate generation.

Background-pinned polynomial contrast normalization, Gaussian denoising,
a bank of grayscale closings with line structuring elements, per-length
thresholding capped at K components, union across lengths, and a minimum
component size filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import boxes
from .imgproc import gaussian_blur, label_components

DEFAULT_LENGTHS = tuple(range(3, 61, 3))
DEFAULT_ANGLES = tuple(range(0, 180, 15))
K_MAX = 120
MIN_SMALL_PX = 5


class CandidateError(ValueError):
    pass


@dataclass
class Component:
    pixel_count: int
    box: boxes.RoiBox


@dataclass
class CandidateMap:
    mask: np.ndarray          # boolean candidate pixels
    components: list          # list of Component


def r_polynomial_transform(green, mask, r=2, window=61):
    """Monotone polynomial gray-level remap pinning local background to 0.5.

    The local background is the masked window mean; values at the background
    map to 0.5, darker values stretch toward 0 and brighter toward 1 with a
    degree-r polynomial. Output is in [0, 1]; pixels outside the FOV are set
    to the neutral 0.5 so they produce no closing response.
    """
    g = np.asarray(green, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if g.shape != m.shape:
        raise CandidateError("r_polynomial_transform: image/mask dimension mismatch")
    if r < 1:
        raise CandidateError("r_polynomial_transform: r must be >= 1")
    if not m.any():
        return np.full_like(g, 0.5)

    bg = _masked_window_mean(g, m, window)
    vals = g[m]
    lo, hi = float(vals.min()), float(vals.max())

    out = np.full_like(g, 0.5)
    # pixels at (or numerically indistinguishable from) the local background
    # stay at the neutral 0.5
    eps = 1e-6 * max(1.0, hi - lo)
    dark = m & (g < bg - eps)
    bright = m & (g > bg + eps)
    denom_d = np.maximum(bg - lo, 1e-12)
    denom_b = np.maximum(hi - bg, 1e-12)
    out[dark] = 0.5 * ((g - lo) / denom_d)[dark] ** r
    out[bright] = 1.0 - 0.5 * ((hi - g) / denom_b)[bright] ** r
    return np.clip(out, 0.0, 1.0)


def _masked_window_mean(img, mask, window):
    """Mean of in-mask values over a window x window box, via summed areas."""
    m = mask.astype(np.float64)
    num = _box_sum(img * m, window)
    den = _box_sum(m, window)
    bg = np.where(den > 0, num / np.maximum(den, 1.0), 0.0)
    return bg


def _box_sum(img, window):
    r = window // 2
    padded = np.pad(img, r + 1, mode="constant")
    ii = padded.cumsum(axis=0).cumsum(axis=1)
    h, w = img.shape
    a = ii[2 * r + 1:2 * r + 1 + h, 2 * r + 1:2 * r + 1 + w]
    b = ii[:h, 2 * r + 1:2 * r + 1 + w]
    c = ii[2 * r + 1:2 * r + 1 + h, :w]
    d = ii[:h, :w]
    return a - b - c + d


def line_se_offsets(length, angle_deg):
    """Symmetric digital line structuring element as (dr, dc) offsets.

    Points are rounded multiples of the direction vector out to length // 2
    on each side, mirrored so the set is symmetric about the origin.
    """
    theta = np.deg2rad(angle_deg)
    dc, dr = np.cos(theta), -np.sin(theta)
    pts = {(0, 0)}
    for k in range(1, length // 2 + 1):
        p = (int(round(k * dr)), int(round(k * dc)))
        pts.add(p)
        pts.add((-p[0], -p[1]))
    return sorted(pts)


def _shift_fill(img, dr, dc, fill):
    out = np.full_like(img, fill)
    h, w = img.shape
    rs, re = max(0, -dr), min(h, h - dr)
    cs, ce = max(0, -dc), min(w, w - dc)
    out[rs:re, cs:ce] = img[rs + dr:re + dr, cs + dc:ce + dc]
    return out


def grey_dilate(img, offsets):
    """Grayscale dilation by an offset set; out-of-bounds samples ignored."""
    out = np.full_like(img, -np.inf)
    for dr, dc in offsets:
        np.maximum(out, _shift_fill(img, dr, dc, -np.inf), out=out)
    return out


def grey_erode(img, offsets):
    out = np.full_like(img, np.inf)
    for dr, dc in offsets:
        np.minimum(out, _shift_fill(img, dr, dc, np.inf), out=out)
    return out


def grey_close(img, offsets):
    return grey_erode(grey_dilate(img, offsets), offsets)


def line_closing_bank(image, lengths=DEFAULT_LENGTHS, angles=DEFAULT_ANGLES):
    """Per-length difference images closed(min over angles) - image.

    For each length l the closing is computed with line SEs at every angle
    and combined by pointwise min; the returned difference images are >= 0
    because closing is extensive. Dilations are shared across lengths at a
    fixed angle (the offset sets are nested), which keeps the bank fast.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise CandidateError("line_closing_bank: expected a single-channel image")
    lengths = sorted(set(int(l) for l in lengths))
    if not lengths:
        raise CandidateError("line_closing_bank: empty length set")

    best = {l: np.full_like(img, np.inf) for l in lengths}
    for angle in angles:
        theta = np.deg2rad(angle)
        dc, dr = np.cos(theta), -np.sin(theta)
        dilated = img.copy()
        offsets = [(0, 0)]
        k = 0
        for l in lengths:
            half = l // 2
            while k < half:
                k += 1
                p = (int(round(k * dr)), int(round(k * dc)))
                for q in (p, (-p[0], -p[1])):
                    if q not in offsets:
                        offsets.append(q)
                        np.maximum(dilated, _shift_fill(img, q[0], q[1], -np.inf), out=dilated)
            closed = grey_erode(dilated, offsets)
            np.minimum(best[l], closed, out=best[l])
    return [best[l] - img for l in lengths]


def count_components(mask):
    return label_components(mask)[1]


def cap_candidates_topk(diff, k_max=K_MAX):
    """Threshold `diff` so that at most k_max connected components remain.

    Searches the smallest (most permissive) threshold t over the distinct
    values of `diff` such that diff > t has <= k_max components, by bisection
    with a linear fix-up for the rare non-monotone splits.
    """
    d = np.asarray(diff, dtype=np.float64)
    if (d < 0).any():
        raise CandidateError("cap_candidates_topk: diff must be >= 0")
    values = np.unique(d)
    if values.size == 1:
        return np.zeros_like(d, dtype=bool)

    def ncomp(t):
        return count_components(d > t)

    lo, hi = 0, values.size - 1  # d > values[-1] is empty, always feasible
    if ncomp(values[lo]) <= k_max:
        hi = lo
    while lo < hi:
        mid = (lo + hi) // 2
        if ncomp(values[mid]) <= k_max:
            hi = mid
        else:
            lo = mid + 1
    while ncomp(values[hi]) > k_max:  # guard against non-monotone splits
        hi += 1
    return d > values[hi]


def components_from_mask(mask, min_pixels=0):
    """Connected components (8-conn) with bounding boxes, size-filtered."""
    labels, n = label_components(mask)
    comps = []
    kept = np.zeros_like(mask, dtype=bool)
    for sl_idx, sl in enumerate(ndimage.find_objects(labels)):
        if sl is None:
            continue
        region = labels[sl] == (sl_idx + 1)
        count = int(region.sum())
        if count < min_pixels:
            continue
        rs, cs = sl
        comps.append(Component(
            pixel_count=count,
            box=boxes.from_slices(rs.start, rs.stop - 1, cs.start, cs.stop - 1),
        ))
        kept[sl][region] = True
    return CandidateMap(mask=kept, components=comps)


def generate_small_candidates(patch, mask, r=2, lengths=DEFAULT_LENGTHS,
                              angles=DEFAULT_ANGLES, k_max=K_MAX,
                              min_pixels=MIN_SMALL_PX, noise_sigma=1.0):
    """MA candidate map for one contrast-equalized RGB patch.

    ``noise_sigma`` controls the denoising blur applied before the closing
    bank; a value of 0 skips the blur entirely.
    """
    p = np.asarray(patch, dtype=np.float64)
    if p.ndim != 3 or p.shape[2] != 3:
        raise CandidateError("generate_small_candidates: expected an RGB patch")
    green = p[:, :, 1]
    normed = r_polynomial_transform(green, mask, r=r)
    smooth = gaussian_blur(normed, noise_sigma) if noise_sigma > 0 else normed
    diffs = line_closing_bank(smooth, lengths, angles)
    union = np.zeros(green.shape, dtype=bool)
    for diff in diffs:
        union |= cap_candidates_topk(diff, k_max)
    union &= np.asarray(mask, dtype=bool)
    return components_from_mask(union, min_pixels=min_pixels)
