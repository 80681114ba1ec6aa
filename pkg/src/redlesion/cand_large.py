"""Large-red-lesion (HM) candidate generation.

Dark-region thresholding on the equalized green channel, vessel removal via
a segmentation model (or a deterministic Hessian ridge fallback), and a
minimum component size filter.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .cand_small import CandidateError, components_from_mask
from .imgproc import gaussian_blur

DARK_THRESHOLD = 0.45
MIN_LARGE_PX = 31  # components must have > 30 pixels


def dark_region_mask(green, fov=None, threshold=DARK_THRESHOLD):
    """Pixels with equalized green value (in [0, 1]) <= threshold."""
    g = np.asarray(green, dtype=np.float64)
    mask = g <= threshold
    if fov is not None:
        mask &= np.asarray(fov, dtype=bool)
    return mask


def segment_vessels(patch, model, threshold=0.5):
    """Vessel mask from a trained pixelwise segmentation net."""
    p = np.asarray(patch, dtype=np.float64)
    if p.ndim != 3 or p.shape[2] != 3:
        raise CandidateError("segment_vessels: expected an RGB patch")
    x = (p / 255.0).transpose(2, 0, 1)[None]
    prob = model.predict_proba(x)[0, 1]
    return prob >= threshold


def ridge_vessel_mask(green, fov=None, sigmas=(1.0, 2.0, 4.0), threshold=1.0,
                      anisotropy=2.0, max_halfwidth=4, support=None):
    """Deterministic vessel fallback: Hessian ridge test on the green channel.

    Dark curvilinear structures have a large positive principal curvature
    across the vessel and a near-zero one along it; a pixel is ridge-like at
    a scale when the scale-normalized largest eigenvalue exceeds the
    threshold AND dominates the smaller eigenvalue by the anisotropy factor
    (which keeps compact blobs out of the mask).

    When ``support`` (typically the dark-region mask) is given, structures
    wide enough to survive a disk opening of the support are additionally
    removed from the vessel mask; lesion bodies are thick, vessels are not.
    """
    g = np.asarray(green, dtype=np.float64)
    mask = np.zeros(g.shape, dtype=bool)
    for sigma in sigmas:
        smooth = gaussian_blur(g, sigma)
        gr, gc = np.gradient(smooth)
        hrr = np.gradient(gr, axis=0)
        hrc = np.gradient(gr, axis=1)
        hcc = np.gradient(gc, axis=1)
        tmp = np.sqrt(((hrr - hcc) / 2.0) ** 2 + hrc ** 2)
        lam_max = sigma ** 2 * ((hrr + hcc) / 2.0 + tmp)
        lam_min = sigma ** 2 * ((hrr + hcc) / 2.0 - tmp)
        mask |= (lam_max > threshold) & (lam_max > anisotropy * np.abs(lam_min))
    if max_halfwidth:
        # keep only structures thinner than the opening disk, so compact
        # lesion cores are never flagged as vessel
        rr, cc = np.ogrid[-max_halfwidth:max_halfwidth + 1, -max_halfwidth:max_halfwidth + 1]
        disk = rr * rr + cc * cc <= max_halfwidth * max_halfwidth
        base = mask if support is None else np.asarray(support, dtype=bool)
        thick = ndimage.binary_opening(base, structure=disk)
        mask &= ~thick
    if fov is not None:
        mask &= np.asarray(fov, dtype=bool)
    return mask


def generate_large_candidates(dark, vessels, min_pixels=MIN_LARGE_PX):
    """Candidates = components of dark AND NOT vessels with > 30 pixels."""
    d = np.asarray(dark, dtype=bool)
    v = np.asarray(vessels, dtype=bool)
    if d.shape != v.shape:
        raise CandidateError("generate_large_candidates: mask dimension mismatch")
    return components_from_mask(d & ~v, min_pixels=min_pixels)
