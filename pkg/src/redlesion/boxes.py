"""Box geometry shared by candidate generation, the detector and evaluation.

Boxes are center-format: (r, c, h, w) with (r, c) the center in pixel
coordinates and h/w the side lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class BoxError(ValueError):
    pass


@dataclass(frozen=True)
class RoiBox:
    r: float
    c: float
    h: float
    w: float

    def edges(self):
        """(r0, c0, r1, r1) half-open extent."""
        return (self.r - self.h / 2.0, self.c - self.w / 2.0,
                self.r + self.h / 2.0, self.c + self.w / 2.0)

    def area(self):
        return self.h * self.w

    def shifted(self, dr, dc):
        return RoiBox(self.r + dr, self.c + dc, self.h, self.w)

    def extended(self, px):
        return RoiBox(self.r, self.c, self.h + 2.0 * px, self.w + 2.0 * px)

    def clamped(self, height, width):
        """Clip the box extent to the [0, height) x [0, width) frame."""
        r0, c0, r1, c1 = self.edges()
        r0, c0 = max(r0, 0.0), max(c0, 0.0)
        r1, c1 = min(r1, float(height)), min(c1, float(width))
        if r1 <= r0 or c1 <= c0:
            raise BoxError("clamped: box lies outside the frame")
        return from_edges(r0, c0, r1, c1)

    def contains(self, r, c):
        r0, c0, r1, c1 = self.edges()
        return r0 <= r <= r1 and c0 <= c <= c1


def from_edges(r0, c0, r1, c1):
    return RoiBox((r0 + r1) / 2.0, (c0 + c1) / 2.0, r1 - r0, c1 - c0)


def from_slices(rmin, rmax, cmin, cmax):
    """Box from inclusive pixel index extents."""
    return from_edges(float(rmin), float(cmin), float(rmax + 1), float(cmax + 1))


def iou(a: RoiBox, b: RoiBox) -> float:
    ar0, ac0, ar1, ac1 = a.edges()
    br0, bc0, br1, bc1 = b.edges()
    ih = min(ar1, br1) - max(ar0, br0)
    iw = min(ac1, bc1) - max(ac0, bc0)
    if ih <= 0.0 or iw <= 0.0:
        return 0.0
    inter = ih * iw
    union = a.area() + b.area() - inter
    return inter / union


def encode_offsets(candidate: RoiBox, gt: RoiBox):
    """Normalized/log offsets mapping candidate onto gt."""
    if candidate.h <= 0 or candidate.w <= 0 or gt.h <= 0 or gt.w <= 0:
        raise BoxError("encode_offsets: non-positive box size")
    return (
        (gt.r - candidate.r) / candidate.h,
        (gt.c - candidate.c) / candidate.w,
        math.log(gt.h / candidate.h),
        math.log(gt.w / candidate.w),
    )


def decode_offsets(candidate: RoiBox, t):
    if candidate.h <= 0 or candidate.w <= 0:
        raise BoxError("decode_offsets: non-positive box size")
    tr, tc, th, tw = t
    return RoiBox(
        candidate.r + tr * candidate.h,
        candidate.c + tc * candidate.w,
        candidate.h * math.exp(th),
        candidate.w * math.exp(tw),
    )
