"""Tests for FOV cropping/resizing, fixed 2x2 patch extraction, and
pixelwise-max merging."""

import numpy as np
import pytest

from redlesion.patches import (
    FRAME_SIZE,
    PATCH_ORIGINS,
    PATCH_SIZE,
    PatchError,
    PatchSet,
    bilinear_resize,
    crop_and_resize,
    merge_patches,
    split_patches,
)


class TestCropAndResize:
    def test_exact_two_to_one_decimation(self):
        rng = np.random.default_rng(0)
        img = rng.random((1400, 1400))
        mask = np.ones((1400, 1400), dtype=bool)
        out, out_mask, tr = crop_and_resize(img, mask)
        expect = img.reshape(700, 2, 700, 2).mean(axis=(1, 3))
        assert out == pytest.approx(expect, abs=1e-12)
        assert out_mask.all()
        assert (tr.row0, tr.col0, tr.row_scale, tr.col_scale) == (0.0, 0.0, 2.0, 2.0)

    def test_identity_at_native_size(self):
        rng = np.random.default_rng(1)
        img = rng.random((700, 700, 3))
        mask = np.ones((700, 700), dtype=bool)
        out, out_mask, tr = crop_and_resize(img, mask)
        assert (out == img).all()
        assert out_mask.all()
        assert (tr.row_scale, tr.col_scale) == (1.0, 1.0)

    def test_corner_mapping_of_centered_crop(self):
        img = np.zeros((1000, 800))
        mask = np.zeros((1000, 800), dtype=bool)
        mask[200:800, 100:700] = True
        _, _, tr = crop_and_resize(img, mask)
        # frame corners map back to the corners of the 600x600 crop
        assert tr.to_original(0, 0) == (200.0, 100.0)
        r, c = tr.to_original(700, 700)
        assert (r, c) == (800.0, 700.0)
        assert (tr.row_scale, tr.col_scale) == (600 / 700, 600 / 700)

    def test_empty_mask_rejected(self):
        with pytest.raises(PatchError):
            crop_and_resize(np.zeros((10, 10)), np.zeros((10, 10), dtype=bool))

    def test_small_image_upscaled(self):
        rng = np.random.default_rng(2)
        img = rng.random((300, 320))
        mask = np.ones((300, 320), dtype=bool)
        out, _, _ = crop_and_resize(img, mask)
        assert out.shape == (700, 700)
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12


class TestBilinearResize:
    def test_constant_preserved(self):
        out = bilinear_resize(np.full((13, 9), 3.5), 31, 17)
        assert out == pytest.approx(np.full((31, 17), 3.5))

    def test_matches_pointwise_oracle(self):
        rng = np.random.default_rng(3)
        img = rng.random((7, 5))
        out = bilinear_resize(img, 11, 9)
        for i in range(11):
            for j in range(9):
                sr = min(max((i + 0.5) * 7 / 11 - 0.5, 0.0), 6.0)
                sc = min(max((j + 0.5) * 5 / 9 - 0.5, 0.0), 4.0)
                r0, c0 = int(np.floor(sr)), int(np.floor(sc))
                r1, c1 = min(r0 + 1, 6), min(c0 + 1, 4)
                fr, fc = sr - r0, sc - c0
                expect = (img[r0, c0] * (1 - fr) * (1 - fc)
                          + img[r0, c1] * (1 - fr) * fc
                          + img[r1, c0] * fr * (1 - fc)
                          + img[r1, c1] * fr * fc)
                assert out[i, j] == pytest.approx(expect, abs=1e-12)


class TestSplitPatches:
    def test_fixed_origins(self):
        assert PATCH_ORIGINS == ((0, 0), (0, 200), (200, 0), (200, 200))

    def test_center_pixel_in_all_four_patches(self):
        img = np.zeros((700, 700))
        img[350, 350] = 7.0
        pset = split_patches(img)
        for (r0, c0), patch in zip(pset.origins, pset.patches):
            assert patch[350 - r0, 350 - c0] == 7.0

    def test_corner_pixel_only_in_first_patch(self):
        img = np.zeros((700, 700))
        img[0, 0] = 7.0
        pset = split_patches(img)
        assert pset.patches[0][0, 0] == 7.0
        for patch in pset.patches[1:]:
            assert (patch != 7.0).all()

    def test_patch_pixels_match_frame(self):
        rng = np.random.default_rng(4)
        img = rng.random((700, 700, 3))
        pset = split_patches(img)
        for (r0, c0), patch in zip(pset.origins, pset.patches):
            assert patch.shape == (500, 500, 3)
            assert (patch == img[r0:r0 + 500, c0:c0 + 500]).all()

    def test_coverage_multiplicity_fraction(self):
        cover = np.zeros((FRAME_SIZE, FRAME_SIZE), dtype=int)
        for r0, c0 in PATCH_ORIGINS:
            cover[r0:r0 + PATCH_SIZE, c0:c0 + PATCH_SIZE] += 1
        assert (cover >= 1).all()
        assert (cover >= 2).sum() == 330000
        assert FRAME_SIZE * FRAME_SIZE == 490000

    def test_wrong_size_rejected(self):
        with pytest.raises(PatchError):
            split_patches(np.zeros((500, 500)))


class TestMergePatches:
    def rand_scores(self, rng):
        return PatchSet(patches=[rng.random((500, 500)) for _ in range(4)])

    def test_max_rule_in_overlap(self):
        ma = PatchSet(patches=[np.full((500, 500), 0.3) for _ in range(4)])
        hm = PatchSet(patches=[np.full((500, 500), 0.5) for _ in range(4)])
        out = merge_patches(ma, hm)
        assert out == pytest.approx(np.full((700, 700), 0.5))

    def test_zero_hm_yields_ma_mosaic(self):
        rng = np.random.default_rng(5)
        ma = self.rand_scores(rng)
        hm = PatchSet(patches=[np.zeros((500, 500)) for _ in range(4)])
        out = merge_patches(ma, hm)
        expect = np.zeros((700, 700))
        for (r0, c0), p in zip(ma.origins, ma.patches):
            np.maximum(expect[r0:r0 + 500, c0:c0 + 500], p,
                       out=expect[r0:r0 + 500, c0:c0 + 500])
        assert (out == expect).all()

    def test_order_invariance(self):
        rng = np.random.default_rng(6)
        ma, hm = self.rand_scores(rng), self.rand_scores(rng)
        base = merge_patches(ma, hm)
        # swapping streams and reordering aligned patch/origin pairs
        # cannot change a max composition
        assert (merge_patches(hm, ma) == base).all()
        perm = [2, 0, 3, 1]
        ma2 = PatchSet(patches=[ma.patches[i] for i in perm],
                       origins=tuple(ma.origins[i] for i in perm))
        hm2 = PatchSet(patches=[hm.patches[i] for i in perm],
                       origins=tuple(hm.origins[i] for i in perm))
        assert (merge_patches(ma2, hm2) == base).all()

    def test_single_coverage_region_reproduced_exactly(self):
        rng = np.random.default_rng(7)
        frame = rng.random((700, 700))
        split = split_patches(frame)
        zeros = PatchSet(patches=[np.zeros((500, 500)) for _ in range(4)])
        out = merge_patches(split, zeros)
        cover = np.zeros((700, 700), dtype=int)
        for r0, c0 in PATCH_ORIGINS:
            cover[r0:r0 + 500, c0:c0 + 500] += 1
        single = cover == 1
        assert single.any()
        assert (out[single] == frame[single]).all()

    def test_split_merge_roundtrip_lossless(self):
        rng = np.random.default_rng(8)
        frame = rng.random((700, 700))
        split = split_patches(frame)
        assert (merge_patches(split, split) == frame).all()

    def test_monotone_in_patch_values(self):
        rng = np.random.default_rng(9)
        ma, hm = self.rand_scores(rng), self.rand_scores(rng)
        base = merge_patches(ma, hm)
        ma.patches[2] = ma.patches[2] + 0.25
        bumped = merge_patches(ma, hm)
        assert (bumped >= base - 1e-15).all()

    def test_misaligned_origins_rejected(self):
        ma = PatchSet(patches=[np.zeros((500, 500))] * 4)
        hm = PatchSet(patches=[np.zeros((500, 500))] * 4,
                      origins=((0, 0), (0, 100), (100, 0), (100, 100)))
        with pytest.raises(PatchError):
            merge_patches(ma, hm)
