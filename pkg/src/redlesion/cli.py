"""Command-line interface: each pipeline stage runnable on its own."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io_utils, synth
from .cand_large import dark_region_mask, generate_large_candidates, ridge_vessel_mask
from .cand_small import generate_small_candidates
from .config import PipelineConfig
from .imgproc import contrast_equalize, extract_fov_mask, pad_aperture
from .nnet import load_model, save_model, train_segmenter
from .patches import PatchSet, merge_patches, split_patches
from .pipeline import Models, preprocess_image, run_pipeline, train_detector_stream
from .manifest import load_manifest


def _load_config(args):
    if getattr(args, "config", None):
        return PipelineConfig.from_file(args.config)
    return PipelineConfig().validate()


def cmd_mask(args):
    img = io_utils.read_image(args.image)
    mask = extract_fov_mask(img)
    io_utils.write_mask(args.out, mask)
    print(f"wrote {args.out}")


def cmd_preprocess(args):
    cfg = _load_config(args)
    img = io_utils.read_image(args.image)
    mask = extract_fov_mask(img)
    padded = pad_aperture(img, mask)
    ce = contrast_equalize(padded, mask, alpha=cfg.ce_alpha, tau=cfg.ce_tau,
                           gamma=cfg.ce_gamma)
    io_utils.write_image(args.out, ce)
    if args.mask_out:
        io_utils.write_mask(args.mask_out, mask)
    print(f"wrote {args.out}")


def _candidates_common(args, stream):
    cfg = _load_config(args)
    img = io_utils.read_image(args.image)
    pre = preprocess_image(img, cfg)
    records = []
    for pid, (origin, patch, mpatch) in enumerate(
            zip(pre.origins, pre.patches, pre.mask_patches)):
        if stream == "MA":
            cmap = generate_small_candidates(patch, mpatch, r=cfg.poly_r,
                                             k_max=cfg.k_max,
                                             min_pixels=cfg.min_small_px)
        else:
            green01 = patch[:, :, 1] / 255.0
            dark = dark_region_mask(green01, fov=mpatch, threshold=cfg.dark_threshold)
            vessels = ridge_vessel_mask(green01, fov=mpatch,
                                        threshold=cfg.ridge_threshold / 255.0)
            cmap = generate_large_candidates(dark, vessels, min_pixels=cfg.min_large_px)
        for comp in cmap.components:
            records.append({"patch": pid, "origin": list(origin),
                            "box": [comp.box.r, comp.box.c, comp.box.h, comp.box.w],
                            "pixels": comp.pixel_count})
    with open(args.out, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {len(records)} candidates to {args.out}")


def cmd_candidates_small(args):
    _candidates_common(args, "MA")


def cmd_candidates_large(args):
    _candidates_common(args, "HM")


def cmd_train_segmenter(args):
    cfg = _load_config(args)
    with open(args.data) as fh:
        pairs = json.load(fh)
    root = os.path.dirname(os.path.abspath(args.data))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(root, p)

    images, labels = [], []
    for pair in pairs:
        img = io_utils.read_image(resolve(pair["image"])) / 255.0
        images.append(img.transpose(2, 0, 1))
        labels.append(io_utils.read_mask(resolve(pair["vessels"])).astype(np.int64))
    model, losses = train_segmenter(
        np.stack(images), np.stack(labels), epochs=cfg.seg_epochs,
        batch_size=cfg.seg_batch, lr=cfg.segmenter_lr, momentum=cfg.momentum,
        seed=cfg.seed)
    save_model(model, args.out)
    print(f"trained segmenter ({len(losses)} updates, final loss {losses[-1]:.4f}); "
          f"wrote {args.out}")


def cmd_train_detector(args):
    cfg = _load_config(args)
    manifest = load_manifest(args.manifest)
    seg = load_model(args.seg_model) if args.seg_model else None
    model = train_detector_stream(manifest, cfg, args.stream, seg_model=seg,
                                  log=lambda m: print(m, file=sys.stderr))
    save_model(model, args.out)
    print(f"trained {args.stream} stream; wrote {args.out}")


def _models_from_args(args):
    return Models(
        det_ma=load_model(args.ma_model) if args.ma_model else None,
        det_hm=load_model(args.hm_model) if args.hm_model else None,
        seg=load_model(args.seg_model) if args.seg_model else None,
    )


def cmd_detect(args):
    cfg = _load_config(args)
    manifest = load_manifest(args.manifest)
    summary = run_pipeline(manifest, cfg, _models_from_args(args), args.out_dir)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 1 if summary["failures"] else 0


cmd_eval = cmd_detect  # detect already computes metrics when gt is present


def cmd_synth(args):
    path = synth.generate_dataset(args.out_dir, args.n_images,
                                  lesion_fraction=args.lesion_fraction,
                                  seed=args.seed, size=args.size)
    print(f"wrote {path}")


def cmd_split(args):
    img = io_utils.read_image(args.image)
    pset = split_patches(img)
    os.makedirs(args.out_dir, exist_ok=True)
    for i, patch in enumerate(pset.patches):
        io_utils.write_image(os.path.join(args.out_dir, f"patch{i}.png"), patch)
    print(f"wrote 4 patches to {args.out_dir}")


def cmd_merge(args):
    ma = PatchSet([io_utils.read_image(p) / 255.0 for p in args.ma])
    hm = PatchSet([io_utils.read_image(p) / 255.0 for p in args.hm])
    merged = merge_patches(ma, hm)
    io_utils.write_image(args.out, merged * 255.0)
    print(f"wrote {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="redlesion",
                                     description="Red lesion detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="pipeline config file")
        return p

    p = add("mask", cmd_mask, help="extract the FOV mask of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = add("preprocess", cmd_preprocess, help="contrast-equalize an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")

    for name, fn in (("candidates-small", cmd_candidates_small),
                     ("candidates-large", cmd_candidates_large)):
        p = add(name, fn, help=f"generate {name.split('-')[1]} lesion candidates")
        p.add_argument("--image", required=True)
        p.add_argument("--out", required=True)

    p = add("train-segmenter", cmd_train_segmenter, help="train the vessel segmenter")
    p.add_argument("--data", required=True,
                   help="JSON list of {image, vessels} path pairs")
    p.add_argument("--out", required=True)

    p = add("train-detector", cmd_train_detector, help="train one detection stream")
    p.add_argument("--manifest", required=True)
    p.add_argument("--stream", choices=("MA", "HM"), required=True)
    p.add_argument("--seg-model")
    p.add_argument("--out", required=True)

    for name, fn in (("detect", cmd_detect), ("eval", cmd_eval)):
        p = add(name, fn, help="run the detection pipeline" if name == "detect"
                else "run the pipeline and compute FROC/CPM/ROC metrics")
        p.add_argument("--manifest", required=True)
        p.add_argument("--ma-model")
        p.add_argument("--hm-model")
        p.add_argument("--seg-model")
        p.add_argument("--out-dir", required=True)

    p = add("synth", cmd_synth, help="generate a synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-images", type=int, default=20)
    p.add_argument("--lesion-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=700)

    p = add("split", cmd_split, help="split a 700x700 frame into patches")
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("merge", cmd_merge, help="merge per-stream score patches")
    p.add_argument("--ma", nargs=4, required=True)
    p.add_argument("--hm", nargs=4, required=True)
    p.add_argument("--out", required=True)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args) or 0


if __name__ == "__main__":
    sys.exit(main())
