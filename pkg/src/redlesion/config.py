"""Pipeline configuration: all tunables with their defaults, plus a simple
`key = value` file format that round-trips losslessly."""

from __future__ import annotations

from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # contrast equalization
    ce_alpha: float = 4.0
    ce_tau: float = -4.0
    ce_gamma: float = 128.0
    # candidate generation
    dark_threshold: float = 0.45
    k_max: int = 120
    min_small_px: int = 5
    min_large_px: int = 31
    poly_r: int = 2
    ridge_threshold: float = 1.0
    # detection
    theta_ma: float = 0.6
    theta_hm: float = 0.6
    nms_ma: float = 0.9
    nms_hm: float = 0.8
    box_extend: int = 10
    # training
    n_images: int = 2
    r_rois: int = 64
    pos_fraction: float = 0.25
    momentum: float = 0.9
    drop_ma: float = 0.8
    drop_hm: float = 0.7
    detector_lr: float = 1e-3
    segmenter_lr: float = 1e-4
    iterations: int = 500
    seg_epochs: int = 200
    seg_batch: int = 20
    augment: bool = True
    seed: int = 0
    # dataset-level normalization: "overall-mean" or "per-patch-mean"
    normalization: str = "overall-mean"

    def validate(self):
        for name in ("theta_ma", "theta_hm", "nms_ma", "nms_hm",
                     "dark_threshold", "pos_fraction", "drop_ma", "drop_hm"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ConfigError(f"config: {name}={val} outside [0, 1]")
        for name in ("k_max", "min_small_px", "min_large_px", "r_rois",
                     "n_images", "iterations", "seg_epochs", "seg_batch"):
            if getattr(self, name) < 0:
                raise ConfigError(f"config: {name} must be >= 0")
        if self.normalization not in ("overall-mean", "per-patch-mean"):
            raise ConfigError(f"config: unknown normalization {self.normalization!r}")
        return self

    def to_file(self, path):
        with open(path, "w") as fh:
            fh.write("# redlesion pipeline configuration\n")
            for f in fields(self):
                fh.write(f"{f.name} = {getattr(self, f.name)!r}\n")

    @classmethod
    def from_file(cls, path):
        known = {f.name: f for f in fields(cls)}
        values = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, raw = line.partition("=")
                key = key.strip()
                if key not in known:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                raw = raw.strip()
                ftype = known[key].type
                try:
                    if ftype == "bool":
                        values[key] = raw in ("True", "true", "1")
                    elif ftype == "int":
                        values[key] = int(raw)
                    elif ftype == "float":
                        values[key] = float(raw)
                    else:
                        values[key] = raw.strip("'\"")
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw}") from exc
        return cls(**values).validate()
