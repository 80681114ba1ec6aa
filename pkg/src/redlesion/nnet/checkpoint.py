"""Model checkpoints: npz archives holding a JSON header (kind + init
config) plus every named parameter buffer."""

from __future__ import annotations

import json

import numpy as np

from .layers import NnetError
from .models import DetectorNet, SegNet

_KINDS = {"detector": DetectorNet, "segmenter": SegNet}


def save_model(model, path):
    header = json.dumps({"kind": model.kind, "config": model.config})
    arrays = {f"param/{name}": p for name, p in model.named_params()}
    np.savez(path, header=np.frombuffer(header.encode(), dtype=np.uint8), **arrays)


def load_model(path):
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        kind = header.get("kind")
        if kind not in _KINDS:
            raise NnetError(f"load_model: unknown model kind {kind!r}")
        config = dict(header["config"])
        config["channels"] = tuple(config.get("channels", ()))
        model = _KINDS[kind](**config)
        params = {name[len("param/"):]: data[name] for name in data.files
                  if name.startswith("param/")}
    expected = [name for name, _ in model.named_params()]
    if sorted(expected) != sorted(params):
        raise NnetError("load_model: parameter set does not match the model spec")
    for name, p in model.named_params():
        if p.shape != params[name].shape:
            raise NnetError(f"load_model: shape mismatch for {name}")
    model.load_param_dict(params)
    return model
