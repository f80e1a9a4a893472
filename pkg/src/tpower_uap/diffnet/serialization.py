"""Model file: JSON header followed by little-endian float64 parameter blocks."""

from __future__ import annotations

from ..exceptions import FormatError
from ..io import read_container, split_payload, write_container
from .layers import LAYER_KINDS, Conv2d, Dense, MaxPool, AvgPool
from .model import Model

MODEL_MAGIC = b"TPUMODEL"
FORMAT_VERSION = 1


def model_header(model: Model) -> dict:
    layers = []
    for layer in model.layers:
        entry = layer.config()
        entry["params"] = [{"name": k, "shape": list(a.shape)} for k, a in layer.params.items()]
        layers.append(entry)
    return {
        "format": "tpower-uap-model",
        "version": FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "cut_points": list(model.cut_points),
        "layers": layers,
        "metadata": model.metadata,
    }


def save_model(model: Model, path) -> None:
    write_container(path, MODEL_MAGIC, model_header(model), [a for _, _, a in model.parameters()])


def load_model(path) -> Model:
    header, payload = read_container(path, MODEL_MAGIC)
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported model format version {header.get('version')}")
    shapes = [tuple(p["shape"]) for entry in header["layers"] for p in entry["params"]]
    arrays = iter(split_payload(payload, shapes))
    layers = []
    for entry in header["layers"]:
        kind, name = entry["kind"], entry["name"]
        params = {p["name"]: next(arrays) for p in entry["params"]}
        if kind not in LAYER_KINDS:
            raise FormatError(f"{path}: unknown layer kind {kind!r}")
        if kind == "dense":
            layer = Dense(params["weights"], params["bias"], name=name)
        elif kind == "conv2d":
            layer = Conv2d(params["kernels"], params["bias"], entry["stride"], entry["padding"], name=name)
        elif kind in ("maxpool", "avgpool"):
            layer = (MaxPool if kind == "maxpool" else AvgPool)(entry["window"], name=name)
        else:
            layer = LAYER_KINDS[kind](name)
        layers.append(layer)
    return Model(layers, header["input_shape"], header["num_classes"], metadata=header.get("metadata"))
