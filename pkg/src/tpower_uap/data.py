"""Labeled image sets: synthetic generation and the on-disk TensorFile layout.

A dataset directory holds one TensorFile per sample plus ``manifest.json``::

    {"format": "tpower-uap-dataset", "version": 1, "image_shape": [H, W, C],
     "num_classes": K, "samples": [{"file": ..., "label": ..., "split": ...}]}

Any directory following this layout can be used, synthetic or not.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .exceptions import EmptyDataError, FormatError, ShapeError
from .io import dumps_json, read_tensor, write_tensor

MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")


@dataclass(eq=False)
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=object)
        if not (len(self.samples) == len(self.labels) == len(self.splits)):
            raise ShapeError("samples, labels and split tags must have equal length")
        if len(self.samples) and (self.samples.min() < 0 or self.samples.max() > 1):
            raise ShapeError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return tuple(self.samples.shape[1:])

    def split(self, name: str) -> "LabeledDataset":
        mask = self.splits == name
        return LabeledDataset(self.samples[mask], self.labels[mask], self.splits[mask], self.num_classes)


def _canvas_shapes(kind: int, yy, xx, cy, cx, r, rng):
    dy, dx = yy - cy, xx - cx
    t = max(r * 0.3, 1.0)
    if kind == 0:  # disk
        return dy**2 + dx**2 <= r**2
    if kind == 1:  # square
        return (np.abs(dy) <= r * 0.8) & (np.abs(dx) <= r * 0.8)
    if kind == 2:  # horizontal bar
        return (np.abs(dy) <= t) & (np.abs(dx) <= r * 1.3)
    if kind == 3:  # vertical bar
        return (np.abs(dx) <= t) & (np.abs(dy) <= r * 1.3)
    if kind == 4:  # ring
        d = np.sqrt(dy**2 + dx**2)
        return (d <= r) & (d >= r - t * 1.2)
    if kind == 5:  # plus
        return ((np.abs(dy) <= t * 0.7) | (np.abs(dx) <= t * 0.7)) & (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == 6:  # diagonal cross
        return ((np.abs(dy - dx) <= t) | (np.abs(dy + dx) <= t)) & (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == 7:  # upward triangle
        return (dy <= r * 0.8) & (dy >= -r) & (np.abs(dx) <= (dy + r) * 0.6)
    if kind == 8:  # horizontal stripes
        period = rng.uniform(3.5, 5.0)
        return (np.floor((yy + rng.uniform(0, period)) / (period / 2)) % 2) == 0
    if kind == 9:  # checkerboard
        period = rng.uniform(5.0, 7.0)
        a = np.floor((yy + rng.uniform(0, period)) / (period / 2))
        b = np.floor((xx + rng.uniform(0, period)) / (period / 2))
        return ((a + b) % 2) == 0
    if kind == 10:  # vertical stripes
        period = rng.uniform(3.5, 5.0)
        return (np.floor((xx + rng.uniform(0, period)) / (period / 2)) % 2) == 0
    if kind == 11:  # two small blobs
        off = r * 0.7
        return ((dy**2 + (dx - off) ** 2) <= (r * 0.45) ** 2) | ((dy**2 + (dx + off) ** 2) <= (r * 0.45) ** 2)
    raise ValueError(kind)


N_PROTOTYPES = 12


def render_sample(label: int, shape, rng: np.random.Generator) -> np.ndarray:
    """One noisy image of class ``label``: a shape or texture over a dark background."""
    h, w, c = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    side = min(h, w)
    cy = h / 2 + rng.uniform(-side / 8, side / 8)
    cx = w / 2 + rng.uniform(-side / 8, side / 8)
    r = side * rng.uniform(0.25, 0.38)
    mask = _canvas_shapes(label, yy, xx, cy, cx, r, rng)
    fg = rng.uniform(0.55, 1.0, size=c)
    bg = rng.uniform(0.0, 0.35, size=c)
    img = np.where(mask[..., None], fg, bg)
    img = img + rng.normal(0.0, 0.06, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(num_classes: int, image_shape, samples_per_class: int, seed: int = 0,
                       split_fractions: Optional[Dict[str, float]] = None) -> LabeledDataset:
    """Deterministic synthetic classification set.

    Samples are assigned to splits by a seeded permutation; fractions are
    taken in ``train, val, test`` order and the test split gets the rest.
    """
    if samples_per_class < 1:
        raise EmptyDataError("samples_per_class must be at least 1")
    if not 1 <= num_classes <= N_PROTOTYPES:
        raise ValueError(f"num_classes must lie in [1, {N_PROTOTYPES}]")
    shape = tuple(int(s) for s in image_shape)
    if len(shape) != 3:
        raise ShapeError("image_shape must be (height, width, channels)")
    fr = {"train": 0.6, "val": 0.15, "test": 0.25}
    fr.update(split_fractions or {})
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    samples = np.stack([render_sample(int(lab), shape, rng) for lab in labels])
    n = len(labels)
    order = rng.permutation(n)
    n_train = int(round(fr["train"] * n))
    n_val = int(round(fr["val"] * n))
    splits = np.empty(n, dtype=object)
    splits[order[:n_train]] = "train"
    splits[order[n_train : n_train + n_val]] = "val"
    splits[order[n_train + n_val :]] = "test"
    return LabeledDataset(samples, labels, splits, num_classes)


def save_dataset(ds: LabeledDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    width = max(5, len(str(len(ds))))
    for i in range(len(ds)):
        name = f"sample_{i:0{width}d}.tns"
        write_tensor(directory / name, ds.samples[i])
        entries.append({"file": name, "label": int(ds.labels[i]), "split": str(ds.splits[i])})
    manifest = {
        "format": "tpower-uap-dataset",
        "version": 1,
        "image_shape": list(ds.image_shape),
        "num_classes": int(ds.num_classes),
        "samples": entries,
    }
    (directory / MANIFEST).write_text(dumps_json(manifest))


def load_dataset(directory) -> LabeledDataset:
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    try:
        manifest = json.loads(path.read_text())
        entries = manifest["samples"]
        shape = tuple(manifest["image_shape"])
        num_classes = int(manifest["num_classes"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc})")
    if not entries:
        raise EmptyDataError(f"{path}: dataset is empty")
    samples = np.empty((len(entries),) + shape)
    for i, e in enumerate(entries):
        t = read_tensor(directory / e["file"])
        if t.shape != shape:
            raise ShapeError(f"{e['file']}: shape {t.shape} != manifest image_shape {shape}")
        samples[i] = t
    labels = [e["label"] for e in entries]
    splits = [e.get("split", "test") for e in entries]
    return LabeledDataset(samples, labels, splits, num_classes)
