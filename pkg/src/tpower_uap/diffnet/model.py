"""Sequential network with named cut points and layer-wise linearization."""

from __future__ import annotations

import copy
import hashlib
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import CutPointError, ShapeError
from .layers import AvgPool, Conv2d, Dense, Flatten, Layer, MaxPool, ReLU

CutPoint = Union[str, int]


class Model:
    """Ordered stack of layers mapping ``input_shape`` tensors to logits.

    Every layer boundary is a legal cut point.  A cut point is addressed by
    the layer's name or by its index; the activation "at" a cut point is the
    output of that layer.
    """

    def __init__(self, layers: Sequence[Layer], input_shape, num_classes: Optional[int] = None, metadata=None):
        self.layers: List[Layer] = list(layers)
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        self.input_shape = tuple(int(s) for s in input_shape)
        for i, layer in enumerate(self.layers):
            if not layer.name:
                layer.name = f"{layer.kind}{i}"
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ShapeError(f"duplicate layer names: {names}")
        self.shapes: List[Tuple[int, ...]] = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        out = self.shapes[-1]
        if len(out) != 1:
            raise ShapeError(f"final layer must produce a flat logit vector, got shape {out}")
        if num_classes is None:
            num_classes = out[0]
        if out[0] != num_classes:
            raise ShapeError(f"final output length {out[0]} != num_classes {num_classes}")
        self.num_classes = int(num_classes)
        self.metadata = dict(metadata or {})

    @property
    def cut_points(self) -> Dict[str, int]:
        return {l.name: i for i, l in enumerate(self.layers)}

    def layer_index(self, cut: CutPoint) -> int:
        if isinstance(cut, (int, np.integer)) and not isinstance(cut, bool):
            if 0 <= cut < len(self.layers):
                return int(cut)
            raise CutPointError(f"cut point index {cut} out of range [0, {len(self.layers)})")
        try:
            return self.cut_points[cut]
        except KeyError:
            raise CutPointError(f"unknown cut point {cut!r}; known: {list(self.cut_points)}") from None

    def layer_shape(self, cut: CutPoint) -> Tuple[int, ...]:
        return self.shapes[self.layer_index(cut)]

    def _batch(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape == self.input_shape:
            return X[None], True
        if X.shape[1:] != self.input_shape:
            raise ShapeError(f"expected input shape {self.input_shape} (optionally batched), got {X.shape}")
        return X, False

    def forward_to_layer(self, cut: CutPoint, X) -> np.ndarray:
        end = self.layer_index(cut)
        A, single = self._batch(X)
        for layer in self.layers[: end + 1]:
            A, _ = layer.forward(A)
        return A[0] if single else A

    def forward(self, X) -> np.ndarray:
        """Logits for one sample or a batch."""
        return self.forward_to_layer(len(self.layers) - 1, X)

    def predict(self, X) -> np.ndarray:
        logits = self.forward(X)
        return np.argmax(logits, axis=-1)

    def linearize(self, cut: CutPoint, X) -> "Linearization":
        return Linearization(self, self.layer_index(cut), self._batch(X)[0])

    def jvp(self, cut: CutPoint, x, v) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if v.shape != x.shape:
            raise ShapeError(f"direction shape {v.shape} != input shape {x.shape}")
        lin = self.linearize(cut, x)
        out = lin.jvp(v if x.ndim > len(self.input_shape) else v[None])
        return out if x.ndim > len(self.input_shape) else out[0]

    def vjp(self, cut: CutPoint, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == len(self.input_shape)
        lin = self.linearize(cut, x)
        u = np.asarray(u, dtype=np.float64)
        expected = lin.out_shape if single else (lin.n,) + lin.out_shape
        if u.shape != expected:
            raise ShapeError(f"covector shape {u.shape} != layer output shape {expected}")
        out = lin.vjp(u[None] if single else u)
        return out[0] if single else out

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def parameters(self) -> List[Tuple[str, str, np.ndarray]]:
        """(layer name, param name, array) in declaration order."""
        return [(l.name, k, a) for l in self.layers for k, a in l.params.items()]

    def fingerprint(self) -> str:
        """Short content hash of architecture and weights."""
        h = hashlib.sha256(repr((self.input_shape, [l.config() for l in self.layers])).encode())
        for _, _, a in self.parameters():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def __repr__(self):
        return f"Model(input_shape={self.input_shape}, layers={self.layers})"


class Linearization:
    """A model's forward pass up to a cut point, frozen at a batch of inputs.

    ``jvp`` maps input-space directions ``(N, *input_shape)`` (or a single
    direction broadcast over the batch) to ``(N, *out_shape)``; ``vjp`` is its
    exact adjoint.
    """

    def __init__(self, model: Model, end: int, X: np.ndarray):
        self.model = model
        self.end = end
        self.n = X.shape[0]
        self.caches = []
        self.in_shape = model.input_shape
        self.out_shape = model.shapes[end]
        A = X
        for layer in model.layers[: end + 1]:
            A, cache = layer.forward(A)
            self.caches.append(cache)
        self.activation = A

    def jvp(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=np.float64)
        if V.shape == self.in_shape:
            V = np.broadcast_to(V, (self.n,) + self.in_shape)
        if V.shape != (self.n,) + self.in_shape:
            raise ShapeError(f"direction shape {V.shape} incompatible with batch of {self.n} x {self.in_shape}")
        for layer, cache in zip(self.model.layers[: self.end + 1], self.caches):
            V = layer.jvp(V, cache)
        return V

    def vjp(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=np.float64)
        if U.shape != (self.n,) + self.out_shape:
            raise ShapeError(f"covector shape {U.shape} != {(self.n,) + self.out_shape}")
        for layer, cache in zip(reversed(self.model.layers[: self.end + 1]), reversed(self.caches)):
            U = layer.vjp(U, cache)
        return U


def build_model(arch: Sequence[dict], input_shape, num_classes: int, seed: int = 0) -> Model:
    """Instantiate a model from a layer list with He-normal initialization.

    ``arch`` entries look like ``{"kind": "conv2d", "filters": 8, "kernel": 3,
    "padding": 1}``, ``{"kind": "relu"}``, ``{"kind": "maxpool", "window": 2}``,
    ``{"kind": "flatten"}`` or ``{"kind": "dense", "units": 10}``.  A
    ``"name"`` key sets the cut-point name.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    layers: List[Layer] = []
    for entry in arch:
        entry = dict(entry)
        kind = entry.pop("kind")
        name = entry.pop("name", "")
        if kind == "conv2d":
            k = int(entry.pop("kernel", 3))
            cout = int(entry.pop("filters"))
            cin = shape[2]
            K = rng.normal(0.0, np.sqrt(2.0 / (k * k * cin)), size=(k, k, cin, cout))
            layer = Conv2d(K, np.zeros(cout), stride=entry.pop("stride", 1), padding=entry.pop("padding", 0), name=name)
        elif kind == "dense":
            units = int(entry.pop("units", num_classes))
            if len(shape) != 1:
                raise ShapeError(f"dense layer needs a flat input, got {shape}; insert a flatten layer")
            W = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=(units, shape[0]))
            layer = Dense(W, np.zeros(units), name=name)
        elif kind == "relu":
            layer = ReLU(name)
        elif kind == "flatten":
            layer = Flatten(name)
        elif kind in ("maxpool", "avgpool"):
            cls = MaxPool if kind == "maxpool" else AvgPool
            layer = cls(entry.pop("window", 2), name=name)
        else:
            raise ShapeError(f"unknown layer kind {kind!r}")
        if entry:
            raise ShapeError(f"unexpected keys for {kind} layer: {sorted(entry)}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Model(layers, input_shape, num_classes)


DEFAULT_ARCH = [
    {"kind": "conv2d", "name": "conv1", "filters": 16, "kernel": 3, "padding": 1},
    {"kind": "relu", "name": "relu1"},
    {"kind": "maxpool", "name": "pool1", "window": 2},
    {"kind": "conv2d", "name": "conv2", "filters": 32, "kernel": 3, "padding": 1},
    {"kind": "relu", "name": "relu2"},
    {"kind": "maxpool", "name": "pool2", "window": 2},
    {"kind": "flatten", "name": "flatten"},
    {"kind": "dense", "name": "logits"},
]
