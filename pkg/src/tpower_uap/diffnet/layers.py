"""Layer kinds with exact forward- and reverse-mode derivatives.

Every method works on a batch: arrays carry a leading sample axis.  Images
are laid out height x width x channels.  ``forward`` returns the output and a
cache; ``jvp``/``vjp`` reuse that cache so that the ReLU masks and max-pool
routing are the ones chosen on the primal pass, which keeps the two products
exact transposes of each other.
"""

from __future__ import annotations

from typing import Dict, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ShapeError

Shape = Tuple[int, ...]


class Layer:
    kind = "layer"

    def __init__(self, name: str = ""):
        self.name = name
        self.params: Dict[str, np.ndarray] = {}

    def output_shape(self, in_shape: Shape) -> Shape:
        return tuple(in_shape)

    def forward(self, X):
        raise NotImplementedError

    def jvp(self, V, cache):
        raise NotImplementedError

    def vjp(self, U, cache):
        raise NotImplementedError

    def param_grads(self, U, cache) -> Dict[str, np.ndarray]:
        return {}

    def config(self) -> dict:
        return {"kind": self.kind, "name": self.name}

    def __repr__(self):
        extra = ", ".join(f"{k}={v}" for k, v in self.config().items() if k not in ("kind", "name"))
        return f"{type(self).__name__}({self.name!r}{', ' + extra if extra else ''})"


class Dense(Layer):
    """Affine map ``y = W x + b`` with ``W`` of shape (out, in)."""

    kind = "dense"

    def __init__(self, weights, bias=None, name: str = ""):
        super().__init__(name)
        W = np.array(weights, dtype=np.float64)
        if W.ndim != 2:
            raise ShapeError("dense weights must be a matrix")
        b = np.zeros(W.shape[0]) if bias is None else np.array(bias, dtype=np.float64)
        if b.shape != (W.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match {W.shape[0]} outputs")
        self.params = {"weights": W, "bias": b}

    @property
    def in_features(self):
        return self.params["weights"].shape[1]

    @property
    def out_features(self):
        return self.params["weights"].shape[0]

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"{self.name}: expects input ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, X):
        return X @ self.params["weights"].T + self.params["bias"], X

    def jvp(self, V, cache):
        return V @ self.params["weights"].T

    def vjp(self, U, cache):
        return U @ self.params["weights"]

    def param_grads(self, U, cache):
        return {"weights": U.T @ cache, "bias": U.sum(axis=0)}


class Conv2d(Layer):
    """2-D cross-correlation on HWC images; kernels are (kh, kw, c_in, c_out)."""

    kind = "conv2d"

    def __init__(self, kernels, bias=None, stride: int = 1, padding: int = 0, name: str = ""):
        super().__init__(name)
        K = np.array(kernels, dtype=np.float64)
        if K.ndim != 4:
            raise ShapeError("conv kernels must have shape (kh, kw, c_in, c_out)")
        b = np.zeros(K.shape[3]) if bias is None else np.array(bias, dtype=np.float64)
        if b.shape != (K.shape[3],):
            raise ShapeError("conv bias must have one entry per output channel")
        if int(stride) < 1 or int(padding) < 0:
            raise ShapeError("stride must be >= 1 and padding >= 0")
        self.stride = int(stride)
        self.padding = int(padding)
        self.params = {"kernels": K, "bias": b}

    def config(self):
        return {**super().config(), "stride": self.stride, "padding": self.padding}

    def output_shape(self, in_shape):
        kh, kw, cin, cout = self.params["kernels"].shape
        if len(in_shape) != 3 or in_shape[2] != cin:
            raise ShapeError(f"{self.name}: expects HxWx{cin} input, got {tuple(in_shape)}")
        h, w = in_shape[0] + 2 * self.padding, in_shape[1] + 2 * self.padding
        if h < kh or w < kw:
            raise ShapeError(f"{self.name}: input smaller than kernel")
        return ((h - kh) // self.stride + 1, (w - kw) // self.stride + 1, cout)

    def _windows(self, X):
        p, s = self.padding, self.stride
        kh, kw = self.params["kernels"].shape[:2]
        if p:
            X = np.pad(X, ((0, 0), (p, p), (p, p), (0, 0)))
        win = sliding_window_view(X, (kh, kw), axis=(1, 2))
        return win[:, ::s, ::s]  # (N, Ho, Wo, C, kh, kw)

    def _correlate(self, X):
        K = self.params["kernels"].transpose(2, 0, 1, 3)  # (C, kh, kw, O)
        return np.tensordot(self._windows(X), K, axes=([3, 4, 5], [0, 1, 2]))

    def forward(self, X):
        return self._correlate(X) + self.params["bias"], X

    def jvp(self, V, cache):
        return self._correlate(V)

    def vjp(self, U, cache):
        K = self.params["kernels"]
        kh, kw = K.shape[:2]
        n, h, w, _ = cache.shape
        p, s = self.padding, self.stride
        ho, wo = U.shape[1:3]
        G = np.zeros((n, h + 2 * p, w + 2 * p, K.shape[2]))
        for i in range(kh):
            for j in range(kw):
                G[:, i : i + s * ho : s, j : j + s * wo : s, :] += U @ K[i, j].T
        return G[:, p : p + h, p : p + w, :]

    def param_grads(self, U, cache):
        gK = np.tensordot(self._windows(cache), U, axes=([0, 1, 2], [0, 1, 2]))  # (C, kh, kw, O)
        return {"kernels": gK.transpose(1, 2, 0, 3), "bias": U.sum(axis=(0, 1, 2))}


class ReLU(Layer):
    kind = "relu"

    def forward(self, X):
        mask = X > 0
        return np.where(mask, X, 0.0), mask

    def jvp(self, V, mask):
        return np.where(mask, V, 0.0)

    def vjp(self, U, mask):
        return np.where(mask, U, 0.0)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, X):
        return X.reshape(X.shape[0], -1), X.shape

    def jvp(self, V, shape):
        return V.reshape(V.shape[0], -1)

    def vjp(self, U, shape):
        return U.reshape(shape)


class _Pool(Layer):
    def __init__(self, window: int, name: str = ""):
        super().__init__(name)
        if int(window) < 1:
            raise ShapeError("pool window must be >= 1")
        self.window = int(window)

    def config(self):
        return {**super().config(), "window": self.window}

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: expects an HxWxC input, got {tuple(in_shape)}")
        h, w, c = in_shape
        if h < self.window or w < self.window:
            raise ShapeError(f"{self.name}: input smaller than pool window")
        return (h // self.window, w // self.window, c)

    def _blocks(self, X):
        # (N, Ho, Wo, C, window*window), window entries in row-major order
        n, h, w, c = X.shape
        k = self.window
        ho, wo = h // k, w // k
        B = X[:, : ho * k, : wo * k, :].reshape(n, ho, k, wo, k, c)
        return B.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, k * k)

    def _unblocks(self, B, in_shape):
        n, h, w, c = in_shape
        k = self.window
        ho, wo = B.shape[1:3]
        X = np.zeros((n, h, w, c))
        X[:, : ho * k, : wo * k, :] = B.reshape(n, ho, wo, c, k, k).transpose(0, 1, 4, 2, 5, 3).reshape(
            n, ho * k, wo * k, c
        )
        return X


class MaxPool(_Pool):
    """Non-overlapping max pooling; ties route to the first window entry."""

    kind = "maxpool"

    def forward(self, X):
        B = self._blocks(X)
        idx = np.argmax(B, axis=-1)[..., None]
        return np.take_along_axis(B, idx, axis=-1)[..., 0], (idx, X.shape)

    def jvp(self, V, cache):
        idx, shape = cache
        B = self._blocks(np.broadcast_to(V, shape))
        return np.take_along_axis(B, idx, axis=-1)[..., 0]

    def vjp(self, U, cache):
        idx, shape = cache
        B = np.zeros(U.shape + (self.window * self.window,))
        np.put_along_axis(B, idx, U[..., None], axis=-1)
        return self._unblocks(B, shape)


class AvgPool(_Pool):
    kind = "avgpool"

    def forward(self, X):
        return self._blocks(X).mean(axis=-1), X.shape

    def jvp(self, V, shape):
        return self._blocks(np.broadcast_to(V, shape)).mean(axis=-1)

    def vjp(self, U, shape):
        kk = self.window * self.window
        B = np.repeat((U / kk)[..., None], kk, axis=-1)
        return self._unblocks(B, shape)


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv2d, ReLU, Flatten, MaxPool, AvgPool)}
