"""Minibatch SGD on softmax cross-entropy."""

from __future__ import annotations

import logging

import numpy as np

from ..exceptions import EmptyDataError, ShapeError
from .model import Model

logger = logging.getLogger(__name__)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-300))
    g = p
    g[np.arange(n), labels] -= 1.0
    return float(loss), g / n


def backprop(model: Model, X, y):
    """Loss and per-parameter gradients ``{(layer, param): grad}`` on one batch."""
    A, caches = X, []
    for layer in model.layers:
        A, cache = layer.forward(A)
        caches.append(cache)
    loss, U = softmax_cross_entropy(A, y)
    grads = {}
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        for k, g in layer.param_grads(U, cache).items():
            grads[(layer.name, k)] = g
        if layer is not model.layers[0]:
            U = layer.vjp(U, cache)
    return loss, grads


def accuracy(model: Model, X, y, batch_size: int = 256) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        raise EmptyDataError("accuracy of an empty set is undefined")
    pred = np.concatenate([model.predict(X[i : i + batch_size]) for i in range(0, len(y), batch_size)])
    return float(np.mean(pred == y))


def train_sgd(model: Model, X, y, epochs: int = 10, lr: float = 0.05, batch_size: int = 32, seed: int = 0) -> Model:
    """Train a copy of ``model`` with plain minibatch SGD.

    The sample order of every epoch is drawn from ``seed``, so runs are
    reproducible.  The returned model records ``train_accuracy`` and
    ``train_loss`` in its metadata.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise EmptyDataError("cannot train on an empty dataset")
    if len(X) != len(y):
        raise ShapeError(f"{len(X)} samples but {len(y)} labels")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ShapeError(f"labels must lie in [0, {model.num_classes})")
    model = model.copy()
    params = {(l.name, k): a for l in model.layers for k, a in l.params.items()}
    rng = np.random.default_rng(seed)
    loss = float("nan")
    for epoch in range(int(epochs)):
        order = rng.permutation(len(X))
        losses = []
        for start in range(0, len(X), batch_size):
            idx = order[start : start + batch_size]
            loss, grads = backprop(model, X[idx], y[idx])
            losses.append(loss)
            if lr != 0:
                for key, g in grads.items():
                    params[key] -= lr * g
        loss = float(np.mean(losses))
        logger.info("epoch %d: loss %.4f", epoch + 1, loss)
    model.metadata["train_loss"] = loss
    model.metadata["train_accuracy"] = accuracy(model, X, y)
    return model
