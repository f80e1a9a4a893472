"""Small sequential networks with exact JVP/VJP at every layer boundary."""

import numpy as np

from .layers import AvgPool, Conv2d, Dense, Flatten, Layer, MaxPool, ReLU
from .model import DEFAULT_ARCH, Linearization, Model, build_model
from .serialization import load_model, save_model
from .training import accuracy, train_sgd


def forward(model: Model, x):
    return model.forward(x)


def forward_to_layer(model: Model, cut, x):
    return model.forward_to_layer(cut, x)


def jvp(model: Model, cut, x, v):
    return model.jvp(cut, x, v)


def vjp(model: Model, cut, x, u):
    return model.vjp(cut, x, u)


def predict(model: Model, x):
    return model.predict(x)


__all__ = [
    "AvgPool", "Conv2d", "Dense", "Flatten", "Layer", "MaxPool", "ReLU",
    "DEFAULT_ARCH", "Linearization", "Model", "build_model",
    "load_model", "save_model", "accuracy", "train_sgd",
    "forward", "forward_to_layer", "jvp", "vjp", "predict",
]
