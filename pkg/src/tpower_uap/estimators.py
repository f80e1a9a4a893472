"""scikit-learn compatible wrappers.

``TPowerAttack`` and the two dense baselines follow the transformer protocol:
``fit`` computes a universal perturbation from unlabeled images and
``transform`` applies it.  ``NetworkClassifier`` trains a victim network and
``MedianFilter`` is a stateless preprocessing defense, so all of them drop
into ``sklearn.pipeline.Pipeline``.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images, check_labels
from .attack import AttackConfig, sgd_layer_max_attack, sv_attack, top_k_for_damage, tpower_attack
from .diffnet import DEFAULT_ARCH, build_model, train_sgd
from .evaluation import apply_perturbation, attack_success_rate, fooling_rate, median_filter, predict_batched


class NetworkClassifier(ClassifierMixin, BaseEstimator):
    """Sequential network trained with minibatch SGD.

    Parameters
    ----------
    arch : list of dict, optional
        Layer list understood by :func:`tpower_uap.diffnet.build_model`.
        Defaults to a two-block conv net.
    epochs, lr, batch_size : training schedule.
    random_state : int
        Seeds both weight initialization and the shuffling order.
    """

    def __init__(self, arch=None, epochs=10, lr=0.05, batch_size=32, random_state=0):
        self.arch = arch
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, len(X))
        self.classes_ = np.arange(int(y.max()) + 1)
        model = build_model(self.arch or DEFAULT_ARCH, X.shape[1:], len(self.classes_), seed=self.random_state)
        self.model_ = train_sgd(model, X, y, epochs=self.epochs, lr=self.lr, batch_size=self.batch_size,
                                seed=self.random_state)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict_batched(self.model_, check_images(X, self.model_.input_shape))

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.forward(check_images(X, self.model_.input_shape))


class _UniversalAttack(TransformerMixin, BaseEstimator):
    def _check_model(self):
        if self.model is None:
            raise ValueError(f"{type(self).__name__} needs a victim model")
        return getattr(self.model, "model_", self.model)

    def transform(self, X):
        check_is_fitted(self, "perturbation_")
        X = check_images(X, self.perturbation_.shape)
        return apply_perturbation(X, self.perturbation_, self.magnitude)

    def fooling_rate(self, X):
        check_is_fitted(self, "perturbation_")
        return fooling_rate(self._check_model(), check_images(X), self.perturbation_, self.magnitude)

    def attack_success_rate(self, X, y):
        check_is_fitted(self, "perturbation_")
        X = check_images(X)
        return attack_success_rate(self._check_model(), X, check_labels(y, len(X)), self.perturbation_,
                                   self.magnitude)

    def score(self, X, y=None):
        """Fooling rate on ``X``; higher means a stronger attack."""
        return self.fooling_rate(X)

    def _store(self, pert):
        self.perturbation_ = pert
        self.eps_ = pert.eps
        self.support_ = pert.support
        self.objective_trace_ = np.asarray(pert.objective_trace)
        return self


class TPowerAttack(_UniversalAttack):
    """Sparse universal perturbation from truncated (p, q)-singular vectors.

    Parameters
    ----------
    model : Model or fitted NetworkClassifier
        The victim network.
    layer : str or int
        Cut point whose Jacobian is attacked.
    q, p : float
        Exponents of the layer deviation norm and the perturbation norm.
    top_k : int, optional
        Number of active patches.  When ``None`` it follows from ``damage``.
    damage : float
        Target share of damaged pixels used when ``top_k`` is ``None``.
    patch_size, n_steps, init_truncation, reduction_steps : iteration knobs.
    magnitude : float
        Scale applied by ``transform``.
    random_state : int
        Seed of the random start.
    """

    def __init__(self, model=None, layer=0, q=1.0, p=math.inf, top_k=None, damage=0.05, patch_size=1,
                 n_steps=100, init_truncation=1.0, reduction_steps=10, magnitude=1.0, random_state=0):
        self.model = model
        self.layer = layer
        self.q = q
        self.p = p
        self.top_k = top_k
        self.damage = damage
        self.patch_size = patch_size
        self.n_steps = n_steps
        self.init_truncation = init_truncation
        self.reduction_steps = reduction_steps
        self.magnitude = magnitude
        self.random_state = random_state

    def make_config(self) -> AttackConfig:
        model = self._check_model()
        top_k = self.top_k
        if top_k is None:
            shape = model.input_shape
            if len(shape) < 2:
                raise ValueError("top_k must be given for non-image inputs")
            top_k = top_k_for_damage(shape[0], shape[1], self.patch_size, self.damage)
        return AttackConfig(layer=self.layer, top_k=top_k, q=self.q, p=self.p, patch_size=self.patch_size,
                            n_steps=self.n_steps, init_truncation=self.init_truncation,
                            reduction_steps=self.reduction_steps, seed=self.random_state,
                            magnitude=self.magnitude)

    def fit(self, X, y=None):
        model = self._check_model()
        X = check_images(X, model.input_shape)
        return self._store(tpower_attack(model, X, self.make_config()))


class SVAttack(_UniversalAttack):
    """Dense (p, q)-singular vector attack (no truncation)."""

    def __init__(self, model=None, layer=0, q=2.0, p=math.inf, n_steps=100, magnitude=10 / 255, random_state=0):
        self.model = model
        self.layer = layer
        self.q = q
        self.p = p
        self.n_steps = n_steps
        self.magnitude = magnitude
        self.random_state = random_state

    def fit(self, X, y=None):
        model = self._check_model()
        X = check_images(X, model.input_shape)
        return self._store(sv_attack(model, X, self.layer, q=self.q, p=self.p, n_steps=self.n_steps,
                                     seed=self.random_state, magnitude=self.magnitude))


class SGDLayerMaxAttack(_UniversalAttack):
    """Dense attack by projected gradient ascent on the true layer deviation."""

    def __init__(self, model=None, layer=0, q=2.0, p=math.inf, magnitude=10 / 255, steps=100, lr=0.01,
                 batch_size=None, random_state=0):
        self.model = model
        self.layer = layer
        self.q = q
        self.p = p
        self.magnitude = magnitude
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y=None):
        model = self._check_model()
        X = check_images(X, model.input_shape)
        return self._store(sgd_layer_max_attack(model, X, self.layer, q=self.q, p=self.p,
                                                magnitude=self.magnitude, steps=self.steps, lr=self.lr,
                                                seed=self.random_state, batch_size=self.batch_size))


class MedianFilter(TransformerMixin, BaseEstimator):
    """Per-channel median filtering of HxWxC images (stateless)."""

    def __init__(self, window=3):
        self.window = window

    def fit(self, X, y=None):
        check_images(X)
        return self

    def transform(self, X):
        return median_filter(check_images(X), self.window)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
