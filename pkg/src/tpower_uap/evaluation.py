"""Applying perturbations and measuring what they do.

Fooling rate counts label changes and needs no ground truth; attack success
rate is restricted to samples the model classified correctly before the
attack.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from .attack import AttackConfig, Perturbation, pattern_for_shape, top_k_for_damage, tpower_attack
from .exceptions import ChannelMismatchError, EmptyDataError, InvalidWindowError, ShapeError, UndefinedASRError

logger = logging.getLogger(__name__)


def _eps(pert) -> np.ndarray:
    return pert.eps if isinstance(pert, Perturbation) else np.asarray(pert, dtype=np.float64)


def _magnitude(pert, magnitude):
    if magnitude is not None:
        return float(magnitude)
    if isinstance(pert, Perturbation) and pert.config is not None:
        return pert.config.magnitude
    return 1.0


def apply_perturbation(x, pert, magnitude: Optional[float] = None) -> np.ndarray:
    """``clip(x + magnitude * eps, 0, 1)`` for one image or a batch."""
    x = np.asarray(x, dtype=np.float64)
    eps = _eps(pert)
    if x.shape[-eps.ndim :] != eps.shape:
        raise ShapeError(f"perturbation shape {eps.shape} does not match input shape {x.shape}; adapt it first")
    return np.clip(x + _magnitude(pert, magnitude) * eps, 0.0, 1.0)


def predict_batched(model, X, batch_size: int = 256) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise EmptyDataError("nothing to predict")
    return np.concatenate([model.predict(X[i : i + batch_size]) for i in range(0, len(X), batch_size)])


def _samples(data):
    return data.samples if hasattr(data, "samples") else np.asarray(data, dtype=np.float64)


def fooling_rate(model, data, pert, magnitude: Optional[float] = None) -> float:
    """Fraction of samples whose predicted label changes under the attack."""
    X = _samples(data)
    if len(X) == 0:
        raise EmptyDataError("fooling rate of an empty set is undefined")
    clean = predict_batched(model, X)
    attacked = predict_batched(model, apply_perturbation(X, pert, magnitude))
    return float(np.count_nonzero(clean != attacked)) / len(X)


def attack_success_rate(model, data, labels=None, pert=None, magnitude: Optional[float] = None) -> float:
    """Among correctly classified samples, the fraction misclassified after the attack.

    ``data`` may be a :class:`LabeledDataset` (then ``labels`` is taken from it)
    or an array paired with ``labels``.
    """
    X = _samples(data)
    y = np.asarray(data.labels if labels is None else labels)
    if len(X) == 0:
        raise EmptyDataError("attack success rate of an empty set is undefined")
    clean = predict_batched(model, X)
    correct = clean == y
    if not correct.any():
        raise UndefinedASRError("no sample is classified correctly before the attack")
    attacked = predict_batched(model, apply_perturbation(X[correct], pert, magnitude))
    return float(np.count_nonzero(attacked != y[correct])) / int(correct.sum())


def damaged_pixel_fraction(pert) -> float:
    """Share of spatial locations where any channel of the perturbation is nonzero."""
    eps = _eps(pert)
    if eps.ndim == 3:
        return float(np.count_nonzero(np.any(eps != 0, axis=2))) / (eps.shape[0] * eps.shape[1])
    return float(np.count_nonzero(eps)) / eps.size


def median_filter(x, window: int) -> np.ndarray:
    """Per-channel windowed median with replicated borders.

    Accepts a single HxWxC image or a batch of them.
    """
    if int(window) != window or window < 3 or window % 2 == 0:
        raise InvalidWindowError(f"median window must be an odd integer >= 3, got {window}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        size = (window, window, 1)
    elif x.ndim == 4:
        size = (1, window, window, 1)
    else:
        raise ShapeError(f"median_filter expects HxWxC images, got shape {x.shape}")
    return ndimage.median_filter(x, size=size, mode="nearest")


def _fit_axis(a: np.ndarray, axis: int, n: int) -> np.ndarray:
    m = a.shape[axis]
    if m > n:
        start = (m - n) // 2
        return np.take(a, np.arange(start, start + n), axis=axis)
    if m < n:
        before = (n - m) // 2
        pad = [(0, 0)] * a.ndim
        pad[axis] = (before, n - m - before)
        return np.pad(a, pad)
    return a


def adapt_perturbation(pert: Perturbation, target_shape) -> Perturbation:
    """Center-crop or zero-pad the spatial axes to ``target_shape``.

    Padding puts the odd extra row/column at the bottom/right.
    """
    target_shape = tuple(int(s) for s in target_shape)
    eps = pert.eps
    if eps.shape == target_shape:
        return pert
    if eps.ndim != 3 or len(target_shape) != 3:
        raise ShapeError(f"only HxWxC perturbations can be adapted, got {eps.shape} -> {target_shape}")
    if eps.shape[2] != target_shape[2]:
        raise ChannelMismatchError(f"perturbation has {eps.shape[2]} channels, victim expects {target_shape[2]}")
    out = _fit_axis(_fit_axis(eps, 0, target_shape[0]), 1, target_shape[1])
    patch = pert.pattern.descriptor[3] if pert.pattern.descriptor else 1
    return Perturbation(out, pattern_for_shape(target_shape, patch), pert.config, pert.source_model_id,
                        list(pert.objective_trace), method=pert.method)


def transfer_matrix(perts: Mapping[str, Perturbation], models: Mapping[str, object], data,
                    magnitude: Optional[float] = None) -> Dict[str, Dict[str, float]]:
    """``matrix[a][b]`` is the fooling rate on model ``b`` of the perturbation fitted on ``a``."""
    if len(models) < 2:
        raise ValueError("a transfer matrix needs at least two models")
    X = _samples(data)
    out: Dict[str, Dict[str, float]] = {}
    for a, pert in perts.items():
        row = {}
        for b, victim in models.items():
            if a == b:
                continue
            try:
                adapted = adapt_perturbation(pert, victim.input_shape)
            except ChannelMismatchError as exc:
                raise ChannelMismatchError(f"{a} -> {b}: {exc}") from None
            row[b] = fooling_rate(victim, X, adapted, magnitude)
        out[a] = row
    return out


@dataclass
class EvalReport:
    fooling_rate: float
    attack_success_rate: float
    damaged_pixel_fraction: float
    clean_accuracy: float
    attacked_accuracy: float
    n_samples: int
    config_hash: str

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(pert: Perturbation, magnitude: float) -> str:
    payload = {"config": None if pert.config is None else pert.config.to_dict(), "magnitude": magnitude,
               "source_model_id": pert.source_model_id}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def evaluate(model, data, labels=None, pert: Perturbation = None, magnitude: Optional[float] = None,
             return_predictions: bool = False):
    """All metrics of one perturbation on one labeled set."""
    X = _samples(data)
    y = np.asarray(data.labels if labels is None else labels)
    if len(X) == 0:
        raise EmptyDataError("cannot evaluate on an empty set")
    mag = _magnitude(pert, magnitude)
    clean = predict_batched(model, X)
    attacked = predict_batched(model, apply_perturbation(X, pert, mag))
    correct = clean == y
    if not correct.any():
        raise UndefinedASRError("no sample is classified correctly before the attack")
    report = EvalReport(
        fooling_rate=float(np.count_nonzero(clean != attacked)) / len(X),
        attack_success_rate=float(np.count_nonzero(attacked[correct] != y[correct])) / int(correct.sum()),
        damaged_pixel_fraction=damaged_pixel_fraction(pert),
        clean_accuracy=float(np.mean(correct)),
        attacked_accuracy=float(np.mean(attacked == y)),
        n_samples=int(len(X)),
        config_hash=config_hash(pert, mag),
    )
    if return_predictions:
        return report, clean, attacked
    return report


@dataclass
class GridPoint:
    layer: object
    q: float
    patch_size: int
    top_k: int
    val_fr: float
    config: AttackConfig


def _grid_job(args):
    model, fit_X, val_X, config = args
    pert = tpower_attack(model, fit_X, config)
    return fooling_rate(model, val_X, pert, config.magnitude), pert


def grid_search(model, fit_X, val_X, grid: Mapping[str, Sequence], damage: float = 0.05,
                base: Optional[dict] = None, n_jobs: int = 1, return_perturbation: bool = False):
    """Fit one attack per (layer, q, patch_size) and keep the best validation FR.

    ``top_k`` follows from ``damage`` and the patch size.  Ties go to the lower
    layer index, then lower q, then smaller patch size.  Returns
    ``(best_config, rows)`` and, when requested, the winning perturbation.
    """
    layers = list(grid.get("layer", []))
    qs = sorted(float(q) for q in grid.get("q", []))
    patches = sorted(int(s) for s in grid.get("patch_size", []))
    if not (layers and qs and patches):
        raise ValueError("grid must give at least one layer, q and patch_size")
    layers = sorted(layers, key=model.layer_index)
    h, w = model.input_shape[:2]
    base = dict(base or {})
    configs = []
    for layer, q, ps in itertools.product(layers, qs, patches):
        k = top_k_for_damage(h, w, ps, damage)
        configs.append(AttackConfig(layer=layer, q=q, patch_size=ps, top_k=k, **base))
    jobs = [(model, fit_X, val_X, c) for c in configs]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_grid_job, jobs))
    else:
        results = [_grid_job(j) for j in jobs]
    rows: List[GridPoint] = []
    best, best_pert = None, None
    for c, (fr, pert) in zip(configs, results):
        rows.append(GridPoint(c.layer, c.q, c.patch_size, c.top_k, fr, c))
        logger.info("grid point layer=%s q=%g patch=%d: val FR %.4f", c.layer, c.q, c.patch_size, fr)
        if best is None or fr > best.val_fr:
            best, best_pert = rows[-1], pert
    if return_perturbation:
        return best.config, rows, best_pert
    return best.config, rows
