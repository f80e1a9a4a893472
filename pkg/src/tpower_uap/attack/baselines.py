"""Reference attacks: SGD layer maximization and random sparse noise."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..exceptions import EmptyDataError, UnsupportedExponentError
from ..numerics import check_exponent, lp_norm, renormalize_step
from .config import AttackConfig, Perturbation, pattern_for_shape


def project_lp_ball(v, p: float, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{x : ||x||_p <= radius}`` for p in {1, 2, inf}."""
    p = check_exponent(p)
    v = np.asarray(v, dtype=np.float64)
    if math.isinf(p):
        return np.clip(v, -radius, radius)
    if p == 2.0:
        n = lp_norm(v, 2)
        return v if n <= radius else v * (radius / n)
    if p == 1.0:
        a = np.abs(v).ravel()
        if a.sum() <= radius:
            return v.copy()
        # soft threshold at the level that puts the l1 mass on the sphere
        u = np.sort(a)[::-1]
        css = np.cumsum(u)
        j = np.arange(1, a.size + 1)
        rho = np.nonzero(u * j > css - radius)[0][-1]
        theta = (css[rho] - radius) / (rho + 1.0)
        return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)
    raise UnsupportedExponentError(f"projection onto the {p}-ball is only implemented for p in {{1, 2, inf}}")


def sgd_layer_max_attack(model, batch, layer, q: float = 2.0, p: float = math.inf, magnitude: float = 1.0,
                         steps: int = 100, lr: float = 0.01, seed: int = 0,
                         batch_size: Optional[int] = None) -> Perturbation:
    """Dense attack by projected gradient ascent on the true layer deviation.

    Ascends ``sum_x ||l(x + magnitude * eps) - l(x)||_q^q`` over ``eps`` in the
    unit p-ball.  ``batch_size=None`` uses the whole batch every step;
    otherwise minibatches are drawn from ``seed``.  ``objective_trace[t]`` is
    the objective of the iterate before step ``t`` on the samples used for
    that step, followed by the full-batch objective of the final iterate.
    """
    q = check_exponent(q, "q")
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim == len(model.input_shape):
        X = X[None]
    if len(X) == 0:
        raise EmptyDataError("the fitting batch is empty")
    rng = np.random.default_rng(seed)
    eps = project_lp_ball(rng.uniform(-1.0, 1.0, size=model.input_shape), p)
    base = model.forward_to_layer(layer, X)

    def objective_and_grad(idx, e):
        lin = model.linearize(layer, X[idx] + magnitude * e)
        diff = lin.activation - base[idx]
        obj = float(np.sum(np.abs(diff) ** q))
        g = lin.vjp(q * np.sign(diff) * np.abs(diff) ** (q - 1.0))
        return obj, magnitude * g.sum(axis=0)

    trace = []
    everything = np.arange(len(X))
    for _ in range(int(steps)):
        idx = everything if batch_size is None else rng.choice(len(X), size=min(batch_size, len(X)), replace=False)
        obj, g = objective_and_grad(idx, eps)
        trace.append(obj)
        if lr != 0:
            eps = project_lp_ball(eps + lr * g, p)
    trace.append(objective_and_grad(everything, eps)[0])
    n_blocks = pattern_for_shape(model.input_shape, 1).n_blocks
    config = AttackConfig(layer=layer, top_k=n_blocks, q=q, p=p, n_steps=max(int(steps), 1),
                          reduction_steps=max(int(steps), 1), seed=seed, magnitude=magnitude)
    return Perturbation(eps, pattern_for_shape(model.input_shape, 1), config, model.fingerprint(), trace,
                        method="sgd")


def random_perturbation(shape, top_k: int, patch_size: int = 1, p: float = math.inf, seed: int = 0) -> Perturbation:
    """Random ``top_k``-block perturbation on the unit p-sphere.

    Blocks are chosen uniformly without replacement; values are symmetric
    uniform draws mapped through the same renormalization as the attack, so
    for p = inf every entry on the support is +-1.
    """
    pattern = pattern_for_shape(shape, patch_size)
    rng = np.random.default_rng(seed)
    blocks = rng.choice(pattern.n_blocks, size=top_k, replace=False)
    keep = np.zeros(pattern.n_blocks, dtype=bool)
    keep[blocks] = True
    v = rng.uniform(-1.0, 1.0, size=pattern.total_len) * keep[pattern.labels]
    return Perturbation(renormalize_step(v, p).reshape(shape), pattern, method="random")
