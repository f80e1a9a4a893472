"""Truncated power iteration for sparse (p, q)-singular vectors.

Each step takes the ascent direction ``sum_x J(x)^T psi_q(J(x) eps)``, keeps
its ``k`` strongest blocks and maps the result back onto the unit p-sphere.
``k`` starts at ``init_truncation`` of the block count and shrinks
geometrically to ``top_k``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..exceptions import DegenerateIterateError, EmptyDataError, InvalidKError, ZeroInputError
from ..jacobian import BatchJacobian, ModelBatchJacobian
from ..numerics import SparsityPattern, dual_exponent, psi, renormalize_step, truncate_topk
from .config import AttackConfig, Perturbation, pattern_for_shape

logger = logging.getLogger(__name__)


def cardinality_schedule(k_current: int, top_k: int, n_steps: int, reduction_steps: int,
                         k_initial: Optional[int] = None) -> int:
    """Next cardinality after a reduction step.

    The shrink factor is ``(k_base / top_k) ** (reduction_steps / n_steps)``
    where ``k_base`` is ``k_initial`` when given and ``k_current`` otherwise.
    With ``k_initial`` the schedule is geometric and lands on ``top_k``
    after ``n_steps // reduction_steps`` reductions.  The result is floored
    and never drops below ``top_k``.
    """
    if k_current <= top_k:
        return int(top_k)
    base = k_current if k_initial is None else k_initial
    factor = (base / top_k) ** (reduction_steps / n_steps)
    # the small slack keeps exact quotients such as 100/10 from flooring to 9
    return int(max(math.floor(k_current / factor + 1e-9), top_k))


def initial_cardinality(init_truncation: float, n_blocks: int, top_k: int) -> int:
    if top_k > n_blocks:
        raise InvalidKError(f"top_k={top_k} exceeds the {n_blocks} available blocks")
    return int(min(max(math.floor(init_truncation * n_blocks + 1e-9), top_k), n_blocks))


def random_start(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric uniform draw mapped onto the unit p-sphere."""
    return renormalize_step(rng.uniform(-1.0, 1.0, size=n), p)


@dataclass
class IterationResult:
    eps: np.ndarray
    objective_trace: List[float] = field(default_factory=list)
    k_trace: List[int] = field(default_factory=list)
    restarted: bool = False


def _images_objective(batch_op: BatchJacobian, eps, q):
    images = batch_op.apply_all(eps)
    if isinstance(images, np.ndarray):
        return images, float(np.sum(np.abs(images) ** q))
    return images, float(sum(np.sum(np.abs(b) ** q) for b in images))


def _run(batch_op, pattern, eps, top_k, n_steps, q, p, k0, reduction_steps):
    pstar = dual_exponent(p)
    k = k0
    trace, ks = [], []
    images, _ = _images_objective(batch_op, eps, q)
    for s in range(1, n_steps + 1):
        if isinstance(images, np.ndarray):
            d = batch_op.adjoint_sum(psi(images, q))
        else:
            d = batch_op.adjoint_sum([psi(b, q) for b in images])
        d = truncate_topk(d, k, pattern, pstar)
        eps = renormalize_step(d, p)  # raises ZeroInputError on collapse
        ks.append(k)
        images, obj = _images_objective(batch_op, eps, q)
        trace.append(obj)
        if reduction_steps and s % reduction_steps == 0:
            k = cardinality_schedule(k, top_k, n_steps, reduction_steps, k_initial=k0)
    if len(pattern.active_blocks(eps)) > top_k:
        # the last reduction happens after the last update; project once more
        eps = renormalize_step(truncate_topk(eps, top_k, pattern, pstar), p)
        trace[-1] = _images_objective(batch_op, eps, q)[1]
    return eps, trace, ks


def tpower_iterate(batch_op: BatchJacobian, pattern: SparsityPattern, top_k: int, n_steps: int,
                   q: float = 2.0, p: float = 2.0, init_truncation: float = 1.0,
                   reduction_steps: Optional[int] = None, seed: int = 0,
                   eps0=None) -> IterationResult:
    """Run the truncated power iteration on an arbitrary batch operator.

    ``reduction_steps=None`` keeps ``k`` fixed at its initial value.  ``eps0``
    overrides the random start; it is used as given (no renormalization).
    If the iterate collapses to zero the run restarts once from a fresh random
    start and raises :class:`DegenerateIterateError` if that collapses too.
    """
    if len(batch_op) == 0:
        raise EmptyDataError("empty batch")
    if pattern.total_len != batch_op.in_dim:
        raise ValueError(f"pattern covers {pattern.total_len} entries, operator input has {batch_op.in_dim}")
    k0 = initial_cardinality(init_truncation, pattern.n_blocks, top_k)
    rng = np.random.default_rng(seed)
    start = random_start(batch_op.in_dim, p, rng) if eps0 is None else np.asarray(eps0, dtype=np.float64).ravel()
    try:
        eps, trace, ks = _run(batch_op, pattern, start, top_k, n_steps, q, p, k0, reduction_steps)
        return IterationResult(eps, trace, ks)
    except ZeroInputError:
        logger.warning("iterate collapsed to zero; restarting from a reseeded start")
    rng = np.random.default_rng([seed, 1])
    try:
        eps, trace, ks = _run(batch_op, pattern, random_start(batch_op.in_dim, p, rng), top_k, n_steps,
                              q, p, k0, reduction_steps)
    except ZeroInputError:
        raise DegenerateIterateError("iterate collapsed to zero twice; the Jacobian batch may be degenerate")
    return IterationResult(eps, trace, ks, restarted=True)


def tpower_attack(model, batch, config: AttackConfig, chunk_size: int = 256) -> Perturbation:
    """Sparse universal perturbation of ``model`` at ``config.layer``."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == len(model.input_shape):
        batch = batch[None]
    if len(batch) == 0:
        raise EmptyDataError("the fitting batch is empty")
    op = ModelBatchJacobian(model, config.layer, batch, chunk_size=chunk_size)
    pattern = pattern_for_shape(model.input_shape, config.patch_size)
    res = tpower_iterate(op, pattern, config.top_k, config.n_steps, q=config.q, p=config.p,
                         init_truncation=config.init_truncation, reduction_steps=config.reduction_steps,
                         seed=config.seed)
    return Perturbation(res.eps.reshape(model.input_shape), pattern, config, model.fingerprint(),
                        res.objective_trace, method="tpower")


def sv_attack(model, batch, layer, q: float = 2.0, p: float = math.inf, n_steps: int = 100,
              seed: int = 0, magnitude: float = 1.0, reduction_steps: Optional[int] = None) -> Perturbation:
    """Dense (p, q)-singular vector attack: the same loop without truncation.

    ``reduction_steps`` has no effect on the iterate (the cardinality is
    already full); it only fills the stored config.
    """
    n_blocks = pattern_for_shape(model.input_shape, 1).n_blocks
    config = AttackConfig(layer=layer, top_k=n_blocks, q=q, p=p, patch_size=1, n_steps=n_steps,
                          init_truncation=1.0, reduction_steps=reduction_steps or n_steps, seed=seed,
                          magnitude=magnitude)
    pert = tpower_attack(model, batch, config)
    pert.method = "sv"
    return pert
