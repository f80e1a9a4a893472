"""Norm, duality and truncation primitives used by the power iterations.

All functions operate on flat float64 vectors and never mutate their inputs.
Norm exponents are plain floats; ``math.inf`` stands for the max-norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    InvalidExponentError,
    InvalidKError,
    ShapeError,
    UnsupportedExponentError,
    ZeroInputError,
)

INFINITY = math.inf


def check_exponent(p: float, name: str = "p") -> float:
    """Validate a norm exponent and return it as a float."""
    try:
        p = float(p)
    except (TypeError, ValueError):
        raise InvalidExponentError(f"{name} must be a number >= 1 or inf, got {p!r}")
    if math.isnan(p) or p < 1:
        raise InvalidExponentError(f"{name} must be >= 1 or inf, got {p}")
    return p


def _as_vec(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        v = v.reshape(-1)
    return v


def psi(v, q: float) -> np.ndarray:
    """Elementwise ``sign(v) * |v|**(q - 1)`` with ``sign(0) = 0``.

    This is the gradient direction of ``||v||_q^q`` (up to the factor q).
    """
    q = check_exponent(q, "q")
    if math.isinf(q):
        raise UnsupportedExponentError("psi is undefined for q = inf")
    v = np.asarray(v, dtype=np.float64)
    if q == 2.0:
        return v.copy()
    if q == 1.0:
        return np.sign(v)
    return np.sign(v) * np.abs(v) ** (q - 1.0)


def lp_norm(v, p: float) -> float:
    p = check_exponent(p)
    v = _as_vec(v)
    if v.size == 0:
        return 0.0
    a = np.abs(v)
    if math.isinf(p):
        return float(a.max())
    if p == 1.0:
        return float(a.sum())
    if p == 2.0:
        return float(np.sqrt(np.dot(a, a)))
    # scale first so large exponents do not overflow
    m = a.max()
    if m == 0.0:
        return 0.0
    return float(m * np.sum((a / m) ** p) ** (1.0 / p))


def dual_exponent(p: float) -> float:
    """Return p* with 1/p + 1/p* = 1."""
    p = check_exponent(p)
    if p == 1.0:
        return INFINITY
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def dual_witness(b, q: float) -> np.ndarray:
    """Maximizer of ``y @ b`` over the unit ``q*``-sphere.

    The maximum value equals ``||b||_q``.
    """
    b = _as_vec(b)
    if not np.any(b):
        raise ZeroInputError("dual_witness needs a nonzero vector")
    y = psi(b, q)
    return y / lp_norm(y, dual_exponent(q))


@dataclass(frozen=True)
class SparsityPattern:
    """Partition of ``range(total_len)`` into index blocks.

    ``labels[i]`` is the block id of flat index ``i``; block ids run over
    ``0..n_blocks-1``.  Grid patterns built by :meth:`from_grid` also carry a
    ``descriptor`` of ``(height, width, channels, patch_size)``.
    """

    labels: np.ndarray
    n_blocks: int
    descriptor: Optional[Tuple[int, int, int, int]] = None
    _sizes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.size == 0:
            raise ShapeError("a sparsity pattern needs at least one index")
        if labels.min() < 0 or labels.max() >= self.n_blocks:
            raise ShapeError("block labels out of range")
        sizes = np.bincount(labels, minlength=self.n_blocks)
        if np.any(sizes == 0):
            raise ShapeError("every block must contain at least one index")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_sizes", sizes)

    @property
    def total_len(self) -> int:
        return int(self.labels.size)

    @property
    def block_sizes(self) -> np.ndarray:
        return self._sizes.copy()

    @property
    def blocks(self) -> list:
        """Index arrays of each block, in block order."""
        order = np.argsort(self.labels, kind="stable")
        return np.split(order, np.cumsum(self._sizes)[:-1])

    @classmethod
    def singletons(cls, n: int) -> "SparsityPattern":
        return cls(np.arange(n), n)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Sequence[int]], total_len: int) -> "SparsityPattern":
        labels = np.full(total_len, -1, dtype=np.int64)
        for b, idx in enumerate(blocks):
            idx = np.asarray(idx, dtype=np.int64)
            if np.any(labels[idx] != -1):
                raise ShapeError("blocks overlap")
            labels[idx] = b
        if np.any(labels == -1):
            raise ShapeError("blocks do not cover every index")
        return cls(labels, len(blocks))

    @classmethod
    def from_grid(cls, height: int, width: int, channels: int, patch_size: int) -> "SparsityPattern":
        """Square spatial patches spanning all channels of an HWC image.

        Edge patches are smaller when ``patch_size`` does not divide the side.
        """
        if patch_size < 1:
            raise ShapeError("patch_size must be positive")
        nbr = -(-height // patch_size)
        nbc = -(-width // patch_size)
        rows = np.arange(height) // patch_size
        cols = np.arange(width) // patch_size
        block = rows[:, None] * nbc + cols[None, :]
        labels = np.repeat(block.reshape(-1), channels)
        return cls(labels, nbr * nbc, (height, width, channels, patch_size))

    def block_norms(self, v, p: float) -> np.ndarray:
        """lp norm of ``v`` restricted to each block."""
        p = check_exponent(p)
        a = np.abs(_as_vec(v))
        if a.size != self.total_len:
            raise ShapeError(f"vector length {a.size} != pattern length {self.total_len}")
        if math.isinf(p):
            out = np.zeros(self.n_blocks)
            np.maximum.at(out, self.labels, a)
            return out
        if p == 1.0:
            return np.bincount(self.labels, weights=a, minlength=self.n_blocks)
        s = np.bincount(self.labels, weights=a**p, minlength=self.n_blocks)
        return s ** (1.0 / p)

    def active_blocks(self, v) -> np.ndarray:
        """Sorted ids of blocks holding at least one nonzero entry."""
        nz = _as_vec(v) != 0
        return np.unique(self.labels[nz])

    def to_dict(self) -> dict:
        if self.descriptor is not None:
            h, w, c, ps = self.descriptor
            return {"kind": "grid", "height": h, "width": w, "channels": c, "patch_size": ps}
        return {"kind": "labels", "n_blocks": self.n_blocks, "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SparsityPattern":
        if d["kind"] == "grid":
            return cls.from_grid(d["height"], d["width"], d["channels"], d["patch_size"])
        return cls(np.asarray(d["labels"]), d["n_blocks"])


def top_blocks(v, k: int, pattern: SparsityPattern, pstar: float) -> np.ndarray:
    """Ids of the ``k`` blocks with largest ``pstar``-norm, ties to the lowest id."""
    k = int(k)
    if k < 1 or k > pattern.n_blocks:
        raise InvalidKError(f"k must lie in [1, {pattern.n_blocks}], got {k}")
    norms = pattern.block_norms(v, pstar)
    return np.sort(np.argsort(-norms, kind="stable")[:k])


def truncate_topk(v, k: int, pattern: SparsityPattern, pstar: float) -> np.ndarray:
    """Keep the entries of the ``k`` strongest blocks and zero everything else."""
    v = _as_vec(v)
    keep = np.zeros(pattern.n_blocks, dtype=bool)
    keep[top_blocks(v, k, pattern, pstar)] = True
    out = v.copy()
    out[~keep[pattern.labels]] = 0.0
    return out


def renormalize_step(v, p: float) -> np.ndarray:
    """Map a truncated ascent direction back onto the unit p-sphere."""
    v = _as_vec(v)
    if not np.any(v):
        raise ZeroInputError("cannot renormalize the zero iterate")
    pstar = dual_exponent(p)
    # psi is homogeneous, so rescaling first only guards against overflow
    v = v / np.abs(v).max()
    if math.isinf(pstar):
        # limit of psi_{p*} as p* -> inf: all mass on the largest entries
        w = np.sign(v) * (np.abs(v) == 1.0)
    else:
        w = psi(v, pstar)
    return w / lp_norm(w, p)
