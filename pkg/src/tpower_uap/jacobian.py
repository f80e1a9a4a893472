"""Matrix-free linear operators over layer Jacobians.

Operators act on flat float64 vectors.  A :class:`BatchJacobian` stacks one
operator per sample and shares a single input space, which is where the
universal perturbation lives.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import EmptyDataError, ShapeError, TooLargeError
from .numerics import psi


class LinearOperator:
    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    def apply(self, v) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, u) -> np.ndarray:
        raise NotImplementedError

    def _check(self, v, n, what):
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.size != n:
            raise ShapeError(f"{what} has length {v.size}, operator expects {n}")
        return v

    def __repr__(self):
        return f"{type(self).__name__}({self.out_dim}x{self.in_dim})"


class MatrixOperator(LinearOperator):
    def __init__(self, matrix):
        M = np.array(matrix, dtype=np.float64)
        if M.ndim != 2:
            raise ShapeError("MatrixOperator needs a 2-D array")
        super().__init__(M.shape[1], M.shape[0])
        self.matrix = M

    def apply(self, v):
        return self.matrix @ self._check(v, self.in_dim, "direction")

    def adjoint(self, u):
        return self.matrix.T @ self._check(u, self.out_dim, "covector")


class IdentityOperator(LinearOperator):
    def __init__(self, dim: int):
        super().__init__(dim, dim)

    def apply(self, v):
        return self._check(v, self.in_dim, "direction").copy()

    def adjoint(self, u):
        return self._check(u, self.out_dim, "covector").copy()


class ModelJacobian(LinearOperator):
    """Jacobian of ``x -> activation at cut`` frozen at one input sample."""

    def __init__(self, model, cut, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != model.input_shape:
            raise ShapeError(f"sample shape {x.shape} != model input shape {model.input_shape}")
        self._lin = model.linearize(cut, x)
        self.in_shape = model.input_shape
        self.out_shape = self._lin.out_shape
        super().__init__(np.prod(self.in_shape), np.prod(self.out_shape))

    def apply(self, v):
        v = self._check(v, self.in_dim, "direction")
        return self._lin.jvp(v.reshape((1,) + self.in_shape)).reshape(-1)

    def adjoint(self, u):
        u = self._check(u, self.out_dim, "covector")
        return self._lin.vjp(u.reshape((1,) + self.out_shape)).reshape(-1)


def from_model(model, cut, x) -> ModelJacobian:
    return ModelJacobian(model, cut, x)


def materialize(op: LinearOperator, max_dim: int = 4096) -> np.ndarray:
    """Dense matrix of ``op`` assembled column by column from basis vectors."""
    if op.in_dim > max_dim or op.out_dim > max_dim:
        raise TooLargeError(f"operator {op.out_dim}x{op.in_dim} exceeds max_dim={max_dim}")
    M = np.empty((op.out_dim, op.in_dim))
    e = np.zeros(op.in_dim)
    for j in range(op.in_dim):
        e[j] = 1.0
        M[:, j] = op.apply(e)
        e[j] = 0.0
    return M


def materialize_adjoint(op: LinearOperator, max_dim: int = 4096) -> np.ndarray:
    """Dense matrix of the adjoint, assembled from basis covectors."""
    if op.in_dim > max_dim or op.out_dim > max_dim:
        raise TooLargeError(f"operator {op.out_dim}x{op.in_dim} exceeds max_dim={max_dim}")
    M = np.empty((op.in_dim, op.out_dim))
    e = np.zeros(op.out_dim)
    for j in range(op.out_dim):
        e[j] = 1.0
        M[:, j] = op.adjoint(e)
        e[j] = 0.0
    return M


class BatchJacobian:
    """Per-sample operators sharing one input space.

    ``apply_all`` returns the per-sample images as a list in sample order;
    ``adjoint_sum`` returns the adjoint of the stacked operator applied to
    those per-sample covectors, summed in sample order.
    """

    def __init__(self, operators: Sequence[LinearOperator]):
        self.operators = list(operators)
        if not self.operators:
            raise EmptyDataError("a batch Jacobian needs at least one sample")
        dims = {op.in_dim for op in self.operators}
        if len(dims) != 1:
            raise ShapeError(f"inconsistent input dimensions across the batch: {sorted(dims)}")
        self.in_dim = dims.pop()

    def __len__(self):
        return len(self.operators)

    def __getitem__(self, i):
        return self.operators[i]

    @property
    def out_dim(self) -> int:
        return sum(op.out_dim for op in self.operators)

    def apply_all(self, v):
        return [op.apply(v) for op in self.operators]

    def adjoint_sum(self, us) -> np.ndarray:
        total = np.zeros(self.in_dim)
        for op, u in zip(self.operators, us):
            total += op.adjoint(u)
        return total

    def apply(self, v) -> np.ndarray:
        """Stacked operator applied to ``v`` (concatenated per-sample images)."""
        return np.concatenate([np.ravel(b) for b in self.apply_all(v)])

    def objective(self, v, q: float) -> float:
        """``sum_x ||J(x) v||_q^q``."""
        return float(sum(np.sum(np.abs(b) ** q) for b in self.apply_all(v)))


class ModelBatchJacobian(BatchJacobian):
    """Vectorized batch of model Jacobians at one cut point.

    All samples go through the network together; the result matches the
    per-sample :class:`ModelJacobian` list exactly.
    """

    def __init__(self, model, cut, X, chunk_size: int = 256):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == len(model.input_shape):
            X = X[None]
        if len(X) == 0:
            raise EmptyDataError("a batch Jacobian needs at least one sample")
        if X.shape[1:] != model.input_shape:
            raise ShapeError(f"batch shape {X.shape} incompatible with model input {model.input_shape}")
        self.model, self.cut, self.X = model, cut, X
        self.in_shape = model.input_shape
        self.out_shape = model.layer_shape(cut)
        self.in_dim = int(np.prod(self.in_shape))
        self._per_out = int(np.prod(self.out_shape))
        self._chunks = [model.linearize(cut, X[i : i + chunk_size]) for i in range(0, len(X), chunk_size)]

    def __len__(self):
        return len(self.X)

    def __getitem__(self, i):
        return ModelJacobian(self.model, self.cut, self.X[i])

    @property
    def operators(self):
        return [self[i] for i in range(len(self))]

    @property
    def out_dim(self):
        return len(self) * self._per_out

    def apply_all(self, v):
        v = np.asarray(v, dtype=np.float64).reshape(self.in_shape)
        return np.concatenate([lin.jvp(v) for lin in self._chunks]).reshape(len(self), -1)

    def adjoint_sum(self, us) -> np.ndarray:
        us = np.asarray(us, dtype=np.float64).reshape((len(self),) + self.out_shape)
        total = np.zeros(self.in_dim)
        start = 0
        for lin in self._chunks:
            g = lin.vjp(us[start : start + lin.n]).reshape(lin.n, -1)
            for row in g:
                total += row
            start += lin.n
        return total


def am_step_direction(batch_op: BatchJacobian, eps, q: float) -> np.ndarray:
    """``sum_x J(x)^T psi_q(J(x) eps)``, accumulated in sample order.

    The per-sample dual normalization is left out; the caller renormalizes
    the iterate afterwards.
    """
    if len(batch_op) == 0:
        raise EmptyDataError("empty batch")
    eps = np.asarray(eps, dtype=np.float64).reshape(-1)
    if eps.size != batch_op.in_dim:
        raise ShapeError(f"eps has length {eps.size}, operator input dimension is {batch_op.in_dim}")
    images = batch_op.apply_all(eps)
    if isinstance(images, np.ndarray):
        return batch_op.adjoint_sum(psi(images, q))
    return batch_op.adjoint_sum([psi(b, q) for b in images])
