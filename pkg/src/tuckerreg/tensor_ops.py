"""Dense tensor algebra kernels.

All tensors are plain :class:`numpy.ndarray` objects.  The scalar layout
convention used throughout the package (and in the on-disk tensor format)
is *first index fastest*: flattening a tensor of extents ``(I_1, ..., I_N)``
sends entry ``[i_1, ..., i_N]`` (0-based) to flat position

    j = i_1 + i_2*I_1 + i_3*I_1*I_2 + ...

which is numpy's Fortran order.  Every function here that flattens or
unflattens uses this one convention so that the Kronecker-product
identities relating matricized tensors hold exactly.

Modes are 0-based everywhere in code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import PartitionError, ShapeError


@dataclass(frozen=True)
class IndexPartition:
    """Ordered split of the modes ``{0..N-1}`` into row modes and column modes.

    The order of ``row_modes`` and ``col_modes`` is significant: the first
    listed mode varies fastest in the corresponding matrix index.
    """

    row_modes: tuple
    col_modes: tuple

    def __init__(self, row_modes, col_modes):
        object.__setattr__(self, "row_modes", tuple(int(m) for m in row_modes))
        object.__setattr__(self, "col_modes", tuple(int(m) for m in col_modes))

    def validate(self, ndim: int) -> None:
        modes = self.row_modes + self.col_modes
        if sorted(modes) != list(range(ndim)):
            raise PartitionError(
                f"row modes {self.row_modes} and column modes {self.col_modes} "
                f"do not partition the {ndim} modes"
            )


def mode_partition(axis: int, ndim: int) -> IndexPartition:
    """Partition for the mode-``axis`` matricization: that mode against the
    remaining modes in ascending order."""
    if not 0 <= axis < ndim:
        raise PartitionError(f"mode {axis} out of range for order-{ndim} tensor")
    return IndexPartition((axis,), tuple(m for m in range(ndim) if m != axis))


def vectorize(t: np.ndarray) -> np.ndarray:
    """Flatten a tensor to a vector, first index fastest."""
    return np.asarray(t).reshape(-1, order="F")


def unvectorize(v: np.ndarray, dims) -> np.ndarray:
    """Inverse of :func:`vectorize` for the given extents."""
    dims = tuple(dims)
    v = np.asarray(v)
    if v.size != int(np.prod(dims)):
        raise ShapeError(f"vector of length {v.size} cannot fill extents {dims}")
    return v.reshape(dims, order="F")


def matricize(t: np.ndarray, partition: IndexPartition) -> np.ndarray:
    """Unfold a tensor into a matrix over the given mode partition.

    Row ``j`` enumerates the row-mode indices with the first listed mode
    fastest; likewise for columns.  An empty column set yields a single
    column (the vectorization).
    """
    t = np.asarray(t)
    partition.validate(t.ndim)
    perm = partition.row_modes + partition.col_modes
    nrows = int(np.prod([t.shape[m] for m in partition.row_modes], dtype=np.int64))
    ncols = int(np.prod([t.shape[m] for m in partition.col_modes], dtype=np.int64))
    return np.transpose(t, perm).reshape((nrows, ncols), order="F")


def unmatricize(m: np.ndarray, dims, partition: IndexPartition) -> np.ndarray:
    """Refold a matricized tensor back to the given extents."""
    dims = tuple(dims)
    m = np.asarray(m)
    partition.validate(len(dims))
    perm = partition.row_modes + partition.col_modes
    nrows = int(np.prod([dims[i] for i in partition.row_modes], dtype=np.int64))
    ncols = int(np.prod([dims[i] for i in partition.col_modes], dtype=np.int64))
    if m.shape != (nrows, ncols):
        raise ShapeError(
            f"matrix shape {m.shape} inconsistent with extents {dims} under "
            f"partition {partition.row_modes}|{partition.col_modes}"
        )
    permuted = m.reshape(tuple(dims[i] for i in perm), order="F")
    inverse = np.argsort(perm)
    return np.transpose(permuted, inverse)


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with ``a``'s indices slow and ``b``'s fast."""
    return np.kron(np.asarray(a), np.asarray(b))


def mode_product(t: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    """Multiply tensor ``t`` by matrix ``u`` along ``axis``.

    ``u`` has shape ``(J, I_axis)``; the result replaces extent ``I_axis``
    by ``J``.
    """
    t = np.asarray(t)
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[1] != t.shape[axis]:
        raise ShapeError(
            f"matrix of shape {u.shape} cannot contract mode {axis} of extent "
            f"{t.shape[axis]}"
        )
    out = np.tensordot(u, t, axes=(1, axis))
    return np.moveaxis(out, 0, axis)


def contracted_product(x: np.ndarray, y: np.ndarray, n_contract: int) -> np.ndarray:
    """Contract the last ``n_contract`` modes of ``x`` against the first
    ``n_contract`` modes of ``y``.

    With matrix operands and ``n_contract=1`` this is the ordinary matrix
    product; in general the result has ``x``'s leading modes followed by
    ``y``'s trailing modes.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if n_contract < 0 or n_contract > min(x.ndim, y.ndim):
        raise ShapeError(f"cannot contract {n_contract} modes")
    if x.shape[x.ndim - n_contract :] != y.shape[:n_contract]:
        raise ShapeError(
            f"trailing extents {x.shape[x.ndim - n_contract:]} do not match "
            f"leading extents {y.shape[:n_contract]}"
        )
    return np.tensordot(x, y, axes=n_contract)


def tucker_assemble(core: np.ndarray, factors) -> np.ndarray:
    """Expand a Tucker representation: mode-multiply ``core`` by each factor.

    ``factors[n]`` has shape ``(I_n, J_n)`` with ``J_n`` the core extent of
    mode ``n``.  The multiplication order does not affect the result.
    """
    core = np.asarray(core)
    factors = list(factors)
    if len(factors) != core.ndim:
        raise ShapeError(
            f"{len(factors)} factors supplied for an order-{core.ndim} core"
        )
    out = core
    for axis, f in enumerate(factors):
        out = mode_product(out, f, axis)
    return out


def frobenius_norm_sq(t: np.ndarray) -> float:
    """Sum of squared entries."""
    t = np.asarray(t)
    return float(np.dot(t.reshape(-1), t.reshape(-1)))


def permute_modes(t: np.ndarray, perm) -> np.ndarray:
    """Reindex a tensor by a permutation of its modes."""
    t = np.asarray(t)
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(t.ndim)):
        raise PartitionError(f"{perm} is not a permutation of the {t.ndim} modes")
    return np.transpose(t, perm)
