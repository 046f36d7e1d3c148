"""Dense and sparse 3-way tensor kernels.

Everything downstream stores tag x image x user data either as a plain
``numpy`` array (small, learned tensors) or as a coordinate-format
:class:`SparseTensor3` (large, observed tensors).  The kernels here are pure
functions; mode products are computed by the usual unfold-multiply-fold
route, with the matrix acting from the left so that the mode extent becomes
the matrix row count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

MODES = (1, 2, 3)


class DimensionMismatchError(ValueError):
    """A matrix cannot act along the requested tensor mode."""


def _as_operator(matrix):
    """Coerce ``matrix`` into a 2-d operator; 1-d input is promoted to a row."""
    if sp.issparse(matrix):
        return matrix
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise DimensionMismatchError(f"operator must be 2-d, got shape {arr.shape}")
    return arr


def _check_mode(mode: int) -> None:
    if mode not in MODES:
        raise DimensionMismatchError(f"mode must be one of {MODES}, got {mode!r}")


@dataclass(frozen=True)
class SparseTensor3:
    """Coordinate-format nonnegative 3-way tensor.

    Entries are kept in lexicographic coordinate order and structural zeros
    are never stored, so ``values`` is strictly positive.  Duplicate
    coordinates are summed at construction time.
    """

    dims: tuple[int, int, int]
    coords: np.ndarray  # (nnz, 3) int64
    values: np.ndarray  # (nnz,) float64

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 0 for d in dims):
            raise ValueError(f"dims must be three nonnegative extents, got {self.dims}")
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if coords.shape[0] != values.shape[0]:
            raise ValueError("coords and values disagree on the entry count")
        if coords.size:
            if coords.min() < 0 or (coords >= np.array(dims)).any():
                raise ValueError("coordinate out of bounds")
        if (values <= 0).any() or not np.isfinite(values).all():
            raise ValueError("stored values must be finite and strictly positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_entries(cls, dims, entries) -> "SparseTensor3":
        """Build a tensor from an iterable of ``(i, j, k, value)`` rows.

        Duplicate coordinates are summed; entries whose (summed) value is
        zero are dropped.  Negative values are rejected.
        """
        rows = list(entries)
        if not rows:
            return cls(tuple(dims), np.empty((0, 3), np.int64), np.empty(0))
        arr = np.asarray([(r[0], r[1], r[2]) for r in rows], dtype=np.int64)
        vals = np.asarray([r[3] for r in rows], dtype=np.float64)
        if (vals < 0).any():
            raise ValueError("tensor entries must be nonnegative")
        order = np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0]))
        arr, vals = arr[order], vals[order]
        uniq, inverse = np.unique(arr, axis=0, return_inverse=True)
        summed = np.zeros(len(uniq))
        np.add.at(summed, inverse, vals)
        keep = summed > 0
        return cls(tuple(dims), uniq[keep], summed[keep])

    @classmethod
    def from_dense(cls, array) -> "SparseTensor3":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError("expected a 3-way array")
        coords = np.argwhere(arr != 0)
        return cls(arr.shape, coords, arr[tuple(coords.T)])

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dims)
        if self.nnz:
            out[tuple(self.coords.T)] = self.values
        return out


def mode_product(tensor, matrix, mode: int) -> np.ndarray:
    """Multiply a dense 3-way tensor by a matrix along ``mode`` (1-based).

    ``out[..., r, ...] = sum_c matrix[r, c] * tensor[..., c, ...]`` with the
    sum running over the extent of the chosen mode.
    """
    _check_mode(mode)
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionMismatchError(f"expected a 3-way tensor, got ndim {arr.ndim}")
    op = _as_operator(matrix)
    axis = mode - 1
    if op.shape[1] != arr.shape[axis]:
        raise DimensionMismatchError(
            f"mode-{mode} product: operator has {op.shape[1]} columns but the "
            f"tensor extent is {arr.shape[axis]}"
        )
    moved = np.moveaxis(arr, axis, 0)
    unfolded = moved.reshape(arr.shape[axis], -1)
    product = op @ unfolded
    if sp.issparse(product):  # sparse @ dense normally yields ndarray already
        product = product.toarray()
    folded = np.asarray(product).reshape((op.shape[0],) + moved.shape[1:])
    return np.moveaxis(folded, 0, axis)


def mode_product_sparse(tensor: SparseTensor3, matrix, mode: int) -> np.ndarray:
    """Mode product of a :class:`SparseTensor3`, returned dense.

    The tensor is never densified: its entries are scattered into a sparse
    unfolding which is then multiplied by the operator.
    """
    _check_mode(mode)
    op = _as_operator(matrix)
    axis = mode - 1
    dims = tensor.dims
    if op.shape[1] != dims[axis]:
        raise DimensionMismatchError(
            f"mode-{mode} product: operator has {op.shape[1]} columns but the "
            f"tensor extent is {dims[axis]}"
        )
    kept_axes = [ax for ax in range(3) if ax != axis]
    kept_dims = [dims[ax] for ax in kept_axes]
    out_shape = list(dims)
    out_shape[axis] = op.shape[0]
    if tensor.nnz == 0:
        return np.zeros(out_shape)
    flat = np.ravel_multi_index(
        (tensor.coords[:, kept_axes[0]], tensor.coords[:, kept_axes[1]]), kept_dims
    )
    unfolded = sp.csr_matrix(
        (tensor.values, (tensor.coords[:, axis], flat)),
        shape=(dims[axis], kept_dims[0] * kept_dims[1]),
    )
    if sp.issparse(op):
        rect = (op @ unfolded).toarray()
    else:
        rect = (unfolded.T @ op.T).T  # sparse @ dense keeps the tensor sparse
    folded = np.asarray(rect).reshape(op.shape[0], kept_dims[0], kept_dims[1])
    return np.moveaxis(folded, 0, axis)


def accumulate_mode(tensor, mode: int) -> np.ndarray:
    """Sum a dense 3-way tensor over ``mode``; the remaining axes keep order."""
    _check_mode(mode)
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionMismatchError(f"expected a 3-way tensor, got ndim {arr.ndim}")
    return arr.sum(axis=mode - 1)


def frob_norm_sq(tensor) -> float:
    """Squared Frobenius norm of a dense array or :class:`SparseTensor3`."""
    if isinstance(tensor, SparseTensor3):
        return float(np.dot(tensor.values, tensor.values))
    arr = np.asarray(tensor, dtype=np.float64)
    return float(np.vdot(arr, arr))
