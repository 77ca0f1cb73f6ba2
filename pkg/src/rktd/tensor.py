"""Dense N-way tensors and the multilinear rearrangement algebra.

A dense tensor is a C-contiguous ``float64`` :class:`numpy.ndarray`; its
flat buffer (last index fastest) is the canonical storage order used by
:func:`reshape` and by the ``.ten`` file format.

Two operations follow the column-stacking convention instead, because that
is how they are defined mathematically:

* :func:`vectorize` stacks the columns of the mode-0 unfolding, so the first
  index varies fastest (``vec([[1, 2], [3, 4]]) == [1, 3, 2, 4]``);
* :func:`unfold` orders the columns of the mode-n unfolding with the first
  remaining index varying fastest.

Modes and permutation vectors are 0-based throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "as_tensor",
    "unfold",
    "fold",
    "vectorize",
    "permute_dims",
    "inverse_permutation",
    "reshape",
    "outer_product",
    "kron_tensor",
    "kron_tensor_reference",
    "kron_merge_permutation",
    "pad_to_order",
    "DimsGrid",
]


def as_tensor(x, allow_nonfinite: bool = False) -> np.ndarray:
    """Return ``x`` as a C-contiguous float64 array of order >= 1.

    Scalars become order-1 tensors of shape ``(1,)``.
    """
    t = np.ascontiguousarray(x, dtype=np.float64)
    if t.ndim == 0:
        t = t.reshape(1)
    if t.size == 0 or min(t.shape) < 1:
        raise InvalidArgumentError(f"tensor extents must all be >= 1, got {t.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(t)):
        raise InvalidArgumentError("tensor contains NaN or Inf entries")
    return t


def _check_mode(mode: int, order: int) -> int:
    if not isinstance(mode, (int, np.integer)) or not 0 <= mode < order:
        raise InvalidArgumentError(f"mode {mode} out of range for an order-{order} tensor")
    return int(mode)


def unfold(t, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding: rows are indexed by ``mode``, columns by the
    remaining indices with the first one varying fastest."""
    t = np.asarray(t, dtype=np.float64)
    mode = _check_mode(mode, t.ndim)
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1, order="F")


def fold(m, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    m = np.asarray(m, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    mode = _check_mode(mode, len(dims))
    rest = dims[:mode] + dims[mode + 1:]
    if m.ndim != 2 or m.shape != (dims[mode], int(np.prod(rest, dtype=np.int64))):
        raise InvalidArgumentError(
            f"matrix of shape {m.shape} cannot be folded along mode {mode} into {dims}"
        )
    t = m.reshape((dims[mode],) + rest, order="F")
    return np.ascontiguousarray(np.moveaxis(t, 0, mode))


def vectorize(t) -> np.ndarray:
    """Column-stacking vectorization, ``vec(X) = vec(X_(0))``."""
    return np.asarray(t, dtype=np.float64).ravel(order="F")


def inverse_permutation(p: Sequence[int]) -> list[int]:
    inv = [0] * len(p)
    for k, pk in enumerate(p):
        inv[pk] = k
    return inv


def permute_dims(t, p: Sequence[int]) -> np.ndarray:
    """Reorder modes so that ``result.shape[k] == t.shape[p[k]]``."""
    t = np.asarray(t, dtype=np.float64)
    p = [int(v) for v in p]
    if sorted(p) != list(range(t.ndim)):
        raise InvalidArgumentError(f"{p} is not a permutation of 0..{t.ndim - 1}")
    return np.ascontiguousarray(np.transpose(t, p))


def reshape(t, new_dims: Sequence[int]) -> np.ndarray:
    """Reinterpret the canonical flat buffer under new extents."""
    t = np.asarray(t, dtype=np.float64)
    new_dims = tuple(int(d) for d in new_dims)
    if any(d < 1 for d in new_dims) or int(np.prod(new_dims, dtype=np.int64)) != t.size:
        raise InvalidArgumentError(f"cannot reshape {t.shape} into {new_dims}")
    return np.ascontiguousarray(t).reshape(new_dims)


def outer_product(a, b) -> np.ndarray:
    """``z[i..., j...] = a[i...] * b[j...]`` (order adds up)."""
    return np.multiply.outer(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def pad_to_order(t, order: int) -> np.ndarray:
    """Append trailing unit extents until ``t`` has the requested order."""
    t = np.asarray(t, dtype=np.float64)
    if order < t.ndim:
        raise InvalidArgumentError(f"cannot pad an order-{t.ndim} tensor down to order {order}")
    return t.reshape(t.shape + (1,) * (order - t.ndim))


def _check_same_order(x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != y.ndim:
        raise InvalidArgumentError(
            f"Kronecker product needs equal orders, got {x.ndim} and {y.ndim}; "
            "use pad_to_order to align them"
        )


def kron_tensor(x, y) -> np.ndarray:
    """Tensor Kronecker product.

    ``z[i] = x[j] * y[k]`` with ``i_n = k_n + j_n * K_n``, so every block of
    ``z`` at block index ``j`` is ``x[j] * y``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_order(x, y)
    n = x.ndim
    # interleave axes as (J_0, K_0, J_1, K_1, ...) then merge each pair
    xs = x.reshape(tuple(v for d in x.shape for v in (d, 1)))
    ys = y.reshape(tuple(v for d in y.shape for v in (1, d)))
    z = xs * ys
    return z.reshape(tuple(x.shape[k] * y.shape[k] for k in range(n)))


def kron_merge_permutation(n: int) -> list[int]:
    """Interleaving ``[0, n, 1, n+1, ..., n-1, 2n-1]`` used to merge the
    index pairs of a Kronecker product."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n}")
    return [v for k in range(n) for v in (k, n + k)]


def kron_tensor_reference(x, y) -> np.ndarray:
    """Kronecker product through vectorization, the classical Kronecker
    product, a reshape and the merge permutation (column-major throughout).

    Slow path kept as an independent check of :func:`kron_tensor`.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_order(x, y)
    n = x.ndim
    c = np.kron(vectorize(x), vectorize(y))
    c = c.reshape(y.shape + x.shape, order="F")
    c = np.transpose(c, kron_merge_permutation(n))
    z = c.reshape(tuple(x.shape[k] * y.shape[k] for k in range(n)), order="F")
    return np.ascontiguousarray(z)


@dataclass(frozen=True)
class DimsGrid:
    """Block extents of a Kronecker decomposition.

    ``blocks[m][n]`` is the extent along mode ``n`` of the ``m``-th block
    tensor; the blocks multiply out to the full tensor mode by mode.
    """

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(int(v) for v in row) for row in self.blocks)
        if not rows or not rows[0]:
            raise InvalidArgumentError("grid needs at least one block of order >= 1")
        order = len(rows[0])
        for m, row in enumerate(rows):
            if len(row) != order:
                raise InvalidArgumentError(
                    f"block {m} has order {len(row)}, expected {order}"
                )
            if any(v < 1 for v in row):
                raise InvalidArgumentError(f"block {m} has a non-positive extent: {row}")
        object.__setattr__(self, "blocks", rows)

    @classmethod
    def parse(cls, spec: str) -> "DimsGrid":
        """Parse ``"4,4,4,4x5,5,5,5"`` (blocks separated by ``x``)."""
        try:
            rows = [tuple(int(v) for v in part.split(",")) for part in spec.strip().split("x")]
        except ValueError:
            raise InvalidArgumentError(f"malformed grid spec {spec!r}") from None
        return cls(tuple(rows))

    def __str__(self):
        return "x".join(",".join(str(v) for v in row) for row in self.blocks)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def order(self) -> int:
        return len(self.blocks[0])

    @property
    def dims(self) -> tuple[int, ...]:
        """Extents of the tensor the grid describes."""
        return tuple(
            int(np.prod([row[n] for row in self.blocks])) for n in range(self.order)
        )

    @property
    def block_sizes(self) -> tuple[int, ...]:
        """Number of entries of each block tensor."""
        return tuple(int(np.prod(row)) for row in self.blocks)

    def check(self, dims: Sequence[int]) -> None:
        dims = tuple(int(d) for d in dims)
        if len(dims) != self.order:
            raise InvalidArgumentError(
                f"grid blocks have order {self.order} but the tensor has order {len(dims)}"
            )
        for n, (got, want) in enumerate(zip(self.dims, dims)):
            if got != want:
                raise InvalidArgumentError(
                    f"grid extents along mode {n} multiply to {got}, expected {want}"
                )
