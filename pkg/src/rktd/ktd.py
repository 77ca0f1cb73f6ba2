"""Kronecker tensor decomposition (KTD).

A tensor ``x`` with extents ``I_n = prod_m J[m][n]`` is written as

    x ~= sum_r sigma_r * X_r[0] (x) X_r[1] (x) ... (x) X_r[M-1]

with unit-norm blocks ``X_r[m]`` of extents ``J[m]``. Rearranging the
entries of ``x`` turns every Kronecker term into a rank-1 outer product of
the (column-stacked) block vectors, so a CP decomposition with mutually
orthogonal rank-1 terms of the rearranged tensor is a KTD of ``x``.

Mode ``k`` of the rearranged tensor holds block ``M - 1 - k``:

    rearranged = sum_r sigma_r * vec(X_r[M-1]) o ... o vec(X_r[0])

The orthogonal CP decomposition is computed by TTr1SVD, a tree of
truncated SVDs whose leaf weights (products of the singular values along a
branch) play the role of singular values.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import InternalConsistencyError, InvalidArgumentError
from .randla import SketchConfig, sketched_svd, truncated_svd
from .tensor import DimsGrid, as_tensor, inverse_permutation, kron_tensor
from .tucker import _child_seed, tucker_compress

__all__ = [
    "METHODS",
    "KtdModel",
    "Ttr1Leaf",
    "Ttr1Tree",
    "ktd_permute_reshape",
    "ktd_inverse_permute_reshape",
    "ttr1svd",
    "r_ttr1svd",
    "tree_to_model",
    "ktd_decompose",
    "ktd_reconstruct",
    "sigma_tail_error",
    "pt_ktd",
]

METHODS = ("deterministic", "randomized", "pass_efficient", "tucker_first")

# leaves whose weight is at most this fraction of the largest are treated as zero
ZERO_SIGMA_RTOL = 1e-13


def _as_grid(grid) -> DimsGrid:
    if isinstance(grid, DimsGrid):
        return grid
    if isinstance(grid, str):
        return DimsGrid.parse(grid)
    return DimsGrid(tuple(tuple(row) for row in grid))


def _rearrangement(grid: DimsGrid):
    """Split shape and axis permutation taking ``x`` to the rearranged tensor."""
    n_blocks, order = grid.num_blocks, grid.order
    split = tuple(grid.blocks[m][n] for n in range(order) for m in range(n_blocks))
    perm = [n * n_blocks + m for m in reversed(range(n_blocks)) for n in reversed(range(order))]
    out_shape = tuple(grid.block_sizes[m] for m in reversed(range(n_blocks)))
    return split, perm, out_shape


def ktd_permute_reshape(x, grid) -> np.ndarray:
    """Rearrange ``x`` into the order-M tensor whose mode ``k`` indexes the
    column-stacked entries of block ``M - 1 - k``."""
    x = np.asarray(x, dtype=np.float64)
    grid = _as_grid(grid)
    grid.check(x.shape)
    split, perm, out_shape = _rearrangement(grid)
    y = np.ascontiguousarray(x).reshape(split).transpose(perm)
    return np.ascontiguousarray(y).reshape(out_shape)


def ktd_inverse_permute_reshape(y, grid) -> np.ndarray:
    """Inverse of :func:`ktd_permute_reshape`."""
    y = np.asarray(y, dtype=np.float64)
    grid = _as_grid(grid)
    split, perm, out_shape = _rearrangement(grid)
    if y.shape != out_shape:
        raise InvalidArgumentError(f"expected a tensor of shape {out_shape}, got {y.shape}")
    permuted_shape = tuple(split[p] for p in perm)
    x = np.ascontiguousarray(y).reshape(permuted_shape).transpose(inverse_permutation(perm))
    return np.ascontiguousarray(x).reshape(grid.dims)


@dataclass
class Ttr1Leaf:
    """One rank-1 term: a unit vector per mode and the singular values met
    along its branch."""

    vectors: tuple
    local_sigmas: tuple

    @property
    def sigma(self) -> float:
        return float(np.prod(self.local_sigmas))

    def full(self) -> np.ndarray:
        """The rank-1 term ``sigma * v_0 o v_1 o ...`` as a dense tensor."""
        t = np.asarray(self.sigma)
        for v in self.vectors:
            t = np.multiply.outer(t, v)
        return t


@dataclass
class Ttr1Tree:
    level_ranks: tuple
    leaves: list
    notes: list = field(default_factory=list)
    passes: int = 0

    @property
    def composite_sigmas(self) -> np.ndarray:
        return np.array([leaf.sigma for leaf in self.leaves])

    def reconstruct(self) -> np.ndarray:
        total = None
        for leaf in self.leaves:
            term = leaf.full()
            total = term if total is None else total + term
        return total


def _level_ranks(level_ranks, order: int, default: Optional[int] = None) -> tuple:
    if level_ranks is None:
        if default is None:
            raise InvalidArgumentError("level ranks are required")
        level_ranks = default
    if isinstance(level_ranks, (int, np.integer)):
        level_ranks = (int(level_ranks),) * (order - 1)
    level_ranks = tuple(int(r) for r in level_ranks)
    if len(level_ranks) != order - 1:
        raise InvalidArgumentError(
            f"an order-{order} tensor needs {order - 1} level ranks, got {len(level_ranks)}"
        )
    if any(r < 1 for r in level_ranks):
        raise InvalidArgumentError(f"level ranks must be positive, got {level_ranks}")
    return level_ranks


def _build_tree(y: np.ndarray, level_ranks, svd_at) -> Ttr1Tree:
    if y.ndim < 2:
        raise InvalidArgumentError(f"TTr1SVD needs a tensor of order >= 2, got order {y.ndim}")
    ranks = _level_ranks(level_ranks, y.ndim)
    dims = y.shape
    last = y.ndim - 2
    leaves = []
    notes = []
    passes = 0
    used = [0] * len(ranks)

    def visit(vec, level, vectors, sigmas, key):
        nonlocal passes
        mat = vec.reshape(dims[level], -1)
        tsvd = svd_at(mat, ranks[level], key)
        passes += tsvd.passes or 0
        used[level] = tsvd.rank
        for note in tsvd.notes:
            msg = f"level {level}: {note}"
            if msg not in notes:
                notes.append(msg)
        for i in range(tsvd.rank):
            u = tsvd.left[:, i]
            v = tsvd.right[:, i]
            s = float(tsvd.singulars[i])
            if level == last:
                leaves.append(Ttr1Leaf(vectors + (u, v), sigmas + (s,)))
            else:
                visit(v, level + 1, vectors + (u,), sigmas + (s,), key + (i,))

    visit(np.ascontiguousarray(y).ravel(), 0, (), (), ())
    return Ttr1Tree(tuple(used), leaves, notes, passes)


def ttr1svd(y, level_ranks=None) -> Ttr1Tree:
    """Orthogonal rank-1 decomposition by recursive truncated SVDs.

    ``level_ranks`` holds one truncation rank per SVD level (an int is
    broadcast); the tree has ``prod(level_ranks)`` leaves after clamping.
    """
    y = as_tensor(y)
    return _build_tree(y, _level_ranks(level_ranks, y.ndim, min(y.shape)),
                       lambda mat, rank, key: truncated_svd(mat, rank))


def r_ttr1svd(y, level_ranks=None, cfg: Optional[SketchConfig] = None) -> Ttr1Tree:
    """:func:`ttr1svd` with every SVD replaced by a randomized one.

    Each SVD draws its sketch from a seed derived from ``cfg.seed`` and its
    position in the tree, so results do not depend on traversal order.
    """
    y = as_tensor(y)
    cfg = cfg or SketchConfig()
    ranks = _level_ranks(level_ranks, y.ndim, cfg.rank)

    def svd_at(mat, rank, key):
        return sketched_svd(mat, cfg.with_(rank=rank, seed=_child_seed(cfg.seed, (0,) + key)))

    return _build_tree(y, ranks, svd_at)


@dataclass
class KtdModel:
    grid: DimsGrid
    sigmas: np.ndarray
    factors: list
    metadata: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return len(self.sigmas)

    @property
    def dims(self) -> tuple:
        return self.grid.dims

    def truncate(self, rank: int) -> "KtdModel":
        """The model restricted to its first ``rank`` terms."""
        return KtdModel(self.grid, self.sigmas[:rank].copy(),
                        [list(f) for f in self.factors[:rank]], dict(self.metadata))

    def num_parameters(self) -> int:
        return self.rank * (1 + sum(self.grid.block_sizes))

    def identical(self, other: "KtdModel") -> bool:
        """Bitwise equality of grid, weights and factors (metadata ignored)."""
        if self.grid != other.grid or self.rank != other.rank:
            return False
        if self.sigmas.tobytes() != other.sigmas.tobytes():
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for fa, fb in zip(self.factors, other.factors)
            for a, b in zip(fa, fb)
        )


def tree_to_model(tree: Ttr1Tree, grid, rank: int) -> KtdModel:
    """Keep the ``rank`` heaviest non-negligible leaves and reshape their
    vectors into block tensors."""
    grid = _as_grid(grid)
    n_blocks = grid.num_blocks
    sigmas = tree.composite_sigmas
    order = np.argsort(-sigmas, kind="stable")
    smax = sigmas[order[0]] if len(order) else 0.0
    keep = [i for i in order if sigmas[i] > ZERO_SIGMA_RTOL * smax and sigmas[i] > 0][:rank]
    factors = []
    for i in keep:
        leaf = tree.leaves[i]
        if len(leaf.vectors) != n_blocks:
            raise InternalConsistencyError(
                f"leaf has {len(leaf.vectors)} vectors but the grid has {n_blocks} blocks"
            )
        blocks = []
        for m in range(n_blocks):
            v = leaf.vectors[n_blocks - 1 - m]
            if v.size != grid.block_sizes[m]:
                raise InternalConsistencyError(
                    f"leaf vector of length {v.size} does not fit block {m} "
                    f"with {grid.block_sizes[m]} entries"
                )
            b = np.ascontiguousarray(v.reshape(grid.blocks[m], order="F"))
            blocks.append(b / np.linalg.norm(b))
        factors.append(blocks)
    return KtdModel(grid, sigmas[keep].astype(np.float64), factors,
                    {"notes": list(tree.notes), "passes": tree.passes})


def ktd_reconstruct(model: KtdModel) -> np.ndarray:
    """``sum_r sigma_r * X_r[0] (x) ... (x) X_r[M-1]``."""
    out = np.zeros(model.grid.dims)
    for s, blocks in zip(model.sigmas, model.factors):
        term = blocks[0]
        for b in blocks[1:]:
            term = kron_tensor(term, b)
        out += s * term
    return out


def sigma_tail_error(sigmas_kept: Union[int, Sequence[float]], sigmas_all: Sequence[float]) -> float:
    """Relative error of keeping a prefix of orthogonal terms:
    ``sqrt(sum of dropped sigma^2) / sqrt(sum of all sigma^2)``.

    ``sigmas_kept`` is either the kept prefix or its length.
    """
    s = np.asarray(sigmas_all, dtype=np.float64)
    if s.size == 0:
        raise InvalidArgumentError("sigmas_all is empty")
    if isinstance(sigmas_kept, (int, np.integer)):
        k = int(sigmas_kept)
    else:
        kept = np.asarray(sigmas_kept, dtype=np.float64)
        k = kept.size
        if k > s.size or not np.array_equal(kept, s[:k]):
            raise InvalidArgumentError("sigmas_kept must be a prefix of sigmas_all")
    if not 0 <= k <= s.size:
        raise InvalidArgumentError(f"cannot keep {k} of {s.size} terms")
    total = np.sum(s * s)
    if total == 0:
        return 0.0
    return float(np.sqrt(np.sum(s[k:] ** 2) / total))


def _single_block_model(y: np.ndarray, grid: DimsGrid) -> KtdModel:
    norm = float(np.linalg.norm(y))
    if norm == 0:
        return KtdModel(grid, np.zeros(0), [], {"notes": [], "passes": 0})
    block = np.ascontiguousarray(y.reshape(grid.blocks[0], order="F")) / norm
    return KtdModel(grid, np.array([norm]), [[block]], {"notes": [], "passes": 1})


def _resolve_method(method: str, cfg: SketchConfig) -> str:
    if method not in METHODS:
        raise InvalidArgumentError(f"unknown method {method!r}; choose one of {METHODS}")
    if method == "randomized" and cfg.pass_budget is not None:
        return "pass_efficient"
    if method == "pass_efficient" and cfg.pass_budget is None:
        raise InvalidArgumentError("the pass_efficient method needs cfg.pass_budget")
    return method


def ktd_decompose(x, grid, rank: int, method: str = "deterministic",
                  cfg: Optional[SketchConfig] = None, level_ranks=None,
                  ml_ranks=None) -> KtdModel:
    """Rank-``rank`` KTD of ``x`` on the given block grid.

    ``method`` selects the SVD engine: exact (``deterministic``), sketched
    with power iterations (``randomized``), sketched within a pass budget
    (``pass_efficient``) or sketched after a Tucker compression of the
    rearranged tensor (``tucker_first``, see :func:`pt_ktd`).
    """
    if rank < 1:
        raise InvalidArgumentError(f"rank must be >= 1, got {rank}")
    cfg = cfg or SketchConfig(rank=rank)
    method = _resolve_method(method, cfg)
    if method == "tucker_first":
        return pt_ktd(x, grid, rank, ml_ranks, cfg, level_ranks)
    x = as_tensor(x)
    grid = _as_grid(grid)

    t0 = time.perf_counter()
    y = ktd_permute_reshape(x, grid)
    t1 = time.perf_counter()
    if y.ndim == 1:
        model = _single_block_model(y, grid)
        t2 = t1
    else:
        ranks = _level_ranks(level_ranks, y.ndim, rank)
        if method == "deterministic":
            tree = ttr1svd(y, ranks)
        else:
            tree = r_ttr1svd(y, ranks, cfg)
        t2 = time.perf_counter()
        model = tree_to_model(tree, grid, rank)
    t3 = time.perf_counter()
    model.metadata.update(
        method=method,
        rank=rank,
        cfg=cfg.to_dict() if method != "deterministic" else None,
        timings={"rearrange": t1 - t0, "cpd": t2 - t1, "assemble": t3 - t2},
    )
    return model


def pt_ktd(x, grid, rank: int, ml_ranks=None, cfg: Optional[SketchConfig] = None,
           level_ranks=None) -> KtdModel:
    """Randomized KTD preceded by a randomized Tucker compression.

    The Tucker step compresses the rearranged tensor (whose multilinear rank
    is at most the KTD rank), the core is decomposed by :func:`r_ttr1svd`,
    and each leaf vector is mapped back through its Tucker factor before
    being reshaped into a block. ``ml_ranks`` has one entry per block and is
    clamped to the block sizes; it defaults to ``rank`` everywhere.
    """
    x = as_tensor(x)
    grid = _as_grid(grid)
    grid.check(x.shape)
    cfg = cfg or SketchConfig(rank=rank)
    if rank < 1:
        raise InvalidArgumentError(f"rank must be >= 1, got {rank}")
    n_blocks = grid.num_blocks
    if ml_ranks is None:
        ml_ranks = (rank,) * n_blocks
    ml_ranks = [int(r) for r in ml_ranks]
    if len(ml_ranks) != n_blocks:
        raise InvalidArgumentError(
            f"need one multilinear rank per block ({n_blocks}), got {len(ml_ranks)}"
        )
    if any(r < 1 for r in ml_ranks):
        raise InvalidArgumentError(f"multilinear ranks must be positive, got {ml_ranks}")
    clamped = [min(r, size) for r, size in zip(ml_ranks, grid.block_sizes)]

    t0 = time.perf_counter()
    y = ktd_permute_reshape(x, grid)
    t1 = time.perf_counter()
    notes = []
    if clamped != ml_ranks:
        notes.append(f"multilinear ranks {ml_ranks} clamped to {clamped}")
    if n_blocks == 1:
        model = _single_block_model(y, grid)
        t2 = t3 = t1
    else:
        # rearranged mode k holds block M-1-k
        core, us = tucker_compress(y, clamped[::-1], cfg)
        t2 = time.perf_counter()
        ranks = _level_ranks(level_ranks, core.ndim, rank)
        tree = r_ttr1svd(core, ranks, cfg)
        t3 = time.perf_counter()
        for leaf in tree.leaves:
            leaf.vectors = tuple(u @ v for u, v in zip(us, leaf.vectors))
        model = tree_to_model(tree, grid, rank)
        notes.extend(model.metadata["notes"])
    t4 = time.perf_counter()
    model.metadata.update(
        method="tucker_first",
        rank=rank,
        ml_ranks=clamped,
        cfg=cfg.to_dict(),
        notes=notes,
        timings={"rearrange": t1 - t0, "tucker": t2 - t1, "cpd": t3 - t2, "assemble": t4 - t3},
    )
    return model
