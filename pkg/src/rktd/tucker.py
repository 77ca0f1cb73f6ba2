"""Randomized sequentially truncated HOSVD (Tucker compression)."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .randla import SketchConfig, sketched_svd
from .tensor import as_tensor

__all__ = ["mode_product", "tucker_compress", "tucker_reconstruct"]


def _unfold_c(t: np.ndarray, mode: int) -> np.ndarray:
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def mode_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """``t x_mode m``: multiply every mode-``mode`` fiber by ``m``."""
    moved = np.moveaxis(t, mode, 0)
    out = (m @ moved.reshape(moved.shape[0], -1)).reshape((m.shape[0],) + moved.shape[1:])
    return np.ascontiguousarray(np.moveaxis(out, 0, mode))


def _child_seed(seed, key):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    return np.random.SeedSequence(seed, spawn_key=tuple(key))


def tucker_compress(x, ml_ranks: Sequence[int], cfg: SketchConfig | None = None, seed_key=(1,)):
    """Compress ``x`` to a Tucker core and column-orthonormal factors.

    Modes are processed in order; each step sketches the unfolding of the
    partially compressed core, so later modes work on smaller data.
    """
    x = as_tensor(x)
    ml_ranks = [int(r) for r in ml_ranks]
    if len(ml_ranks) != x.ndim:
        raise InvalidArgumentError(
            f"need {x.ndim} multilinear ranks, got {len(ml_ranks)}"
        )
    for n, (r, d) in enumerate(zip(ml_ranks, x.shape)):
        if not 1 <= r <= d:
            raise InvalidArgumentError(f"multilinear rank {r} for mode {n} must lie in [1, {d}]")
    cfg = cfg or SketchConfig()
    core = x
    factors = []
    for n, r in enumerate(ml_ranks):
        unfolding = _unfold_c(core, n)
        tsvd = sketched_svd(unfolding, cfg.with_(rank=r, seed=_child_seed(cfg.seed, tuple(seed_key) + (n,))))
        u = tsvd.left
        factors.append(u)
        core = mode_product(core, u.T, n)
    return core, factors


def tucker_reconstruct(core, factors) -> np.ndarray:
    t = np.asarray(core, dtype=np.float64)
    for n, u in enumerate(factors):
        t = mode_product(t, u, n)
    return t
