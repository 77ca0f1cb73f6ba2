"""Truncated and randomized matrix factorizations.

Random test matrices come from numpy's ``PCG64`` bit generator seeded through
:func:`numpy.random.default_rng`; the same seed reproduces the same sketch
within one installation (bitwise reproducibility across numpy versions or
platforms is not promised).

Every routine that touches the data matrix goes through a :class:`PassCounter`
so the number of full reads can be audited. Pass one in explicitly to read
the count afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .errors import InvalidArgumentError, NumericalError

__all__ = [
    "SketchConfig",
    "TruncatedSvd",
    "PassCounter",
    "truncated_svd",
    "gaussian_sketch",
    "randomized_range",
    "rsvd",
    "pass_efficient_range",
    "pass_efficient_svd",
    "sketched_svd",
]

SeedLike = Union[int, np.random.SeedSequence, None]


@dataclass(frozen=True)
class SketchConfig:
    """Knobs of the randomized algorithms.

    ``pass_budget`` (total reads of the data matrix), when set, replaces the
    power-iteration schedule given by ``power_q``.
    """

    rank: int = 10
    oversampling: int = 5
    power_q: int = 1
    pass_budget: Optional[int] = None
    seed: SeedLike = 0

    def __post_init__(self):
        if self.rank < 1:
            raise InvalidArgumentError(f"rank must be >= 1, got {self.rank}")
        if self.oversampling < 2:
            raise InvalidArgumentError(f"oversampling must be >= 2, got {self.oversampling}")
        if self.power_q < 0:
            raise InvalidArgumentError(f"power_q must be >= 0, got {self.power_q}")
        if self.pass_budget is not None and self.pass_budget < 1:
            raise InvalidArgumentError(f"pass_budget must be >= 1, got {self.pass_budget}")

    def with_(self, **changes) -> "SketchConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        seed = self.seed
        if isinstance(seed, np.random.SeedSequence):
            seed = seed.entropy
        return {
            "rank": self.rank,
            "oversampling": self.oversampling,
            "power_q": self.power_q,
            "pass_budget": self.pass_budget,
            "seed": seed,
        }


@dataclass
class TruncatedSvd:
    """``m ~= left @ diag(singulars) @ right.T`` with orthonormal columns."""

    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray
    notes: list = field(default_factory=list)
    passes: Optional[int] = None

    @property
    def rank(self) -> int:
        return self.singulars.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singulars) @ self.right.T


class PassCounter:
    """Wraps a data matrix and counts full reads of it."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.passes = 0

    @property
    def shape(self):
        return self.matrix.shape

    def times(self, w):
        self.passes += 1
        return self.matrix @ w

    def transpose_times(self, w):
        self.passes += 1
        return self.matrix.T @ w

    def both(self, w, psi):
        """``(X @ w, X.T @ psi)`` in a single read."""
        self.passes += 1
        return self.matrix @ w, self.matrix.T @ psi


def _operator(m) -> PassCounter:
    if isinstance(m, PassCounter):
        return m
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise InvalidArgumentError(f"expected a non-empty matrix, got shape {m.shape}")
    return PassCounter(m)


def _fix_signs(u: np.ndarray, vt: np.ndarray):
    # largest-magnitude entry of each left vector made positive (np.argmax picks the lowest index on ties)
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def _orth(y: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(y)
    return q


def _svd(m: np.ndarray):
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return u, s, vt


def truncated_svd(m, rank: int) -> TruncatedSvd:
    """Top-``rank`` singular triplets of a dense SVD."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise InvalidArgumentError(f"expected a non-empty matrix, got shape {m.shape}")
    if rank < 1:
        raise InvalidArgumentError(f"rank must be >= 1, got {rank}")
    if not np.all(np.isfinite(m)):
        raise NumericalError("matrix contains NaN or Inf")
    k = min(rank, *m.shape)
    notes = []
    if k < rank:
        notes.append(f"rank {rank} clamped to {k} for a {m.shape[0]}x{m.shape[1]} matrix")
    u, s, vt = _svd(m)
    u, vt = _fix_signs(u[:, :k], vt[:k])
    return TruncatedSvd(u, s[:k].copy(), np.ascontiguousarray(vt.T), notes, passes=1)


def gaussian_sketch(cols: int, count: int, seed: SeedLike = 0) -> np.ndarray:
    """``cols x count`` matrix of independent standard normal samples."""
    if cols < 1 or count < 1:
        raise InvalidArgumentError(f"sketch shape must be positive, got ({cols}, {count})")
    return np.random.default_rng(seed).standard_normal((cols, count))


def _sketch_width(shape, cfg: SketchConfig):
    limit = min(shape)
    target = min(cfg.rank, limit)
    width = min(cfg.rank + cfg.oversampling, limit)
    notes = []
    if cfg.rank + cfg.oversampling > limit:
        notes.append(
            f"rank+oversampling {cfg.rank + cfg.oversampling} clamped to {limit} "
            f"for a {shape[0]}x{shape[1]} matrix"
        )
    return target, width, notes


def randomized_range(m, cfg: SketchConfig) -> np.ndarray:
    """Orthonormal basis of ``(X X^T)^q X Omega`` with a QR after every
    application of ``X`` or ``X^T``. Reads the data ``2q + 1`` times."""
    op = _operator(m)
    _, width, _ = _sketch_width(op.shape, cfg)
    omega = gaussian_sketch(op.shape[1], width, cfg.seed)
    q = _orth(op.times(omega))
    for _ in range(cfg.power_q):
        z = _orth(op.transpose_times(q))
        q = _orth(op.times(z))
    return q


def _finish(q: np.ndarray, b: np.ndarray, target: int, notes, passes) -> TruncatedSvd:
    ub, s, vt = _svd(b)
    u = q @ ub[:, :target]
    u, vt = _fix_signs(u, vt[:target])
    return TruncatedSvd(u, s[:target].copy(), np.ascontiguousarray(vt.T), list(notes), passes)


def rsvd(m, cfg: SketchConfig) -> TruncatedSvd:
    """Randomized SVD of rank ``cfg.rank``: range finder, ``B = Q^T X``,
    small SVD, lift back. Reads the data ``2q + 2`` times."""
    op = _operator(m)
    target, _, notes = _sketch_width(op.shape, cfg)
    start = op.passes
    q = randomized_range(op, cfg)
    b = op.transpose_times(q).T
    return _finish(q, b, target, notes, op.passes - start)


def _pass_efficient_factors(op: PassCounter, cfg: SketchConfig):
    """Return ``(Q, B, notes)`` with ``X ~= Q B`` using exactly
    ``cfg.pass_budget`` reads of the data."""
    v = cfg.pass_budget
    if v is None or v < 1:
        raise InvalidArgumentError(f"pass budget must be >= 1, got {v}")
    rows, cols = op.shape
    _, width, notes = _sketch_width(op.shape, cfg)
    rng = np.random.default_rng(cfg.seed)
    omega = rng.standard_normal((cols, width))

    if v == 1:
        # one-pass co-sketch: Y = X Omega and W = X^T Psi from the same read
        co_width = min(rows, 2 * width + 1)
        psi = rng.standard_normal((rows, co_width))
        y, w = op.both(omega, psi)
        q = _orth(y)
        b, *_ = np.linalg.lstsq(psi.T @ q, w.T, rcond=None)
        return q, b, notes

    q = _orth(op.times(omega))
    used = 1
    while True:
        if used == v - 1:
            return q, op.transpose_times(q).T, notes
        z = _orth(op.transpose_times(q))
        used += 1
        if used == v - 1:
            # odd budget: X ~= (X Z) Z^T, so B = R Z^T without another read
            q, r = np.linalg.qr(op.times(z))
            return q, r @ z.T, notes
        q = _orth(op.times(z))
        used += 1


def pass_efficient_range(m, cfg: SketchConfig) -> np.ndarray:
    """Orthonormal range basis whose computation (including the final
    projection) reads the data exactly ``cfg.pass_budget`` times."""
    q, _, _ = _pass_efficient_factors(_operator(m), cfg)
    return q


def pass_efficient_svd(m, cfg: SketchConfig) -> TruncatedSvd:
    op = _operator(m)
    target, _, _ = _sketch_width(op.shape, cfg)
    start = op.passes
    q, b, notes = _pass_efficient_factors(op, cfg)
    return _finish(q, b, target, notes, op.passes - start)


def sketched_svd(m, cfg: SketchConfig) -> TruncatedSvd:
    """Dispatch to :func:`pass_efficient_svd` when a pass budget is set,
    otherwise :func:`rsvd`."""
    if cfg.pass_budget is not None:
        return pass_efficient_svd(m, cfg)
    return rsvd(m, cfg)
