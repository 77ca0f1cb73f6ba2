"""Synthetic tensors with known Kronecker structure, and noise models."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .ktd import KtdModel, _as_grid, ktd_reconstruct

__all__ = [
    "SPECTRA",
    "spectrum",
    "random_ktd_model",
    "synth_ktd",
    "add_gaussian_noise",
    "add_salt_pepper",
    "add_speckle",
    "smooth_image",
]

SPECTRA = ("exact", "geometric", "flat-noise")


def spectrum(kind: str, rank: int, ratio: float = 0.5, rng=None) -> np.ndarray:
    """Nonincreasing weights for ``rank`` synthetic terms.

    ``exact`` draws sorted weights from U(1, 2); ``geometric`` is
    ``ratio**r`` for r = 0..rank-1; ``flat-noise`` is all ones.
    """
    if rank < 1:
        raise InvalidArgumentError(f"rank must be >= 1, got {rank}")
    if kind == "exact":
        rng = np.random.default_rng(rng)
        return np.sort(rng.uniform(1.0, 2.0, rank))[::-1].copy()
    if kind == "geometric":
        if not 0 < ratio <= 1:
            raise InvalidArgumentError(f"geometric ratio must lie in (0, 1], got {ratio}")
        return ratio ** np.arange(rank, dtype=np.float64)
    if kind == "flat-noise":
        return np.ones(rank)
    raise InvalidArgumentError(f"unknown spectrum {kind!r}; choose one of {SPECTRA}")


def random_ktd_model(grid, sigmas: Sequence[float], seed=0) -> KtdModel:
    """Model with random unit-norm blocks and the given weights.

    When a block position has at least as many entries as there are terms,
    its blocks are drawn mutually orthogonal, which makes ``sigmas`` the
    exact KTD singular values of the synthesized tensor.
    """
    grid = _as_grid(grid)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    rank = sigmas.size
    rng = np.random.default_rng(seed)
    per_block = []
    for m in range(grid.num_blocks):
        g = rng.standard_normal((grid.block_sizes[m], rank))
        if rank <= grid.block_sizes[m]:
            g, _ = np.linalg.qr(g)
        g /= np.linalg.norm(g, axis=0)
        per_block.append([np.ascontiguousarray(g[:, r].reshape(grid.blocks[m])) for r in range(rank)])
    factors = [[per_block[m][r] for m in range(grid.num_blocks)] for r in range(rank)]
    return KtdModel(grid, sigmas, factors, {"method": "synthetic"})


def synth_ktd(grid, rank: int, kind: str = "exact", ratio: float = 0.5,
              noise: float = 1e-3, seed=0):
    """Tensor of KTD rank ``rank`` on ``grid``.

    Returns ``(tensor, model)`` where ``model`` is the generating model. The
    ``flat-noise`` spectrum adds Gaussian noise whose Frobenius norm is
    ``noise`` times that of the clean tensor.
    """
    ss = np.random.SeedSequence(seed)
    spec_seed, block_seed, noise_seed = ss.spawn(3)
    sigmas = spectrum(kind, rank, ratio, np.random.default_rng(spec_seed))
    model = random_ktd_model(grid, sigmas, block_seed)
    x = ktd_reconstruct(model)
    if kind == "flat-noise" and noise > 0:
        e = np.random.default_rng(noise_seed).standard_normal(x.shape)
        x = x + e * (noise * np.linalg.norm(x) / np.linalg.norm(e))
    return x, model


def smooth_image(height: int, width: int, channels: int = 3, terms: int = 2,
                 seed=0, offset: float = 2.0, cycles=(0.3, 1.5)) -> np.ndarray:
    """Image made of ``terms`` separable low-frequency plane waves plus a
    constant.

    A cosine sampled on a regular grid has KTD rank at most 2 along each
    mode for any two-block split (``cos(a(jK + k) + p)`` expands into two
    products), so the result has KTD rank at most ``4 * terms + 1`` on any
    two-block grid that keeps the channel mode in one block.
    """
    rng = np.random.default_rng(seed)
    i = np.arange(height)[:, None, None]
    j = np.arange(width)[None, :, None]
    x = np.full((height, width, channels), float(offset))
    for _ in range(terms):
        a, b = rng.uniform(*cycles, 2) * 2 * np.pi / max(height, width)
        p, q = rng.uniform(0, 2 * np.pi, 2)
        x += np.cos(a * i + p) * np.cos(b * j + q) * rng.uniform(0.5, 1.0, channels)[None, None, :]
    return x


def add_gaussian_noise(x, std: float, seed=0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x + std * np.random.default_rng(seed).standard_normal(x.shape)


def add_salt_pepper(x, density: float, peak: float = 255.0, seed=0) -> np.ndarray:
    """Set each entry to 0 or ``peak`` with probability ``density / 2`` each."""
    if not 0 <= density <= 1:
        raise InvalidArgumentError(f"density must lie in [0, 1], got {density}")
    x = np.array(x, dtype=np.float64)
    u = np.random.default_rng(seed).random(x.shape)
    x[u < density / 2] = 0.0
    x[(u >= density / 2) & (u < density)] = peak
    return x


def add_speckle(x, variance: float, seed=0) -> np.ndarray:
    """``x * (1 + u)`` with ``u`` uniform, zero-mean, of the given variance."""
    if variance < 0:
        raise InvalidArgumentError(f"variance must be >= 0, got {variance}")
    x = np.asarray(x, dtype=np.float64)
    half_width = np.sqrt(3.0 * variance)
    u = np.random.default_rng(seed).uniform(-half_width, half_width, x.shape)
    return x * (1.0 + u)


def noisy(x, kind: str, level: float, peak: float = 255.0, seed: Optional[int] = 0):
    """Apply one of the named noise models (``gaussian`` takes a standard
    deviation, ``salt-pepper`` a density, ``speckle`` a variance)."""
    if kind == "gaussian":
        return add_gaussian_noise(x, level, seed)
    if kind == "salt-pepper":
        return add_salt_pepper(x, level, peak, seed)
    if kind == "speckle":
        return add_speckle(x, level, seed)
    if kind == "none":
        return np.asarray(x, dtype=np.float64).copy()
    raise InvalidArgumentError(f"unknown noise model {kind!r}")
