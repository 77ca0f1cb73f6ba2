import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rktd.errors import InvalidArgumentError
from rktd.randla import (
    PassCounter,
    SketchConfig,
    gaussian_sketch,
    pass_efficient_range,
    pass_efficient_svd,
    randomized_range,
    rsvd,
    sketched_svd,
    truncated_svd,
)


def low_rank(rows, cols, rank, seed):
    r = np.random.default_rng(seed)
    return r.standard_normal((rows, rank)) @ r.standard_normal((rank, cols))


def with_spectrum(sigmas, rows, cols, seed=7):
    r = np.random.default_rng(seed)
    u, _ = np.linalg.qr(r.standard_normal((rows, len(sigmas))))
    v, _ = np.linalg.qr(r.standard_normal((cols, len(sigmas))))
    return (u * sigmas) @ v.T


def residual(m, q):
    return np.linalg.norm(m - q @ (q.T @ m))


class TestSketchConfig:
    @pytest.mark.parametrize("kw", [{"rank": 0}, {"oversampling": 1}, {"power_q": -1}, {"pass_budget": 0}])
    def test_rejects(self, kw):
        with pytest.raises(InvalidArgumentError):
            SketchConfig(**kw)

    def test_with(self):
        cfg = SketchConfig(rank=4)
        assert cfg.with_(seed=3).seed == 3 and cfg.seed == 0


class TestTruncatedSvd:
    def test_diagonal(self):
        t = truncated_svd(np.diag([3.0, 2.0, 1.0]), 2)
        np.testing.assert_allclose(t.singulars, [3.0, 2.0], rtol=0, atol=1e-14)
        err = np.linalg.norm(np.diag([3.0, 2.0, 1.0]) - t.reconstruct())
        assert abs(err - 1.0) < 1e-12

    def test_full_rank_is_exact(self, rng):
        m = rng.standard_normal((6, 4))
        t = truncated_svd(m, 10)
        assert t.rank == 4 and t.notes
        assert np.linalg.norm(m - t.reconstruct()) <= 1e-12 * np.linalg.norm(m)

    def test_rank_one(self, rng):
        u = rng.standard_normal(5)
        v = rng.standard_normal(7)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        t = truncated_svd(np.outer(u, v), 1)
        assert abs(t.singulars[0] - 1.0) < 1e-12
        assert np.linalg.norm(np.outer(u, v) - t.reconstruct()) <= 1e-12

    def test_sign_convention(self, rng):
        t = truncated_svd(rng.standard_normal((8, 5)), 3)
        for i in range(3):
            col = t.left[:, i]
            assert col[np.argmax(np.abs(col))] > 0

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**16))
    def test_orthonormal_and_sorted(self, rows, cols, rank, seed):
        m = np.random.default_rng(seed).standard_normal((rows, cols))
        t = truncated_svd(m, rank)
        k = t.rank
        np.testing.assert_allclose(t.left.T @ t.left, np.eye(k), atol=1e-12)
        np.testing.assert_allclose(t.right.T @ t.right, np.eye(k), atol=1e-12)
        assert np.all(np.diff(t.singulars) <= 0) and np.all(t.singulars >= 0)

    def test_rejects_nonfinite(self):
        from rktd.errors import NumericalError
        with pytest.raises(NumericalError):
            truncated_svd(np.array([[1.0, np.inf]]), 1)


class TestGaussianSketch:
    def test_same_seed_identical(self):
        assert gaussian_sketch(30, 4, 9).tobytes() == gaussian_sketch(30, 4, 9).tobytes()

    def test_different_seeds_differ(self):
        assert not np.array_equal(gaussian_sketch(30, 4, 1), gaussian_sketch(30, 4, 2))

    def test_moments(self):
        g = gaussian_sketch(100, 100, 5)
        assert abs(g.mean()) < 0.05
        assert abs(g.var() - 1.0) < 0.1


class TestRandomizedRange:
    def test_exact_rank_captured(self):
        m = low_rank(40, 30, 3, 0)
        q = randomized_range(m, SketchConfig(rank=3, oversampling=2, power_q=0, seed=4))
        assert residual(m, q) <= 1e-10 * np.linalg.norm(m)
        assert residual(m, q) <= residual(m, truncated_svd(m, 3).left) + 1e-10 * np.linalg.norm(m)

    def test_orthonormal(self, rng):
        q = randomized_range(rng.standard_normal((50, 40)), SketchConfig(rank=6, power_q=2))
        np.testing.assert_allclose(q.T @ q, np.eye(q.shape[1]), atol=1e-12)

    def test_power_iterations_help(self):
        m = with_spectrum(0.5 ** np.arange(30), 60, 50)
        med = {}
        for q in (0, 2):
            med[q] = np.median([residual(m, randomized_range(m, SketchConfig(rank=5, power_q=q, seed=s)))
                                for s in range(20)])
        assert med[2] <= med[0]


class TestRsvd:
    @pytest.mark.parametrize("seed", range(5))
    def test_exact_rank(self, seed):
        m = low_rank(50, 40, 6, seed)
        t = rsvd(m, SketchConfig(rank=6, oversampling=2, power_q=1, seed=seed))
        assert np.linalg.norm(m - t.reconstruct()) <= 1e-8 * np.linalg.norm(m)
        assert t.passes == 4

    def test_flat_spectrum(self):
        m = np.diag([1.0] * 4 + [0.0] * 6)
        t = rsvd(m, SketchConfig(rank=4, seed=2))
        np.testing.assert_allclose(t.singulars, 1.0, rtol=0, atol=1e-10)

    def test_decaying_spectrum_near_optimal(self):
        sig = 1.0 / np.arange(1, 41) ** 2
        m = with_spectrum(sig, 80, 60)
        tail = np.sqrt(np.sum(sig[5:] ** 2))
        errs = [np.linalg.norm(m - rsvd(m, SketchConfig(rank=5, oversampling=5, power_q=1, seed=s)).reconstruct())
                for s in range(20)]
        assert np.median(errs) <= 2 * tail

    def test_clamp_note(self, rng):
        t = rsvd(rng.standard_normal((6, 5)), SketchConfig(rank=4, oversampling=5))
        assert t.rank == 4 and any("clamped" in n for n in t.notes)

    def test_deterministic(self, rng):
        m = rng.standard_normal((20, 15))
        a = rsvd(m, SketchConfig(rank=3, seed=11))
        b = rsvd(m, SketchConfig(rank=3, seed=11))
        assert a.left.tobytes() == b.left.tobytes() and a.singulars.tobytes() == b.singulars.tobytes()


class TestPassEfficient:
    def test_budget_two_is_plain_sketch(self, rng):
        m = rng.standard_normal((30, 25))
        a = pass_efficient_range(m, SketchConfig(rank=4, pass_budget=2, seed=8))
        b = randomized_range(m, SketchConfig(rank=4, power_q=0, seed=8))
        np.testing.assert_array_equal(a, b)

    def test_budget_three_exact_rank(self):
        m = low_rank(50, 60, 5, 3)
        t = pass_efficient_svd(m, SketchConfig(rank=5, pass_budget=3, seed=1))
        assert np.linalg.norm(m - t.reconstruct()) <= 1e-8 * np.linalg.norm(m)

    @pytest.mark.parametrize("v", [1, 2, 3, 4, 5])
    def test_pass_counter(self, v):
        op = PassCounter(low_rank(50, 60, 5, 0))
        t = pass_efficient_svd(op, SketchConfig(rank=5, pass_budget=v, seed=0))
        assert op.passes == v and t.passes == v

    @pytest.mark.parametrize("v", [1, 2, 3, 4, 5])
    def test_every_budget_captures_exact_rank(self, v):
        m = low_rank(50, 60, 5, 1)
        t = pass_efficient_svd(m, SketchConfig(rank=5, pass_budget=v, seed=2))
        assert np.linalg.norm(m - t.reconstruct()) <= 1e-8 * np.linalg.norm(m)

    def test_dispatch(self, rng):
        m = rng.standard_normal((20, 20))
        assert sketched_svd(m, SketchConfig(rank=3, pass_budget=5)).passes == 5
        assert sketched_svd(m, SketchConfig(rank=3, power_q=2)).passes == 6
