import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nasfas.dynamic import (DEFAULT_WINDOW, fuse_static_dynamic, prefix_means, rank_pool, rank_pool_full,
                            rank_pool_objective, sliding_dynamic)
from nasfas.tensor import ConfigError


def line_search_k2(frames):
    """Minimize the objective along D = c * v for K = 2 by a dense scan plus golden refinement."""
    v = (frames[1] - frames[0]) / 2.0  # S_2 - S_1
    f = lambda c: rank_pool_objective(c * v, frames)  # noqa: E731
    cs = np.linspace(0, 4.0 / max(np.dot(v.ravel(), v.ravel()), 1e-12) ** 0.5 + 4.0, 2001)
    c0 = cs[np.argmin([f(c) for c in cs])]
    lo, hi = max(c0 - (cs[1] - cs[0]), 0.0), c0 + (cs[1] - cs[0])
    g = (5 ** 0.5 - 1) / 2
    for _ in range(200):
        a, b = hi - g * (hi - lo), lo + g * (hi - lo)
        if f(a) < f(b):
            hi = b
        else:
            lo = a
    return 0.5 * (lo + hi) * v


def test_prefix_means():
    frames = np.arange(6.0).reshape(3, 2)
    np.testing.assert_allclose(prefix_means(frames), [[0, 1], [1, 2], [2, 3]])


@pytest.mark.parametrize("solver", ["exact", "approximate"])
def test_constant_sequence(solver):
    frames = np.full((5, 3, 4, 4), 0.4)
    assert np.abs(rank_pool(frames, solver)).max() < 1e-6


@pytest.mark.parametrize("scale", [0.3, 1.0, 3.0])
def test_k2_closed_form(scale, rng):
    frames = rng.uniform(size=(2, 3, 2, 2))
    frames[1] = frames[0] + scale * rng.normal(size=(3, 2, 2)) / 3
    v = (prefix_means(frames)[1] - prefix_means(frames)[0]).reshape(frames.shape[1:])
    vv = float(np.dot(v.ravel(), v.ravel()))
    closed = v if vv <= 1 else v / vv
    got = rank_pool(frames, "exact")
    np.testing.assert_allclose(got, closed, atol=1e-4)
    np.testing.assert_allclose(line_search_k2(frames), closed, atol=1e-4)


def test_monotone_brightening_nonnegative():
    c = np.array([0.1, 0.2, 0.35, 0.5, 0.8])
    frames = np.broadcast_to(c[:, None, None, None], (5, 3, 2, 2)).copy()
    d = rank_pool(frames, "exact")
    assert (d >= -1e-12).all() and d.max() > 0


@pytest.mark.parametrize("solver", ["exact", "approximate"])
def test_translation_invariance(solver, rng):
    # 8-bit levels on a 1/256 grid, shifted by whole levels: every addition is exact
    frames = rng.integers(0, 200, size=(6, 3, 4, 4)) / 256.0
    a = rank_pool(frames, solver)
    for shift in (0.25, 17 / 256, -0.5):
        np.testing.assert_array_equal(rank_pool(frames + shift, solver), a)
    # arbitrary floats: equal up to rounding of the shifted values
    frames = rng.uniform(size=(6, 3, 4, 4))
    np.testing.assert_allclose(rank_pool(frames + 0.3, solver), rank_pool(frames, solver), atol=1e-12)


def test_objective_non_increasing(rng):
    res = rank_pool_full(rng.uniform(size=(5, 3, 3, 3)), "exact")
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


@pytest.mark.parametrize("k", [2, 3, 4])
def test_optimality_gap(k, rng):
    frames = rng.uniform(size=(k, 3, 2, 2))
    short = rank_pool_full(frames, "exact", 200).objective
    long = rank_pool_full(frames, "exact", 20000).objective
    assert short <= long * 1.01 + 1e-12


def test_errors():
    with pytest.raises(ConfigError):
        rank_pool(np.zeros((1, 3, 2, 2)))
    with pytest.raises(ConfigError):
        rank_pool(np.zeros((3, 3, 2, 2)), "svm")
    with pytest.raises(ConfigError):
        sliding_dynamic(np.zeros((5, 3, 2, 2)), 2, 4)


class TestSliding:
    def test_full_window(self, rng):
        frames = rng.uniform(size=(7, 3, 4, 4))
        np.testing.assert_array_equal(sliding_dynamic(frames, 0, 7), rank_pool(frames))

    def test_constant_window(self):
        assert not np.any(sliding_dynamic(np.ones((9, 3, 4, 4)), 1, DEFAULT_WINDOW))

    def test_translating_pattern(self):
        x = np.arange(8)
        frames = np.stack([np.broadcast_to(np.sin((x - t) * 0.8), (3, 8, 8)) for t in range(9)])
        d = sliding_dynamic(frames, 1, 7, "exact")
        assert np.abs(d).max() > 0
        np.testing.assert_array_equal(d, rank_pool(frames[1:8], "exact"))


class TestFuse:
    def test_zero_dynamic(self, rng):
        s = rng.uniform(size=(3, 4, 4))
        np.testing.assert_allclose(fuse_static_dynamic(s, np.zeros_like(s)), (s - s.min()) / (s.max() - s.min()))

    def test_hand_case(self):
        s = np.broadcast_to(np.array([[0.0, 1], [2, 3]]), (3, 2, 2))
        out = fuse_static_dynamic(s, np.ones((3, 2, 2)))
        np.testing.assert_allclose(out[0], [[0, 1 / 3], [2 / 3, 1]])

    def test_constant_sum(self):
        assert not np.any(fuse_static_dynamic(np.ones((3, 2, 2)), np.ones((3, 2, 2))))

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            fuse_static_dynamic(np.ones((3, 2, 2)), np.ones((3, 2, 3)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
    def test_range(self, seed, scale):
        r = np.random.default_rng(seed)
        out = fuse_static_dynamic(r.uniform(size=(3, 5, 5)), scale * r.normal(size=(3, 5, 5)))
        assert out.min() == 0.0 and out.max() == 1.0
