"""Rank-pooled dynamic images and the static-dynamic input representation.

Frames are plain float arrays shaped ``(K, 3, H, W)`` with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ConfigError, NumericError

__all__ = [
    "RankPoolResult",
    "prefix_means",
    "rank_pool",
    "rank_pool_objective",
    "approximate_coefficients",
    "sliding_dynamic",
    "fuse_static_dynamic",
    "DEFAULT_WINDOW",
]

DEFAULT_WINDOW = 7


@dataclass
class RankPoolResult:
    dynamic: np.ndarray
    objective: float
    history: list[float] = field(default_factory=list)


def _check_frames(frames) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 2:
        raise ConfigError(f"expected a (K, ...) frame stack, got shape {frames.shape}")
    if frames.shape[0] < 2:
        raise ConfigError(f"rank pooling needs at least 2 frames, got {frames.shape[0]}")
    return frames


def prefix_means(frames: np.ndarray) -> np.ndarray:
    """Row i holds the mean of frames 0..i, flattened."""
    flat = frames.reshape(frames.shape[0], -1)
    return np.cumsum(flat, axis=0) / np.arange(1, flat.shape[0] + 1)[:, None]


def _pair_differences(frames: np.ndarray) -> np.ndarray:
    s = prefix_means(frames)
    k = s.shape[0]
    rows = [s[i] - s[j] for i in range(k) for j in range(i)]
    return np.stack(rows)


def rank_pool_objective(d: np.ndarray, frames: np.ndarray) -> float:
    """``0.5 |D|^2 + delta * sum_{i>j} max(0, 1 - D.(S_i - S_j))``."""
    frames = _check_frames(frames)
    k = frames.shape[0]
    delta = 2.0 / (k * (k - 1))
    diffs = _pair_differences(frames)
    margins = diffs @ np.ravel(d)
    return float(0.5 * np.dot(np.ravel(d), np.ravel(d)) + delta * np.maximum(0.0, 1.0 - margins).sum())


def approximate_coefficients(k: int) -> np.ndarray:
    t = np.arange(1, k + 1)
    return (2 * t - k - 1).astype(np.float64)


def rank_pool(frames, solver: str = "approximate", iterations: int = 200) -> np.ndarray:
    """Dynamic image ``D`` of a ``(K, 3, H, W)`` clip, same shape as one frame."""
    return rank_pool_full(frames, solver, iterations).dynamic


def rank_pool_full(frames, solver: str = "approximate", iterations: int = 200) -> RankPoolResult:
    frames = _check_frames(frames)
    k = frames.shape[0]
    if solver not in ("exact", "approximate"):
        raise ConfigError(f"unknown rank-pool solver {solver!r}; use 'exact' or 'approximate'")
    # Only frame differences matter. Subtracting frame 0 up front makes a global offset
    # cancel bitwise whenever the offset itself is added without rounding.
    rel = frames - frames[0]
    if solver == "approximate":
        d = np.tensordot(approximate_coefficients(k), rel, axes=1)
        return RankPoolResult(d, rank_pool_objective(d, rel))
    return _solve_exact(rel, iterations)


def _solve_exact(frames: np.ndarray, sweeps: int) -> RankPoolResult:
    """Dual coordinate ascent on the pairwise ranking SVM.

    The primal minimizer is ``D = sum_p a_p (S_i - S_j)`` with ``0 <= a_p <= delta``.
    Each sweep updates every pair multiplier in closed form; the reported history is
    the best primal objective seen so far, so it never increases.
    """
    k = frames.shape[0]
    delta = 2.0 / (k * (k - 1))
    diffs = _pair_differences(frames)
    gram = diffs @ diffs.T
    n_pairs = gram.shape[0]
    a = np.zeros(n_pairs)
    ga = np.zeros(n_pairs)  # gram @ a, i.e. the margins D.(S_i - S_j)

    def primal(ga_vec, a_vec):
        return 0.5 * a_vec @ ga_vec + delta * np.maximum(0.0, 1.0 - ga_vec).sum()

    best_a = a.copy()
    best = primal(ga, a)
    history = [best]
    diag = np.diag(gram)
    for _ in range(sweeps):
        for p in range(n_pairs):
            if diag[p] <= 0.0:
                continue
            new = min(max(a[p] + (1.0 - ga[p]) / diag[p], 0.0), delta)
            step = new - a[p]
            if step != 0.0:
                a[p] = new
                ga += step * gram[:, p]
        value = primal(ga, a)
        if not np.isfinite(value):
            raise NumericError("rank pooling objective became non-finite")
        if value < best:
            best, best_a = value, a.copy()
        history.append(best)
    d = (best_a @ diffs).reshape(frames.shape[1:])
    return RankPoolResult(d, float(best), history)


def sliding_dynamic(frames, t: int, k: int = DEFAULT_WINDOW, solver: str = "approximate") -> np.ndarray:
    """Dynamic image of frames ``t .. t+k-1``."""
    frames = np.asarray(frames)
    if t < 0 or t + k > frames.shape[0]:
        raise ConfigError(f"window [{t}, {t + k}) out of range for a clip of {frames.shape[0]} frames")
    return rank_pool(frames[t:t + k], solver)


def fuse_static_dynamic(static, dynamic) -> np.ndarray:
    """Min-max normalized ``static + dynamic``; all zeros when the sum is constant."""
    static = np.asarray(static, dtype=np.float64)
    dynamic = np.asarray(dynamic, dtype=np.float64)
    if static.shape != dynamic.shape:
        raise ConfigError(f"static {static.shape} and dynamic {dynamic.shape} shapes differ")
    s = static + dynamic
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)
