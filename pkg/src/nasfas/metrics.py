"""Presentation-attack detection metrics.

Scores are "higher = more live"; labels are 1 for live and 0 for attack.
A sample is accepted as live when ``score >= threshold``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScoredSet",
    "apcer_bpcer_acer",
    "eer",
    "eer_threshold",
    "hter",
    "auc",
    "auc_pairwise",
    "relative_improvement",
    "report",
]


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray
    types: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        y = np.asarray(self.labels).ravel().astype(np.int64)
        if len(s) == 0:
            raise ValueError("scored set is empty")
        if len(s) != len(y):
            raise ValueError(f"{len(s)} scores but {len(y)} labels")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 (attack) or 1 (live)")
        if not np.isfinite(s).all():
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    @property
    def live(self) -> np.ndarray:
        return self.scores[self.labels == 1]

    @property
    def attack(self) -> np.ndarray:
        return self.scores[self.labels == 0]

    def require_both(self) -> None:
        if not (self.labels == 1).any() or not (self.labels == 0).any():
            raise ValueError("both live and attack samples are required")


def _as_set(scores, labels=None) -> ScoredSet:
    s = scores if isinstance(scores, ScoredSet) else ScoredSet(scores, labels)
    s.require_both()
    return s


def apcer_bpcer_acer(scores, labels=None, threshold: float = 0.5) -> tuple[float, float, float]:
    s = _as_set(scores, labels)
    apcer = float(np.mean(s.attack >= threshold))
    bpcer = float(np.mean(s.live < threshold))
    return apcer, bpcer, (apcer + bpcer) / 2


def _error_curves(s: ScoredSet):
    """Thresholds (ascending, one past the max) with APCER and BPCER at each."""
    t = np.unique(s.scores)
    t = np.append(t, t[-1] + 1.0)
    att = np.sort(s.attack)
    live = np.sort(s.live)
    far = 1.0 - np.searchsorted(att, t, side="left") / len(att)
    frr = np.searchsorted(live, t, side="left") / len(live)
    return t, far, frr


def _eer_point(s: ScoredSet) -> tuple[float, float]:
    t, far, frr = _error_curves(s)
    d = far - frr  # non-increasing in t
    exact = np.flatnonzero(d == 0)
    if len(exact):
        k = exact[0]
        return float(far[k]), float(t[k])
    k = int(np.flatnonzero(d > 0)[-1])
    lam = d[k] / (d[k] - d[k + 1])
    rate = far[k] + lam * (far[k + 1] - far[k])
    return float(rate), float(t[k] + lam * (t[k + 1] - t[k]))


def eer(scores, labels=None) -> float:
    """Rate where APCER equals BPCER, linearly interpolated between adjacent thresholds."""
    return _eer_point(_as_set(scores, labels))[0]


def eer_threshold(scores, labels=None) -> float:
    return _eer_point(_as_set(scores, labels))[1]


def hter(dev: ScoredSet, test: ScoredSet) -> float:
    """Mean of APCER and BPCER on ``test`` at the threshold where ``dev`` hits its EER."""
    return apcer_bpcer_acer(test, threshold=eer_threshold(dev))[2]


def auc(scores, labels=None) -> float:
    """Area under the ROC curve by the trapezoidal rule."""
    s = _as_set(scores, labels)
    t, far, frr = _error_curves(s)
    tpr = 1.0 - frr
    # thresholds ascend, so rates descend; integrate from (0, 0) to (1, 1)
    x = far[::-1]
    y = tpr[::-1]
    x = np.concatenate([[0.0], x, [1.0]])
    y = np.concatenate([[0.0], y, [1.0]])
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2))


def auc_pairwise(scores, labels=None) -> float:
    """Fraction of (live, attack) pairs ordered correctly; ties count one half."""
    s = _as_set(scores, labels)
    diff = s.live[:, None] - s.attack[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def relative_improvement(acer_search: float, acer_random: float) -> float:
    """``-100 * (acer_search - acer_random) / acer_random`` in percent."""
    if acer_random == 0:
        return 0.0 if acer_search == 0 else -math.inf
    return 100.0 * (acer_random - acer_search) / acer_random


def report(test: ScoredSet, dev: ScoredSet | None = None, threshold: float | None = None) -> dict:
    """All metrics on ``test``; the ACER threshold comes from ``dev``'s EER unless given."""
    test.require_both()
    if threshold is None:
        threshold = eer_threshold(dev) if dev is not None else eer_threshold(test)
    apcer, bpcer, acer = apcer_bpcer_acer(test, threshold=threshold)
    out = {"threshold": float(threshold), "apcer": apcer, "bpcer": bpcer, "acer": acer,
           "eer": eer(test), "auc": auc(test), "n_live": int((test.labels == 1).sum()),
           "n_attack": int((test.labels == 0).sum())}
    if dev is not None:
        out["hter"] = hter(dev, test)
    return out
