"""Supervised training and evaluation loops shared by CDN variants and retrained genotypes."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .data import TaskData
from .losses import overall_depth_loss, score_from_map
from .metrics import ScoredSet, report
from .nn import SGD, Adam
from .tensor import ConfigError, NumericError, Tensor, no_grad

__all__ = ["TrainConfig", "iterate_batches", "depth_loss", "train_network", "predict", "evaluate"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 5e-5
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("epochs, lr and weight_decay must be non-negative and batch_size positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def depth_loss(model, batch) -> Tensor:
    x, _, targets = batch
    return overall_depth_loss(model(Tensor(x)), targets)


def _make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    return SGD(params, lr=cfg.lr, weight_decay=cfg.weight_decay)


def train_network(model, data: TaskData, cfg: TrainConfig, loss_fn=depth_loss, log=None) -> list[dict]:
    """Minibatch training; returns one record per epoch (mean loss, wall time)."""
    params = model.weight_parameters() if hasattr(model, "weight_parameters") else model.parameters()
    opt = _make_optimizer(params, cfg)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        losses = []
        for idx in iterate_batches(len(data), cfg.batch_size, rng):
            if len(idx) < 2:  # batch statistics need more than one sample
                continue
            opt.zero_grad()
            loss = loss_fn(model, data.batch(idx))
            value = float(loss.item())
            if not math.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step()
            losses.append(value)
        rec = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else float("nan"),
               "seconds": time.perf_counter() - t0}
        history.append(rec)
        if log is not None:
            log(rec)
    return history


def predict(model, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Liveness scores; batch statistics are taken per evaluation batch."""
    out = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            y = model(Tensor(x[start:start + batch_size]))
            out.append(model.scores(y) if hasattr(model, "scores") else score_from_map(y))
    return np.concatenate(out).astype(np.float64)


def evaluate(model, dev: TaskData, test: TaskData, batch_size: int = 32) -> dict:
    """Metrics on ``test`` with the ACER threshold fixed at ``dev``'s EER point."""
    dev_set = ScoredSet(predict(model, dev.x, batch_size), dev.labels)
    test_set = ScoredSet(predict(model, test.x, batch_size), test.labels)
    return report(test_set, dev_set)
