"""Multi-domain clip datasets, protocol splits and the network input pipeline."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamic import DEFAULT_WINDOW, fuse_static_dynamic, sliding_dynamic
from .tensor import ConfigError

__all__ = [
    "DomainDataset",
    "TaskData",
    "INPUT_MODES",
    "SPLIT_MODES",
    "split",
    "input_pipeline",
    "prepare_inputs",
    "block_mean",
    "task_data",
    "save_dataset",
    "load_dataset",
]

INPUT_MODES = ("static", "dynamic", "static-dynamic")
SPLIT_MODES = ("intra-domain", "leave-one-domain-out", "leave-one-type-out")


@dataclass
class DomainDataset:
    """Clips ``(n, K, 3, S, S)`` with depth ``(n, S, S)``, liveness and domain/type tags.

    ``types`` indexes ``type_names`` where entry 0 is ``"live"``.
    """

    clips: np.ndarray
    depth: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    types: np.ndarray
    domain_names: tuple[str, ...]
    type_names: tuple[str, ...]

    def __post_init__(self):
        n = len(self.clips)
        for name in ("depth", "labels", "domains", "types"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"dataset field {name!r} has {len(getattr(self, name))} rows, expected {n}")
        if n == 0:
            raise ConfigError("dataset is empty")

    def __len__(self) -> int:
        return len(self.clips)

    @property
    def n_domains(self) -> int:
        return len(self.domain_names)

    def subset(self, idx) -> "DomainDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return DomainDataset(self.clips[idx], self.depth[idx], self.labels[idx], self.domains[idx],
                             self.types[idx], self.domain_names, self.type_names)

    def domain_index(self, name_or_idx) -> int:
        if isinstance(name_or_idx, (int, np.integer)):
            return int(name_or_idx)
        try:
            return self.domain_names.index(name_or_idx)
        except ValueError:
            raise ConfigError(f"unknown domain {name_or_idx!r}; have {self.domain_names}") from None

    def type_index(self, name_or_idx) -> int:
        if isinstance(name_or_idx, (int, np.integer)):
            return int(name_or_idx)
        try:
            return self.type_names.index(name_or_idx)
        except ValueError:
            raise ConfigError(f"unknown attack type {name_or_idx!r}; have {self.type_names[1:]}") from None


def split(data: DomainDataset, mode: str, holdout=None, test_fraction: float = 0.3, seed: int = 0):
    """Train/test index arrays for a protocol; together they cover every sample exactly once.

    ``intra-domain`` stratifies by (domain, type). Leave-one-out modes exclude the held-out
    domain, or spoofs of the held-out type, from training entirely; live samples of a
    leave-one-type-out split are shared out by ``test_fraction``.
    """
    if mode not in SPLIT_MODES:
        raise ConfigError(f"split mode must be one of {SPLIT_MODES}, got {mode!r}")
    rng = np.random.default_rng(seed)
    n = len(data)
    test = np.zeros(n, dtype=bool)

    def stratified(mask_groups):
        for members in mask_groups:
            members = rng.permutation(members)
            test[members[: int(round(test_fraction * len(members)))]] = True

    if mode == "intra-domain":
        stratified([np.flatnonzero((data.domains == d) & (data.types == t))
                    for d in np.unique(data.domains) for t in np.unique(data.types)])
    elif mode == "leave-one-domain-out":
        if holdout is None:
            raise ConfigError("leave-one-domain-out needs a held-out domain")
        test = data.domains == data.domain_index(holdout)
    else:
        if holdout is None:
            raise ConfigError("leave-one-type-out needs a held-out attack type")
        t = data.type_index(holdout)
        if t == 0:
            raise ConfigError("the live class cannot be held out as an attack type")
        stratified([np.flatnonzero((data.domains == d) & (data.types == 0)) for d in np.unique(data.domains)])
        test = test | (data.types == t)
    train_idx, test_idx = np.flatnonzero(~test), np.flatnonzero(test)
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise ConfigError(f"split {mode!r} produced an empty partition")
    return train_idx, test_idx


def input_pipeline(clip: np.ndarray, mode: str, solver: str = "approximate", window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Network input ``(3, S, S)`` from a clip ``(K, 3, S, S)``.

    static: middle frame; dynamic: rank-pooled central window; static-dynamic: their fusion.
    """
    if mode not in INPUT_MODES:
        raise ConfigError(f"input mode must be one of {INPUT_MODES}, got {mode!r}")
    clip = np.asarray(clip)
    k = clip.shape[0]
    static = clip[k // 2]
    if mode == "static":
        return static.astype(np.float32)
    w = min(window, k)
    dyn = sliding_dynamic(clip, (k - w) // 2, w, solver)
    if mode == "dynamic":
        return dyn.astype(np.float32)
    return fuse_static_dynamic(static, dyn).astype(np.float32)


def prepare_inputs(data: DomainDataset, mode: str, solver: str = "approximate") -> np.ndarray:
    return np.stack([input_pipeline(c, mode, solver) for c in data.clips])


def block_mean(maps: np.ndarray, size: int) -> np.ndarray:
    """Average-pool ``(n, S, S)`` maps down to ``(n, size, size)``."""
    n, s = maps.shape[0], maps.shape[-1]
    if s % size:
        raise ConfigError(f"cannot pool {s}x{s} maps to {size}x{size}")
    f = s // size
    return maps.reshape(n, size, f, size, f).mean(axis=(2, 4)).astype(np.float32)


@dataclass
class TaskData:
    """Precomputed network inputs with labels, map targets and a grouping tag per sample."""

    x: np.ndarray
    labels: np.ndarray
    targets: np.ndarray
    groups: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def batch(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return self.x[idx], self.labels[idx], self.targets[idx]

    def subset(self, idx) -> "TaskData":
        idx = np.asarray(idx, dtype=np.int64)
        return TaskData(self.x[idx], self.labels[idx], self.targets[idx], self.groups[idx])

    @property
    def group_ids(self) -> list[int]:
        return sorted(int(g) for g in np.unique(self.groups))


def task_data(data: DomainDataset, mode: str = "static", out_size: int | None = None, group_by: str = "domain",
              solver: str = "approximate", x: np.ndarray | None = None) -> TaskData:
    """Bundle a dataset for training or search.

    ``group_by="type"`` groups spoofs by attack type and deals live samples round-robin
    across those groups so every group holds both classes.
    """
    if x is None:
        x = prepare_inputs(data, mode, solver)
    size = out_size or data.depth.shape[-1] // 8
    targets = block_mean(data.depth, size)
    if group_by == "domain":
        groups = data.domains.copy()
    elif group_by == "type":
        groups = data.types - 1
        live = np.flatnonzero(data.types == 0)
        n_groups = len(data.type_names) - 1
        groups[live] = np.arange(len(live)) % n_groups
    else:
        raise ConfigError(f"group_by must be 'domain' or 'type', got {group_by!r}")
    return TaskData(x.astype(np.float32), data.labels.copy(), targets, groups.astype(np.int64))


# ---------------------------------------------------------------------------
# on-disk format: one directory of PNG frames per clip plus index.json
# ---------------------------------------------------------------------------

def save_dataset(data: DomainDataset, root, meta: dict | None = None) -> Path:
    from PIL import Image

    root = Path(root)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(len(data)):
        d = root / "clips" / f"{i:05d}"
        d.mkdir(exist_ok=True)
        for t, frame in enumerate(data.clips[i]):
            img = np.clip(np.rint(frame.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
            Image.fromarray(img).save(d / f"frame_{t:02d}.png")
        depth16 = np.clip(np.rint(data.depth[i] * 65535), 0, 65535).astype(np.uint16)
        Image.fromarray(depth16).save(d / "depth.png")
        entries.append({"path": f"clips/{i:05d}", "label": int(data.labels[i]), "frames": int(data.clips.shape[1]),
                        "domain": data.domain_names[data.domains[i]], "type": data.type_names[data.types[i]]})
    index = {"domains": list(data.domain_names), "types": list(data.type_names), "samples": entries,
             "meta": meta or {}}
    (root / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    return root


def load_dataset(root) -> DomainDataset:
    from PIL import Image

    root = Path(root)
    index_path = root / "index.json"
    if not index_path.exists():
        raise ConfigError(f"no index.json under {root}")
    index = json.loads(index_path.read_text())
    domain_names, type_names = tuple(index["domains"]), tuple(index["types"])
    clips, depths, labels, domains, types = [], [], [], [], []
    for e in index["samples"]:
        d = root / e["path"]
        frames = [np.asarray(Image.open(d / f"frame_{t:02d}.png"), dtype=np.float32) / 255.0
                  for t in range(e["frames"])]
        clips.append(np.stack(frames).transpose(0, 3, 1, 2))
        depths.append(np.asarray(Image.open(d / "depth.png"), dtype=np.float32) / 65535.0)
        labels.append(e["label"])
        domains.append(domain_names.index(e["domain"]))
        types.append(type_names.index(e["type"]))
    return DomainDataset(np.stack(clips), np.stack(depths), np.asarray(labels, dtype=np.int64),
                         np.asarray(domains, dtype=np.int64), np.asarray(types, dtype=np.int64),
                         domain_names, type_names)
