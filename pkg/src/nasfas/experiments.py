"""Experiment orchestration shared by the CLI, scripts and end-to-end tests."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cdn import CdnConfig, build_cdn
from .data import DomainDataset, TaskData, load_dataset, split, task_data
from .genotype import Genotype
from .meta_nas import MetaConfig, run_search
from .metrics import relative_improvement
from .nas import materialize
from .nn import load_checkpoint, save_checkpoint
from .search_spaces import SearchSpace, baseline_space, fas_space, random_sample, space_from_id
from .synthetic import Photometric, TaskSpec, gen_dataset
from .tensor import ConfigError
from .train import TrainConfig, evaluate, train_network

__all__ = [
    "DESK_DOMAINS",
    "DeskProtocol",
    "cached",
    "cdn_comparison",
    "end_to_end",
    "prepare_split",
    "train_cdn",
    "retrain_genotype",
    "search_genotype",
    "compare_genotypes",
    "build_space",
    "model_from_checkpoint",
    "source_fingerprint",
]

# three source domains plus one that is only ever used as the unseen target; the target's
# recapture media are colour-neutral so no source-domain colour cue carries over to it
DESK_DOMAINS = (
    Photometric("indoor", 1.0, 0.0, (1.0, 1.0, 1.0), 0.01, (1.06, 1.0, 0.84)),
    Photometric("warm", 0.8, 0.05, (1.08, 1.0, 0.88), 0.02, (0.92, 1.0, 1.14)),
    Photometric("cool", 1.25, -0.05, (0.9, 1.0, 1.1), 0.03, (1.0, 0.9, 1.04)),
    Photometric("dim", 1.1, -0.1, (1.0, 0.95, 0.97), 0.03, (1.0, 1.0, 1.0)),
)

DESK_TRAIN = {"epochs": 30, "lr": 2e-3, "batch_size": 8}
DESK_SEARCH = {"epochs": 10, "batch_size": 4}


def build_space(name: str, variant: str, pooling: str = "max", attention: bool = False, head: str = "deeppixel",
                input_size: int = 64, channels: int = 4) -> SearchSpace:
    if name == "fas":
        return fas_space(variant, pooling, attention, input_size, channels)
    if name == "baseline":
        return baseline_space(variant, head, input_size, channels)
    raise ConfigError(f"space must be 'fas' or 'baseline', got {name!r}")


def prepare_split(data: DomainDataset, mode: str, holdout, input_mode: str, seed: int = 0,
                  out_size: int | None = None, group_by: str = "domain") -> tuple[TaskData, TaskData]:
    train_idx, test_idx = split(data, mode, holdout, seed=seed)
    full = task_data(data, input_mode, out_size, group_by)
    return full.subset(train_idx), full.subset(test_idx)


def train_cdn(train: TaskData, test: TaskData, variant: str, cfg: TrainConfig, width: float = 0.125,
              input_size: int = 64, log=None):
    net = build_cdn(CdnConfig(variant=variant, input_size=input_size, width=width, seed=cfg.seed))
    history = train_network(net, train, cfg, log=log)
    return net, evaluate(net, train, test), history


def search_genotype(train: TaskData, space: SearchSpace, scheme: str, cfg: MetaConfig, log=None):
    t0 = time.perf_counter()
    genotype, state = run_search(scheme, train, space, cfg, log=log)
    genotype.meta["seconds"] = round(time.perf_counter() - t0, 2)
    return genotype, state


def retrain_genotype(genotype: Genotype, space: SearchSpace, train: TaskData, test: TaskData, cfg: TrainConfig,
                     channel_multiplier: int = 2, log=None):
    from .nas import task_loss

    net = materialize(genotype, space, channel_multiplier, seed=cfg.seed)
    history = train_network(net, train, cfg, loss_fn=task_loss(space), log=log)
    return net, evaluate(net, train, test), history


def compare_genotypes(searched: Genotype, space: SearchSpace, train: TaskData, test: TaskData, cfg: TrainConfig,
                      n_random: int = 3, sample_seed: int = 0, random_genotypes: list[Genotype] | None = None,
                      channel_multiplier: int = 2, log=None) -> dict:
    """Retrain the searched genotype and ``n_random`` random ones; run ``i`` of each uses seed ``cfg.seed + i``."""
    if random_genotypes is None:
        rng = np.random.default_rng([sample_seed, 101])
        random_genotypes = [random_sample(space, rng, {"sampler": "random", "index": i}) for i in range(n_random)]
    rows = []
    for i, rg in enumerate(random_genotypes):
        run_cfg = replace(cfg, seed=cfg.seed + i)
        for label, g in (("searched", searched), ("random", rg)):
            _, rep, _ = retrain_genotype(g, space, train, test, run_cfg, channel_multiplier)
            row = {"kind": label, "run": i, "seed": run_cfg.seed, **{k: rep[k] for k in ("acer", "apcer", "bpcer", "auc", "eer")}}
            rows.append(row)
            if log is not None:
                log(row)
    acer_s = float(np.mean([r["acer"] for r in rows if r["kind"] == "searched"]))
    acer_r = float(np.mean([r["acer"] for r in rows if r["kind"] == "random"]))
    return {"rows": rows, "acer_searched": acer_s, "acer_random": acer_r,
            "ri": relative_improvement(acer_s, acer_r),
            "random_genotypes": [g.to_dict() for g in random_genotypes]}


def model_from_checkpoint(path):
    """Rebuild a trained network from a checkpoint written by ``train`` or ``retrain``."""
    config, state = load_checkpoint(path)
    kind = config.get("kind")
    if kind == "cdn":
        net = build_cdn(CdnConfig(**config["cdn"]))
    elif kind == "genotype":
        sp = config["space"]
        space = space_from_id(sp["identifier"], sp["input_size"], sp["channels"])
        net = materialize(Genotype.from_dict(config["genotype"]), space, config["channel_multiplier"], config["seed"])
    else:
        raise ConfigError(f"checkpoint {path} has unknown kind {kind!r}")
    net.load_state_dict(state)
    return net, config


def save_model(path, net, config: dict) -> None:
    save_checkpoint(path, net, config)


def source_fingerprint() -> str:
    """Hash of the package sources; cached experiment results are keyed on it."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


@dataclass
class DeskProtocol:
    """Desk-scale leave-one-domain-out protocol: three source domains, one unseen target domain."""

    n_per_class: int = 24
    resolution: int = 64
    artifact: float = 0.2
    data_seed: int = 0
    holdout: str = "dim"
    input_mode: str = "static"
    seeds: tuple[int, ...] = (0, 1, 2)
    search: dict = field(default_factory=lambda: dict(DESK_SEARCH))
    train: dict = field(default_factory=lambda: dict(DESK_TRAIN))
    cdn_width: float = 0.125
    search_channels: int = 4
    n_random: int = 3

    def task_spec(self) -> TaskSpec:
        return TaskSpec(resolution=self.resolution, n_per_class=self.n_per_class, domains=DESK_DOMAINS,
                        artifact=self.artifact, seed=self.data_seed)

    def dataset(self) -> DomainDataset:
        return gen_dataset(self.task_spec())

    def splits(self, data: DomainDataset | None = None):
        data = data or self.dataset()
        return prepare_split(data, "leave-one-domain-out", self.holdout, self.input_mode)

    def meta_config(self, seed: int) -> MetaConfig:
        return MetaConfig(**{**self.search, "seed": seed})

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": seed})

    def key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True) + source_fingerprint()
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_data(path) -> DomainDataset:
    return load_dataset(path)


def cached(protocol: DeskProtocol, name: str, run, root="results") -> dict:
    """Load ``root/<name>-<key>.json`` or compute it with ``run()`` and store it."""
    path = Path(root) / f"{name}-{protocol.key()}.json"
    if path.exists():
        return json.loads(path.read_text())
    result = run()
    result["protocol"] = asdict(protocol)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result, indent=2) + "\n")
    return result


def cdn_comparison(protocol: DeskProtocol, variants=("cdn_cdc", "depthnet"), log=print) -> dict:
    """Leave-one-domain-out ACER of each CDN variant for every protocol seed."""
    train, test = protocol.splits()
    rows = []
    for variant in variants:
        for seed in protocol.seeds:
            t0 = time.perf_counter()
            _, rep, hist = train_cdn(train, test, variant, protocol.train_config(seed), protocol.cdn_width,
                                     protocol.resolution)
            row = {"variant": variant, "seed": seed, "acer": rep["acer"], "auc": rep["auc"],
                   "final_loss": hist[-1]["loss"], "seconds": round(time.perf_counter() - t0, 1)}
            rows.append(row)
            if log:
                log(json.dumps(row))
    means = {v: float(np.mean([r["acer"] for r in rows if r["variant"] == v])) for v in variants}
    return {"rows": rows, "mean_acer": means}


def end_to_end(protocol: DeskProtocol, scheme: str = "dt-meta", log=print) -> dict:
    """Search once per seed, retrain each genotype, and retrain random genotypes for reference."""
    train, test = protocol.splits()
    space = build_space("fas", "cd", input_size=protocol.resolution, channels=protocol.search_channels)
    searched = []
    for seed in protocol.seeds:
        g, _ = search_genotype(train, space, scheme, protocol.meta_config(seed))
        _, rep, _ = retrain_genotype(g, space, train, test, protocol.train_config(seed))
        row = {"seed": seed, "acer": rep["acer"], "auc": rep["auc"], "search_seconds": g.meta["seconds"],
               "genotype": g.to_dict()}
        searched.append(row)
        if log:
            log(json.dumps({k: v for k, v in row.items() if k != "genotype"}))
    rng = np.random.default_rng([protocol.data_seed, 101])
    randoms = []
    for i in range(protocol.n_random):
        g = random_sample(space, rng, {"sampler": "random", "index": i})
        seed = protocol.seeds[i % len(protocol.seeds)]
        _, rep, _ = retrain_genotype(g, space, train, test, protocol.train_config(seed))
        randoms.append({"index": i, "seed": seed, "acer": rep["acer"], "auc": rep["auc"], "genotype": g.to_dict()})
        if log:
            log(json.dumps({"random": i, "acer": rep["acer"]}))
    acer_s = float(np.mean([r["acer"] for r in searched]))
    acer_r = float(np.mean([r["acer"] for r in randoms]))
    return {"scheme": scheme, "searched": searched, "random": randoms, "acer_searched": acer_s,
            "acer_random": acer_r, "ri": relative_improvement(acer_s, acer_r),
            "max_search_seconds": max(r["search_seconds"] for r in searched)}
