"""Command line interface: gen, dynimg, train, search, retrain, eval, compare.

Exit codes: 0 success, 1 configuration error, 2 numeric failure.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from .tensor import ConfigError, NumericError

INPUT_MODES = ("static", "dynamic", "static-dynamic")
SPLITS = ("intra-domain", "leave-one-domain-out", "leave-one-type-out")


def _write_reports(out: Path, name: str, report: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    flat = {k: v for k, v in report.items() if not isinstance(v, (dict, list))}
    with (out / f"{name}.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=sorted(flat))
        writer.writeheader()
        writer.writerow(flat)


def _jsonl(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = path.open("w")

    def log(rec):
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()

    return log, fh


def _echo_metrics(report: dict) -> None:
    keys = [k for k in ("acer", "apcer", "bpcer", "eer", "auc", "hter") if k in report]
    click.echo("  ".join(f"{k.upper()}={report[k]:.4f}" for k in keys))


def _load_config(ctx, param, value):
    if value is None:
        return None
    try:
        cfg = json.loads(Path(value).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"config file {value}: {err}") from err
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {value}: top level must be an object keyed by command name")
    known = {"gen", "dynimg", "train", "search", "retrain", "eval", "compare"}
    for cmd, opts in cfg.items():
        if cmd not in known:
            raise ConfigError(f"config.{cmd}: unknown command section")
        if not isinstance(opts, dict):
            raise ConfigError(f"config.{cmd}: must be an object of option values")
    ctx.default_map = {cmd: {k.replace("-", "_"): v for k, v in opts.items()} for cmd, opts in cfg.items()}
    return value


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), callback=_load_config, is_eager=True,
              expose_value=False, help="JSON file with one object of option defaults per command.")
def cli():
    """Face anti-spoofing with central difference operators and domain-aware NAS."""


def _split_opts(f):
    f = click.option("--holdout", default=None, help="Held-out domain or attack type for leave-one-out splits.")(f)
    f = click.option("--split", "split_mode", type=click.Choice(SPLITS), default="intra-domain", show_default=True)(f)
    f = click.option("--input", "input_mode", type=click.Choice(INPUT_MODES), default="static", show_default=True)(f)
    f = click.option("--data", type=click.Path(exists=True, file_okay=False), required=True,
                     help="Dataset directory written by `gen`.")(f)
    return f


def _train_opts(f):
    f = click.option("--seed", default=0, show_default=True)(f)
    f = click.option("--weight-decay", default=5e-5, show_default=True)(f)
    f = click.option("--batch-size", default=8, show_default=True)(f)
    f = click.option("--lr", default=1e-3, show_default=True)(f)
    f = click.option("--epochs", default=20, show_default=True)(f)
    return f


def _load_splits(data_dir, split_mode, holdout, input_mode, seed, group_by="domain"):
    from .data import load_dataset
    from .experiments import prepare_split

    data = load_dataset(data_dir)
    if split_mode != "intra-domain" and holdout is None:
        raise ConfigError(f"--holdout is required for split {split_mode!r}")
    return prepare_split(data, split_mode, holdout, input_mode, seed=seed, group_by=group_by)


@cli.command()
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--n-per-class", default=24, show_default=True, help="Live and spoof clips per domain.")
@click.option("--resolution", default=64, show_default=True)
@click.option("--frames", default=7, show_default=True)
@click.option("--domains", default="indoor,warm,cool,dim", show_default=True, help="Comma-separated preset names.")
@click.option("--attack-types", default="lattice,noise,blur-flat", show_default=True)
@click.option("--artifact", default=0.2, show_default=True, help="Spoof artifact amplitude.")
@click.option("--seed", default=0, show_default=True)
def gen(out, n_per_class, resolution, frames, domains, attack_types, artifact, seed):
    """Generate a synthetic multi-domain dataset as PNG frame directories plus index.json."""
    from .data import save_dataset
    from .experiments import DESK_DOMAINS
    from .synthetic import TaskSpec, gen_dataset

    presets = {d.name: d for d in DESK_DOMAINS}
    names = [d for d in domains.split(",") if d]
    missing = [d for d in names if d not in presets]
    if missing:
        raise ConfigError(f"gen.domains: unknown preset(s) {missing}; choose from {sorted(presets)}")
    spec = TaskSpec(resolution=resolution, frames=frames, n_per_class=n_per_class,
                    domains=tuple(presets[d] for d in names),
                    attack_types=tuple(a for a in attack_types.split(",") if a), artifact=artifact, seed=seed)
    data = gen_dataset(spec)
    save_dataset(data, out, meta={"spec": spec.to_dict()})
    click.echo(f"wrote {len(data)} clips to {out}")


def _save_image(path: Path, img: np.ndarray, stretch: bool) -> None:
    from PIL import Image

    if stretch:
        lo, hi = float(img.min()), float(img.max())
        img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    Image.fromarray(np.rint(np.clip(img, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8)).save(path)


def _read_frames(directory: Path) -> np.ndarray:
    from PIL import Image

    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    # dataset clip folders also hold depth.png; keep only frame_* when present
    framed = [p for p in files if p.name.startswith("frame_")]
    files = framed or files
    if len(files) < 2:
        raise ConfigError(f"dynimg.frames: {directory} holds {len(files)} image file(s); need at least 2")
    frames = [np.asarray(Image.open(p).convert("RGB"), dtype=np.float64) / 255.0 for p in files]
    if len({f.shape for f in frames}) != 1:
        raise ConfigError(f"dynimg.frames: images in {directory} differ in size")
    return np.stack(frames).transpose(0, 3, 1, 2)


@cli.command()
@click.option("--frames", "frames_dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory of RGB frames in lexicographic temporal order.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--k", "window", default=7, show_default=True, help="Rank-pooling window length.")
@click.option("--t", "start", default=None, type=int, help="First frame of the window (default: centred).")
@click.option("--solver", type=click.Choice(["approximate", "exact"]), default="approximate", show_default=True)
@click.option("--fuse/--no-fuse", default=True, show_default=True, help="Also write the static-dynamic image.")
def dynimg(frames_dir, out, window, start, solver, fuse):
    """Rank-pool a frame directory into a dynamic image (PNG plus CDNT snapshot)."""
    from .dynamic import fuse_static_dynamic, sliding_dynamic
    from .tensor import save_snapshot

    frames = _read_frames(Path(frames_dir))
    k = min(window, len(frames))
    t = (len(frames) - k) // 2 if start is None else start
    dyn = sliding_dynamic(frames, t, k, solver)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_snapshot(out / "dynamic.cdnt", dyn.astype(np.float32))
    _save_image(out / "dynamic.png", dyn, stretch=True)
    msg = f"dynamic image of frames [{t}, {t + k}) -> {out}"
    if fuse:
        fused = fuse_static_dynamic(frames[len(frames) // 2], dyn)
        save_snapshot(out / "fused.cdnt", fused.astype(np.float32))
        _save_image(out / "fused.png", fused, stretch=False)
        msg += " (with fused)"
    click.echo(msg)


@cli.command()
@_split_opts
@click.option("--variant", type=click.Choice(["depthnet", "cdn_cdc", "cdn_cdp"]), default="depthnet", show_default=True)
@click.option("--width", default=0.125, show_default=True, help="Channel multiplier on the full-size widths.")
@click.option("--theta", default=0.7, show_default=True)
@click.option("--lam", default=0.7, show_default=True)
@_train_opts
@click.option("--out", type=click.Path(file_okay=False), required=True)
def train(data, input_mode, split_mode, holdout, variant, width, theta, lam, epochs, lr, batch_size, weight_decay,
          seed, out):
    """Train DepthNet / CDN_CDC / CDN_CDP and report metrics on the test split."""
    from .cdn import CdnConfig, build_cdn
    from .nn import save_checkpoint
    from .train import TrainConfig, evaluate, train_network

    out = Path(out)
    tr, te = _load_splits(data, split_mode, holdout, input_mode, seed)
    cdn_cfg = CdnConfig(variant=variant, theta=theta, lam=lam, input_size=tr.x.shape[-1], width=width, seed=seed)
    cfg = TrainConfig(epochs=epochs, lr=lr, batch_size=batch_size, weight_decay=weight_decay, seed=seed)
    net = build_cdn(cdn_cfg)
    log, fh = _jsonl(out / "train_log.jsonl")
    with fh:
        train_network(net, tr, cfg, log=log)
    report = evaluate(net, tr, te)
    report.update(variant=variant, input=input_mode, split=split_mode, holdout=holdout, seed=seed)
    save_checkpoint(out / "checkpoint.zip", net, {"kind": "cdn", "cdn": cdn_cfg.to_dict(), "train": cfg.to_dict(),
                                                  "input": input_mode})
    _write_reports(out, "report", report)
    _echo_metrics(report)


@cli.command()
@_split_opts
@click.option("--space", "space_name", type=click.Choice(["fas", "baseline"]), default="fas", show_default=True)
@click.option("--scheme", type=click.Choice(["nas", "dt-nas", "dt-meta"]), default="dt-meta", show_default=True)
@click.option("--variant", type=click.Choice(["vanilla", "cd"]), default="cd", show_default=True)
@click.option("--pooling", type=click.Choice(["max", "cdp"]), default="max", show_default=True)
@click.option("--attention/--no-attention", default=False, show_default=True)
@click.option("--head", type=click.Choice(["deeppixel", "cross-entropy"]), default="deeppixel", show_default=True,
              help="Baseline space only.")
@click.option("--group-by", type=click.Choice(["domain", "type"]), default="domain", show_default=True)
@click.option("--channels", default=4, show_default=True, help="Search-phase channels (doubled at retrain).")
@click.option("--epochs", default=10, show_default=True)
@click.option("--iterations", default=None, type=int, help="Iterations per epoch (default: one pass).")
@click.option("--freeze-epochs", default=0, show_default=True, help="Epochs with alpha frozen.")
@click.option("--batch-size", default=4, show_default=True, help="Batch per domain task.")
@click.option("--inner-lr", default=1e-2, show_default=True)
@click.option("--outer-lr", default=1e-3, show_default=True)
@click.option("--arch-lr", default=6e-3, show_default=True)
@click.option("--arch-mode", type=click.Choice(["first-order", "unrolled"]), default="first-order", show_default=True)
@click.option("--partial", default=1, show_default=True, help="Partial-channel factor K.")
@click.option("--edge-norm/--no-edge-norm", default=False, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def search(data, input_mode, split_mode, holdout, space_name, scheme, variant, pooling, attention, head, group_by,
           channels, epochs, iterations, freeze_epochs, batch_size, inner_lr, outer_lr, arch_lr, arch_mode, partial,
           edge_norm, seed, out):
    """Search an architecture on the training split and write genotype.json plus search_log.jsonl."""
    from .experiments import build_space, search_genotype
    from .meta_nas import MetaConfig

    out = Path(out)
    tr, _ = _load_splits(data, split_mode, holdout, input_mode, seed, group_by)
    space = build_space(space_name, variant, pooling, attention, head, tr.x.shape[-1], channels)
    cfg = MetaConfig(inner_lr=inner_lr, outer_lr=outer_lr, arch_lr=arch_lr, batch_size=batch_size, epochs=epochs,
                     iterations_per_epoch=iterations, freeze_epochs=freeze_epochs, arch_mode=arch_mode,
                     partial=partial, edge_norm=edge_norm, seed=seed)
    log, fh = _jsonl(out / "search_log.jsonl")
    with fh:
        genotype, _ = search_genotype(tr, space, scheme, cfg, log=log)
    genotype.meta.update(input=input_mode, channels=channels)
    out.mkdir(parents=True, exist_ok=True)
    (out / "genotype.json").write_text(genotype.to_json())
    (out / "space.json").write_text(space.to_json())
    (out / "search_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    click.echo(f"genotype written to {out / 'genotype.json'} ({genotype.meta['seconds']:.1f}s)")
    for cell in genotype.cells:
        click.echo(f"  {cell.kind}: " + ", ".join(f"{e.src}->{e.to}:{e.op}" for e in cell.edges))


def _space_for(genotype, input_size: int, channels: int | None):
    from .search_spaces import space_from_id

    ch = channels if channels is not None else int(genotype.meta.get("channels", 4))
    return space_from_id(genotype.space, input_size, ch)


@cli.command()
@_split_opts
@click.option("--genotype", "genotype_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--channels", default=None, type=int, help="Search-phase channels (default: from the genotype).")
@click.option("--channel-multiplier", default=2, show_default=True)
@_train_opts
@click.option("--out", type=click.Path(file_okay=False), required=True)
def retrain(data, input_mode, split_mode, holdout, genotype_path, channels, channel_multiplier, epochs, lr, batch_size,
            weight_decay, seed, out):
    """Materialize a genotype (channels doubled by default), train it and report metrics."""
    from .experiments import retrain_genotype
    from .genotype import load_genotype
    from .nn import save_checkpoint
    from .train import TrainConfig

    out = Path(out)
    try:
        genotype = load_genotype(genotype_path)
    except (KeyError, ValueError, TypeError) as err:
        raise ConfigError(f"retrain.genotype: cannot parse {genotype_path}: {err}") from err
    tr, te = _load_splits(data, split_mode, holdout, input_mode, seed)
    space = _space_for(genotype, tr.x.shape[-1], channels)
    cfg = TrainConfig(epochs=epochs, lr=lr, batch_size=batch_size, weight_decay=weight_decay, seed=seed)
    log, fh = _jsonl(out / "train_log.jsonl")
    with fh:
        net, report, _ = retrain_genotype(genotype, space, tr, te, cfg, channel_multiplier, log=log)
    report.update(genotype=str(genotype_path), split=split_mode, holdout=holdout, input=input_mode, seed=seed)
    save_checkpoint(out / "checkpoint.zip", net, {"kind": "genotype", "genotype": genotype.to_dict(),
                                                  "space": space.to_dict(), "channel_multiplier": channel_multiplier,
                                                  "seed": seed, "train": cfg.to_dict(), "input": input_mode})
    _write_reports(out, "report", report)
    _echo_metrics(report)


@cli.command(name="eval")
@_split_opts
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", default=0, show_default=True, help="Split seed.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def eval_cmd(data, input_mode, split_mode, holdout, checkpoint, seed, out):
    """Evaluate a checkpoint; the ACER threshold is the EER point of the training split."""
    from .experiments import model_from_checkpoint
    from .train import evaluate

    net, config = model_from_checkpoint(checkpoint)
    if config.get("input") and config["input"] != input_mode:
        click.echo(f"note: checkpoint was trained with --input {config['input']}", err=True)
    tr, te = _load_splits(data, split_mode, holdout, input_mode, seed)
    report = evaluate(net, tr, te)
    report.update(checkpoint=str(checkpoint), split=split_mode, holdout=holdout, input=input_mode)
    _write_reports(Path(out), "metrics", report)
    _echo_metrics(report)


@cli.command()
@_split_opts
@click.option("--genotype", "genotype_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--random-genotype", "random_paths", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Use these genotypes instead of random samples (repeatable).")
@click.option("--n-random", default=3, show_default=True)
@click.option("--channels", default=None, type=int)
@click.option("--channel-multiplier", default=2, show_default=True)
@_train_opts
@click.option("--out", type=click.Path(file_okay=False), required=True)
def compare(data, input_mode, split_mode, holdout, genotype_path, random_paths, n_random, channels, channel_multiplier,
            epochs, lr, batch_size, weight_decay, seed, out):
    """Retrain the searched genotype and R random genotypes; report mean ACERs and RI."""
    from .experiments import compare_genotypes
    from .genotype import load_genotype
    from .train import TrainConfig

    out = Path(out)
    genotype = load_genotype(genotype_path)
    tr, te = _load_splits(data, split_mode, holdout, input_mode, seed)
    space = _space_for(genotype, tr.x.shape[-1], channels)
    randoms = [load_genotype(p) for p in random_paths] or None
    if randoms is not None:
        n_random = len(randoms)
    cfg = TrainConfig(epochs=epochs, lr=lr, batch_size=batch_size, weight_decay=weight_decay, seed=seed)
    log, fh = _jsonl(out / "compare_log.jsonl")
    with fh:
        result = compare_genotypes(genotype, space, tr, te, cfg, n_random, seed, randoms, channel_multiplier, log=log)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    with (out / "compare.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(result["rows"][0]))
        writer.writeheader()
        writer.writerows(result["rows"])
    _write_reports(out, "summary", {k: result[k] for k in ("acer_searched", "acer_random", "ri")})
    click.echo(f"ACER searched={result['acer_searched']:.4f} random={result['acer_random']:.4f} RI={result['ri']:.2f}%")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="nasfas", standalone_mode=False)
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as err:
        err.show()
        return 1
    except NumericError as err:
        click.echo(f"numeric error: {err}", err=True)
        return 2
    except FloatingPointError as err:
        click.echo(f"numeric error: {err}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
