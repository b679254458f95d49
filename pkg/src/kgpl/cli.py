"""Command-line pipeline: phantoms -> pretrain -> finetune -> evaluate -> compare.

Configuration lives in TOML files; command-line flags override file
values. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backbones import BackboneConfig
from .backbones import build as build_backbone
from .data import (PhantomSpec, load_manifest, load_sample, make_dataset,
                   preprocess_sample)
from .errors import EmptyMask, KgplError, MismatchedClasses
from .knowledge import ExternalTextEncoder, HashTextEncoder
from .metrics import asd_masks, dsc_masks
from .train import (Stage, TrainConfig, TrainMode, cascade_predict,
                    finetune_full, finetune_kgpl, finetune_random_prompts,
                    load_checkpoint, pretrain, save_checkpoint)

BACKBONE_ALIASES = {"unet": "conv_unet", "unetr": "patch_attention",
                    "swin": "windowed_attention"}


def _load_toml(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _fail(message: str) -> None:
    raise click.ClickException(message)


def _guarded(fn):
    """Map domain errors to exit code 1 with a readable message."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (KgplError, FileNotFoundError, OSError, ValueError) as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc

    return wrapper


@click.group()
def main():
    """Knowledge-guided prompt learning for phantom brain segmentation."""


# ---------------------------------------------------------------------------
# phantoms


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="TOML file with a [phantoms] table.")
@click.option("--count", type=int, default=None, help="Number of phantoms.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--size", type=int, default=None, help="Cubic grid size per phantom.")
@click.option("--format", "fmt", type=click.Choice(["kgt", "nifti"]), default=None)
@_guarded
def phantoms(spec_path, count, out_dir, seed, size, fmt):
    """Generate a synthetic dataset with a manifest."""
    doc = _load_toml(spec_path)
    section = doc.get("phantoms", {})
    spec_kwargs = {k: section[k] for k in
                   ("size", "num_tissues", "num_structures", "age_effect",
                    "noise_sigma", "seed") if k in section}
    if seed is not None:
        spec_kwargs["seed"] = seed
    if size is not None:
        spec_kwargs["size"] = size
    spec = PhantomSpec(**spec_kwargs)
    n = count if count is not None else section.get("count", 10)
    ratios = tuple(section.get("ratios", (0.8, 0.1, 0.1)))
    chosen_fmt = fmt if fmt is not None else section.get("format", "kgt")
    manifest = make_dataset(spec, n, out_dir, ratios=ratios, fmt=chosen_fmt)
    click.echo(f"wrote {n} phantoms and {manifest}")


# ---------------------------------------------------------------------------
# shared data/config plumbing


def _load_split(data_dir, input_size: int) -> tuple[PhantomSpec, dict[str, list]]:
    spec, refs = load_manifest(data_dir)
    splits = {"train": [], "val": [], "test": []}
    for ref in refs:
        sample = load_sample(data_dir, ref, spec)
        splits[ref.split].append(preprocess_sample(sample, (input_size,) * 3))
    return spec, splits


def _train_config(doc: dict, mode: str, stage: str, seed, epochs, batch_size) -> TrainConfig:
    section = dict(doc.get("train", {}))
    allowed = {f.name for f in TrainConfig.__dataclass_fields__.values()}
    kwargs = {k: v for k, v in section.items() if k in allowed}
    unknown = set(section) - allowed
    if unknown:
        _fail(f"unknown [train] keys: {sorted(unknown)}")
    if "injection_layers" in kwargs:
        kwargs["injection_layers"] = tuple(kwargs["injection_layers"])
    kwargs["mode"] = mode
    kwargs["stage"] = stage
    if seed is not None:
        kwargs["seed"] = seed
    if epochs is not None:
        kwargs["max_epochs"] = epochs
    if batch_size is not None:
        kwargs["batch_size"] = batch_size
    return TrainConfig(**kwargs)


def _backbone_config(doc: dict, kind: str, stage: Stage, spec: PhantomSpec,
                     include_image: bool) -> BackboneConfig:
    section = dict(doc.get("backbone", {}))
    section.pop("kind", None)
    if stage is Stage.TISSUE:
        in_channels = 1
        num_classes = spec.num_tissues + 1
    else:
        in_channels = spec.num_tissues + 1 + (1 if include_image else 0)
        num_classes = spec.num_structures + 1
    if "stage_channels" in section:
        section["stage_channels"] = tuple(section["stage_channels"])
    return BackboneConfig(kind=kind, in_channels=in_channels,
                          num_classes=num_classes, **section)


def _make_text_encoder(doc: dict, hidden_size: int):
    section = doc.get("knowledge", {})
    backend = section.get("encoder", "hash")
    if backend == "hash":
        return HashTextEncoder(seed=section.get("seed", 0),
                               hidden_size=section.get("hidden_size", hidden_size))
    if backend == "external":
        return ExternalTextEncoder(name=section.get("name", "external"),
                                   url=section.get("url"),
                                   command=section.get("command"))
    _fail(f"unknown knowledge encoder backend {backend!r}")


# ---------------------------------------------------------------------------
# pretrain


@main.command(name="pretrain")
@click.option("--backbone", type=click.Choice(sorted(BACKBONE_ALIASES)), required=True)
@click.option("--stage", type=click.Choice(["tissue", "structure"]), default="tissue")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@_guarded
def pretrain_cmd(backbone, stage, config_path, data_dir, out_dir, seed, epochs, batch_size):
    """Stage-1 training of all partitions on noisy labels."""
    doc = _load_toml(config_path)
    cfg = _train_config(doc, TrainMode.PRETRAIN_FULL.value, stage, seed, epochs, batch_size)
    spec, _ = load_manifest(data_dir)
    backbone_cfg = _backbone_config(doc, BACKBONE_ALIASES[backbone], cfg.stage, spec,
                                    cfg.include_image)
    _, splits = _load_split(data_dir, backbone_cfg.input_size)
    if not splits["train"] or not splits["val"]:
        _fail("dataset needs non-empty train and val splits")
    model = build_backbone(backbone_cfg, seed=cfg.seed)
    out = Path(out_dir)
    ckpt = pretrain(model, splits["train"], splits["val"], cfg, backbone_cfg,
                    log_path=out / "train_log.jsonl")
    save_checkpoint(ckpt, out)
    best = ckpt.history[-1]
    click.echo(f"checkpoint {out} (best epoch {best['best_epoch']}, "
               f"val DSC {best['best_val_dsc']:.4f})")


# ---------------------------------------------------------------------------
# finetune


@main.command(name="finetune")
@click.option("--init", "init_mode", type=click.Choice(["knowledge", "random", "full"]),
              required=True)
@click.option("--ckpt", "ckpt_dir", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@_guarded
def finetune_cmd(init_mode, ckpt_dir, config_path, data_dir, out_dir, seed, epochs,
                 batch_size):
    """Stage-2 fine-tuning from a pretraining checkpoint."""
    if not Path(ckpt_dir).exists():
        _fail(f"checkpoint not found: {ckpt_dir}")
    base = load_checkpoint(ckpt_dir)
    doc = _load_toml(config_path)
    mode = {"knowledge": TrainMode.FINETUNE_KGPL,
            "random": TrainMode.FINETUNE_RANDOM_PROMPTS,
            "full": TrainMode.FINETUNE_FULL}[init_mode]
    cfg = _train_config(doc, mode.value, base.train_config.stage.value, seed, epochs,
                        batch_size)
    _, splits = _load_split(data_dir, base.backbone_config.input_size)
    if not splits["train"] or not splits["val"]:
        _fail("dataset needs non-empty train and val splits")
    out = Path(out_dir)
    log = out / "train_log.jsonl"
    if mode is TrainMode.FINETUNE_KGPL:
        encoder = _make_text_encoder(doc, cfg.prompt_hidden)
        ckpt = finetune_kgpl(base, splits["train"], splits["val"], encoder, cfg,
                             log_path=log)
    elif mode is TrainMode.FINETUNE_RANDOM_PROMPTS:
        ckpt = finetune_random_prompts(base, splits["train"], splits["val"], cfg,
                                       log_path=log)
    else:
        ckpt = finetune_full(base, splits["train"], splits["val"], cfg, log_path=log)
    save_checkpoint(ckpt, out)
    start = ckpt.history[0]
    click.echo(f"checkpoint {out} (trainable params {start['trainable_params']}, "
               f"encoder frozen {start['encoder_frozen']})")


# ---------------------------------------------------------------------------
# evaluate


def _accumulate_metrics(pred, gt, spacing, num_classes, sums):
    for k in range(1, num_classes):
        p = pred == k
        g = gt == k
        entry = sums.setdefault(k, {"dsc": [], "asd": []})
        entry["dsc"].append(dsc_masks(p, g))
        try:
            entry["asd"].append(asd_masks(p, g, spacing))
        except EmptyMask:
            pass


def _summarize(sums) -> dict:
    classes = {}
    for k in sorted(sums):
        entry = sums[k]
        classes[str(k)] = {
            "dsc": float(np.mean(entry["dsc"])),
            "asd": float(np.mean(entry["asd"])) if entry["asd"] else None,
        }
    dscs = [v["dsc"] for v in classes.values()]
    asds = [v["asd"] for v in classes.values() if v["asd"] is not None]
    average = {"dsc": float(np.mean(dscs)),
               "asd": float(np.mean(asds)) if asds else None}
    return {"classes": classes, "average": average}


@main.command(name="evaluate")
@click.option("--tissue-ckpt", type=click.Path(), required=True)
@click.option("--structure-ckpt", type=click.Path(), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--out", "out_prefix", type=click.Path(), required=True,
              help="Output prefix; writes <prefix>.csv and <prefix>.json.")
@_guarded
def evaluate_cmd(tissue_ckpt, structure_ckpt, data_dir, out_prefix):
    """Cascade inference on the test split; per-class DSC/ASD tables."""
    for p in (tissue_ckpt, structure_ckpt):
        if not Path(p).exists():
            _fail(f"checkpoint not found: {p}")
    tissue = load_checkpoint(tissue_ckpt)
    structure = load_checkpoint(structure_ckpt)
    _, splits = _load_split(data_dir, tissue.backbone_config.input_size)
    test = splits["test"]
    if not test:
        _fail("test split is empty")
    tissue_sums: dict = {}
    structure_sums: dict = {}
    for sample in test:
        out = cascade_predict(tissue, structure, sample.volume)
        spacing = sample.volume.spacing
        _accumulate_metrics(out["tissue"].data, sample.tissue.data, spacing,
                            tissue.backbone_config.num_classes, tissue_sums)
        _accumulate_metrics(out["structure"].data, sample.structure.data, spacing,
                            structure.backbone_config.num_classes, structure_sums)
    report = {
        "num_test_samples": len(test),
        "tissue": _summarize(tissue_sums),
        "structure": _summarize(structure_sums),
    }
    prefix = Path(out_prefix)
    if prefix.suffix in (".csv", ".json"):
        prefix = prefix.with_suffix("")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    json_path = prefix.with_suffix(".json")
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    csv_path = prefix.with_suffix(".csv")
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "class", "dsc", "asd"])
        for mode in ("tissue", "structure"):
            for label, row in report[mode]["classes"].items():
                writer.writerow([mode, label, repr(row["dsc"]),
                                 "" if row["asd"] is None else repr(row["asd"])])
            avg = report[mode]["average"]
            writer.writerow([mode, "Average", repr(avg["dsc"]),
                             "" if avg["asd"] is None else repr(avg["asd"])])
    click.echo(f"wrote {json_path} and {csv_path}")


# ---------------------------------------------------------------------------
# compare


def paired_t_test(deltas: list[float]) -> tuple[float, float]:
    """Two-sided paired t-test statistic and p-value for mean(delta) = 0."""
    from scipy.stats import t as t_dist

    d = np.asarray(deltas, dtype=np.float64)
    n = d.size
    if n < 2:
        raise MismatchedClasses("paired t-test needs at least two pairs")
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return float(np.sign(mean) * np.inf), 0.0
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * float(t_dist.sf(abs(t), df=n - 1))
    return float(t), p


@main.command(name="compare")
@click.option("--reports", nargs=2, type=click.Path(exists=True, dir_okay=False),
              required=True, help="Two evaluate JSON reports: baseline, candidate.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@_guarded
def compare_cmd(reports, out_path):
    """Per-class deltas (candidate - baseline) plus a paired t-test."""
    a = json.loads(Path(reports[0]).read_text(encoding="utf-8"))
    b = json.loads(Path(reports[1]).read_text(encoding="utf-8"))
    modes_a = {m for m in ("tissue", "structure") if m in a}
    modes_b = {m for m in ("tissue", "structure") if m in b}
    if modes_a != modes_b:
        raise MismatchedClasses(f"reports cover different modes: {sorted(modes_a)} "
                                f"vs {sorted(modes_b)}")
    result = {"baseline": str(reports[0]), "candidate": str(reports[1])}
    for mode in sorted(modes_a):
        ca = a[mode]["classes"]
        cb = b[mode]["classes"]
        if set(ca) != set(cb):
            raise MismatchedClasses(f"{mode} class sets differ: {sorted(ca)} vs {sorted(cb)}")
        deltas = {k: cb[k]["dsc"] - ca[k]["dsc"] for k in sorted(ca)}
        t, p = paired_t_test(list(deltas.values()))
        result[mode] = {
            "dsc_deltas": deltas,
            "mean_delta": float(np.mean(list(deltas.values()))),
            "t_statistic": t,
            "p_value": p,
        }
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
