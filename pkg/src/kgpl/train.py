"""Two-step training: full pretraining, then prompt fine-tuning with a frozen encoder.

Stage-1 pretraining sees noisy labels (a fraction of boundary voxels is
relabeled); stage-2 fine-tuning sees clean labels and updates only the
prompt and decoder partitions. Knowledge prompts are pre-initialized once
per run from the mean knowledge embedding over the training set's
attribute groups. Checkpoints are directories holding a JSON manifest
plus one tensor container per parameter partition.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .backbones import (BackboneConfig, build, make_prompt_config,
                        parameter_counts, partition_tensors)
from .core import LabelMap, Volume, one_hot
from .data import Sample, augment_flip, corrupt_boundary_labels
from .errors import (BadConfig, Divergence, IOFailure, MissingAttributes,
                     ShapeMismatch)
from .knowledge import (DEFAULT_TEMPLATE, KnowledgeEmbedding, TextEncoder,
                        cached_encode, render_sentence)
from .losses import LossConfig, combined_loss_from_logits, dice_loss_from_logits
from .metrics import dsc_masks
from .prompt import PromptConfig, PromptLayerSpec, PromptPath, PromptState, init_prompts, preinitialize
from .tensorio import read_tensors, write_tensors

MANIFEST_NAME = "manifest.json"


class TrainMode(str, Enum):
    PRETRAIN_FULL = "pretrain_full"
    FINETUNE_KGPL = "finetune_kgpl"
    FINETUNE_FULL = "finetune_full"
    FINETUNE_RANDOM_PROMPTS = "finetune_random_prompts"


class Stage(str, Enum):
    TISSUE = "tissue"
    STRUCTURE = "structure"


@dataclass(frozen=True)
class TrainConfig:
    mode: TrainMode = TrainMode.PRETRAIN_FULL
    stage: Stage = Stage.TISSUE
    lr: float = 1e-4
    weight_decay: float = 1e-5
    max_epochs: int = 30
    early_stop_patience: int = 6
    warmup_epochs: int = 3
    seed: int = 0
    batch_size: int = 2
    grad_clip: float = 1.0
    noisy_label_fraction: float = 0.05
    num_tokens: int = 32
    prompt_hidden: int = 768
    injection_layers: Optional[tuple[str, ...]] = None
    prompt_path: Optional[str] = None
    include_image: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", TrainMode(self.mode))
        object.__setattr__(self, "stage", Stage(self.stage))
        if self.injection_layers is not None:
            object.__setattr__(self, "injection_layers", tuple(self.injection_layers))
        if self.lr <= 0:
            raise BadConfig(f"lr must be > 0, got {self.lr}")
        if self.early_stop_patience < 1:
            raise BadConfig(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.max_epochs < 1:
            raise BadConfig(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not (0 <= self.warmup_epochs <= self.max_epochs):
            raise BadConfig(f"warmup_epochs must lie in [0, max_epochs], got {self.warmup_epochs}")
        if self.batch_size < 1:
            raise BadConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.noisy_label_fraction < 1.0):
            raise BadConfig(f"noisy_label_fraction must be in [0, 1), got "
                            f"{self.noisy_label_fraction}")

    @property
    def loss_kind(self) -> str:
        return "dice" if self.stage is Stage.TISSUE else "dice+focal"


def _to_jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _to_jsonable(asdict(obj))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def config_hash(train_cfg: TrainConfig, backbone_cfg: BackboneConfig,
                prompt_cfg: Optional[PromptConfig] = None) -> str:
    doc = _to_jsonable({"train": train_cfg, "backbone": backbone_cfg, "prompt": prompt_cfg})
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to cfg.lr, then cosine decay back to 0."""
    if total_steps < 1:
        return cfg.lr
    step = min(max(step, 0), total_steps)
    warmup = int(round(total_steps * cfg.warmup_epochs / cfg.max_epochs))
    if warmup > 0 and step < warmup:
        return cfg.lr * step / warmup
    if total_steps == warmup:
        return cfg.lr
    progress = (step - warmup) / (total_steps - warmup)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# Batching


def _structure_in_channels(samples: Sequence[Sample], include_image: bool) -> int:
    return samples[0].tissue.num_classes + (1 if include_image else 0)


def make_batch(samples: Sequence[Sample], stage: Stage,
               include_image: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack samples into model input and integer target tensors."""
    if stage is Stage.TISSUE:
        x = np.stack([s.volume.data[None] for s in samples])
        y = np.stack([s.tissue.data for s in samples]).astype(np.int64)
    else:
        planes = []
        for s in samples:
            chans = one_hot(s.tissue)
            if include_image:
                chans = np.concatenate([chans, s.volume.data[None]], axis=0)
            planes.append(chans)
        x = np.stack(planes)
        y = np.stack([s.structure.data for s in samples]).astype(np.int64)
    return torch.from_numpy(np.ascontiguousarray(x)).float(), torch.from_numpy(y)


def _loss_fn(cfg: TrainConfig) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    loss_cfg = LossConfig()
    if cfg.stage is Stage.TISSUE:
        return lambda logits, target: dice_loss_from_logits(logits, target, loss_cfg)
    return lambda logits, target: combined_loss_from_logits(logits, target, loss_cfg)


def _stage_classes(samples: Sequence[Sample], stage: Stage) -> int:
    return (samples[0].tissue if stage is Stage.TISSUE else samples[0].structure).num_classes


def _noisy_copy(samples: Sequence[Sample], fraction: float, seed: int) -> list[Sample]:
    if fraction <= 0:
        return list(samples)
    out = []
    for i, s in enumerate(samples):
        sub = int.from_bytes(hashlib.sha256(f"{seed}|{i}".encode()).digest()[:4], "little")
        out.append(Sample(
            volume=s.volume,
            tissue=corrupt_boundary_labels(s.tissue, fraction, sub),
            structure=corrupt_boundary_labels(s.structure, fraction, sub + 1),
            attrs=s.attrs,
        ))
    return out


# ---------------------------------------------------------------------------
# Evaluation helpers


def predict_labels(model: torch.nn.Module, x: torch.Tensor,
                   prompts: Optional[PromptState] = None) -> torch.Tensor:
    model.eval()
    if prompts is not None:
        prompts.eval()
    with torch.no_grad():
        return model(x, prompts).argmax(dim=1)


def evaluate_mean_dsc(model: torch.nn.Module, samples: Sequence[Sample], stage: Stage,
                      prompts: Optional[PromptState] = None, batch_size: int = 2,
                      include_image: bool = False) -> float:
    """Mean DSC over foreground classes and samples."""
    num_classes = _stage_classes(samples, stage)
    scores = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        x, y = make_batch(chunk, stage, include_image)
        pred = predict_labels(model, x, prompts).numpy()
        gt = y.numpy()
        for b in range(len(chunk)):
            per_class = [dsc_masks(pred[b] == k, gt[b] == k) for k in range(1, num_classes)]
            scores.append(float(np.mean(per_class)))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    model: torch.nn.Module
    backbone_config: BackboneConfig
    train_config: TrainConfig
    prompts: Optional[PromptState] = None
    prompt_config: Optional[PromptConfig] = None
    optimizer_state: Optional[dict] = None
    epoch: int = 0
    history: list = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return config_hash(self.train_config, self.backbone_config, self.prompt_config)


def _split_state(model: torch.nn.Module) -> dict[str, dict[str, np.ndarray]]:
    parts = {"encoder": {}, "decoder": {}}
    for name, tensor in model.state_dict().items():
        part = "encoder" if name.startswith("encoder.") else "decoder"
        parts[part][name] = tensor.detach().cpu().numpy()
    return parts


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    parts = _split_state(ckpt.model)
    files = {}
    for part, tensors in parts.items():
        files[part] = f"{part}.kgt"
        write_tensors(path / files[part], tensors, meta={"partition": part})
    if ckpt.prompts is not None:
        files["prompt"] = "prompt.kgt"
        tensors = {n: t.detach().cpu().numpy() for n, t in ckpt.prompts.state_dict().items()}
        write_tensors(path / files["prompt"], tensors, meta={"partition": "prompt"})
    optimizer_meta = None
    if ckpt.optimizer_state is not None:
        files["optimizer"] = "optimizer.kgt"
        tensors = {}
        state_keys = {}
        for pid, entry in ckpt.optimizer_state["state"].items():
            state_keys[str(pid)] = sorted(entry.keys())
            for key, value in entry.items():
                tensors[f"{pid}.{key}"] = np.asarray(
                    value.detach().cpu().numpy() if torch.is_tensor(value) else value)
        write_tensors(path / files["optimizer"], tensors, meta={"partition": "optimizer"})
        optimizer_meta = {"param_groups": _to_jsonable(ckpt.optimizer_state["param_groups"]),
                          "state_keys": state_keys}
    manifest = {
        "epoch": ckpt.epoch,
        "config_hash": ckpt.config_hash,
        "history": ckpt.history,
        "backbone_config": _to_jsonable(ckpt.backbone_config),
        "train_config": _to_jsonable(ckpt.train_config),
        "prompt_config": _to_jsonable(ckpt.prompt_config),
        "files": files,
        "optimizer_meta": optimizer_meta,
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    return path


def _prompt_config_from_dict(doc: dict) -> PromptConfig:
    layers = tuple(PromptLayerSpec(name=l["name"], channels=l["channels"])
                   for l in doc["layers"])
    return PromptConfig(num_tokens=doc["num_tokens"], hidden_size=doc["hidden_size"],
                        path=PromptPath(doc["path"]), layers=layers, seed=doc["seed"])


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise IOFailure(f"no {MANIFEST_NAME} in {path}")
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    backbone_cfg = BackboneConfig(**doc["backbone_config"])
    train_cfg = TrainConfig(**doc["train_config"])
    model = build(backbone_cfg, seed=0)
    state = {}
    for part in ("encoder", "decoder"):
        tensors, _ = read_tensors(path / doc["files"][part])
        state.update({k: torch.from_numpy(v) for k, v in tensors.items()})
    model.load_state_dict(state, strict=True)
    model.eval()
    prompts = None
    prompt_cfg = None
    if doc.get("prompt_config"):
        prompt_cfg = _prompt_config_from_dict(doc["prompt_config"])
        prompts = init_prompts(prompt_cfg)
        tensors, _ = read_tensors(path / doc["files"]["prompt"])
        prompts.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        prompts.eval()
    optimizer_state = None
    if doc.get("optimizer_meta"):
        tensors, _ = read_tensors(path / doc["files"]["optimizer"])
        state_dict = {}
        for pid, keys in doc["optimizer_meta"]["state_keys"].items():
            state_dict[int(pid)] = {k: torch.from_numpy(tensors[f"{pid}.{k}"]) for k in keys}
        optimizer_state = {"state": state_dict,
                           "param_groups": doc["optimizer_meta"]["param_groups"]}
    return Checkpoint(model=model, backbone_config=backbone_cfg, train_config=train_cfg,
                      prompts=prompts, prompt_config=prompt_cfg,
                      optimizer_state=optimizer_state, epoch=doc["epoch"],
                      history=doc["history"])


# ---------------------------------------------------------------------------
# Knowledge prompt pre-initialization


def group_sentences(samples: Sequence[Sample],
                    template: str = DEFAULT_TEMPLATE) -> dict[str, int]:
    """Unique prompt sentences over the samples' attribute groups, with counts."""
    out: dict[str, int] = {}
    for s in samples:
        if s.attrs is None:
            raise MissingAttributes("sample has no subject attributes")
        text = render_sentence(s.attrs, template).text
        out[text] = out.get(text, 0) + 1
    return dict(sorted(out.items()))


def mean_group_embedding(encoder: TextEncoder, samples: Sequence[Sample],
                         num_tokens: int, template: str = DEFAULT_TEMPLATE,
                         store=None) -> KnowledgeEmbedding:
    """Mean knowledge embedding over the unique attribute groups (unweighted)."""
    sentences = group_sentences(samples, template)
    stack = [cached_encode(encoder, text, fixed_n=num_tokens, store=store).tokens
             for text in sentences]
    return KnowledgeEmbedding(tokens=np.mean(stack, axis=0).astype(np.float32),
                              encoder_name=encoder.name)


# ---------------------------------------------------------------------------
# Training loops


def _partition_bytes(model: torch.nn.Module, part: str) -> bytes:
    chunks = []
    for name, p in sorted(partition_tensors(model)[part]):
        chunks.append(p.detach().cpu().numpy().tobytes())
    return b"".join(chunks)


def _snapshot(model, prompts):
    state = {"model": {k: v.detach().clone() for k, v in model.state_dict().items()}}
    if prompts is not None:
        state["prompts"] = {k: v.detach().clone() for k, v in prompts.state_dict().items()}
    return state


def _restore(model, prompts, snap):
    model.load_state_dict(snap["model"])
    if prompts is not None and "prompts" in snap:
        prompts.load_state_dict(snap["prompts"])


class _Logger:
    def __init__(self, log_path=None):
        self.records = []
        self.path = Path(log_path) if log_path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, record: dict):
        record = _to_jsonable(record)
        self.records.append(record)
        if self.path:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _check_model_fits(model, samples: Sequence[Sample], cfg: TrainConfig) -> None:
    num_classes = _stage_classes(samples, cfg.stage)
    if model.config.num_classes != num_classes:
        raise BadConfig(f"model predicts {model.config.num_classes} classes but the "
                        f"{cfg.stage.value} stage has {num_classes}")
    expected_in = 1 if cfg.stage is Stage.TISSUE else _structure_in_channels(samples, cfg.include_image)
    if model.config.in_channels != expected_in:
        raise BadConfig(f"model takes {model.config.in_channels} input channels but the "
                        f"{cfg.stage.value} stage provides {expected_in}")
    shape = samples[0].volume.shape
    if shape != (model.config.input_size,) * 3:
        raise BadConfig(f"sample grids are {shape} but the model expects "
                        f"{(model.config.input_size,) * 3}")


def _train_loop(model, prompts, train_samples, val_samples, cfg: TrainConfig,
                trainable: list[torch.nn.Parameter],
                logger: _Logger) -> tuple[int, float, dict]:
    loss_fn = _loss_fn(cfg)
    optimizer = torch.optim.AdamW(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(train_samples)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.max_epochs
    order_rng = np.random.default_rng(cfg.seed)
    aug_rng = np.random.default_rng(cfg.seed + 1)
    torch.manual_seed(cfg.seed)

    best = _snapshot(model, prompts)
    best_dsc = -1.0
    best_epoch = -1
    stale = 0
    step = 0
    last_lr = 0.0
    stopped_early = False
    for epoch in range(cfg.max_epochs):
        model.train()
        if prompts is not None:
            prompts.train()
        order = order_rng.permutation(n)
        losses = []
        for b0 in range(0, n, cfg.batch_size):
            batch = [augment_flip(train_samples[int(i)], aug_rng)
                     for i in order[b0:b0 + cfg.batch_size]]
            x, y = make_batch(batch, cfg.stage, cfg.include_image)
            last_lr = lr_at(step, total_steps, cfg)
            for group in optimizer.param_groups:
                group["lr"] = last_lr
            optimizer.zero_grad(set_to_none=True)
            logits = model(x, prompts)
            loss = loss_fn(logits, y)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise Divergence(f"non-finite loss {value} at epoch {epoch} step {step} "
                                 f"(mode {cfg.mode.value}, stage {cfg.stage.value})")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
            optimizer.step()
            losses.append(value)
            step += 1
        val_dsc = evaluate_mean_dsc(model, val_samples, cfg.stage, prompts,
                                    cfg.batch_size, cfg.include_image)
        logger.write({"event": "epoch", "epoch": epoch,
                      "train_loss": float(np.mean(losses)),
                      "val_dsc": val_dsc, "lr": last_lr})
        if val_dsc > best_dsc:
            best_dsc = val_dsc
            best_epoch = epoch
            best = _snapshot(model, prompts)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                stopped_early = True
                break
    _restore(model, prompts, best)
    model.eval()
    if prompts is not None:
        prompts.eval()
    logger.write({"event": "end", "best_epoch": best_epoch, "best_val_dsc": best_dsc,
                  "stopped_early": stopped_early})
    return best_epoch, best_dsc, optimizer.state_dict()


def _start_record(cfg: TrainConfig, model, prompts, frozen: bool, extra=None) -> dict:
    counts = parameter_counts(model, prompts)
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    if prompts is not None:
        trainable += sum(p.numel() for p in prompts.parameters() if p.requires_grad)
    record = {"event": "start", "mode": cfg.mode.value, "stage": cfg.stage.value,
              "loss": cfg.loss_kind, "encoder_frozen": frozen,
              "trainable_params": trainable, "total_params": counts["total"],
              "counts": counts}
    if extra:
        record.update(extra)
    return record


def pretrain(model: torch.nn.Module, train_samples: Sequence[Sample],
             val_samples: Sequence[Sample], cfg: TrainConfig,
             backbone_cfg: BackboneConfig, log_path=None) -> Checkpoint:
    """Stage-1 training of all partitions on noisy labels."""
    if cfg.mode is not TrainMode.PRETRAIN_FULL:
        raise BadConfig(f"pretrain requires mode=pretrain_full, got {cfg.mode.value}")
    _check_model_fits(model, train_samples, cfg)
    noisy = _noisy_copy(train_samples, cfg.noisy_label_fraction, cfg.seed)
    logger = _Logger(log_path)
    logger.write(_start_record(cfg, model, None, frozen=False,
                               extra={"noisy_label_fraction": cfg.noisy_label_fraction}))
    trainable = [p for p in model.parameters() if p.requires_grad]
    best_epoch, _, opt_state = _train_loop(model, None, noisy, list(val_samples), cfg,
                                           trainable, logger)
    return Checkpoint(model=model, backbone_config=backbone_cfg, train_config=cfg,
                      optimizer_state=opt_state, epoch=best_epoch, history=logger.records)


def _finetune(ckpt: Checkpoint, train_samples, val_samples, cfg: TrainConfig,
              prompts: Optional[PromptState], prompt_cfg: Optional[PromptConfig],
              logger: _Logger, extra: Optional[dict] = None) -> Checkpoint:
    model = copy.deepcopy(ckpt.model)
    _check_model_fits(model, train_samples, cfg)
    freeze = cfg.mode is not TrainMode.FINETUNE_FULL
    if freeze:
        for _, p in partition_tensors(model)["encoder"]:
            p.requires_grad_(False)
    encoder_before = _partition_bytes(model, "encoder")
    trainable = [p for p in model.parameters() if p.requires_grad]
    if prompts is not None:
        trainable += list(prompts.parameters())
    logger.write(_start_record(cfg, model, prompts, frozen=freeze, extra=extra))
    best_epoch, _, opt_state = _train_loop(model, prompts, list(train_samples),
                                           list(val_samples), cfg, trainable, logger)
    if freeze and _partition_bytes(model, "encoder") != encoder_before:
        raise Divergence("frozen encoder parameters changed during fine-tuning")
    return Checkpoint(model=model, backbone_config=ckpt.backbone_config, train_config=cfg,
                      prompts=prompts, prompt_config=prompt_cfg,
                      optimizer_state=opt_state, epoch=best_epoch, history=logger.records)


def _build_prompts(ckpt: Checkpoint, cfg: TrainConfig) -> tuple[PromptState, PromptConfig]:
    path = PromptPath(cfg.prompt_path) if cfg.prompt_path else None
    prompt_cfg = make_prompt_config(ckpt.model, num_tokens=cfg.num_tokens,
                                    hidden_size=cfg.prompt_hidden,
                                    layers=cfg.injection_layers, path=path, seed=cfg.seed)
    return init_prompts(prompt_cfg), prompt_cfg


def finetune_kgpl(ckpt: Checkpoint, train_samples: Sequence[Sample],
                  val_samples: Sequence[Sample], encoder: TextEncoder,
                  cfg: TrainConfig, log_path=None, cache_store=None,
                  template: str = DEFAULT_TEMPLATE) -> Checkpoint:
    """Stage-2 fine-tuning with knowledge-initialized prompts and a frozen encoder."""
    if cfg.mode is not TrainMode.FINETUNE_KGPL:
        raise BadConfig(f"finetune_kgpl requires mode=finetune_kgpl, got {cfg.mode.value}")
    prompts, prompt_cfg = _build_prompts(ckpt, cfg)
    sentences = group_sentences(train_samples, template)
    emb = mean_group_embedding(encoder, train_samples, cfg.num_tokens, template, cache_store)
    preinitialize(prompts, emb)
    logger = _Logger(log_path)
    extra = {"knowledge_encoder": encoder.name,
             "sentences": [{"sentence": t, "count": c} for t, c in sentences.items()]}
    return _finetune(ckpt, train_samples, val_samples, cfg, prompts, prompt_cfg,
                     logger, extra)


def finetune_random_prompts(ckpt: Checkpoint, train_samples: Sequence[Sample],
                            val_samples: Sequence[Sample], cfg: TrainConfig,
                            log_path=None) -> Checkpoint:
    """Baseline: same mechanics, prompts start from seeded random noise."""
    if cfg.mode is not TrainMode.FINETUNE_RANDOM_PROMPTS:
        raise BadConfig(f"finetune_random_prompts requires mode=finetune_random_prompts, "
                        f"got {cfg.mode.value}")
    prompts, prompt_cfg = _build_prompts(ckpt, cfg)
    gen = torch.Generator().manual_seed(cfg.seed + 7919)
    with torch.no_grad():
        for name in prompts.injection_layers:
            noise = torch.empty_like(prompts.tokens[name]).normal_(0.0, 0.02, generator=gen)
            prompts.tokens[name].copy_(noise)
    logger = _Logger(log_path)
    return _finetune(ckpt, train_samples, val_samples, cfg, prompts, prompt_cfg, logger)


def finetune_full(ckpt: Checkpoint, train_samples: Sequence[Sample],
                  val_samples: Sequence[Sample], cfg: TrainConfig,
                  log_path=None) -> Checkpoint:
    """Baseline: fine-tune every partition, no prompts, nothing frozen."""
    if cfg.mode is not TrainMode.FINETUNE_FULL:
        raise BadConfig(f"finetune_full requires mode=finetune_full, got {cfg.mode.value}")
    logger = _Logger(log_path)
    return _finetune(ckpt, train_samples, val_samples, cfg, None, None, logger)


# ---------------------------------------------------------------------------
# Cascade inference


def cascade_predict(tissue_ckpt: Checkpoint, structure_ckpt: Checkpoint,
                    volume: Volume) -> dict[str, LabelMap]:
    """Tissue prediction feeds the structure model as one-hot channels."""
    size = tissue_ckpt.backbone_config.input_size
    if volume.shape != (size,) * 3:
        raise ShapeMismatch(f"volume shape {volume.shape} does not match the tissue "
                            f"model input {(size,) * 3}")
    tissue_classes = tissue_ckpt.backbone_config.num_classes
    include_image = structure_ckpt.train_config.include_image
    expected_in = tissue_classes + (1 if include_image else 0)
    if structure_ckpt.backbone_config.in_channels != expected_in:
        raise ShapeMismatch(f"structure model takes "
                            f"{structure_ckpt.backbone_config.in_channels} channels but the "
                            f"cascade provides {expected_in}")
    x = torch.from_numpy(volume.data[None, None].copy()).float()
    tissue_pred = predict_labels(tissue_ckpt.model, x, tissue_ckpt.prompts)[0]
    hot = torch.nn.functional.one_hot(tissue_pred, tissue_classes)
    hot = hot.permute(3, 0, 1, 2).float().unsqueeze(0)
    if include_image:
        hot = torch.cat([hot, x], dim=1)
    structure_pred = predict_labels(structure_ckpt.model, hot, structure_ckpt.prompts)[0]
    return {
        "tissue": LabelMap(tissue_pred.numpy().astype(np.int64), tissue_classes,
                           volume.spacing, volume.origin),
        "structure": LabelMap(structure_pred.numpy().astype(np.int64),
                              structure_ckpt.backbone_config.num_classes,
                              volume.spacing, volume.origin),
    }
