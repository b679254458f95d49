"""Toy 3D segmentation backbones with prompt hook points.

Three families share one interface: ``encoder_layer_names``,
``default_injection_layers``, ``prompt_channels``, and
``forward(x, prompts=None)``. Parameters split cleanly into encoder,
decoder and prompt partitions, which is what the freeze policy relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import torch
from torch import nn

from ..errors import BadConfig
from ..prompt import PromptConfig, PromptLayerSpec, PromptPath, PromptState
from .swin import WindowedAttentionNet
from .unet import ConvUNet
from .unetr import PatchAttentionNet


class BackboneKind(str, Enum):
    CONV_UNET = "conv_unet"
    PATCH_ATTENTION = "patch_attention"
    WINDOWED_ATTENTION = "windowed_attention"


_DEFAULT_STAGES = {
    BackboneKind.CONV_UNET: (16, 32, 64),
    BackboneKind.PATCH_ATTENTION: (16, 32, 96),
    BackboneKind.WINDOWED_ATTENTION: (32, 64),
}

_DEFAULT_PATCH = {
    BackboneKind.PATCH_ATTENTION: 4,
    BackboneKind.WINDOWED_ATTENTION: 2,
}

DEFAULT_PROMPT_PATH = {
    BackboneKind.CONV_UNET: PromptPath.AAP_LINEAR,
    BackboneKind.PATCH_ATTENTION: PromptPath.TRANSPOSE_LINEAR,
    BackboneKind.WINDOWED_ATTENTION: PromptPath.AAP_LINEAR,
}


@dataclass(frozen=True)
class BackboneConfig:
    kind: Union[BackboneKind, str] = BackboneKind.CONV_UNET
    in_channels: int = 1
    num_classes: int = 4
    input_size: int = 16
    stage_channels: Optional[tuple[int, ...]] = None
    patch_size: Optional[int] = None
    window_size: int = 2
    num_heads: int = 4
    padding_mode: str = "zeros"

    def __post_init__(self):
        kind = BackboneKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.stage_channels is None:
            object.__setattr__(self, "stage_channels", _DEFAULT_STAGES[kind])
        else:
            object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if self.patch_size is None and kind in _DEFAULT_PATCH:
            object.__setattr__(self, "patch_size", _DEFAULT_PATCH[kind])


def _validate(config: BackboneConfig) -> None:
    chans = config.stage_channels
    if len(chans) < 2:
        raise BadConfig("need at least two encoder stages")
    if any(c < 1 for c in chans):
        raise BadConfig(f"stage channels must be >= 1, got {chans}")
    if any(a > b for a, b in zip(chans, chans[1:])):
        raise BadConfig(f"stage channels must be non-decreasing, got {chans}")
    if config.in_channels < 1 or config.num_classes < 1:
        raise BadConfig("in_channels and num_classes must be >= 1")
    if config.input_size < 2:
        raise BadConfig(f"input_size must be >= 2, got {config.input_size}")

    if config.kind is BackboneKind.CONV_UNET:
        factor = 2 ** (len(chans) - 1)
        if config.input_size % factor != 0:
            raise BadConfig(f"input_size {config.input_size} not divisible by the "
                            f"total downsampling factor {factor}")
        return

    patch = config.patch_size
    if patch is None or patch < 1 or config.input_size % patch != 0:
        raise BadConfig(f"patch_size {patch} must divide input_size {config.input_size}")

    if config.kind is BackboneKind.PATCH_ATTENTION:
        if patch != 2 ** (len(chans) - 1):
            raise BadConfig(f"patch_size {patch} must equal 2**(stages-1) = "
                            f"{2 ** (len(chans) - 1)} so the decoder reaches full resolution")
        if chans[-1] % config.num_heads != 0:
            raise BadConfig(f"hidden size {chans[-1]} not divisible by "
                            f"num_heads {config.num_heads}")
        return

    if patch != 2:
        raise BadConfig(f"windowed backbone requires patch_size 2, got {patch}")
    grid = config.input_size // patch
    for i, dim in enumerate(chans):
        stage_grid = grid // (2 ** i)
        if stage_grid < config.window_size or stage_grid % config.window_size != 0:
            raise BadConfig(f"window_size {config.window_size} does not tile the "
                            f"stage-{i + 1} token grid of {stage_grid}")
        if dim % config.num_heads != 0:
            raise BadConfig(f"stage dim {dim} not divisible by num_heads {config.num_heads}")


_CLASSES = {
    BackboneKind.CONV_UNET: ConvUNet,
    BackboneKind.PATCH_ATTENTION: PatchAttentionNet,
    BackboneKind.WINDOWED_ATTENTION: WindowedAttentionNet,
}


def build(config: BackboneConfig, seed: int = 0) -> nn.Module:
    """Construct a backbone with seeded, reproducible initialization."""
    _validate(config)
    torch.manual_seed(seed)
    return _CLASSES[config.kind](config)


def make_prompt_config(model: nn.Module, num_tokens: int = 32, hidden_size: int = 768,
                       layers: Optional[tuple[str, ...]] = None,
                       path: Optional[PromptPath] = None, seed: int = 0) -> PromptConfig:
    """Prompt configuration matched to a model's hook channel widths."""
    if layers is None:
        layers = model.default_injection_layers()
    unknown = set(layers) - set(model.encoder_layer_names())
    if unknown:
        raise BadConfig(f"unknown injection layers {sorted(unknown)}; "
                        f"encoder has {model.encoder_layer_names()}")
    if path is None:
        path = DEFAULT_PROMPT_PATH[model.config.kind]
    specs = tuple(PromptLayerSpec(name=n, channels=model.prompt_channels(n)) for n in layers)
    return PromptConfig(num_tokens=num_tokens, hidden_size=hidden_size,
                        path=path, layers=specs, seed=seed)


def partition_parameters(model: nn.Module,
                         prompts: Optional[PromptState] = None) -> dict[str, set[str]]:
    """Disjoint, exhaustive parameter-name partition {encoder, decoder, prompt}.

    Skip-path convolutions (decoder stems included) belong to the decoder;
    prompt parameters exist only when a PromptState is supplied.
    """
    encoder = set()
    decoder = set()
    for name, _ in model.named_parameters():
        if name.startswith("encoder."):
            encoder.add(name)
        else:
            decoder.add(name)
    prompt = set()
    if prompts is not None:
        prompt = {f"prompt.{name}" for name, _ in prompts.named_parameters()}
    return {"encoder": encoder, "decoder": decoder, "prompt": prompt}


def partition_tensors(model: nn.Module, prompts: Optional[PromptState] = None
                      ) -> dict[str, list[tuple[str, nn.Parameter]]]:
    """Same partition as partition_parameters but carrying the tensors."""
    out = {"encoder": [], "decoder": [], "prompt": []}
    for name, p in model.named_parameters():
        part = "encoder" if name.startswith("encoder.") else "decoder"
        out[part].append((name, p))
    if prompts is not None:
        out["prompt"] = [(f"prompt.{n}", p) for n, p in prompts.named_parameters()]
    return out


def parameter_counts(model: nn.Module,
                     prompts: Optional[PromptState] = None) -> dict[str, int]:
    parts = partition_tensors(model, prompts)
    counts = {k: sum(p.numel() for _, p in v) for k, v in parts.items()}
    counts["total"] = sum(counts.values())
    return counts
