"""Learnable prompt tokens and their injection into encoder sequences.

Tokens start at zero and are pre-initialized by adding a knowledge
embedding, so right after pre-initialization they equal the embedding
bit for bit. Two projection paths reshape (B, N, D) token stacks to the
(B, C, N) layout of an encoder stage; injection concatenates prompts in
front of the flattened image tokens, and the prompt slots are discarded
again after the stage runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .errors import BadConfig, ChannelMismatch, ShapeMismatch


class PromptPath(str, Enum):
    AAP_LINEAR = "aap_linear"
    TRANSPOSE_LINEAR = "transpose_linear"


@dataclass(frozen=True)
class PromptLayerSpec:
    """One injection point: the encoder layer's name and channel width."""

    name: str
    channels: int


@dataclass(frozen=True)
class PromptConfig:
    num_tokens: int = 32
    hidden_size: int = 768
    path: PromptPath = PromptPath.AAP_LINEAR
    layers: tuple[PromptLayerSpec, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "path", PromptPath(self.path))
        object.__setattr__(self, "layers", tuple(self.layers))


def aap_pool(tokens: torch.Tensor) -> torch.Tensor:
    """Adaptive average pooling over the hidden axis: (B, N, D) -> (B, N, 1)."""
    if tokens.ndim != 3:
        raise ShapeMismatch(f"expected (B, N, D) tokens, got shape {tuple(tokens.shape)}")
    return tokens.mean(dim=2, keepdim=True)


def project_aap(tokens: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Pool (B,N,D) to (B,N,1), then scale per token: out[b,c,n] = W[c,n]*pool[b,n] + bias[c].

    The map keeps one output column per prompt token; no cross-token mixing.
    """
    pooled = aap_pool(tokens).squeeze(2)
    if weight.shape[1] != pooled.shape[1]:
        raise ShapeMismatch(f"weight expects {weight.shape[1]} tokens, got {pooled.shape[1]}")
    return weight.unsqueeze(0) * pooled.unsqueeze(1) + bias.view(1, -1, 1)


def project_transpose(tokens: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """(B,N,D) -> (D,N,B) -> linear over D -> (C,N,B) -> (B,C,N)."""
    if tokens.ndim != 3:
        raise ShapeMismatch(f"expected (B, N, D) tokens, got shape {tuple(tokens.shape)}")
    if weight.shape[1] != tokens.shape[2]:
        raise ShapeMismatch(f"weight expects hidden size {weight.shape[1]}, got {tokens.shape[2]}")
    flipped = tokens.permute(2, 1, 0)
    mapped = torch.einsum("cd,dnb->cnb", weight, flipped) + bias.view(-1, 1, 1)
    return mapped.permute(2, 0, 1)


class PromptState(nn.Module):
    """Per-layer zero-initialized tokens plus their projection parameters."""

    def __init__(self, config: PromptConfig):
        super().__init__()
        if config.num_tokens < 1 or config.hidden_size < 1:
            raise BadConfig(f"num_tokens and hidden_size must be >= 1, got "
                            f"{config.num_tokens} and {config.hidden_size}")
        if not config.layers:
            raise BadConfig("at least one injection layer is required")
        names = [spec.name for spec in config.layers]
        if len(set(names)) != len(names):
            raise BadConfig(f"duplicate injection layer names in {names}")
        if any("." in name or not name for name in names):
            raise BadConfig("layer names must be non-empty and must not contain '.'")
        if any(spec.channels < 1 for spec in config.layers):
            raise BadConfig("every injection layer needs channels >= 1")
        self.config = config
        gen = torch.Generator().manual_seed(config.seed)
        tokens = {}
        weights = {}
        biases = {}
        for spec in config.layers:
            tokens[spec.name] = nn.Parameter(
                torch.zeros(config.num_tokens, config.hidden_size))
            fan_in = config.num_tokens if config.path is PromptPath.AAP_LINEAR else config.hidden_size
            bound = fan_in ** -0.5
            w = torch.empty(spec.channels, fan_in)
            w.uniform_(-bound, bound, generator=gen)
            weights[spec.name] = nn.Parameter(w)
            biases[spec.name] = nn.Parameter(torch.zeros(spec.channels))
        self.tokens = nn.ParameterDict(tokens)
        self.weights = nn.ParameterDict(weights)
        self.biases = nn.ParameterDict(biases)

    @property
    def injection_layers(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.config.layers)

    def layer_channels(self, name: str) -> int:
        for spec in self.config.layers:
            if spec.name == name:
                return spec.channels
        raise BadConfig(f"{name!r} is not an injection layer of this state")

    def project(self, name: str, batch: int) -> torch.Tensor:
        """Project layer ``name``'s tokens for a batch: (B, C, N)."""
        tokens = self.tokens[name].unsqueeze(0).expand(batch, -1, -1)
        if self.config.path is PromptPath.AAP_LINEAR:
            return project_aap(tokens, self.weights[name], self.biases[name])
        return project_transpose(tokens, self.weights[name], self.biases[name])


def init_prompts(config: PromptConfig) -> PromptState:
    """Build a PromptState with all token arrays exactly zero."""
    return PromptState(config)


def preinitialize(state: PromptState, emb) -> PromptState:
    """Add a knowledge embedding onto every layer's tokens, in place."""
    raw = getattr(emb, "tokens", emb)
    arr = torch.tensor(np.array(raw, dtype=np.float32, copy=True))
    expected = (state.config.num_tokens, state.config.hidden_size)
    if tuple(arr.shape) != expected:
        raise ShapeMismatch(f"embedding shape {tuple(arr.shape)} != token shape {expected}")
    with torch.no_grad():
        for name in state.injection_layers:
            state.tokens[name].add_(arr)
    return state


@dataclass(frozen=True)
class ImageTokenBlock:
    """Flattened image features (B, C, S) with their spatial dims S = L*W*H."""

    data: torch.Tensor
    spatial_dims: tuple[int, int, int]

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ShapeMismatch(f"expected (B, C, S), got shape {tuple(self.data.shape)}")
        l, w, h = self.spatial_dims
        if self.data.shape[2] != l * w * h:
            raise ShapeMismatch(
                f"sequence length {self.data.shape[2]} != product of {self.spatial_dims}")

    @classmethod
    def from_grid(cls, grid: torch.Tensor) -> "ImageTokenBlock":
        if grid.ndim != 5:
            raise ShapeMismatch(f"expected (B, C, L, W, H), got shape {tuple(grid.shape)}")
        b, c = grid.shape[:2]
        dims = tuple(grid.shape[2:])
        return cls(data=grid.reshape(b, c, -1), spatial_dims=dims)

    def to_grid(self) -> torch.Tensor:
        b, c = self.data.shape[:2]
        return self.data.reshape(b, c, *self.spatial_dims)


@dataclass(frozen=True)
class InjectionRecord:
    num_prompts: int
    spatial_dims: tuple[int, int, int]


def inject(image: ImageTokenBlock, prompt_block: torch.Tensor) -> tuple[torch.Tensor, InjectionRecord]:
    """Concatenate prompts ahead of image tokens: (B, C, N+S)."""
    if prompt_block.ndim != 3:
        raise ShapeMismatch(f"expected (B, C, N) prompts, got shape {tuple(prompt_block.shape)}")
    if prompt_block.shape[0] != image.data.shape[0]:
        raise ShapeMismatch(f"batch mismatch: prompts {prompt_block.shape[0]}, "
                            f"image {image.data.shape[0]}")
    if prompt_block.shape[1] != image.data.shape[1]:
        raise ChannelMismatch(f"prompt channels {prompt_block.shape[1]} != "
                              f"image channels {image.data.shape[1]}")
    record = InjectionRecord(num_prompts=prompt_block.shape[2], spatial_dims=image.spatial_dims)
    if record.num_prompts == 0:
        return image.data, record
    return torch.cat([prompt_block, image.data], dim=2), record


def discard(output: torch.Tensor, record: InjectionRecord) -> ImageTokenBlock:
    """Drop the prompt slots and restore the stored spatial layout."""
    l, w, h = record.spatial_dims
    expected = record.num_prompts + l * w * h
    if output.ndim != 3 or output.shape[2] != expected:
        raise ShapeMismatch(
            f"expected sequence length {expected} (= {record.num_prompts} prompts "
            f"+ {l * w * h} image tokens), got shape {tuple(output.shape)}")
    return ImageTokenBlock(data=output[:, :, record.num_prompts:], spatial_dims=record.spatial_dims)


def propagate(layers: Sequence[tuple[str, Callable[[torch.Tensor], torch.Tensor]]],
              state: PromptState, x0: ImageTokenBlock) -> ImageTokenBlock:
    """Run sequence layers, injecting fresh prompts at each configured layer.

    Every injection uses that layer's own tokens; prompt outputs are
    discarded right after the layer, so nothing carries to the next one.
    Layer callables must preserve sequence length.
    """
    configured = set(state.injection_layers)
    seen = {name for name, _ in layers}
    missing = configured - seen
    if missing:
        raise BadConfig(f"injection layers {sorted(missing)} not present in the encoder")
    block = x0
    for name, fn in layers:
        if name in configured:
            prompts = state.project(name, batch=block.data.shape[0])
            seq, record = inject(block, prompts)
            block = discard(fn(seq), record)
        else:
            block = ImageTokenBlock(data=fn(block.data), spatial_dims=block.spatial_dims)
    return block
