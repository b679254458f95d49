"""Windowed-attention backbone with shifted 3D windows.

Each stage runs a regular-window block followed by a block whose windows
are shifted by half the window size via a cyclic roll. Prompts enter at
the stage inputs through the same flatten/inject/SeqMix/discard path as
the convolutional backbone, since window partitioning leaves no natural
slot for global tokens.
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeMismatch
from ..prompt import PromptState
from .blocks import Attention, ConvBlock3d, GridPromptHook, UpConv


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """(B, L, W, H, C) -> (B * num_windows, ws**3, C)."""
    b, l, w, h, c = x.shape
    x = x.view(b, l // ws, ws, w // ws, ws, h // ws, ws, c)
    return x.permute(0, 1, 3, 5, 2, 4, 6, 7).reshape(-1, ws ** 3, c)


def window_reverse(windows: torch.Tensor, ws: int, dims: tuple[int, int, int]) -> torch.Tensor:
    """Inverse of window_partition back to (B, L, W, H, C)."""
    l, w, h = dims
    b = windows.shape[0] // ((l // ws) * (w // ws) * (h // ws))
    x = windows.view(b, l // ws, w // ws, h // ws, ws, ws, ws, -1)
    return x.permute(0, 1, 4, 2, 5, 3, 6, 7).reshape(b, l, w, h, -1)


class WindowBlock(nn.Module):
    """Pre-norm window attention plus MLP; optional cyclic half-window shift."""

    def __init__(self, dim: int, num_heads: int, window_size: int, shift: int,
                 mlp_ratio: int = 2):
        super().__init__()
        self.window_size = window_size
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        dims = x.shape[1:4]
        shortcut = x
        x = self.norm1(x)
        if self.shift:
            x = torch.roll(x, shifts=(-self.shift,) * 3, dims=(1, 2, 3))
        windows = window_partition(x, self.window_size)
        windows = self.attn(windows)
        x = window_reverse(windows, self.window_size, dims)
        if self.shift:
            x = torch.roll(x, shifts=(self.shift,) * 3, dims=(1, 2, 3))
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class WindowedStage(nn.Module):
    def __init__(self, dim: int, num_heads: int, window_size: int):
        super().__init__()
        self.blocks = nn.ModuleList([
            WindowBlock(dim, num_heads, window_size, shift=0),
            WindowBlock(dim, num_heads, window_size, shift=window_size // 2),
        ])

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        x = grid.permute(0, 2, 3, 4, 1)
        for block in self.blocks:
            x = block(x)
        return x.permute(0, 4, 1, 2, 3)


class WindowedAttentionEncoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        dims = config.stage_channels
        self.stage_names = tuple(f"stage{i + 1}" for i in range(len(dims)))
        self.patch = nn.Conv3d(config.in_channels, dims[0],
                               config.patch_size, stride=config.patch_size)
        hooks = []
        stages = []
        merges = []
        for i, dim in enumerate(dims):
            hooks.append(GridPromptHook(self.stage_names[i], dim))
            stages.append(WindowedStage(dim, config.num_heads, config.window_size))
            if i < len(dims) - 1:
                merges.append(nn.Conv3d(dim, dims[i + 1], 2, stride=2))
        self.hooks = nn.ModuleList(hooks)
        self.stages = nn.ModuleList(stages)
        self.merges = nn.ModuleList(merges)

    def forward(self, x: torch.Tensor,
                prompts: PromptState | None = None) -> list[torch.Tensor]:
        x = self.patch(x)
        feats = []
        for i, (hook, stage) in enumerate(zip(self.hooks, self.stages)):
            x = stage(hook(x, prompts))
            feats.append(x)
            if i < len(self.merges):
                x = self.merges[i](x)
        return feats


class WindowedAttentionDecoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        dims = list(config.stage_channels)
        stem_width = max(dims[0] // 2, 8)
        self.stem = ConvBlock3d(config.in_channels, stem_width, config.padding_mode)
        ups = []
        blocks = []
        for deep, skip in zip(reversed(dims[1:]), reversed(dims[:-1])):
            ups.append(UpConv(deep, skip, config.padding_mode))
            blocks.append(ConvBlock3d(2 * skip, skip, config.padding_mode))
        ups.append(UpConv(dims[0], stem_width, config.padding_mode))
        blocks.append(ConvBlock3d(2 * stem_width, stem_width, config.padding_mode))
        self.ups = nn.ModuleList(ups)
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv3d(stem_width, config.num_classes, 1)

    def forward(self, feats: list[torch.Tensor], image: torch.Tensor) -> torch.Tensor:
        x = feats[-1]
        skips = feats[:-1][::-1] + [self.stem(image)]
        for up, block, skip in zip(self.ups, self.blocks, skips):
            x = block(torch.cat([up(x), skip], dim=1))
        return self.head(x)


class WindowedAttentionNet(nn.Module):
    """Swin-style encoder with patch merging and a convolutional decoder."""

    kind = "windowed_attention"

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.encoder = WindowedAttentionEncoder(config)
        self.decoder = WindowedAttentionDecoder(config)

    def encoder_layer_names(self) -> tuple[str, ...]:
        return self.encoder.stage_names

    def default_injection_layers(self) -> tuple[str, ...]:
        return self.encoder.stage_names[-2:]

    def prompt_channels(self, name: str) -> int:
        for hook in self.encoder.hooks:
            if hook.layer_name == name:
                return hook.channels
        raise ShapeMismatch(f"{name!r} is not an encoder layer")

    def forward(self, x: torch.Tensor, prompts: PromptState | None = None) -> torch.Tensor:
        expected = (self.config.input_size,) * 3
        if x.ndim != 5 or x.shape[1] != self.config.in_channels or tuple(x.shape[2:]) != expected:
            raise ShapeMismatch(f"expected (B, {self.config.in_channels}, "
                                f"{', '.join(map(str, expected))}), got {tuple(x.shape)}")
        feats = self.encoder(x, prompts)
        return self.decoder(feats, x)
