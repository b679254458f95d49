"""Patch-embedding transformer encoder with a convolutional decoder.

Prompts are concatenated directly into the token sequence ahead of the
configured transformer blocks, so they attend to (and are attended by)
every image token, then their output slots are dropped.
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeMismatch
from ..prompt import PromptState
from .blocks import ConvBlock3d, TokenPromptHook, TransformerBlock, UpConv


class PatchAttentionEncoder(nn.Module):
    def __init__(self, config, num_blocks: int = 4):
        super().__init__()
        hidden = config.stage_channels[-1]
        grid = config.input_size // config.patch_size
        self.grid = (grid, grid, grid)
        self.patch = nn.Conv3d(config.in_channels, hidden,
                               config.patch_size, stride=config.patch_size)
        self.pos = nn.Parameter(torch.zeros(1, grid ** 3, hidden))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.block_names = tuple(f"block{i + 1}" for i in range(num_blocks))
        self.blocks = nn.ModuleList([
            TokenPromptHook(name, TransformerBlock(hidden, config.num_heads), self.grid)
            for name in self.block_names
        ])
        self.norm = nn.LayerNorm(hidden)

    def forward(self, x: torch.Tensor, prompts: PromptState | None = None) -> torch.Tensor:
        tokens = self.patch(x).flatten(2).transpose(1, 2) + self.pos
        for block in self.blocks:
            tokens = block(tokens, prompts)
        return self.norm(tokens)


class PatchAttentionDecoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        widths = list(config.stage_channels)
        hidden = widths[-1]
        self.grid = config.input_size // config.patch_size
        self.stem = ConvBlock3d(config.in_channels, widths[0], config.padding_mode)
        ups = []
        blocks = []
        prev = hidden
        up_widths = list(reversed(widths[:-1]))
        for i, w in enumerate(up_widths):
            ups.append(UpConv(prev, w, config.padding_mode))
            last = i == len(up_widths) - 1
            blocks.append(ConvBlock3d(2 * w if last else w, w, config.padding_mode))
            prev = w
        self.ups = nn.ModuleList(ups)
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv3d(widths[0], config.num_classes, 1)

    def forward(self, tokens: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
        b, s, c = tokens.shape
        x = tokens.transpose(1, 2).reshape(b, c, self.grid, self.grid, self.grid)
        skip = self.stem(image)
        for i, (up, block) in enumerate(zip(self.ups, self.blocks)):
            x = up(x)
            if i == len(self.ups) - 1:
                x = torch.cat([x, skip], dim=1)
            x = block(x)
        return self.head(x)


class PatchAttentionNet(nn.Module):
    """ViT-style encoder plus convolutional upsampling decoder with a stem skip."""

    kind = "patch_attention"

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.encoder = PatchAttentionEncoder(config)
        self.decoder = PatchAttentionDecoder(config)

    def encoder_layer_names(self) -> tuple[str, ...]:
        return self.encoder.block_names

    def default_injection_layers(self) -> tuple[str, ...]:
        return self.encoder.block_names[-2:]

    def prompt_channels(self, name: str) -> int:
        if name not in self.encoder.block_names:
            raise ShapeMismatch(f"{name!r} is not an encoder layer")
        return self.config.stage_channels[-1]

    def forward(self, x: torch.Tensor, prompts: PromptState | None = None) -> torch.Tensor:
        expected = (self.config.input_size,) * 3
        if x.ndim != 5 or x.shape[1] != self.config.in_channels or tuple(x.shape[2:]) != expected:
            raise ShapeMismatch(f"expected (B, {self.config.in_channels}, "
                                f"{', '.join(map(str, expected))}), got {tuple(x.shape)}")
        tokens = self.encoder(x, prompts)
        return self.decoder(tokens, x)
