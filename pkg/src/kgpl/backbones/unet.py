"""Three-stage convolutional U-Net with prompt hooks at stage inputs."""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeMismatch
from ..prompt import PromptState
from .blocks import ConvBlock3d, Downsample, GridPromptHook, UpConv


class ConvUNetEncoder(nn.Module):
    def __init__(self, in_channels: int, stage_channels: tuple[int, ...], padding_mode: str):
        super().__init__()
        self.stage_names = tuple(f"stage{i + 1}" for i in range(len(stage_channels)))
        hooks = []
        stages = []
        downs = []
        prev = in_channels
        for i, out in enumerate(stage_channels):
            hooks.append(GridPromptHook(self.stage_names[i], prev))
            stages.append(ConvBlock3d(prev, out, padding_mode))
            if i < len(stage_channels) - 1:
                downs.append(Downsample(out))
            prev = out
        self.hooks = nn.ModuleList(hooks)
        self.stages = nn.ModuleList(stages)
        self.downs = nn.ModuleList(downs)

    def forward(self, x: torch.Tensor,
                prompts: PromptState | None = None) -> list[torch.Tensor]:
        """Returns per-stage feature maps, deepest last."""
        feats = []
        for i, (hook, stage) in enumerate(zip(self.hooks, self.stages)):
            x = stage(hook(x, prompts))
            feats.append(x)
            if i < len(self.downs):
                x = self.downs[i](x)
        return feats


class ConvUNetDecoder(nn.Module):
    def __init__(self, stage_channels: tuple[int, ...], num_classes: int, padding_mode: str):
        super().__init__()
        ups = []
        blocks = []
        chans = list(stage_channels)
        for deep, skip in zip(reversed(chans[1:]), reversed(chans[:-1])):
            ups.append(UpConv(deep, skip, padding_mode))
            blocks.append(ConvBlock3d(2 * skip, skip, padding_mode))
        self.ups = nn.ModuleList(ups)
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv3d(chans[0], num_classes, 1)

    def forward(self, feats: list[torch.Tensor]) -> torch.Tensor:
        x = feats[-1]
        skips = feats[:-1][::-1]
        for up, block, skip in zip(self.ups, self.blocks, skips):
            x = block(torch.cat([up(x), skip], dim=1))
        return self.head(x)


class ConvUNet(nn.Module):
    """Encoder-decoder CNN; prompt channels at stage i equal its input width."""

    kind = "conv_unet"

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.encoder = ConvUNetEncoder(config.in_channels, config.stage_channels,
                                       config.padding_mode)
        self.decoder = ConvUNetDecoder(config.stage_channels, config.num_classes,
                                       config.padding_mode)

    def encoder_layer_names(self) -> tuple[str, ...]:
        return self.encoder.stage_names

    def default_injection_layers(self) -> tuple[str, ...]:
        names = self.encoder.stage_names
        keep = (len(names) + 1) // 2
        return names[len(names) - keep:]

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
        return self.decoder(self.encoder(x, prompts))
