"""Shared building blocks for the three toy segmentation backbones."""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeMismatch
from ..prompt import ImageTokenBlock, PromptState, discard, inject


class ConvBlock3d(nn.Module):
    """Two 3x3x3 convolutions with instance norm and LeakyReLU."""

    def __init__(self, in_channels: int, out_channels: int, padding_mode: str = "zeros"):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv3d(in_channels, out_channels, 3, padding=1, padding_mode=padding_mode),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.LeakyReLU(0.01, inplace=True),
            nn.Conv3d(out_channels, out_channels, 3, padding=1, padding_mode=padding_mode),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.LeakyReLU(0.01, inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class Downsample(nn.Module):
    """Stride-2 convolution halving each spatial dim."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv3d(channels, channels, 2, stride=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class UpConv(nn.Module):
    """Nearest-neighbor x2 upsample followed by a 3x3x3 convolution.

    Nearest upsampling commutes with integer circular shifts, which keeps
    the whole network translation-equivariant when circular padding is
    requested.
    """

    def __init__(self, in_channels: int, out_channels: int, padding_mode: str = "zeros"):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, out_channels, 3, padding=1, padding_mode=padding_mode)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(nn.functional.interpolate(x, scale_factor=2, mode="nearest"))


class SeqMix(nn.Module):
    """Pointwise Conv1d + InstanceNorm1d over a flattened token sequence.

    The normalization statistics span the whole sequence, so injected
    prompt positions influence every image position; this is the minimal
    interaction that makes prompts matter to a convolutional stage.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.mix = nn.Conv1d(channels, channels, kernel_size=1)
        self.norm = nn.InstanceNorm1d(channels, affine=True)
        self.act = nn.LeakyReLU(0.01, inplace=True)

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        return self.act(self.norm(self.mix(seq)))


class GridPromptHook(nn.Module):
    """Inject-and-discard around a SeqMix block for grid-shaped stages.

    Flattens the stage input to (B, C, S), optionally concatenates the
    projected prompts for ``layer_name``, runs SeqMix over the combined
    sequence, drops the prompt slots and restores the grid. SeqMix always
    runs, so pretraining (no prompts) and fine-tuning share parameters.
    """

    def __init__(self, layer_name: str, channels: int):
        super().__init__()
        self.layer_name = layer_name
        self.channels = channels
        self.seqmix = SeqMix(channels)

    def forward(self, grid: torch.Tensor, prompts: PromptState | None = None) -> torch.Tensor:
        block = ImageTokenBlock.from_grid(grid)
        if prompts is not None and self.layer_name in prompts.injection_layers:
            prompt_block = prompts.project(self.layer_name, batch=grid.shape[0])
            seq, record = inject(block, prompt_block)
            return discard(self.seqmix(seq), record).to_grid()
        mixed = self.seqmix(block.data)
        return ImageTokenBlock(data=mixed, spatial_dims=block.spatial_dims).to_grid()


class Attention(nn.Module):
    """Multi-head self-attention over (B*, T, C) token sequences."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ShapeMismatch(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, c = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.head_dim ** -0.5, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, c)
        return self.proj(out)


class TransformerBlock(nn.Module):
    """Pre-norm attention block with a 2x MLP."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TokenPromptHook(nn.Module):
    """Inject-and-discard around a transformer block for token stages.

    Tokens are kept as (B, T, C); the concatenation happens in the
    (B, C, sequence) layout, so prompts take part in full self-attention
    and their output slots are dropped afterwards.
    """

    def __init__(self, layer_name: str, block: TransformerBlock, grid: tuple[int, int, int]):
        super().__init__()
        self.layer_name = layer_name
        self.block = block
        self.grid = grid

    def forward(self, tokens: torch.Tensor, prompts: PromptState | None = None) -> torch.Tensor:
        if prompts is not None and self.layer_name in prompts.injection_layers:
            block = ImageTokenBlock(data=tokens.transpose(1, 2), spatial_dims=self.grid)
            prompt_block = prompts.project(self.layer_name, batch=tokens.shape[0])
            seq, record = inject(block, prompt_block)
            out = self.block(seq.transpose(1, 2)).transpose(1, 2)
            return discard(out, record).data.transpose(1, 2)
        return self.block(tokens)
