"""Training objectives: soft Dice and the Dice + focal composite.

The tissue model trains with Dice alone; the structure model adds the
focal penalty.  ``probs`` is (B, K, X, Y, Z) with rows summing to 1 over
K (softmax applied upstream); ``target`` is an integer class tensor
(B, X, Y, Z).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeMismatch

PROB_CLAMP_MIN = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 100.0
    gamma: float = 0.2
    smooth: float = 1e-5
    include_background: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0 or self.smooth < 0:
            raise ShapeMismatch("alpha, gamma and smooth must all be >= 0")


def _check_pair(probs: torch.Tensor, target: torch.Tensor) -> None:
    if probs.dim() < 3:
        raise ShapeMismatch(f"probs must be (B, K, spatial...), got {tuple(probs.shape)}")
    if target.shape != probs.shape[:1] + probs.shape[2:]:
        raise ShapeMismatch(
            f"target shape {tuple(target.shape)} does not match probs {tuple(probs.shape)}")


def _one_hot_like(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    k = probs.shape[1]
    onehot = F.one_hot(target.long(), num_classes=k)
    return onehot.movedim(-1, 1).to(probs.dtype)


def dice_loss(probs: torch.Tensor, target: torch.Tensor,
              cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """1 - (2|P.G| + smooth) / (|P| + |G| + smooth), class- and batch-averaged."""
    _check_pair(probs, target)
    onehot = _one_hot_like(probs, target)
    dims = tuple(range(2, probs.dim()))
    intersect = (probs * onehot).sum(dim=dims)
    denom = probs.sum(dim=dims) + onehot.sum(dim=dims)
    dice = (2.0 * intersect + cfg.smooth) / (denom + cfg.smooth)
    if not cfg.include_background:
        if probs.shape[1] < 2:
            raise ShapeMismatch("cannot exclude background with a single class")
        dice = dice[:, 1:]
    return (1.0 - dice).mean()


def focal_term(probs: torch.Tensor, target: torch.Tensor,
               cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Voxel-mean of alpha * (1 - p_t)^gamma * (-log p_t) for the true class."""
    _check_pair(probs, target)
    p_t = probs.gather(1, target.long().unsqueeze(1)).squeeze(1)
    p_t = p_t.clamp(min=PROB_CLAMP_MIN, max=1.0)
    base = 1.0 - p_t
    # pow(0, gamma<1) has an unbounded derivative; route the zero case
    # through a constant branch so saturated voxels stay NaN-free.
    positive = base > 0
    safe = torch.where(positive, base, torch.ones_like(base))
    modulation = torch.where(positive, safe.pow(cfg.gamma), torch.zeros_like(base))
    return (cfg.alpha * modulation * (-torch.log(p_t))).mean()


def combined_loss(probs: torch.Tensor, target: torch.Tensor,
                  cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Dice plus the focal penalty (both non-negative)."""
    return dice_loss(probs, target, cfg) + focal_term(probs, target, cfg)


def dice_loss_from_logits(logits, target, cfg: LossConfig = LossConfig()):
    return dice_loss(torch.softmax(logits, dim=1), target, cfg)


def combined_loss_from_logits(logits, target, cfg: LossConfig = LossConfig()):
    probs = torch.softmax(logits, dim=1)
    return dice_loss(probs, target, cfg) + focal_term(probs, target, cfg)
