"""Dice and focal loss oracles, gradient checks, and algebraic properties."""

import math

import numpy as np
import pytest
import torch

from kgpl.errors import ShapeMismatch
from kgpl.losses import (LossConfig, combined_loss, combined_loss_from_logits,
                         dice_loss, dice_loss_from_logits, focal_term)

# 100 * 0.5**0.2 * ln 2 evaluated with the math library, independent of torch.
FOCAL_HALF_ORACLE = 60.34196684835806


def _one_hot_probs(target: torch.Tensor, k: int) -> torch.Tensor:
    return torch.nn.functional.one_hot(target, k).movedim(-1, 1).double()


def test_dice_perfect_prediction_zero():
    target = torch.tensor(np.random.default_rng(0).integers(0, 3, (2, 4, 4, 4)))
    probs = _one_hot_probs(target, 3)
    cfg = LossConfig(smooth=0.0)
    assert abs(dice_loss(probs, target, cfg).item()) < 1e-9


def test_dice_disjoint_prediction_one():
    target = torch.zeros((1, 2, 2, 2), dtype=torch.long)
    probs = torch.zeros((1, 2, 2, 2, 2), dtype=torch.double)
    probs[:, 1] = 1.0  # all mass on the wrong class
    cfg = LossConfig(smooth=0.0)
    assert abs(dice_loss(probs, target, cfg).item() - 1.0) < 1e-9


def test_dice_half_overlap():
    # 2x2x2 grid: ground truth marks 4 voxels, prediction marks 4, overlap 2.
    target = torch.zeros((1, 2, 2, 2), dtype=torch.long)
    target[0, 0] = 1  # 4 voxels of class 1
    pred_fg = torch.zeros((2, 2, 2), dtype=torch.bool)
    pred_fg[0, 0] = True   # 2 overlapping voxels
    pred_fg[1, 1] = True   # 2 disjoint voxels
    probs = torch.zeros((1, 2, 2, 2, 2), dtype=torch.double)
    probs[0, 1][pred_fg] = 1.0
    probs[0, 0][~pred_fg] = 1.0
    cfg = LossConfig(smooth=0.0)
    # Foreground dice 2*2/(4+4) = 0.5; background dice also 0.5 by complement.
    assert abs(dice_loss(probs, target, cfg).item() - 0.5) < 1e-9


def test_dice_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        dice_loss(torch.rand(1, 3, 4, 4, 4), torch.zeros((1, 5, 5, 5), dtype=torch.long))


def test_dice_exclude_background_single_class_rejected():
    cfg = LossConfig(include_background=False)
    with pytest.raises(ShapeMismatch):
        dice_loss(torch.ones(1, 1, 2, 2, 2), torch.zeros((1, 2, 2, 2), dtype=torch.long), cfg)


def test_dice_class_permutation_equivariant():
    rng = np.random.default_rng(1)
    target = torch.tensor(rng.integers(0, 3, (2, 4, 4, 4)))
    logits = torch.tensor(rng.normal(size=(2, 3, 4, 4, 4)))
    probs = torch.softmax(logits, dim=1)
    perm = torch.tensor([2, 0, 1])
    inv = torch.argsort(perm)
    loss = dice_loss(probs, target)
    loss_perm = dice_loss(probs[:, perm], inv[target])
    assert abs(loss.item() - loss_perm.item()) < 1e-12


def test_focal_perfect_prediction_zero():
    target = torch.zeros((1, 2, 2, 2), dtype=torch.long)
    probs = _one_hot_probs(target, 2)
    assert focal_term(probs, target).item() == 0.0


def test_focal_half_probability_oracle():
    probs = torch.tensor([[[[[0.5]]], [[[0.5]]]]], dtype=torch.double)
    target = torch.zeros((1, 1, 1, 1), dtype=torch.long)
    value = focal_term(probs, target, LossConfig(alpha=100.0, gamma=0.2)).item()
    assert abs(value - FOCAL_HALF_ORACLE) < 1e-9
    assert abs(value - 100.0 * 0.5 ** 0.2 * math.log(2.0)) < 1e-9


def test_focal_alpha_zero():
    probs = torch.full((1, 2, 2, 2, 2), 0.5, dtype=torch.double)
    target = torch.zeros((1, 2, 2, 2), dtype=torch.long)
    assert focal_term(probs, target, LossConfig(alpha=0.0)).item() == 0.0


def test_focal_nonnegative_random():
    rng = np.random.default_rng(2)
    logits = torch.tensor(rng.normal(size=(2, 3, 4, 4, 4)))
    probs = torch.softmax(logits, dim=1)
    target = torch.tensor(rng.integers(0, 3, (2, 4, 4, 4)))
    assert focal_term(probs, target).item() >= 0.0


def test_focal_saturated_gradient_finite():
    # pow(0, gamma<1) has an unbounded derivative at exactly p_t = 1; the
    # guarded branch must keep the gradient finite there.
    target = torch.zeros((1, 1, 1, 1), dtype=torch.long)
    probs = _one_hot_probs(target, 2).requires_grad_(True)
    loss = focal_term(probs, target)
    loss.backward()
    assert torch.isfinite(probs.grad).all()


def test_combined_is_sum_of_parts():
    rng = np.random.default_rng(3)
    logits = torch.tensor(rng.normal(size=(2, 4, 4, 4, 4)))
    probs = torch.softmax(logits, dim=1)
    target = torch.tensor(rng.integers(0, 4, (2, 4, 4, 4)))
    cfg = LossConfig()
    total = combined_loss(probs, target, cfg).item()
    parts = dice_loss(probs, target, cfg).item() + focal_term(probs, target, cfg).item()
    assert abs(total - parts) < 1e-12


def test_combined_equals_dice_when_alpha_zero():
    rng = np.random.default_rng(4)
    probs = torch.softmax(torch.tensor(rng.normal(size=(1, 3, 4, 4, 4))), dim=1)
    target = torch.tensor(rng.integers(0, 3, (1, 4, 4, 4)))
    cfg = LossConfig(alpha=0.0)
    assert abs(combined_loss(probs, target, cfg).item()
               - dice_loss(probs, target, cfg).item()) < 1e-12


def test_combined_zero_iff_exact():
    target = torch.tensor(np.random.default_rng(5).integers(0, 3, (1, 4, 4, 4)))
    probs = _one_hot_probs(target, 3)
    cfg = LossConfig(smooth=0.0)
    assert combined_loss(probs, target, cfg).item() == 0.0
    # Any perturbation makes it strictly positive.
    noisy = torch.softmax(torch.log(probs.clamp(1e-6)) + 0.1, dim=1)
    assert combined_loss(noisy, target, cfg).item() > 0.0


def test_loss_config_validation():
    with pytest.raises(ShapeMismatch):
        LossConfig(alpha=-1.0)
    with pytest.raises(ShapeMismatch):
        LossConfig(gamma=-0.1)
    with pytest.raises(ShapeMismatch):
        LossConfig(smooth=-1e-9)


def test_combined_gradient_matches_finite_differences():
    torch.manual_seed(0)
    logits = torch.randn(1, 3, 4, 4, 4, dtype=torch.double, requires_grad=True)
    target = torch.randint(0, 3, (1, 4, 4, 4))
    loss = combined_loss_from_logits(logits, target)
    loss.backward()
    analytic = logits.grad.clone()

    h = 1e-3
    flat = logits.detach().clone().reshape(-1)
    numeric = torch.zeros_like(flat)
    for i in range(flat.numel()):
        for sign in (1.0, -1.0):
            bumped = flat.clone()
            bumped[i] += sign * h
            val = combined_loss_from_logits(bumped.reshape(logits.shape), target)
            numeric[i] += sign * val.item()
    numeric = (numeric / (2 * h)).reshape(logits.shape)

    rel = (analytic - numeric).norm() / numeric.norm()
    assert rel.item() < 1e-4


def test_from_logits_wrappers_agree():
    torch.manual_seed(1)
    logits = torch.randn(1, 3, 2, 2, 2, dtype=torch.double)
    target = torch.randint(0, 3, (1, 2, 2, 2))
    probs = torch.softmax(logits, dim=1)
    assert torch.allclose(dice_loss_from_logits(logits, target), dice_loss(probs, target))
    assert torch.allclose(combined_loss_from_logits(logits, target),
                          combined_loss(probs, target))
