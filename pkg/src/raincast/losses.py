"""Training objectives.

The prediction term is a per-pixel soft Dice loss over the five intensity
categories (squared probabilities in the denominator, unsquared labels, as is
standard for the soft-Dice variant used here; do not "symmetrize" it). Routing
health adds two penalties: dispatch equity (coefficient of variation of expert
usage) and router decisiveness (mean Shannon entropy of the routing
distributions). An epoch-ramped curriculum weight amplifies high-intensity
pixels inside the prediction loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

_SIMPLEX_TOL = 1e-5


@dataclass(frozen=True)
class CurriculumConfig:
    """Intensity-aware re-weighting schedule.

    The multiplier is w(r) = 1 + eta(epoch) * (r / r_ref)^alpha_w with
    eta ramping linearly from 0 to eta_final over the first
    ``ramp_fraction`` of training, then holding.
    """

    eta_final: float = 2.0
    alpha_w: float = 1.0
    r_ref: float = 10.0
    ramp_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.eta_final < 0 or self.alpha_w < 0:
            raise ValueError("eta_final and alpha_w must be non-negative")
        if self.r_ref <= 0:
            raise ValueError(f"r_ref must be positive, got {self.r_ref}")
        if not 0 < self.ramp_fraction <= 1:
            raise ValueError(f"ramp_fraction must lie in (0, 1], got {self.ramp_fraction}")


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1e-6
    beta: float = 0.1
    gamma: float = 1e-2
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")


def _check_simplex(probs: torch.Tensor, what: str) -> None:
    if torch.any(probs < -_SIMPLEX_TOL) or torch.any(probs > 1 + _SIMPLEX_TOL):
        raise ValueError(f"{what} entries must lie in [0, 1]")
    sums = probs.sum(dim=-1)
    if torch.any((sums - 1).abs() > _SIMPLEX_TOL):
        raise ValueError(f"{what} rows must sum to 1 within {_SIMPLEX_TOL}")


def dice_loss(probs: torch.Tensor, onehot: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Per-pixel soft Dice loss.

    probs and onehot share shape (..., C); probs rows are probability
    simplices, onehot rows are one-hot labels. Returns the (...)-shaped loss

        1 - (2 sum_c p_c y_c + eps) / (sum_c p_c^2 + sum_c y_c + eps).
    """
    if probs.shape != onehot.shape:
        raise ValueError(f"shape mismatch: {tuple(probs.shape)} vs {tuple(onehot.shape)}")
    _check_simplex(probs, "predicted probabilities")
    if not torch.all((onehot == 0) | (onehot == 1)) or torch.any(onehot.sum(dim=-1) != 1):
        raise ValueError("labels must be one-hot")
    num = 2.0 * (probs * onehot).sum(dim=-1) + eps
    den = (probs * probs).sum(dim=-1) + onehot.sum(dim=-1) + eps
    return 1.0 - num / den


def equity_loss(usage, n_tokens=None, eps: float = 1e-6) -> torch.Tensor:
    """Coefficient of variation of per-expert usage.

    ``usage`` is a length-N vector of dispatch counts (pass ``n_tokens`` to
    convert to fractions first) or already-normalized usage fractions. Uses
    the population standard deviation: the pool is the whole population.
    Scale-invariant up to the eps term; zero iff usage is exactly uniform.
    """
    usage = torch.as_tensor(usage, dtype=torch.float64) if not torch.is_tensor(usage) else usage
    if n_tokens is not None:
        if n_tokens <= 0:
            raise ValueError(f"n_tokens must be positive, got {n_tokens}")
        usage = usage / n_tokens
    mean = usage.mean()
    std = ((usage - mean) ** 2).mean().sqrt()
    return std / (mean + eps)


def decisiveness_loss(probs: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Mean Shannon entropy of per-token routing distributions (natural log).

    probs: (n_tokens, N) with rows summing to 1 within 1e-5. Low values mean
    sharp, confident routing.
    """
    _check_simplex(probs, "routing distributions")
    return (-(probs * torch.log(probs + eps)).sum(dim=-1)).mean()


def moe_loss(equity, decisiveness, beta: float):
    """Combined routing regularizer: equity + beta * decisiveness."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    return equity + beta * decisiveness


def total_loss(pred_loss, routing_loss, gamma: float):
    """Full objective: prediction loss + gamma * routing regularizer."""
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    return pred_loss + gamma * routing_loss


def curriculum_eta(epoch: int, total_epochs: int, config: CurriculumConfig) -> float:
    """Schedule value eta(epoch): linear 0 -> eta_final over the ramp, then flat."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    ramp_epochs = config.ramp_fraction * total_epochs
    return config.eta_final * min(1.0, epoch / ramp_epochs)


def curriculum_weight(rate, epoch: int, total_epochs: int, config: CurriculumConfig):
    """Intensity-dependent sample weight w(r) = 1 + eta(epoch) * (r/r_ref)^alpha_w.

    ``rate`` is the local rainfall rate (scalar or tensor, mm/h, >= 0).
    Zero intensity contributes nothing at any epoch (also when alpha_w = 0).
    """
    rate = torch.as_tensor(rate, dtype=torch.float64) if not torch.is_tensor(rate) else rate
    if torch.any(rate < 0):
        raise ValueError("rates must be non-negative")
    eta = curriculum_eta(epoch, total_epochs, config)
    scaled = rate / config.r_ref
    term = torch.where(rate > 0, scaled ** config.alpha_w, torch.zeros_like(scaled))
    return 1.0 + eta * term


def weighted_mean(values: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Weight-normalized mean: sum(w * v) / sum(w)."""
    if values.shape != weights.shape:
        raise ValueError(f"shape mismatch: {tuple(values.shape)} vs {tuple(weights.shape)}")
    return (values * weights).sum() / weights.sum()
