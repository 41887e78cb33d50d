"""Intensity-adaptive mixture-of-experts routing.

Every token carries an expert budget set by the rainfall rate over its patch
footprint: heavy-rain tokens activate a large expert ensemble, dry tokens a
minimal one. A softmax router scores the full pool, the budgeted top-k experts
are selected with stable (lowest-index) tie-breaking, and their outputs are
fused with gates renormalized to sum to one over the selected set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .attention import FeedForward
from .errors import ConfigurationError
from .fields import IntensityThresholds

DEFAULT_N_EXPERTS = 8
DEFAULT_K_MIN = 1
DEFAULT_K_MED = 3
DEFAULT_K_MAX = 6


def _validate_budget_triple(k_min: int, k_med: int, k_max: int) -> None:
    if not (k_max > k_med > k_min >= 1):
        raise ConfigurationError(
            f"need k_max > k_med > k_min >= 1, got ({k_min}, {k_med}, {k_max})"
        )


def expert_budget(
    rate: float,
    thresholds: IntensityThresholds,
    k_min: int = DEFAULT_K_MIN,
    k_med: int = DEFAULT_K_MED,
    k_max: int = DEFAULT_K_MAX,
) -> int:
    """Expert budget for a rainfall rate in mm/h.

    k_max for rate >= lambda_strong, k_med for lambda_weak <= rate <
    lambda_strong, k_min below lambda_weak.
    """
    _validate_budget_triple(k_min, k_med, k_max)
    if not np.isfinite(rate):
        raise ValueError(f"rate must be finite, got {rate}")
    if rate >= thresholds.lambda_strong:
        return k_max
    if rate >= thresholds.lambda_weak:
        return k_med
    return k_min


def budget_field(
    rates: np.ndarray,
    thresholds: IntensityThresholds,
    k_min: int = DEFAULT_K_MIN,
    k_med: int = DEFAULT_K_MED,
    k_max: int = DEFAULT_K_MAX,
) -> np.ndarray:
    """Elementwise :func:`expert_budget`; returns an int64 array."""
    _validate_budget_triple(k_min, k_med, k_max)
    rates = np.asarray(rates)
    if not np.all(np.isfinite(rates)):
        raise ValueError("rates must be finite")
    out = np.full(rates.shape, k_min, dtype=np.int64)
    out[rates >= thresholds.lambda_weak] = k_med
    out[rates >= thresholds.lambda_strong] = k_max
    return out


def build_routing_map(
    intensity: np.ndarray,
    patch: int,
    thresholds: IntensityThresholds,
    k_min: int = DEFAULT_K_MIN,
    k_med: int = DEFAULT_K_MED,
    k_max: int = DEFAULT_K_MAX,
) -> np.ndarray:
    """Per-token expert budgets from a cell-level intensity field.

    The token intensity is the maximum rate over the token's p x p footprint,
    so a single extreme cell is enough to trigger the rich-expert path.

    Parameters
    ----------
    intensity : ndarray
        Rainfall rates, shape (B, T, H, W), mm/h.
    patch : int
        Patch edge; H and W must be divisible by it.

    Returns
    -------
    ndarray
        int64 budgets of shape (B, T, H/p, W/p).
    """
    intensity = np.asarray(intensity)
    if intensity.ndim != 4:
        raise ConfigurationError(f"intensity must be (B, T, H, W), got {intensity.shape}")
    b, t, h, w = intensity.shape
    if h % patch != 0 or w % patch != 0:
        raise ConfigurationError(f"grid ({h}, {w}) not divisible by patch {patch}")
    pooled = intensity.reshape(b, t, h // patch, patch, w // patch, patch).max(axis=(3, 5))
    return budget_field(pooled, thresholds, k_min, k_med, k_max)


def top_k_stable(probs: torch.Tensor, k: int):
    """Largest k entries along the last dim; ties broken by lowest index.

    Returns (values, indices); indices are distinct per row.
    """
    n = probs.shape[-1]
    if not 1 <= k <= n:
        raise ConfigurationError(f"k must lie in [1, {n}], got {k}")
    values, indices = torch.sort(probs, dim=-1, descending=True, stable=True)
    return values[..., :k], indices[..., :k]


@dataclass
class RoutingStats:
    """Dispatch bookkeeping for one routed batch.

    Attributes
    ----------
    usage : ndarray
        int64 dispatch counts per expert; a token with budget k contributes
        k assignments, so ``usage.sum()`` equals the summed budgets.
    probs : torch.Tensor
        Router distributions, shape (n_tokens, n_experts); rows sum to one.
        Kept attached to the autograd graph for the entropy penalty.
    n_tokens : int
    tier_counts : dict
        Budget value -> number of tokens carrying it.
    """

    usage: np.ndarray
    probs: torch.Tensor
    n_tokens: int
    tier_counts: dict

    @property
    def total_assignments(self) -> int:
        return int(self.usage.sum())

    def usage_fractions(self) -> np.ndarray:
        return self.usage.astype(np.float64) / self.n_tokens

    def usage_cv(self) -> float:
        """Population coefficient of variation of the hard dispatch counts."""
        frac = self.usage_fractions()
        mean = frac.mean()
        if mean == 0:
            return 0.0
        return float(frac.std() / mean)

    def soft_usage(self) -> torch.Tensor:
        """Mean router probability per expert; the differentiable dispatch load."""
        return self.probs.mean(dim=0)


def collect_stats(selections, probs: torch.Tensor, tier_counts=None) -> RoutingStats:
    """Assemble :class:`RoutingStats` from per-token selected expert indices.

    ``selections`` is an iterable of index sequences, one per token (lengths
    may differ across tokens).
    """
    n_tokens, n_experts = probs.shape
    usage = np.zeros(n_experts, dtype=np.int64)
    tiers: dict = {} if tier_counts is None else dict(tier_counts)
    count = 0
    for chosen in selections:
        chosen = np.asarray(chosen, dtype=np.int64)
        if chosen.size != np.unique(chosen).size:
            raise ValueError("selected expert indices must be distinct per token")
        np.add.at(usage, chosen, 1)
        if tier_counts is None:
            tiers[int(chosen.size)] = tiers.get(int(chosen.size), 0) + 1
        count += 1
    if count != n_tokens:
        raise ValueError(f"got selections for {count} tokens, probs for {n_tokens}")
    return RoutingStats(usage=usage, probs=probs, n_tokens=n_tokens, tier_counts=tiers)


class ExpertPool(nn.Module):
    """N independent feed-forward experts plus the softmax router."""

    def __init__(self, dim: int, hidden_dim: int, n_experts: int):
        super().__init__()
        if n_experts < 1:
            raise ConfigurationError(f"need at least one expert, got {n_experts}")
        self.dim = dim
        self.n_experts = n_experts
        self.experts = nn.ModuleList(FeedForward(dim, hidden_dim) for _ in range(n_experts))
        self.router = nn.Linear(dim, n_experts)

    def route(self, x: torch.Tensor) -> torch.Tensor:
        """Router affinities: Softmax(W_r x + b_r) over the full pool."""
        return torch.softmax(self.router(x), dim=-1)


class AdaptiveExpertLayer(nn.Module):
    """Budget-driven sparse expert fusion.

    For token x with budget k: route over all N experts, keep the top-k
    gates, renormalize them to sum to one, and combine the selected experts'
    outputs. The residual connection and surrounding layer norm belong to
    the caller.
    """

    def __init__(
        self,
        dim: int,
        hidden_dim: int,
        n_experts: int = DEFAULT_N_EXPERTS,
        k_min: int = DEFAULT_K_MIN,
        k_med: int = DEFAULT_K_MED,
        k_max: int = DEFAULT_K_MAX,
    ):
        super().__init__()
        _validate_budget_triple(k_min, k_med, k_max)
        if n_experts < k_max:
            raise ConfigurationError(f"pool of {n_experts} experts smaller than k_max {k_max}")
        self.pool = ExpertPool(dim, hidden_dim, n_experts)
        self.k_min = k_min
        self.k_med = k_med
        self.k_max = k_max

    def forward(self, x: torch.Tensor, budgets: torch.Tensor):
        """Fuse experts for flat tokens.

        Parameters
        ----------
        x : torch.Tensor
            (M, d) token matrix.
        budgets : torch.Tensor
            (M,) integer budgets, each in {k_min, k_med, k_max}.

        Returns
        -------
        (torch.Tensor, RoutingStats)
            Fused (M, d) output and the dispatch statistics.
        """
        m, _ = x.shape
        if budgets.shape != (m,):
            raise ConfigurationError(f"budgets shape {tuple(budgets.shape)} != ({m},)")
        n = self.pool.n_experts
        probs = self.pool.route(x)
        sorted_p, sorted_i = top_k_stable(probs, n)

        token_rows = []
        expert_ids = []
        gates = []
        tier_counts = {self.k_min: 0, self.k_med: 0, self.k_max: 0}
        for k in torch.unique(budgets).tolist():
            if k not in tier_counts:
                raise ConfigurationError(f"budget {k} outside the configured tiers")
            rows = torch.nonzero(budgets == k, as_tuple=True)[0]
            tier_counts[k] = int(rows.numel())
            raw = sorted_p[rows, :k]
            renorm = raw / raw.sum(dim=-1, keepdim=True)
            token_rows.append(rows.repeat_interleave(k))
            expert_ids.append(sorted_i[rows, :k].reshape(-1))
            gates.append(renorm.reshape(-1))

        token_rows = torch.cat(token_rows)
        expert_ids = torch.cat(expert_ids)
        gates = torch.cat(gates)

        out = torch.zeros_like(x)
        for e in range(n):
            hit = expert_ids == e
            if not torch.any(hit):
                continue
            rows = token_rows[hit]
            out = out.index_add(0, rows, gates[hit].unsqueeze(-1) * self.pool.experts[e](x[rows]))

        usage = np.bincount(expert_ids.detach().cpu().numpy(), minlength=n).astype(np.int64)
        stats = RoutingStats(usage=usage, probs=probs, n_tokens=m, tier_counts=tier_counts)
        return out, stats

    def forward_dense(self, x: torch.Tensor, budgets: torch.Tensor) -> torch.Tensor:
        """Dense masked-gate equivalent of :meth:`forward` (oracle path).

        Runs every expert on every token, zeroes non-selected gates, and
        renormalizes. Kept for verification; numerically equal to the sparse
        path up to accumulation order.
        """
        m, _ = x.shape
        n = self.pool.n_experts
        probs = self.pool.route(x)
        _, sorted_i = top_k_stable(probs, n)
        mask = torch.zeros_like(probs)
        for k in torch.unique(budgets).tolist():
            rows = torch.nonzero(budgets == k, as_tuple=True)[0]
            mask[rows.unsqueeze(-1), sorted_i[rows, :k]] = 1.0
        gated = probs * mask
        gated = gated / gated.sum(dim=-1, keepdim=True)
        all_out = torch.stack([expert(x) for expert in self.pool.experts], dim=1)  # (M, N, d)
        return (gated.unsqueeze(-1) * all_out).sum(dim=1)
