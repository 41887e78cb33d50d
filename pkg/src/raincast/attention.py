"""Dual-axis compressed latent attention.

Full spatiotemporal self-attention is factorized into two shape-preserving
stages. The spatial stage compresses each frame's token grid with a strided
2-D convolution, runs multi-head attention over the compressed tokens, and
restores the native grid by bilinear upsampling. The temporal stage does the
same along time with a causal 1-D convolution and linear interpolation back.
Each stage is wrapped in a residual connection with a pre-attention layer norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError


@dataclass(frozen=True)
class AttentionConfig:
    """Head layout and compression hyperparameters for one block.

    ``heads * head_dim`` is the token dimension. Kernel sizes and strides are
    fixed so a stride of 1 with identity kernels reduces each stage to plain
    dense attention (kernel 3 with symmetric padding 1 spatially; kernel 3
    with left padding 2 temporally, which keeps the compression causal).
    """

    heads: int
    head_dim: int
    spatial_stride: int = 2
    temporal_stride: int = 2
    spatial_kernel: int = 3
    temporal_kernel: int = 3

    def __post_init__(self) -> None:
        if self.heads < 1 or self.head_dim < 1:
            raise ConfigurationError("heads and head_dim must be positive")
        if self.spatial_stride < 1 or self.temporal_stride < 1:
            raise ConfigurationError("strides must be >= 1")

    @property
    def dim(self) -> int:
        return self.heads * self.head_dim


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Softmax(Q K^T / sqrt(d_k)) V over the last two dimensions.

    q: (..., n_q, d_k), k: (..., n_k, d_k), v: (..., n_k, d_v).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ConfigurationError(f"query/key dims differ: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ConfigurationError(f"key/value counts differ: {k.shape[-2]} vs {v.shape[-2]}")
    d_k = q.shape[-1]
    scores = q @ k.transpose(-1, -2) / math.sqrt(d_k)
    return torch.softmax(scores, dim=-1) @ v


class MultiHeadAttention(nn.Module):
    """Per-head scaled dot-product attention with an output projection.

    Head i uses the i-th d_k-wide slice of the shared Q/K/V projections;
    outputs are concatenated and mixed by W^O.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, q_in: torch.Tensor, k_in: torch.Tensor, v_in: torch.Tensor) -> torch.Tensor:
        def split(x: torch.Tensor) -> torch.Tensor:
            *lead, n, _ = x.shape
            return x.reshape(*lead, n, self.heads, self.head_dim).transpose(-3, -2)

        q = split(self.q_proj(q_in))
        k = split(self.k_proj(k_in))
        v = split(self.v_proj(v_in))
        out = scaled_dot_attention(q, k, v)  # (..., heads, n, head_dim)
        *lead, _, n, _ = out.shape
        out = out.transpose(-3, -2).reshape(*lead, n, self.dim)
        return self.out_proj(out)


class FeedForward(nn.Module):
    """Position-wise ReLU(x W1 + b1) W2 + b2."""

    def __init__(self, dim: int, hidden_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(x)))


def upsample_bilinear(x: torch.Tensor, size) -> torch.Tensor:
    """Bilinear resize of (N, C, H, W) maps, align_corners=False.

    Same-size calls return the input unchanged so the stride-1 identity
    property holds exactly.
    """
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


def upsample_linear(x: torch.Tensor, length: int) -> torch.Tensor:
    """Linear resize of (N, C, T) sequences, align_corners=False."""
    if x.shape[-1] == length:
        return x
    return F.interpolate(x, size=length, mode="linear", align_corners=False)


class SpatialStage(nn.Module):
    """Intra-frame attention over a convolutionally compressed token grid.

    Input and output are (N, H_p, W_p, d); the residual path is the identity.
    """

    def __init__(self, dim: int, heads: int, stride: int = 2, kernel: int = 3):
        super().__init__()
        if stride < 1:
            raise ConfigurationError(f"spatial stride must be >= 1, got {stride}")
        self.stride = stride
        self.compress = nn.Conv2d(dim, dim, kernel, stride=stride, padding=kernel // 2)
        self.norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, h_p, w_p, d = x.shape
        c = self.compress(x.permute(0, 3, 1, 2))  # (N, d, H_c, W_c)
        h_c, w_c = c.shape[-2:]
        if h_c < 1 or w_c < 1:
            raise ConfigurationError(f"compressed grid collapsed: ({h_c}, {w_c})")
        tokens = c.permute(0, 2, 3, 1).reshape(n, h_c * w_c, d)
        normed = self.norm(tokens)
        attended = self.attn(normed, normed, normed)
        attended = attended.reshape(n, h_c, w_c, d).permute(0, 3, 1, 2)
        restored = upsample_bilinear(attended, (h_p, w_p)).permute(0, 2, 3, 1)
        return x + restored


class TemporalStage(nn.Module):
    """Cross-frame attention over a causally compressed time axis.

    Input and output are (M, T, d). The compression conv is left-padded by
    kernel - 1, so compressed step t depends only on input steps <= t*stride.
    """

    def __init__(self, dim: int, heads: int, stride: int = 2, kernel: int = 3):
        super().__init__()
        if stride < 1:
            raise ConfigurationError(f"temporal stride must be >= 1, got {stride}")
        self.stride = stride
        self.left_pad = kernel - 1
        self.compress = nn.Conv1d(dim, dim, kernel, stride=stride)
        self.norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        m, t, d = x.shape
        padded = F.pad(x.transpose(1, 2), (self.left_pad, 0))
        c = self.compress(padded)  # (M, d, T_c)
        t_c = c.shape[-1]
        if t_c < 1:
            raise ConfigurationError(f"compressed time axis collapsed: {t_c}")
        tokens = c.transpose(1, 2)
        normed = self.norm(tokens)
        attended = self.attn(normed, normed, normed)
        restored = upsample_linear(attended.transpose(1, 2), t).transpose(1, 2)
        return x + restored


class DualAxisBlock(nn.Module):
    """Spatial stage followed by temporal stage on (B, T, H_p, W_p, d) tokens."""

    def __init__(self, dim: int, config: AttentionConfig):
        super().__init__()
        if config.dim != dim:
            raise ConfigurationError(
                f"heads * head_dim = {config.dim} does not match dim {dim}"
            )
        self.spatial = SpatialStage(dim, config.heads, config.spatial_stride, config.spatial_kernel)
        self.temporal = TemporalStage(
            dim, config.heads, config.temporal_stride, config.temporal_kernel
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, h_p, w_p, d = x.shape
        x = self.spatial(x.reshape(b * t, h_p, w_p, d)).reshape(b, t, h_p, w_p, d)
        x = x.permute(0, 2, 3, 1, 4).reshape(b * h_p * w_p, t, d)
        x = self.temporal(x)
        x = x.reshape(b, h_p, w_p, t, d).permute(0, 3, 1, 2, 4)
        return x
