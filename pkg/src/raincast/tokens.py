"""Patch tokenization and positional information.

Frames become non-overlapping p x p patch tokens through a learnable linear
projection. Tokens then receive positional signals: a solar-geometric encoding
built from the sun angle at each patch center and timestamp (the default when
grid geolocation is available), or the classic interleaved sinusoidal encoding
as a fallback.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, NumericError

# Axial tilt used by the standard declination approximation.
_TILT_DEG = 23.44
_TROPICAL_YEAR_DAYS = 365.25
_ARCCOS_TOL = 1e-9


def solar_declination(epoch_hour) -> np.ndarray:
    """Solar declination (radians) from epoch hour via the standard cosine fit.

    delta = -23.44 deg * cos(2*pi*(day_of_year + 10) / 365.25)
    """
    day_of_year = (np.asarray(epoch_hour, dtype=np.float64) / 24.0) % _TROPICAL_YEAR_DAYS
    return -math.radians(_TILT_DEG) * np.cos(
        2.0 * np.pi * (day_of_year + 10.0) / _TROPICAL_YEAR_DAYS
    )


def hour_angle(epoch_hour, lon_deg) -> np.ndarray:
    """Local hour angle (radians): 15 degrees per hour off local solar noon.

    Local solar hour is UTC hour plus lon/15; no equation-of-time correction.
    """
    utc_hour = np.asarray(epoch_hour, dtype=np.float64) % 24.0
    local_solar_hour = utc_hour + np.asarray(lon_deg, dtype=np.float64) / 15.0
    return np.radians((local_solar_hour - 12.0) * 15.0)


def solar_alpha(phi, delta, omega):
    """Sun angle from latitude phi, declination delta, hour angle omega (radians).

    Evaluates arccos(sin(phi) sin(delta) + cos(phi) cos(delta) cos(omega))
    exactly as written; the arccos argument is clamped to [-1, 1] with a
    1e-9 tolerance. Output lies in [0, pi].

    Raises
    ------
    NumericError
        If any argument is non-finite or the arccos argument leaves [-1, 1]
        by more than the tolerance.
    """
    phi = np.asarray(phi, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(delta)) and np.all(np.isfinite(omega))):
        raise NumericError("solar_alpha arguments must be finite")
    arg = np.sin(phi) * np.sin(delta) + np.cos(phi) * np.cos(delta) * np.cos(omega)
    if np.any(np.abs(arg) > 1.0 + _ARCCOS_TOL):
        raise NumericError(f"arccos argument out of range: {arg}")
    out = np.arccos(np.clip(arg, -1.0, 1.0))
    return float(out) if out.ndim == 0 else out


def patch_center_coordinates(
    n_rows: int, n_cols: int, patch: int, lat0: float, lon0: float, dlat: float, dlon: float
):
    """Latitude/longitude (degrees) of every patch center on the token grid.

    Returns (lat, lon) arrays of shape (n_rows, n_cols). Cell (0, 0) sits at
    (lat0, lon0); a patch center lies half a patch in from its corner.
    """
    row_cells = (np.arange(n_rows, dtype=np.float64) + 0.5) * patch - 0.5
    col_cells = (np.arange(n_cols, dtype=np.float64) + 0.5) * patch - 0.5
    lat = lat0 + dlat * row_cells
    lon = lon0 + dlon * col_cells
    return np.broadcast_to(lat[:, None], (n_rows, n_cols)).copy(), np.broadcast_to(
        lon[None, :], (n_rows, n_cols)
    ).copy()


def solar_alpha_field(
    timestamps,
    n_rows: int,
    n_cols: int,
    patch: int,
    lat0: float,
    lon0: float,
    dlat: float = 0.25,
    dlon: float = 0.25,
) -> np.ndarray:
    """Sun angle per frame and patch center, shape (T, n_rows, n_cols)."""
    timestamps = np.asarray(timestamps, dtype=np.int64)
    lat, lon = patch_center_coordinates(n_rows, n_cols, patch, lat0, lon0, dlat, dlon)
    phi = np.radians(lat)
    out = np.empty((timestamps.size, n_rows, n_cols), dtype=np.float64)
    for i, ts in enumerate(timestamps):
        delta = solar_declination(ts)
        omega = hour_angle(ts, lon)
        out[i] = solar_alpha(phi, delta, omega)
    return out


def sinusoidal_pe(pos: int, d: int) -> torch.Tensor:
    """Interleaved sin/cos positional vector of length d (d must be even).

    Entry 2i is sin(pos / 10000^(2i/d)); entry 2i+1 is the matching cosine.
    """
    if d % 2 != 0:
        raise ConfigurationError(f"encoding dimension must be even, got {d}")
    if pos < 0:
        raise ValueError(f"position must be non-negative, got {pos}")
    i = torch.arange(d // 2, dtype=torch.float64)
    rate = pos / torch.pow(torch.tensor(10000.0, dtype=torch.float64), 2.0 * i / d)
    pe = torch.empty(d, dtype=torch.float64)
    pe[0::2] = torch.sin(rate)
    pe[1::2] = torch.cos(rate)
    return pe


def sinusoidal_table(n_positions: int, d: int) -> torch.Tensor:
    """Stacked :func:`sinusoidal_pe` rows, shape (n_positions, d)."""
    return torch.stack([sinusoidal_pe(p, d) for p in range(n_positions)])


class PatchEmbedding(nn.Module):
    """Linear projection of flattened p x p x L patches into d-dim tokens."""

    def __init__(self, patch: int, n_channels: int, embed_dim: int):
        super().__init__()
        if min(patch, n_channels, embed_dim) < 1:
            raise ConfigurationError("patch, n_channels, embed_dim must be positive")
        self.patch = patch
        self.n_channels = n_channels
        self.embed_dim = embed_dim
        self.proj = nn.Linear(patch * patch * n_channels, embed_dim)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(..., H, W, L) frames -> (..., H/p, W/p, d) tokens.

        Raises
        ------
        ConfigurationError
            When H or W is not divisible by the patch size; there is no
            implicit padding.
        """
        *lead, h, w, l = frames.shape
        p = self.patch
        if l != self.n_channels:
            raise ConfigurationError(f"expected {self.n_channels} channels, got {l}")
        if h % p != 0 or w % p != 0:
            raise ConfigurationError(f"grid ({h}, {w}) not divisible by patch {p}")
        x = frames.reshape(*lead, h // p, p, w // p, p, l)
        x = x.movedim(-4, -3)  # (..., H/p, W/p, p, p, L)
        x = x.reshape(*lead, h // p, w // p, p * p * l)
        return self.proj(x)


class SolarEncoding(nn.Module):
    """Learnable 1 -> d mapping of the per-token sun angle."""

    def __init__(self, embed_dim: int):
        super().__init__()
        self.proj = nn.Linear(1, embed_dim)

    def forward(self, alpha: torch.Tensor) -> torch.Tensor:
        """(...,) sun angles -> (..., d) additive encoding."""
        return self.proj(alpha.unsqueeze(-1))
