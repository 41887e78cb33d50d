"""Gridded meteorological fields, intensity categories, and the flat binary container.

Everything downstream consumes the types defined here: ``MeteoSequence`` batches
of multi-variate frames (channel 0 is always precipitation in mm/h), the
five-category intensity taxonomy, routing thresholds estimated from training
climatology, and a deterministic synthetic storm generator that stands in for
a real reanalysis archive at desk scale.
"""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CATEGORY_LOWER_BOUNDS",
    "WET_THRESHOLD",
    "IntensityCategory",
    "IntensityThresholds",
    "MeteoSequence",
    "categorize",
    "categorize_field",
    "estimate_thresholds",
    "generate_synthetic",
    "read_container",
    "write_container",
    "ContainerError",
    "MagicMismatchError",
    "TruncatedError",
    "VersionMismatchError",
]

# mm/h lower bounds of the five intensity categories, ascending severity.
CATEGORY_LOWER_BOUNDS = (0.0, 0.1, 4.0, 13.0, 25.0)

# Cells at or above this rate count as wet when estimating climatological quantiles.
WET_THRESHOLD = 0.1

# Minimum separation enforced between tied weak/strong thresholds.
_THRESHOLD_SEPARATION = 1e-6


class IntensityCategory(enum.IntEnum):
    """Rainfall intensity categories, ordered by ascending severity."""

    RL = 0  # rainless        [0, 0.1) mm/h
    LR = 1  # light rain      [0.1, 4.0)
    MR = 2  # moderate rain   [4.0, 13.0)
    HR = 3  # heavy rain      [13.0, 25.0)
    RS = 4  # rainstorm       [25.0, inf)


def categorize(rate: float) -> IntensityCategory:
    """Map a rainfall rate in mm/h to its intensity category.

    Each category covers the half-open interval [lower_bound, next_lower_bound).

    Raises
    ------
    ValueError
        If ``rate`` is negative or non-finite.
    """
    if not np.isfinite(rate):
        raise ValueError(f"rainfall rate must be finite, got {rate}")
    if rate < 0:
        raise ValueError(f"rainfall rate must be non-negative, got {rate}")
    idx = int(np.searchsorted(CATEGORY_LOWER_BOUNDS, rate, side="right")) - 1
    return IntensityCategory(idx)


def categorize_field(rates: np.ndarray) -> np.ndarray:
    """Vectorized :func:`categorize`; returns an int64 array of category indices."""
    rates = np.asarray(rates)
    if not np.all(np.isfinite(rates)):
        raise ValueError("rainfall rates must be finite")
    if np.any(rates < 0):
        raise ValueError("rainfall rates must be non-negative")
    return np.digitize(rates, CATEGORY_LOWER_BOUNDS[1:]).astype(np.int64)


@dataclass(frozen=True)
class IntensityThresholds:
    """Weak/strong rainfall boundaries that split the intensity continuum.

    Attributes
    ----------
    lambda_weak : float
        Weak-rain boundary in mm/h. Rates below it take the smallest
        expert budget.
    lambda_strong : float
        Strong-rain boundary in mm/h. Rates at or above it take the largest
        budget.
    source : str
        ``"cdf_percentile"`` when estimated from training data,
        ``"fixed"`` for the Table-style category defaults.
    fell_back : bool
        True when estimation found no wet cells and the fixed defaults were
        substituted.
    """

    lambda_weak: float
    lambda_strong: float
    source: str = "fixed"
    fell_back: bool = False

    def __post_init__(self) -> None:
        if not (0 < self.lambda_weak < self.lambda_strong):
            raise ValueError(
                f"need 0 < lambda_weak < lambda_strong, got "
                f"({self.lambda_weak}, {self.lambda_strong})"
            )
        if self.source not in ("fixed", "cdf_percentile"):
            raise ValueError(f"unknown threshold source {self.source!r}")

    @classmethod
    def fixed_defaults(cls, fell_back: bool = False) -> "IntensityThresholds":
        """Moderate/heavy category bounds as fixed routing thresholds."""
        return cls(
            lambda_weak=CATEGORY_LOWER_BOUNDS[2],
            lambda_strong=CATEGORY_LOWER_BOUNDS[3],
            source="fixed",
            fell_back=fell_back,
        )


def estimate_thresholds(
    intensity_fields,
    p_weak: float = 0.75,
    p_strong: float = 0.95,
) -> IntensityThresholds:
    """Estimate routing thresholds as empirical quantiles of wet training cells.

    Parameters
    ----------
    intensity_fields : ndarray or iterable of ndarray
        Rainfall rate fields (mm/h) from the training archive; any shapes.
    p_weak, p_strong : float
        Quantile levels with 0 < p_weak < p_strong < 1. Quantiles use the
        linear-interpolation convention and are computed over wet cells only
        (rate >= 0.1 mm/h); with a large dry majority the raw quantiles would
        collapse to zero.

    Returns
    -------
    IntensityThresholds
        Estimated thresholds, or the fixed defaults (with ``fell_back=True``
        and a warning) when the archive contains no wet cells.
    """
    if not (0 < p_weak < p_strong < 1):
        raise ValueError(f"need 0 < p_weak < p_strong < 1, got ({p_weak}, {p_strong})")
    if isinstance(intensity_fields, np.ndarray):
        intensity_fields = [intensity_fields]
    wet_parts = []
    empty = True
    for part in intensity_fields:
        part = np.asarray(part, dtype=np.float64)
        empty = False
        wet_parts.append(part[part >= WET_THRESHOLD])
    if empty:
        raise ValueError("intensity stream is empty")
    wet = np.concatenate(wet_parts) if wet_parts else np.empty(0)
    if wet.size == 0:
        warnings.warn(
            "no wet cells in training stream; falling back to fixed thresholds",
            RuntimeWarning,
            stacklevel=2,
        )
        return IntensityThresholds.fixed_defaults(fell_back=True)
    weak, strong = np.quantile(wet, [p_weak, p_strong])
    if strong <= weak:
        strong = weak + _THRESHOLD_SEPARATION
    return IntensityThresholds(
        lambda_weak=float(weak),
        lambda_strong=float(strong),
        source="cdf_percentile",
    )


@dataclass(frozen=True)
class MeteoSequence:
    """A batch of gridded multi-variate frames at hourly cadence.

    Attributes
    ----------
    data : ndarray
        float32 tensor of shape (B, T, H, W, L). Channel 0 is precipitation
        in mm/h and must be non-negative; all entries finite.
    base_hour : int
        Epoch hour of the first frame. Frames are spaced exactly one hour
        apart, so frame t carries timestamp ``base_hour + t``.
    lat0, lon0 : float
        Geographic coordinates (degrees) of grid cell (0, 0).
    dlat, dlon : float
        Grid spacing in degrees along rows and columns.
    """

    data: np.ndarray
    base_hour: int
    lat0: float = 30.0
    lon0: float = 110.0
    dlat: float = 0.25
    dlon: float = 0.25

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 5:
            raise ValueError(f"data must have shape (B, T, H, W, L), got {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("data must be finite")
        if np.any(data[..., 0] < 0):
            raise ValueError("precipitation channel must be non-negative")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "base_hour", int(self.base_hour))

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def timestamps(self) -> np.ndarray:
        """Per-frame epoch hours, strictly increasing at 1-hour spacing."""
        return self.base_hour + np.arange(self.n_frames, dtype=np.int64)

    @property
    def precipitation(self) -> np.ndarray:
        """Rainfall rate channel, shape (B, T, H, W)."""
        return self.data[..., 0]


# ---------------------------------------------------------------------------
# Synthetic storm generator
# ---------------------------------------------------------------------------


def _smooth_field(rng: np.random.Generator, height: int, width: int, coarse: int = 4) -> np.ndarray:
    """Low-frequency random field via bilinear upsampling of coarse noise."""
    knots = rng.normal(size=(coarse + 1, coarse + 1))
    rows = np.linspace(0.0, coarse, height)
    cols = np.linspace(0.0, coarse, width)
    r0 = np.minimum(rows.astype(int), coarse - 1)
    c0 = np.minimum(cols.astype(int), coarse - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = knots[r0][:, c0] * (1 - fc) + knots[r0][:, c0 + 1] * fc
    bot = knots[r0 + 1][:, c0] * (1 - fc) + knots[r0 + 1][:, c0 + 1] * fc
    return top * (1 - fr) + bot * fr


def generate_synthetic(
    seed: int,
    n_seq: int,
    dims: tuple,
    tail_exponent: float = 1.5,
    cells_per_seq: float = 2.0,
    peak_scale: float = 0.6,
    max_rate: float = 100.0,
) -> list:
    """Generate a long-tailed archive of advecting storm sequences.

    Each sequence holds a handful of Gaussian rain cells that drift with a
    constant velocity; cell peak rates follow a Pareto law with the given
    tail exponent, truncated at ``max_rate``. Remaining channels are smooth
    analogue fields (temperature/humidity style) correlated with the rain
    field. Output is deterministic for a fixed seed.

    Parameters
    ----------
    seed : int
        RNG seed; identical seeds give bitwise-identical archives.
    n_seq : int
        Number of sequences.
    dims : tuple
        (T, H, W, L) per sequence; all positive, L >= 1.
    tail_exponent : float
        Pareto tail index of cell peak rates; must exceed 1.

    Returns
    -------
    list of MeteoSequence
        Single-sequence batches (B = 1 each).
    """
    t_len, height, width, channels = dims
    if min(t_len, height, width, channels) < 1:
        raise ValueError(f"dims must be positive, got {dims}")
    if n_seq < 1:
        raise ValueError(f"n_seq must be positive, got {n_seq}")
    if not tail_exponent > 1:
        raise ValueError(f"tail_exponent must exceed 1, got {tail_exponent}")

    rng = np.random.default_rng(seed)
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    sequences = []
    for _ in range(n_seq):
        n_cells = 1 + rng.poisson(max(cells_per_seq - 1.0, 0.0))
        centers = np.stack(
            [
                rng.uniform(-3.0, height + 3.0, size=n_cells),
                rng.uniform(-3.0, width + 3.0, size=n_cells),
            ],
            axis=1,
        )
        velocities = rng.uniform(-2.5, 2.5, size=(n_cells, 2))
        sigmas = rng.uniform(1.5, 4.5, size=n_cells)
        peaks = np.minimum(max_rate, peak_scale * (1.0 + rng.pareto(tail_exponent, size=n_cells)))

        rain = np.zeros((t_len, height, width), dtype=np.float64)
        for t in range(t_len):
            for c in range(n_cells):
                cr, cc = centers[c] + velocities[c] * t
                d2 = (rows - cr) ** 2 + (cols - cc) ** 2
                np.maximum(rain[t], peaks[c] * np.exp(-d2 / (2.0 * sigmas[c] ** 2)), out=rain[t])

        data = np.zeros((1, t_len, height, width, channels), dtype=np.float32)
        data[0, :, :, :, 0] = rain
        for ch in range(1, channels):
            base = _smooth_field(rng, height, width)
            coupling = rng.uniform(0.2, 0.8)
            drift = rng.normal(scale=0.05)
            for t in range(t_len):
                data[0, t, :, :, ch] = base + drift * t + coupling * np.log1p(rain[t])

        sequences.append(
            MeteoSequence(
                data=data,
                base_hour=int(rng.integers(0, 24 * 365)),
                lat0=float(rng.uniform(15.0, 50.0)),
                lon0=float(rng.uniform(70.0, 140.0)),
                dlat=0.25,
                dlon=0.25,
            )
        )
    return sequences


# ---------------------------------------------------------------------------
# Flat binary container
# ---------------------------------------------------------------------------

_MAGIC = b"PANG"
_FORMAT_VERSION = 1
# magic, version u32, dims 5*u32, geo 4*f64, base hour i64
_HEADER = struct.Struct("<4sI5I4dq")
# Refuse headers whose element count cannot be a sane desk-scale file.
_MAX_ELEMENTS = 1 << 34


class ContainerError(IOError):
    """Base class for container format violations."""


class MagicMismatchError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


def write_container(path, seq: MeteoSequence) -> None:
    """Write a sequence to the flat little-endian container format."""
    b, t, h, w, l = seq.data.shape
    header = _HEADER.pack(
        _MAGIC,
        _FORMAT_VERSION,
        b,
        t,
        h,
        w,
        l,
        seq.lat0,
        seq.lon0,
        seq.dlat,
        seq.dlon,
        seq.base_hour,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(seq.data, dtype="<f4").tobytes())


def read_container(path) -> MeteoSequence:
    """Read a sequence written by :func:`write_container`.

    Raises
    ------
    MagicMismatchError
        If the file does not start with the container magic.
    VersionMismatchError
        If the format version is unsupported.
    TruncatedError
        If the header declares more elements than the file provides, or the
        declared dimensions overflow the sane size cap.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TruncatedError(f"{path}: file shorter than container header")
    magic, version, b, t, h, w, l, lat0, lon0, dlat, dlon, base_hour = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise MagicMismatchError(f"{path}: bad magic {magic!r}")
    if version != _FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: unsupported version {version}")
    n_elements = b * t * h * w * l
    if n_elements > _MAX_ELEMENTS:
        raise TruncatedError(f"{path}: declared dimensions overflow ({n_elements} elements)")
    payload = raw[_HEADER.size:]
    expected = 4 * n_elements
    if len(payload) < expected:
        raise TruncatedError(
            f"{path}: header declares {n_elements} elements but payload holds "
            f"{len(payload) // 4}"
        )
    if len(payload) > expected:
        raise ContainerError(f"{path}: {len(payload) - expected} trailing bytes")
    data = np.frombuffer(payload, dtype="<f4", count=n_elements).reshape(b, t, h, w, l)
    return MeteoSequence(
        data=data.copy(),
        base_hour=base_hour,
        lat0=lat0,
        lon0=lon0,
        dlat=dlat,
        dlon=dlon,
    )
