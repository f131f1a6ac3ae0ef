"""Windowed periodograms, Welch PSD estimates, and truncation-denoised spectrograms.

Densities are one-sided dB/Hz by default: |FFT(w*x)|^2 / (fs * sum(w^2)) with
interior bins doubled. The plain 1/M normalization (no rate or window-power
correction) is available as ``normalization="plain"`` for comparison.
Zero-density bins clamp to -300 dB so grids stay finite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumError,
    EmptyBand,
    InvalidArg,
    IoError,
    LengthMismatch,
    SignalTooShort,
)
from .signal import TimeSeriesSignal

__all__ = [
    "WindowSpec",
    "PsdEstimate",
    "Spectrogram",
    "DB_FLOOR",
    "make_window",
    "block_periodogram",
    "welch_psd",
    "stft_spectrogram",
    "crop_band",
    "truncate",
    "write_spectrogram_csv",
    "write_spectrogram",
    "read_spectrogram",
]

DB_FLOOR = -300.0

_MAGIC = b"RFSP"
_VERSION = 1


@dataclass(frozen=True)
class WindowSpec:
    """Analysis window: size, hop between consecutive blocks, and taper kind."""

    size: int = 128
    hop: int = 16
    kind: str = "hanning"

    def __post_init__(self):
        if self.size < 1:
            raise InvalidArg(f"window size must be >= 1, got {self.size}")
        if not (1 <= self.hop <= self.size):
            raise InvalidArg(f"hop must be in [1, {self.size}], got {self.hop}")
        if self.kind not in ("hanning", "rectangular"):
            raise InvalidArg(f"unknown window kind {self.kind!r}")


@dataclass(frozen=True)
class PsdEstimate:
    """Welch PSD: dB/Hz per frequency bin, plus bin width and block count."""

    values_db: np.ndarray
    bin_hz: float
    block_count: int

    def __post_init__(self):
        object.__setattr__(self, "values_db", np.asarray(self.values_db, dtype=np.float64))
        if not np.all(np.isfinite(self.values_db)):
            raise InvalidArg("PSD values must be finite")

    @property
    def frequencies_hz(self) -> np.ndarray:
        return np.arange(self.values_db.size) * self.bin_hz


@dataclass(frozen=True)
class Spectrogram:
    """Time x frequency grid of spectral density in dB/Hz.

    ``grid[t, f]`` is the density of frame t at bin f. ``f0_hz`` is the center
    frequency of bin 0 (non-zero after band cropping).
    """

    grid: np.ndarray
    frame_times: np.ndarray
    bin_hz: float
    floor_db: float
    ceil_db: float
    f0_hz: float = 0.0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "frame_times", np.asarray(self.frame_times, dtype=np.float64))
        if grid.ndim != 2 or grid.size == 0:
            raise InvalidArg("spectrogram grid must be a non-empty 2-D array")
        if grid.shape[0] != self.frame_times.size:
            raise InvalidArg("frame_times length must match the time dimension")
        if not np.all(np.isfinite(grid)):
            raise InvalidArg("spectrogram entries must be finite")

    @property
    def n_frames(self) -> int:
        return self.grid.shape[0]

    @property
    def n_bins(self) -> int:
        return self.grid.shape[1]

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.f0_hz + np.arange(self.n_bins) * self.bin_hz


def make_window(spec: WindowSpec) -> np.ndarray:
    """Window taper values. Hanning is the periodic (DFT-even) variant."""
    m = spec.size
    if spec.kind == "rectangular":
        return np.ones(m)
    i = np.arange(m, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / m))


def _to_db(linear: np.ndarray) -> np.ndarray:
    out = np.full(linear.shape, DB_FLOOR)
    positive = linear > 0.0
    np.log10(linear, out=out, where=positive)
    out[positive] *= 10.0
    return np.maximum(out, DB_FLOOR)


def block_periodogram(
    block: np.ndarray,
    window: np.ndarray,
    sample_rate: float,
    one_sided: bool = True,
    normalization: str = "density",
) -> np.ndarray:
    """Linear-density periodogram of one block.

    ``normalization="density"`` divides by fs * sum(w^2) (dB/Hz scaling);
    ``"plain"`` divides by the block size only. One-sided output doubles the
    interior bins so the density integrates to the block power.
    """
    block = np.asarray(block, dtype=np.float64)
    window = np.asarray(window, dtype=np.float64)
    if block.shape != window.shape or block.ndim != 1:
        raise LengthMismatch(f"block {block.shape} vs window {window.shape}")
    if not sample_rate > 0:
        raise InvalidArg(f"sample_rate must be positive, got {sample_rate}")
    if normalization not in ("density", "plain"):
        raise InvalidArg(f"unknown normalization {normalization!r}")

    m = block.size
    if normalization == "density":
        scale = 1.0 / (sample_rate * float(np.sum(window**2)))
    else:
        scale = 1.0 / m

    if one_sided:
        spectrum = np.abs(np.fft.rfft(window * block)) ** 2 * scale
        # Interior bins carry both the positive and negative frequency halves.
        last_unique = spectrum.size - 1 if m % 2 == 0 else spectrum.size
        spectrum[1:last_unique] *= 2.0
        return spectrum
    return np.abs(np.fft.fft(window * block)) ** 2 * scale


def _block_starts(n: int, spec: WindowSpec) -> range:
    return range(0, n - spec.size + 1, spec.hop)


def welch_psd(
    signal: TimeSeriesSignal,
    spec: WindowSpec,
    normalization: str = "density",
) -> PsdEstimate:
    """Welch estimate: average of block periodograms over all hops, in dB/Hz."""
    n = len(signal)
    if n < spec.size:
        raise SignalTooShort(f"{n} samples < window size {spec.size}")
    window = make_window(spec)
    starts = _block_starts(n, spec)
    acc = np.zeros(spec.size // 2 + 1)
    for s in starts:
        acc += block_periodogram(
            signal.samples[s : s + spec.size], window, signal.sample_rate,
            normalization=normalization,
        )
    k = len(starts)
    return PsdEstimate(
        values_db=_to_db(acc / k),
        bin_hz=signal.sample_rate / spec.size,
        block_count=k,
    )


def stft_spectrogram(
    signal: TimeSeriesSignal,
    spec: WindowSpec,
    normalization: str = "density",
) -> Spectrogram:
    """Short-time spectrogram: one periodogram per hop, stored in dB/Hz."""
    n = len(signal)
    if n < spec.size:
        raise SignalTooShort(f"{n} samples < window size {spec.size}")
    window = make_window(spec)
    starts = _block_starts(n, spec)
    grid = np.empty((len(starts), spec.size // 2 + 1))
    for row, s in enumerate(starts):
        grid[row] = block_periodogram(
            signal.samples[s : s + spec.size], window, signal.sample_rate,
            normalization=normalization,
        )
    grid = _to_db(grid)
    return Spectrogram(
        grid=grid,
        frame_times=np.array(starts, dtype=np.float64) / signal.sample_rate,
        bin_hz=signal.sample_rate / spec.size,
        floor_db=float(grid.min()),
        ceil_db=float(grid.max()),
    )


def crop_band(spec: Spectrogram, f_lo: float, f_hi: float) -> Spectrogram:
    """Keep only frequency bins whose center lies in [f_lo, f_hi]."""
    if f_lo >= f_hi:
        raise EmptyBand(f"empty band [{f_lo}, {f_hi}]")
    freqs = spec.frequencies_hz
    keep = np.flatnonzero((freqs >= f_lo) & (freqs <= f_hi))
    if keep.size == 0:
        raise EmptyBand(f"no bins inside [{f_lo}, {f_hi}] Hz")
    grid = spec.grid[:, keep[0] : keep[-1] + 1].copy()
    return Spectrogram(
        grid=grid,
        frame_times=spec.frame_times.copy(),
        bin_hz=spec.bin_hz,
        floor_db=float(grid.min()),
        ceil_db=float(grid.max()),
        f0_hz=float(freqs[keep[0]]),
    )


def truncate(spec: Spectrogram, cutoff_db: float) -> Spectrogram:
    """Truncation denoising: clamp every density below the cutoff to the cutoff."""
    if not np.isfinite(cutoff_db):
        raise InvalidArg("cutoff must be finite")
    grid = np.maximum(spec.grid, cutoff_db)
    return Spectrogram(
        grid=grid,
        frame_times=spec.frame_times.copy(),
        bin_hz=spec.bin_hz,
        floor_db=float(grid.min()),
        ceil_db=float(grid.max()),
        f0_hz=spec.f0_hz,
    )


# ---------------------------------------------------------------------------
# Exports: CSV (one row per frequency bin, one column per frame) and the
# "RFSP" binary container (16-byte header, dims as u64 pair, row-major f64 LE).
# ---------------------------------------------------------------------------


def write_spectrogram_csv(spec: Spectrogram, path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for f in range(spec.n_bins):
                row = spec.grid[:, f]
                fh.write(",".join(f"{v:.9g}" for v in row))
                fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write spectrogram CSV: {exc}") from exc


def write_spectrogram(spec: Spectrogram, path: str | Path) -> None:
    header = _MAGIC + struct.pack("<H", _VERSION) + b"\x00" * 10
    meta = struct.pack("<QQ", spec.n_frames, spec.n_bins)
    meta += struct.pack("<ddd", spec.bin_hz, spec.f0_hz, float(spec.frame_times[0]))
    # Frame spacing suffices to rebuild frame_times: STFT frames are uniform.
    step = float(spec.frame_times[1] - spec.frame_times[0]) if spec.n_frames > 1 else 0.0
    meta += struct.pack("<d", step)
    data = spec.grid.astype("<f8").tobytes()
    try:
        Path(path).write_bytes(header + meta + data)
    except OSError as exc:
        raise IoError(f"cannot write spectrogram container: {exc}") from exc


def read_spectrogram(path: str | Path) -> Spectrogram:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read spectrogram container: {exc}") from exc
    if len(raw) < 64 or raw[:4] != _MAGIC:
        raise ChecksumError(f"{path}: not an RFSP container")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != _VERSION:
        raise ChecksumError(f"{path}: unsupported RFSP version {version}")
    n_frames, n_bins = struct.unpack_from("<QQ", raw, 16)
    bin_hz, f0_hz, t0, step = struct.unpack_from("<dddd", raw, 32)
    expected = 64 + 8 * n_frames * n_bins
    if len(raw) != expected:
        raise ChecksumError(f"{path}: truncated container ({len(raw)} != {expected} bytes)")
    grid = np.frombuffer(raw, dtype="<f8", count=n_frames * n_bins, offset=64)
    grid = grid.reshape(n_frames, n_bins).copy()
    return Spectrogram(
        grid=grid,
        frame_times=t0 + step * np.arange(n_frames),
        bin_hz=bin_hz,
        floor_db=float(grid.min()),
        ceil_db=float(grid.max()),
        f0_hz=f0_hz,
    )
