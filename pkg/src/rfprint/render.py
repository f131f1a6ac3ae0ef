"""Rendering: spectrograms to false-color RGB, time series to grayscale plots.

Spectrogram rendering supports two scale modes. Data-relative maps each
image's own min/max density onto the colormap (truncation then widens the
color resolution left for the strong components). Absolute mode pins a
configured floor/ceil so one color always means one density, which keeps
images of the same class comparable across SNR levels; trained corpora use
absolute mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidArg, IoError
from .signal import TimeSeriesSignal, TransientMarks
from .spectro import Spectrogram

__all__ = [
    "ColorMap",
    "RgbImage",
    "GrayImage",
    "RenderScale",
    "FULL_SPECTRUM",
    "colormap_apply",
    "render_timeseries",
    "save_png",
    "load_rgb_png",
    "load_gray_png",
    "image_filename",
]


@dataclass(frozen=True)
class ColorMap:
    """Piecewise-linear map from t in [0,1] to RGB, given as control points."""

    control_points: tuple[tuple[float, float, float, float], ...]

    def __post_init__(self):
        pts = self.control_points
        if len(pts) < 2:
            raise InvalidArg("colormap needs at least 2 control points")
        ts = [p[0] for p in pts]
        if ts[0] != 0.0 or ts[-1] != 1.0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidArg("control point positions must increase strictly from 0 to 1")
        for p in pts:
            if len(p) != 4 or any(not 0.0 <= c <= 1.0 for c in p[1:]):
                raise InvalidArg("channel values must lie in [0, 1]")

    def apply(self, t: np.ndarray) -> np.ndarray:
        """Map normalized values (any shape) to float RGB in [0,1], shape (..., 3)."""
        t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
        ts = np.array([p[0] for p in self.control_points])
        rgb = np.array([p[1:] for p in self.control_points])
        out = np.empty(t.shape + (3,))
        for ch in range(3):
            out[..., ch] = np.interp(t, ts, rgb[:, ch])
        return out


#: Even sweep through the visible range: black, blue, cyan, green, yellow, red, white.
FULL_SPECTRUM = ColorMap(
    control_points=(
        (0.0, 0.0, 0.0, 0.0),
        (1.0 / 6.0, 0.0, 0.0, 1.0),
        (2.0 / 6.0, 0.0, 1.0, 1.0),
        (3.0 / 6.0, 0.0, 1.0, 0.0),
        (4.0 / 6.0, 1.0, 1.0, 0.0),
        (5.0 / 6.0, 1.0, 0.0, 0.0),
        (1.0, 1.0, 1.0, 1.0),
    )
)


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB pixels, shape (height, width, 3); row 0 is frequency bin 0."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise InvalidArg("RGB pixels must be a uint8 array of shape (h, w, 3)")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArg("image must be at least 1x1")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class GrayImage:
    """8-bit single-channel pixels, shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.dtype != np.uint8:
            raise InvalidArg("gray pixels must be a uint8 array of shape (h, w)")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArg("image must be at least 1x1")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class RenderScale:
    """Density-to-color scale: per-image min/max, or a pinned absolute range."""

    mode: str = "relative"
    floor_db: float = 0.0
    ceil_db: float = 0.0

    def __post_init__(self):
        if self.mode not in ("relative", "absolute"):
            raise InvalidArg(f"unknown scale mode {self.mode!r}")
        if self.mode == "absolute" and not self.ceil_db >= self.floor_db:
            raise InvalidArg("absolute scale needs ceil_db >= floor_db")


def _quantize(channels: np.ndarray) -> np.ndarray:
    # Round half up, e.g. 127.5 -> 128.
    return np.clip(np.floor(channels * 255.0 + 0.5), 0, 255).astype(np.uint8)


def colormap_apply(
    spec: Spectrogram,
    cmap: ColorMap = FULL_SPECTRUM,
    scale: RenderScale = RenderScale(),
) -> RgbImage:
    """Render a spectrogram: image height = frequency bins, width = time frames."""
    if scale.mode == "absolute":
        lo, hi = scale.floor_db, scale.ceil_db
    else:
        lo, hi = spec.floor_db, spec.ceil_db
    if hi > lo:
        t = (spec.grid - lo) / (hi - lo)
    else:
        t = np.zeros_like(spec.grid)
    rgb = cmap.apply(np.clip(t, 0.0, 1.0))
    # grid is (time, freq); pixels are (freq rows, time columns).
    return RgbImage(pixels=_quantize(np.swapaxes(rgb, 0, 1)))


def _draw_segment(pixels: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> None:
    """Bresenham line of value 0 between two pixel centers (inclusive)."""
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        pixels[y, x] = 0
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def render_timeseries(
    signal: TimeSeriesSignal,
    width: int,
    height: int,
    marks: TransientMarks,
    amp_range: float,
    margin: int = 64,
) -> GrayImage:
    """Plot samples [t_b - margin, N) as a 1-pixel black polyline on white.

    The amplitude axis is pinned to [-amp_range, +amp_range] so the plotted
    height carries the absolute level; samples outside the range clip to it.
    No axes, ticks or labels are drawn.
    """
    if width < 8 or height < 8:
        raise InvalidArg(f"image must be at least 8x8, got {width}x{height}")
    if not amp_range > 0:
        raise InvalidArg("amp_range must be positive")
    start = max(marks.t_b - margin, 0)
    seg = signal.samples[start:]
    if seg.size < 2:
        raise InvalidArg("fewer than 2 samples to plot")

    xs = np.floor(np.arange(seg.size) * (width - 1) / (seg.size - 1) + 0.5).astype(np.intp)
    v = np.clip(seg, -amp_range, amp_range)
    ys = np.floor((1.0 - v / amp_range) * (height - 1) / 2.0 + 0.5).astype(np.intp)

    pixels = np.full((height, width), 255, dtype=np.uint8)
    for i in range(seg.size - 1):
        _draw_segment(pixels, xs[i], ys[i], xs[i + 1], ys[i + 1])
    return GrayImage(pixels=pixels)


def save_png(image: RgbImage | GrayImage, path: str | Path) -> None:
    """8-bit non-interlaced PNG; RGB for color images, single channel for gray."""
    mode = "RGB" if isinstance(image, RgbImage) else "L"
    try:
        Image.fromarray(image.pixels, mode).save(str(path), format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write PNG: {exc}") from exc


def load_rgb_png(path: str | Path) -> RgbImage:
    try:
        with Image.open(str(path)) as im:
            return RgbImage(pixels=np.asarray(im.convert("RGB"), dtype=np.uint8))
    except OSError as exc:
        raise IoError(f"cannot read PNG: {exc}") from exc


def load_gray_png(path: str | Path) -> GrayImage:
    try:
        with Image.open(str(path)) as im:
            return GrayImage(pixels=np.asarray(im.convert("L"), dtype=np.uint8))
    except OSError as exc:
        raise IoError(f"cannot read PNG: {exc}") from exc


def _format_db(value: float | None) -> str:
    if value is None:
        return "na"
    return f"{value:g}"


def image_filename(class_id: int, snr_db: float, cutoff_db: float | None, index: int) -> str:
    """Canonical sample file name: <class_id>_<snr_db>_<cutoff_db>_<index>.png."""
    return f"{class_id}_{_format_db(snr_db)}_{_format_db(cutoff_db)}_{index:04d}.png"
