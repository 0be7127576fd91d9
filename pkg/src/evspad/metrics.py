"""Quantitative evaluation: PSNR, Siemens-star MTF, bandwidth accounting.

MTF is measured by sampling intensity along circles of the star: the
circle for a requested spatial frequency nu (line pairs per mm at the
declared pixel pitch) has radius r = spokes / (2 pi nu pitch). The
modulation on a circle uses robust percentiles, (p95 - p5)/(p95 + p5),
so single hot pixels cannot blow past the [0, 1] range.

Bandwidth counts transmitted payload: 64 bits per event record, 1 bit
per pixel per binary frame, 16 per aggregate, 12 per conventional
frame. The kHz/pixel figure is samples per pixel per millisecond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

DEFAULT_PIXEL_PITCH_MM = 16.38e-3   # SwissSPAD2-like pitch

EVENT_BITS = 64
BINARY_BITS = 1
AGGREGATE_BITS = 16
CONVENTIONAL_BITS = 12


def psnr(reconstruction: np.ndarray, ground_truth: np.ndarray, peak: float) -> float:
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    a = np.asarray(reconstruction, dtype=np.float64)
    b = np.asarray(ground_truth, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not peak > 0:
        raise DataError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@dataclass(frozen=True)
class MtfReport:
    frequencies: np.ndarray      # lp/mm, increasing
    mtf: np.ndarray              # in [0, 1]
    radii_px: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.frequencies) <= 0):
            raise DataError("frequencies must be strictly increasing")
        if np.any(self.mtf < 0) or np.any(self.mtf > 1):
            raise DataError("mtf values must lie in [0, 1]")


def star_radius_for_frequency(freq_lpmm: float, spokes: int,
                              pitch_mm: float = DEFAULT_PIXEL_PITCH_MM) -> float:
    return spokes / (2.0 * math.pi * freq_lpmm * pitch_mm)


def star_frequency_for_radius(radius_px: float, spokes: int,
                              pitch_mm: float = DEFAULT_PIXEL_PITCH_MM) -> float:
    return spokes / (2.0 * math.pi * radius_px * pitch_mm)


def circle_samples(image: np.ndarray, center: tuple[float, float], radius: float,
                   n_samples: int) -> np.ndarray:
    """Bilinear intensity samples along a circle; circle must fit the image."""
    h, w = image.shape
    cx, cy = center
    if (cx - radius < 0 or cx + radius > w - 1
            or cy - radius < 0 or cy + radius > h - 1):
        raise DataError(f"circle radius {radius:.1f}px falls outside the image")
    ang = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    xs = cx + radius * np.cos(ang)
    ys = cy + radius * np.sin(ang)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def modulation_depth(values: np.ndarray) -> float:
    """(p95 - p5) / (p95 + p5) on nonnegative intensity samples."""
    v = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
    hi = float(np.percentile(v, 95))
    lo = float(np.percentile(v, 5))
    if hi + lo <= 0:
        return 0.0
    return min(max((hi - lo) / (hi + lo), 0.0), 1.0)


def mtf_from_star(image: np.ndarray, star_meta: dict, frequencies,
                  pitch_mm: float = DEFAULT_PIXEL_PITCH_MM,
                  samples_per_period: int = 24) -> MtfReport:
    """Measure MTF at the requested frequencies on a Siemens-star image.

    star_meta comes from the scene metadata: {"spokes": int,
    "center": [cx, cy]}; intensities must be linear (nonnegative).
    """
    freqs = np.asarray(frequencies, dtype=np.float64)
    spokes = int(star_meta["spokes"])
    cx, cy = star_meta["center"]
    vals = []
    radii = []
    for nu in freqs:
        r = star_radius_for_frequency(nu, spokes, pitch_mm)
        n = max(samples_per_period * spokes, 360)
        vals.append(modulation_depth(circle_samples(image, (cx, cy), r, n)))
        radii.append(r)
    return MtfReport(frequencies=freqs, mtf=np.asarray(vals),
                     radii_px=np.asarray(radii))


@dataclass(frozen=True)
class StreamStats:
    kind: str
    bits: int
    samples: int                 # total transmitted samples
    duration_s: float
    resolution: tuple[int, int]

    @property
    def bits_per_sec(self) -> float:
        return self.bits / self.duration_s

    @property
    def khz_per_pixel(self) -> float:
        """Samples per pixel per millisecond."""
        w, h = self.resolution
        return self.samples / (w * h) / (self.duration_s * 1e3)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bits": self.bits, "samples": self.samples,
                "duration_s": self.duration_s,
                "bits_per_sec": self.bits_per_sec,
                "khz_per_pixel": self.khz_per_pixel}


def event_stream_stats(n_events: int, resolution, duration_s: float) -> StreamStats:
    return StreamStats("event", EVENT_BITS * n_events, n_events,
                       duration_s, tuple(resolution))


def binary_stream_stats(resolution, n_frames: int, duration_s: float) -> StreamStats:
    w, h = resolution
    return StreamStats("spad_binary", BINARY_BITS * w * h * n_frames,
                       w * h * n_frames, duration_s, (w, h))


def aggregate_stream_stats(resolution, n_frames: int, duration_s: float) -> StreamStats:
    w, h = resolution
    return StreamStats("spad_aggregate", AGGREGATE_BITS * w * h * n_frames,
                       w * h * n_frames, duration_s, (w, h))


def conventional_stream_stats(resolution, n_frames: int, duration_s: float) -> StreamStats:
    w, h = resolution
    return StreamStats("conventional", CONVENTIONAL_BITS * w * h * n_frames,
                       w * h * n_frames, duration_s, (w, h))


@dataclass(frozen=True)
class BandwidthReport:
    streams: dict            # name -> StreamStats

    def to_dict(self) -> dict:
        return {name: s.to_dict() for name, s in self.streams.items()}

    def sample_ratio(self, a: str, b: str) -> float:
        """Per-pixel sample-rate ratio between two streams (packing-free)."""
        return self.streams[a].samples / self.streams[b].samples


def bandwidth(streams: dict) -> BandwidthReport:
    """streams: name -> StreamStats."""
    for name, s in streams.items():
        if s.bits < 0 or s.duration_s <= 0:
            raise DataError(f"invalid stream stats for {name!r}")
    return BandwidthReport(streams=dict(streams))
