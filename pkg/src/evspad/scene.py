"""Ground-truth scene rendering.

A SceneClip bundles an HDR radiance map, a rigid 2-D trajectory of the
image plane, and an illumination scale (photons/sec per unit radiance).
`render_flux` resamples the radiance under the pose at time t; it is the
single source of truth feeding the SPAD simulator, the event simulator,
and the evaluation ground truth, so it must be deterministic and pure.

Conventions:
  * pose (dx, dy, theta) moves the *content*: a scene point at source
    pixel s appears at output pixel R(theta) @ (s - c) + c + (dx, dy),
    with c the image center and theta counter-clockwise in radians.
  * resampling is bilinear with replicate-edge padding, so out-of-frame
    samples hold the border value and flux never goes negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .io import (array_to_f32_bytes, f32_bytes_to_array, read_header_payload,
                 read_json, write_header_payload, write_json)


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear keyframes (t, dx, dy, theta), linearly interpolated.

    Poses are held constant outside the keyframe range, so a trajectory
    with a single keyframe is a static pose.
    """

    t: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        if t.ndim != 1 or t.size == 0:
            raise ConfigError("trajectory needs at least one keyframe")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("trajectory keyframe times must be strictly increasing")
        for name in ("t", "dx", "dy", "theta"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != t.shape:
                raise ConfigError("trajectory keyframe arrays must share one length")
            object.__setattr__(self, name, arr)

    @classmethod
    def identity(cls) -> "Trajectory":
        return cls(t=np.array([0.0]), dx=np.array([0.0]), dy=np.array([0.0]),
                   theta=np.array([0.0]))

    @classmethod
    def from_keyframes(cls, keyframes) -> "Trajectory":
        """keyframes: iterable of dicts with keys t, dx, dy, theta."""
        rows = sorted(keyframes, key=lambda k: k["t"])
        if not rows:
            raise ConfigError("empty trajectory")
        return cls(t=np.array([k["t"] for k in rows]),
                   dx=np.array([k["dx"] for k in rows]),
                   dy=np.array([k["dy"] for k in rows]),
                   theta=np.array([k["theta"] for k in rows]))

    def keyframes(self) -> list[dict]:
        return [{"t": float(t), "dx": float(dx), "dy": float(dy), "theta": float(th)}
                for t, dx, dy, th in zip(self.t, self.dx, self.dy, self.theta)]

    def pose(self, t: float) -> tuple[float, float, float]:
        return (float(np.interp(t, self.t, self.dx)),
                float(np.interp(t, self.t, self.dy)),
                float(np.interp(t, self.t, self.theta)))


@dataclass(frozen=True)
class SceneClip:
    """HDR radiance + trajectory + illumination over [0, duration] seconds."""

    radiance: np.ndarray                 # (H, W), linear, >= 0
    trajectory: Trajectory
    illumination: float                  # photons/sec per unit radiance
    duration: float                      # seconds
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rad = np.asarray(self.radiance, dtype=np.float64)
        if rad.ndim != 2:
            raise ConfigError("radiance must be a 2-D array")
        if np.any(rad < 0) or not np.all(np.isfinite(rad)):
            raise ConfigError("radiance must be finite and nonnegative")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not self.illumination > 0:
            raise ConfigError("illumination must be positive")
        object.__setattr__(self, "radiance", rad)

    @property
    def resolution(self) -> tuple[int, int]:
        """(width, height) in pixels."""
        h, w = self.radiance.shape
        return (w, h)


@dataclass(frozen=True)
class FluxFrame:
    t: float
    flux: np.ndarray  # (H, W) photons/sec, >= 0


def _bilinear_replicate(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample img at float coords with replicate-edge padding.

    Exact at integer coordinates: the fractional weights are exactly 0
    there, so no floating drift is introduced for identity poses.
    """
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


_GRID_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _centered_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    key = (h, w)
    if key not in _GRID_CACHE:
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) - (h - 1) / 2.0,
                             np.arange(w, dtype=np.float64) - (w - 1) / 2.0,
                             indexing="ij")
        _GRID_CACHE[key] = (yy, xx)
    return _GRID_CACHE[key]


def _sample_poses_numpy(img, dx, dy, ct, st, out):
    """Reference posed-resampling; bit-identical to the jitted version."""
    h, w = img.shape
    yy, xx = _centered_grid(h, w)
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    for k in range(out.shape[0]):
        ox = xx - dx[k]
        oy = yy - dy[k]
        sx = ct[k] * ox + st[k] * oy + cx
        sy = -st[k] * ox + ct[k] * oy + cy
        out[k] = _bilinear_replicate(img, sx, sy)


try:  # optional speedup; arithmetic and output identical to the fallback
    import numba as _numba

    @_numba.njit(cache=True)
    def _sample_poses_jit(img, dx, dy, ct, st, out):  # pragma: no cover - thin
        n, h, w = out.shape
        cy = (h - 1) / 2.0
        cx = (w - 1) / 2.0
        for k in range(n):
            for iy in range(h):
                oy = (iy - cy) - dy[k]
                for ix in range(w):
                    ox = (ix - cx) - dx[k]
                    sx = ct[k] * ox + st[k] * oy + cx
                    sy = -st[k] * ox + ct[k] * oy + cy
                    if sx < 0.0:
                        sx = 0.0
                    elif sx > w - 1.0:
                        sx = w - 1.0
                    if sy < 0.0:
                        sy = 0.0
                    elif sy > h - 1.0:
                        sy = h - 1.0
                    x0 = int(np.floor(sx))
                    y0 = int(np.floor(sy))
                    x1 = min(x0 + 1, w - 1)
                    y1 = min(y0 + 1, h - 1)
                    fx = sx - x0
                    fy = sy - y0
                    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
                    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
                    out[k, iy, ix] = top * (1.0 - fy) + bot * fy

    _sample_poses = _sample_poses_jit
except ImportError:  # pragma: no cover - exercised only without numba
    _sample_poses = _sample_poses_numpy


def render_flux(clip: SceneClip, t: float) -> FluxFrame:
    """Render the ground-truth flux map Phi(p, t) in photons/sec.

    Output pixel o samples the radiance at the inverse-posed source
    coordinate, times the illumination scale. Deterministic: identical
    inputs give bit-identical output.
    """
    if not (0.0 <= t <= clip.duration):
        raise DataError(f"t={t} outside clip duration [0, {clip.duration}]")
    return FluxFrame(t=t, flux=render_flux_batch(clip, np.array([t]))[0])


def render_flux_batch(clip: SceneClip, ts: np.ndarray) -> np.ndarray:
    """Flux maps for many times at once, shape (len(ts), H, W).

    Identical per-time output to render_flux; batching only removes
    python-level overhead, not arithmetic.
    """
    ts = np.asarray(ts, dtype=np.float64)
    if ts.size and not (ts.min() >= 0.0 and ts.max() <= clip.duration):
        raise DataError("batch times outside clip duration")
    h, w = clip.radiance.shape
    traj = clip.trajectory
    dx = np.interp(ts, traj.t, traj.dx)
    dy = np.interp(ts, traj.t, traj.dy)
    theta = np.interp(ts, traj.t, traj.theta)
    out = np.empty((ts.size, h, w), dtype=np.float64)
    static = (dx == 0.0) & (dy == 0.0) & (theta == 0.0)
    if static.any():
        out[static] = clip.radiance * clip.illumination
    moving = np.flatnonzero(~static)
    if moving.size:
        # invert: s = R(-theta) @ (o - c - d) + c, fused with the resample
        sampled = np.empty((moving.size, h, w), dtype=np.float64)
        _sample_poses(clip.radiance, dx[moving], dy[moving],
                      np.cos(theta[moving]), np.sin(theta[moving]), sampled)
        out[moving] = sampled * clip.illumination
    return out


def make_siemens_star(spokes: int, resolution, contrast: float, *,
                      illumination: float = 1.0, duration: float = 1.0,
                      trajectory: Trajectory | None = None) -> SceneClip:
    """Binary angular star target: `spokes` bright/dark sector pairs.

    The pattern is sign(sin(spokes * angle + phase)); the local spatial
    period along a circle of radius r is 2*pi*r/spokes px, so spatial
    frequency grows toward the center. Bright sectors have radiance 1,
    dark sectors 1 - contrast. A small fixed phase keeps spoke
    boundaries off the pixel axes, where floating-point sin() would
    otherwise classify boundary pixels inconsistently under rotation.
    """
    if spokes < 2:
        raise ConfigError("spokes must be >= 2")
    if not (0.0 < contrast <= 1.0):
        raise ConfigError("contrast must be in (0, 1]")
    if np.isscalar(resolution):
        w = h = int(resolution)
    else:
        w, h = (int(v) for v in resolution)
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    ang = np.arctan2(yy - cy, xx - cx)
    bright = np.sin(spokes * ang + 1e-3) >= 0.0
    radiance = np.where(bright, 1.0, 1.0 - contrast)
    meta = {"star": {"spokes": int(spokes), "center": [cx, cy],
                     "contrast": float(contrast)}}
    return SceneClip(radiance=radiance,
                     trajectory=trajectory or Trajectory.identity(),
                     illumination=illumination, duration=duration, meta=meta)


def make_hdr_texture(resolution, low: float = 0.02) -> np.ndarray:
    """Deterministic procedural HDR test chart in [low, 1].

    Mixes a smooth diagonal gradient, sinusoidal texture, and a grid of
    bright rectangles so there are both soft regions and hard edges for
    deblurring/PSNR comparisons. No RNG involved.
    """
    if np.isscalar(resolution):
        w = h = int(resolution)
    else:
        w, h = (int(v) for v in resolution)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    base = 0.25 + 0.2 * (xx + yy) / 2.0
    texture = 0.12 * np.sin(2 * np.pi * 5.3 * xx) * np.sin(2 * np.pi * 3.7 * yy)
    rad = base + texture
    # bright patches with hard edges
    blocks = ((0.1, 0.3, 0.15, 0.4, 1.0), (0.55, 0.8, 0.2, 0.45, 0.85),
              (0.3, 0.5, 0.6, 0.9, 0.7), (0.7, 0.92, 0.65, 0.85, 0.95))
    for y0, y1, x0, x1, level in blocks:
        mask = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
        rad = np.where(mask, level, rad)
    # a dark well to stretch dynamic range
    mask = (yy >= 0.75) & (yy < 0.95) & (xx >= 0.08) & (xx < 0.3)
    rad = np.where(mask, low, rad)
    return np.clip(rad, low, 1.0)


def linear_pan(duration: float, vx: float, vy: float = 0.0) -> Trajectory:
    """Constant-velocity translation in px/sec."""
    return Trajectory(t=np.array([0.0, duration]),
                      dx=np.array([0.0, vx * duration]),
                      dy=np.array([0.0, vy * duration]),
                      theta=np.array([0.0, 0.0]))


def constant_rotation(duration: float, omega: float) -> Trajectory:
    """Constant-rate rotation about the image center, omega in rad/sec."""
    return Trajectory(t=np.array([0.0, duration]),
                      dx=np.array([0.0, 0.0]), dy=np.array([0.0, 0.0]),
                      theta=np.array([0.0, omega * duration]))


def zigzag_pan(duration: float, amplitude: float, n_legs: int) -> Trajectory:
    """Back-and-forth diagonal pan: high speed, bounded excursion.

    Keeps content inside the frame while still producing substantial
    per-window motion blur; useful for deblurring benchmarks.
    """
    if n_legs < 1:
        raise ConfigError("n_legs must be >= 1")
    ts = np.linspace(0.0, duration, n_legs + 1)
    dx = np.array([amplitude * (i % 2) for i in range(n_legs + 1)], dtype=np.float64)
    dy = 0.5 * dx
    return Trajectory(t=ts, dx=dx, dy=dy, theta=np.zeros(n_legs + 1))


# ---------------------------------------------------------------------------
# persistence: portable raw radiance + trajectory JSON

def save_radiance(base_path, radiance: np.ndarray) -> None:
    rad = np.asarray(radiance, dtype=np.float64)
    h, w = rad.shape
    write_header_payload(base_path, {"width": w, "height": h, "dtype": "float32"},
                         array_to_f32_bytes(rad), "f32")


def load_radiance(header_path) -> np.ndarray:
    header, raw = read_header_payload(header_path)
    if header.get("dtype") != "float32":
        raise DataError(f"unsupported radiance dtype {header.get('dtype')!r}")
    return f32_bytes_to_array(raw, (header["height"], header["width"]))


def save_trajectory(path, trajectory: Trajectory) -> None:
    write_json(path, {"keyframes": trajectory.keyframes()})


def load_trajectory(path) -> Trajectory:
    obj = read_json(path)
    keys = obj["keyframes"] if isinstance(obj, dict) else obj
    for k in keys:
        extra = set(k) - {"t", "dx", "dy", "theta"}
        if extra:
            raise DataError(f"unknown trajectory keys: {sorted(extra)}")
    return Trajectory.from_keyframes(keys)
