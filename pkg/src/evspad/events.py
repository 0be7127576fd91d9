"""Event camera model.

Event generation follows the standard change-detector: each pixel holds
a reference log intensity L_ref and emits an event of polarity
sign(delta) when |log(flux + EPS_LOG) - L_ref| reaches its per-pixel
contrast threshold, after which L_ref moves by one threshold step and
the pixel goes quiet for the refractory period rho. Per-pixel thresholds
are Normal(c, sigma_theta^2), drawn once per run from the seed.

Timestamps live on an integer-microsecond grid (the supersampling step
is min(T_bin/10, rho), floored at 1 us), so streams serialize exactly
and determinism is bit-level.

The per-event process noise used by the fusion filter splits into
  shot      sigma_shot^2 / (flux + phi_0) * dt   (dominates at low flux)
  isolated  sigma_iso^2 * dt                     (hot pixels)
  refractory rho_ref if dt <= rho else 0
  threshold sigma_theta^2                        (mismatch, per event)
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ConfigError, DataError
from .io import atomic_write_text, read_header_payload, write_header_payload
from .scene import SceneClip, render_flux, render_flux_batch
from .spad import EPS_LOG, SensorParams

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"),
                        ("polarity", "i1"), ("pad", "V3")])


@dataclass(frozen=True)
class Event:
    t: float          # seconds (microsecond resolution)
    x: int
    y: int
    polarity: int     # +1 or -1


@dataclass(frozen=True)
class NoiseBreakdown:
    q_shot: float
    q_isol: float
    q_ref: float
    q_thresh: float

    @property
    def total(self) -> float:
        return self.q_shot + self.q_isol + self.q_ref + self.q_thresh


class EventStream:
    """Time-sorted event arrays plus the span and parameter snapshot.

    Stored struct-of-arrays: t_us int64, x/y int32, polarity int8.
    Sorted by t with ties broken by (y, x); violating input is rejected.
    """

    def __init__(self, t_us, x, y, polarity, t_span: tuple[float, float],
                 resolution: tuple[int, int], params: SensorParams):
        self.t_us = np.asarray(t_us, dtype=np.int64)
        self.x = np.asarray(x, dtype=np.int32)
        self.y = np.asarray(y, dtype=np.int32)
        self.polarity = np.asarray(polarity, dtype=np.int8)
        self.t_span = (float(t_span[0]), float(t_span[1]))
        self.resolution = (int(resolution[0]), int(resolution[1]))
        self.params = params
        n = self.t_us.size
        if not (self.x.size == self.y.size == self.polarity.size == n):
            raise DataError("event arrays must share one length")
        if n:
            if not np.all(np.isin(self.polarity, (-1, 1))):
                raise DataError("polarities must be +1 or -1")
            key = np.lexsort((self.x, self.y, self.t_us))
            if not np.array_equal(key, np.arange(n)):
                raise DataError("events must be sorted by t, ties by (y, x)")
            lo = int(self.t_us[0]) * 1e-6
            hi = int(self.t_us[-1]) * 1e-6
            if lo < self.t_span[0] - 1e-12 or hi > self.t_span[1] + 1e-12:
                raise DataError("event timestamps outside declared span")

    def __len__(self) -> int:
        return int(self.t_us.size)

    @property
    def t(self) -> np.ndarray:
        """Timestamps in seconds."""
        return self.t_us * 1e-6

    def __iter__(self):
        for t_us, x, y, p in zip(self.t_us, self.x, self.y, self.polarity):
            yield Event(t=int(t_us) * 1e-6, x=int(x), y=int(y), polarity=int(p))

    def pixel_index(self) -> np.ndarray:
        w = self.resolution[0]
        return self.y.astype(np.int64) * w + self.x

    def slice_time(self, t_a: float, t_b: float) -> "EventStream":
        """Events with t in (t_a, t_b]."""
        lo = np.searchsorted(self.t_us, _to_us(t_a), side="right")
        hi = np.searchsorted(self.t_us, _to_us(t_b), side="right")
        return EventStream(self.t_us[lo:hi], self.x[lo:hi], self.y[lo:hi],
                           self.polarity[lo:hi], (t_a, t_b), self.resolution,
                           self.params)

    def signed_count_map(self, t_a: float, t_b: float) -> np.ndarray:
        """Per-pixel signed polarity sum over (t_a, t_b] as an (H, W) array."""
        w, h = self.resolution
        out = np.zeros((h, w), dtype=np.int64)
        lo = np.searchsorted(self.t_us, _to_us(t_a), side="right")
        hi = np.searchsorted(self.t_us, _to_us(t_b), side="right")
        np.add.at(out, (self.y[lo:hi], self.x[lo:hi]),
                  self.polarity[lo:hi].astype(np.int64))
        return out


def _to_us(t: float) -> int:
    return int(round(t * 1e6))


def per_pixel_thresholds(params: SensorParams, resolution: tuple[int, int],
                         rng_seed: int) -> np.ndarray:
    """Per-pixel contrast thresholds, fixed for a run."""
    w, h = resolution
    z = rng.normal(rng.substream(rng_seed, "event-threshold"),
                   np.arange(h * w, dtype=np.uint64).reshape(h, w))
    return np.maximum(params.c + params.sigma_theta * z, 1e-3)


def simulate_events(clip: SceneClip, params: SensorParams, rng_seed: int,
                    step: float | None = None) -> EventStream:
    """Simulate the event stream for the whole clip.

    Supersampling step defaults to min(T_bin/10, rho), floored to the
    1 us timestamp grid; a coarser explicit step must still be <= rho.
    """
    if step is None:
        step = min(params.T_bin / 10.0, params.rho) if params.rho > 0 \
            else params.T_bin / 10.0
    if params.rho > 0 and step > params.rho + 1e-15:
        raise ConfigError("supersampling step must be <= refractory period")
    step_us = max(1, int(round(step * 1e6)))
    n_steps = int(np.floor(clip.duration * 1e6 / step_us))
    h, w = clip.radiance.shape
    c_p = per_pixel_thresholds(params, (w, h), rng_seed)
    rho_us = int(round(params.rho * 1e6))

    l_ref = np.log(render_flux(clip, 0.0).flux + EPS_LOG).reshape(-1)
    t_ok = np.zeros(h * w, dtype=np.int64)  # earliest next event time [us]

    ts, xs, ys, ps = [], [], [], []
    chunk = max(1, int(2 ** 21 // max(h * w, 1)))
    for k0 in range(1, n_steps + 1, chunk):
        ks = np.arange(k0, min(k0 + chunk, n_steps + 1), dtype=np.int64)
        lums = np.log(render_flux_batch(clip, ks * (step_us * 1e-6)) + EPS_LOG)
        lums = lums.reshape(ks.size, h * w)
        t_e, pix_e, pol_e = _scan_chunk(lums, ks, step_us, c_p.reshape(-1),
                                        rho_us, l_ref, t_ok)
        if t_e.size:
            ts.append(t_e)
            xs.append((pix_e % w).astype(np.int32))
            ys.append((pix_e // w).astype(np.int32))
            ps.append(pol_e)
    cat = (lambda parts, dt: np.concatenate(parts) if parts else np.empty(0, dt))
    return EventStream(cat(ts, np.int64), cat(xs, np.int32), cat(ys, np.int32),
                       cat(ps, np.int8), (0.0, clip.duration), (w, h), params)


def _scan_chunk_numpy(lums, ks, step_us, c_p, rho_us, l_ref, t_ok):
    """Reference chunk scanner; bit-identical to the jitted version."""
    ts, pixs, pols = [], [], []
    for j in range(ks.shape[0]):
        t_us = int(ks[j]) * step_us
        delta = lums[j] - l_ref
        fire = (np.abs(delta) >= c_p) & (t_us >= t_ok)
        if np.any(fire):
            idx = np.flatnonzero(fire)          # ascending = row-major (y, x)
            pol = np.where(delta[idx] > 0, 1, -1).astype(np.int8)
            l_ref[idx] += pol * c_p[idx]
            t_ok[idx] = t_us + rho_us
            ts.append(np.full(idx.size, t_us, dtype=np.int64))
            pixs.append(idx.astype(np.int64))
            pols.append(pol)
    if not ts:
        empty = np.empty(0, np.int64)
        return empty, empty.copy(), np.empty(0, np.int8)
    return np.concatenate(ts), np.concatenate(pixs), np.concatenate(pols)


try:  # optional: pure speedup, identical arithmetic and emission order
    import numba as _numba

    @_numba.njit(cache=True)
    def _scan_chunk_jit(lums, ks, step_us, c_p, rho_us, l_ref, t_ok,
                        t_out, pix_out, pol_out):  # pragma: no cover - thin
        m = 0
        n_steps, n_px = lums.shape
        for j in range(n_steps):
            t_us = ks[j] * step_us
            for i in range(n_px):
                d = lums[j, i] - l_ref[i]
                if (d >= c_p[i] or -d >= c_p[i]) and t_us >= t_ok[i]:
                    pol = 1 if d > 0 else -1
                    l_ref[i] += pol * c_p[i]
                    t_ok[i] = t_us + rho_us
                    t_out[m] = t_us
                    pix_out[m] = i
                    pol_out[m] = pol
                    m += 1
        return m

    def _scan_chunk(lums, ks, step_us, c_p, rho_us, l_ref, t_ok):
        cap = lums.size
        t_out = np.empty(cap, np.int64)
        pix_out = np.empty(cap, np.int64)
        pol_out = np.empty(cap, np.int8)
        m = _scan_chunk_jit(lums, ks, np.int64(step_us), c_p,
                            np.int64(rho_us), l_ref, t_ok,
                            t_out, pix_out, pol_out)
        return t_out[:m].copy(), pix_out[:m].copy(), pol_out[:m].copy()

except ImportError:  # pragma: no cover - exercised only without numba
    _scan_chunk = _scan_chunk_numpy


def event_noise_terms(dt, flux_estimate, params: SensorParams):
    """Vectorized total of the four per-event noise variances."""
    dt = np.asarray(dt, dtype=np.float64)
    phi = np.asarray(flux_estimate, dtype=np.float64)
    q_shot = params.sigma_shot ** 2 / (phi + params.phi_0) * dt
    q_isol = params.sigma_iso ** 2 * dt
    q_ref = np.where(dt > params.rho, 0.0, params.rho_ref)
    return q_shot + q_isol + q_ref + params.sigma_theta ** 2


def event_noise(event: Event, prev_t: float, flux_estimate: float,
                params: SensorParams) -> NoiseBreakdown:
    """Per-event process-noise covariance split by source."""
    if event.t < prev_t:
        raise DataError(f"event at t={event.t} precedes prev_t={prev_t}")
    if flux_estimate < 0:
        raise DataError("flux estimate must be >= 0")
    dt = event.t - prev_t
    return NoiseBreakdown(
        q_shot=params.sigma_shot ** 2 / (flux_estimate + params.phi_0) * dt,
        q_isol=params.sigma_iso ** 2 * dt,
        q_ref=0.0 if dt > params.rho else params.rho_ref,
        q_thresh=params.sigma_theta ** 2,
    )


def integrate_events(stream: EventStream, pixel: tuple[int, int],
                     t_a: float, t_b: float) -> int:
    """Signed polarity sum E for one pixel over (t_a, t_b].

    Antisymmetric: integrate_events(p, a, b) == -integrate_events(p, b, a).
    """
    if t_a > t_b:
        return -integrate_events(stream, pixel, t_b, t_a)
    x, y = pixel
    mask = (stream.x == x) & (stream.y == y)
    t_us = stream.t_us[mask]
    pol = stream.polarity[mask]
    lo = np.searchsorted(t_us, _to_us(t_a), side="right")
    hi = np.searchsorted(t_us, _to_us(t_b), side="right")
    return int(pol[lo:hi].astype(np.int64).sum())


# ---------------------------------------------------------------------------
# persistence

def _params_hash(params: SensorParams) -> str:
    import hashlib
    blob = json.dumps(params.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_events(base_path, stream: EventStream) -> None:
    rec = np.zeros(len(stream), dtype=EVENT_DTYPE)
    rec["t"] = stream.t_us.astype(np.uint64)
    rec["x"] = stream.x.astype(np.uint16)
    rec["y"] = stream.y.astype(np.uint16)
    rec["polarity"] = stream.polarity
    header = {"width": stream.resolution[0], "height": stream.resolution[1],
              "t_span_us": [_to_us(stream.t_span[0]), _to_us(stream.t_span[1])],
              "count": len(stream), "params_hash": _params_hash(stream.params),
              "params": stream.params.to_dict()}
    write_header_payload(base_path, header, rec.tobytes(), "evt")


def load_events(header_path) -> EventStream:
    header, raw = read_header_payload(header_path)
    rec = np.frombuffer(raw, dtype=EVENT_DTYPE)
    if rec.size != header["count"]:
        raise DataError("event payload count mismatch")
    span = (header["t_span_us"][0] * 1e-6, header["t_span_us"][1] * 1e-6)
    return EventStream(rec["t"].astype(np.int64), rec["x"], rec["y"],
                       rec["polarity"], span,
                       (header["width"], header["height"]),
                       SensorParams.from_dict(header["params"]))


def export_events_csv(path, stream: EventStream) -> None:
    lines = ["t_us,x,y,polarity"]
    lines += [f"{t},{x},{y},{p}" for t, x, y, p in
              zip(stream.t_us, stream.x, stream.y, stream.polarity)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def import_events_csv(path, t_span, resolution, params: SensorParams) -> EventStream:
    rows = np.genfromtxt(path, delimiter=",", names=True, dtype=np.int64)
    rows = np.atleast_1d(rows)
    return EventStream(rows["t_us"], rows["x"], rows["y"], rows["polarity"],
                       t_span, resolution, params)
