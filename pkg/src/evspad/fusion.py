"""Per-pixel asynchronous Kalman fusion of events and deblurred SPAD frames.

State per pixel: log-intensity estimate n_hat and scalar variance p.
Events predict: n_hat moves by +/- c and p grows by the per-event
process noise (shot + isolated + refractory + threshold terms). SPAD
frames correct: the deblurred latent is converted to log flux and fused
with the discrete Kalman gain K = p / (p + r). Between updates n_hat is
constant; published snapshots carry the variance forward with the
time-proportional noise terms but do not commit that growth to state,
so a publish tick can never perturb subsequent event updates.

The uncertainty controller reads U = sum of per-pixel published
variances at each publish tick and requests the next available SPAD
window when U exceeds the threshold (one request in flight at a time;
the first window is always taken to initialize the filter).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .deblur import LatentImage, edi_deblur, latent_at, make_blur_observation, nedi_deblur
from .errors import ConfigError, DataError
from .events import Event, EventStream, event_noise
from .spad import (EPS_LOG, SensorParams, SpadAggregateFrame,
                   measurement_covariance, spad_response)


@dataclass(frozen=True)
class PixelFilterState:
    n_hat: float                 # log photons/sec
    p: float                     # variance, log^2 units
    t_last: float                # seconds of last update
    flux_est: float              # exp(n_hat), cached for covariance lookups

    def __post_init__(self):
        if not self.p > 0:
            raise DataError("filter variance must stay positive")


@dataclass(frozen=True)
class FusionConfig:
    publish_rate: float = 1000.0       # Hz
    adaptive: bool = False
    u_threshold: float = 1.0           # mean-variance trigger level (sum of p)
    n_bins_per_frame: int = 100
    tol: float = 1e-6                  # NEDI solver tolerance
    deblur_method: str = "nedi"        # "nedi" | "edi"
    covariance_update: str = "discrete"  # "discrete" | "eq19"

    def __post_init__(self):
        if not self.publish_rate > 0:
            raise ConfigError("publish_rate must be positive")
        if not self.u_threshold > 0:
            raise ConfigError("u_threshold must be positive")
        if self.n_bins_per_frame < 1:
            raise ConfigError("n_bins_per_frame must be >= 1")
        if self.deblur_method not in ("nedi", "edi"):
            raise ConfigError(f"unknown deblur method {self.deblur_method!r}")
        if self.covariance_update not in ("discrete", "eq19"):
            raise ConfigError(f"unknown covariance update {self.covariance_update!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown fusion parameters: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class ReconstructedFrame:
    t: float
    log_intensity: np.ndarray    # (H, W)
    variance: np.ndarray         # (H, W), > 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.log_intensity)):
            raise DataError("published log intensity must be finite")
        if not np.all(self.variance > 0):
            raise DataError("published variance must be positive")


def event_update(state: PixelFilterState, event: Event, params: SensorParams,
                 covariance_update: str = "discrete") -> PixelFilterState:
    """Apply one event to one pixel's filter state."""
    if event.t < state.t_last:
        raise DataError(f"event at t={event.t} precedes state time {state.t_last}")
    noise = event_noise(event, state.t_last, state.flux_est, params)
    if covariance_update == "eq19":
        dt = event.t - state.t_last
        r = measurement_covariance(state.flux_est, params)
        p = 1.0 / (1.0 / state.p + dt / r) + noise.total
    else:
        p = state.p + noise.total
    n_hat = state.n_hat + params.c * event.polarity
    return PixelFilterState(n_hat=n_hat, p=p, t_last=event.t,
                            flux_est=float(np.exp(n_hat)))


def frame_update(state: PixelFilterState, measurement: float, r: float,
                 t: float) -> PixelFilterState:
    """Fuse one deblurred-SPAD log measurement into one pixel's state.

    Non-finite measurements leave the state untouched (caller records
    the skip); r -> inf degenerates to no update.
    """
    if t < state.t_last:
        raise DataError(f"measurement at t={t} precedes state time {state.t_last}")
    if not r > 0:
        raise DataError("measurement variance must be positive")
    if not np.isfinite(measurement):
        return state
    k = state.p / (state.p + r)
    n_hat = state.n_hat + k * (measurement - state.n_hat)
    return PixelFilterState(n_hat=n_hat, p=(1.0 - k) * state.p, t_last=t,
                            flux_est=float(np.exp(n_hat)))


def uncertainty(p_field: np.ndarray) -> float:
    """Trace of the (diagonal) state covariance: sum of pixel variances."""
    return float(np.sum(p_field))


def adaptive_trigger(u: float, config: FusionConfig) -> bool:
    return u > config.u_threshold


@dataclass
class _FilterArrays:
    n_hat: np.ndarray
    p: np.ndarray
    t_last: np.ndarray
    flux_est: np.ndarray
    initialized: bool = False


@dataclass
class FusionReport:
    triggers: list = field(default_factory=list)   # {tick, u, triggered, frame_index}
    consumed_frames: list = field(default_factory=list)  # {index, t_center, t_arrival}
    n_events_processed: int = 0
    n_nonfinite_skipped: int = 0
    n_saturated_pixels: int = 0
    events_only: bool = False


@dataclass
class FusionResult:
    frames: list                 # ReconstructedFrame, ascending t
    report: FusionReport


def _apply_event_batch(arr: _FilterArrays, stream: EventStream, lo: int, hi: int,
                       params: SensorParams, covariance_update: str) -> None:
    """Vectorized per-pixel sequential chain for events [lo, hi).

    Grouping by pixel keeps every pixel's updates in time order while
    staying independent of any global processing order, so the result is
    identical for any pixel partitioning.
    """
    if hi <= lo:
        return
    w = stream.resolution[0]
    t = stream.t_us[lo:hi] * 1e-6
    pix = stream.y[lo:hi].astype(np.int64) * w + stream.x[lo:hi]
    pol = stream.polarity[lo:hi].astype(np.float64)
    order = np.lexsort((t, pix))
    t, pix, pol = t[order], pix[order], pol[order]

    n_flat = arr.n_hat.reshape(-1)
    p_flat = arr.p.reshape(-1)
    t_flat = arr.t_last.reshape(-1)

    new_group = np.r_[True, pix[1:] != pix[:-1]]
    starts = np.flatnonzero(new_group)
    group_id = np.cumsum(new_group) - 1
    cs = np.cumsum(pol)
    prefix_before = np.r_[0.0, cs[:-1]] - np.r_[0.0, cs[:-1]][starts][group_id]
    n_before = n_flat[pix] + params.c * prefix_before
    flux_before = np.exp(n_before)

    t_prev = np.empty_like(t)
    t_prev[1:] = t[:-1]
    t_prev[starts] = t_flat[pix[starts]]
    dt = t - t_prev

    terms = (params.sigma_shot ** 2 / (flux_before + params.phi_0) * dt
             + params.sigma_iso ** 2 * dt
             + np.where(dt > params.rho, 0.0, params.rho_ref)
             + params.sigma_theta ** 2)
    upix = pix[starts]
    if covariance_update == "eq19":
        # sequential information-form growth cannot be collapsed to one sum
        r_run = measurement_covariance(flux_before, params)
        bounds = np.r_[starts, t.size]
        for g in range(starts.size):
            p_val = p_flat[upix[g]]
            for i in range(bounds[g], bounds[g + 1]):
                p_val = 1.0 / (1.0 / p_val + dt[i] / r_run[i]) + terms[i]
            p_flat[upix[g]] = p_val
    else:
        p_flat[upix] += np.add.reduceat(terms, starts)
    n_flat[upix] += params.c * np.add.reduceat(pol, starts)
    ends = np.r_[starts[1:], t.size] - 1
    t_flat[upix] = t[ends]
    arr.flux_est.reshape(-1)[upix] = np.exp(n_flat[upix])


def _growth_rate(arr: _FilterArrays, params: SensorParams) -> np.ndarray:
    return (params.sigma_shot ** 2 / (arr.flux_est + params.phi_0)
            + params.sigma_iso ** 2)


def _measurement_from_latent(latent: LatentImage, events: EventStream,
                             t_arrival: float, params: SensorParams):
    """Propagate latent counts to arrival time; return (log flux, R, flux)."""
    n_arr = latent_at(latent, events, t_arrival)
    flux = spad_response(n_arr, params)
    z = np.log(np.maximum(flux, EPS_LOG))
    r = measurement_covariance(flux, params)
    return z, r, flux


def _apply_frame(arr: _FilterArrays, frame: SpadAggregateFrame,
                 events: EventStream, params: SensorParams,
                 config: FusionConfig, report: FusionReport) -> None:
    obs = make_blur_observation(frame, events, params)
    if config.deblur_method == "edi":
        latent = edi_deblur(obs, params)
    else:
        latent = nedi_deblur(obs, params, tol=config.tol)
    if latent.saturated is not None:
        report.n_saturated_pixels += int(latent.saturated.sum())
    t_arrival = frame.t_center + frame.T / 2.0
    z, r, _ = _measurement_from_latent(latent, events, t_arrival, params)
    finite = np.isfinite(z)
    report.n_nonfinite_skipped += int((~finite).sum())
    if not arr.initialized:
        # first frame pins the state: uninformative prior collapses onto it
        arr.n_hat[finite] = z[finite]
        arr.p[finite] = r[finite]
        arr.t_last[finite] = t_arrival
        arr.flux_est[finite] = np.exp(arr.n_hat[finite])
        arr.initialized = True
    else:
        k = arr.p / (arr.p + r)
        arr.n_hat[finite] += (k * (z - arr.n_hat))[finite]
        arr.p[finite] *= (1.0 - k)[finite]
        arr.t_last[finite] = t_arrival
        arr.flux_est[finite] = np.exp(arr.n_hat[finite])


def fuse(spad_frames, events: EventStream, params: SensorParams,
         config: FusionConfig) -> FusionResult:
    """Run the asynchronous filter over one clip.

    spad_frames: time-sorted SpadAggregateFrame sequence (the full-rate
    stream). In adaptive mode only windows requested by the uncertainty
    controller are consumed; the rest are never read (that is the
    bandwidth saving). Publishes a ReconstructedFrame at every
    1/publish_rate tick, causally: only data with timestamps <= tick.
    """
    frames = sorted(spad_frames, key=lambda fr: fr.t_center)
    report = FusionReport()
    t0, t1 = events.t_span
    if frames:
        w0 = frames[0].t_center - frames[0].T / 2.0
        w1 = frames[-1].t_center + frames[-1].T / 2.0
        if w1 < t0 or w0 > t1:
            raise DataError("SPAD stream and event stream do not overlap in time")
    else:
        warnings.warn("empty SPAD stream: running events-only, gain never applied")
        report.events_only = True

    w, h = events.resolution
    arr = _FilterArrays(
        n_hat=np.full((h, w), np.log(EPS_LOG)),
        p=np.ones((h, w)),
        t_last=np.full((h, w), t0),
        flux_est=np.full((h, w), EPS_LOG),
    )

    n_ticks = int(np.floor((t1 - t0) * config.publish_rate + 1e-9))
    ticks = [t0 + (k + 1) / config.publish_rate for k in range(n_ticks)]

    # (arrival time, frame index) schedule; adaptive mode fills it lazily
    if config.adaptive:
        pending: list[tuple[float, int]] = []
        next_frame_idx = 0
        if frames:  # initialization frame is always captured
            pending.append((frames[0].t_center + frames[0].T / 2.0, 0))
            next_frame_idx = 1
    else:
        pending = [(fr.t_center + fr.T / 2.0, i) for i, fr in enumerate(frames)]

    ev_cursor = 0
    out_frames = []

    def process_events_until(t: float) -> None:
        nonlocal ev_cursor
        hi = int(np.searchsorted(events.t_us, round(t * 1e6), side="right"))
        if hi > ev_cursor:
            _apply_event_batch(arr, events, ev_cursor, hi, params,
                               config.covariance_update)
            report.n_events_processed += hi - ev_cursor
            ev_cursor = hi

    for tick in ticks:
        while pending and pending[0][0] <= tick + 1e-12:
            t_arr, idx = pending.pop(0)
            process_events_until(t_arr)
            _apply_frame(arr, frames[idx], events, params, config, report)
            report.consumed_frames.append(
                {"index": idx, "t_center": frames[idx].t_center, "t_arrival": t_arr})
        process_events_until(tick)
        var_pub = arr.p + _growth_rate(arr, params) * np.maximum(tick - arr.t_last, 0.0)
        out_frames.append(ReconstructedFrame(t=tick, log_intensity=arr.n_hat.copy(),
                                             variance=var_pub))
        u = uncertainty(var_pub)
        triggered = False
        frame_index = None
        if config.adaptive and not pending:
            if adaptive_trigger(u, config):
                while (next_frame_idx < len(frames)
                       and frames[next_frame_idx].t_center - frames[next_frame_idx].T / 2.0
                       < tick - 1e-12):
                    next_frame_idx += 1
                if next_frame_idx < len(frames):
                    fr = frames[next_frame_idx]
                    pending.append((fr.t_center + fr.T / 2.0, next_frame_idx))
                    triggered = True
                    frame_index = next_frame_idx
                    next_frame_idx += 1
        report.triggers.append({"tick": tick, "u": u, "triggered": triggered,
                                "frame_index": frame_index})
    return FusionResult(frames=out_frames, report=report)
