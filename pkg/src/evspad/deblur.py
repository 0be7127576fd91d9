"""Event-guided deblurring of aggregated SPAD exposures.

A blurred exposure window [f - T/2, f + T/2] is summarized per pixel by
its mean response B (flux units, bounded by 1/tau). Between events the
latent per-gate count is constant, and an event at time u scales it by
exp(c * polarity) for all t >= u, so the latent trajectory is

    n(t) = n(f) * exp(c * E(t)),   E(t) = signed event count from f to t.

Two estimators of n(f):

* EDI: treats the response as linear, giving the closed form
  phi_edi = B * T / integral(exp(c E)), then maps that latent-flux value
  back to counts through the response inverse.
* NEDI: inverts the full nonlinear forward model
  B(n) = (n/T) * integral( exp(cE) / (q T_bin + tau n exp(cE)) )
  which is strictly increasing in n, by bracketed bisection seeded from
  the EDI estimate. All integrals are exact sums over inter-event
  segments (the integrand is constant between events).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, SolverError
from .events import EventStream, _to_us
from .io import array_to_f32_bytes, f32_bytes_to_array, read_header_payload, write_header_payload
from .spad import (EPS_LOG, SensorParams, SpadAggregateFrame, spad_response,
                   spad_response_inverse)

DEFAULT_TOL = 1e-6
MAX_BRACKET_DOUBLINGS = 64
MAX_BISECT_ITER = 200


@dataclass(frozen=True)
class LatentImage:
    f: float                    # anchor time (window midpoint) [s]
    n_latent: np.ndarray        # (H, W) latent counts per gate, >= 0
    method: str                 # "edi" | "nedi"
    T: float = 0.0              # exposure the estimate was recovered from
    saturated: np.ndarray | None = None  # pixels where B >= 1/tau

    def __post_init__(self):
        n = np.asarray(self.n_latent, dtype=np.float64)
        if not np.all(np.isfinite(n)) or np.any(n < 0):
            raise DataError("latent counts must be finite and nonnegative")
        object.__setattr__(self, "n_latent", n)


class WindowSegments:
    """Per-pixel piecewise-constant decomposition of exp(c * E(t)).

    For each pixel, the window splits at its event timestamps into
    segments with constant E. Stored padded: `g[i, k]` is exp(c*E) on
    segment k of pixel i and `length[i, k]` its duration (0 for padding).
    """

    def __init__(self, events: EventStream, f: float, T: float, c: float):
        a = f - T / 2.0
        b = f + T / 2.0
        w, h = events.resolution
        n_px = h * w
        # E at window start: -(signed count over (a, f])
        e0 = -events.signed_count_map(a, f).reshape(-1).astype(np.float64)
        lo = np.searchsorted(events.t_us, _to_us(a), side="right")
        hi = np.searchsorted(events.t_us, _to_us(b), side="right")
        t = events.t_us[lo:hi] * 1e-6
        pix = (events.y[lo:hi].astype(np.int64) * w + events.x[lo:hi])
        pol = events.polarity[lo:hi].astype(np.float64)
        order = np.lexsort((t, pix))
        t, pix, pol = t[order], pix[order], pol[order]
        counts = np.bincount(pix, minlength=n_px)
        m_max = int(counts.max()) if counts.size else 0

        within = np.arange(t.size) - np.repeat(np.cumsum(counts) - counts, counts)
        bounds = np.full((n_px, m_max + 2), b, dtype=np.float64)
        bounds[:, 0] = a
        bounds[pix, within + 1] = t
        steps = np.zeros((n_px, m_max + 1), dtype=np.float64)
        if t.size:
            steps[pix, within + 1] = pol
        e_seg = e0[:, None] + np.cumsum(steps, axis=1)
        self.g = np.exp(c * e_seg)
        self.length = np.diff(bounds, axis=1)
        self.shape = (h, w)
        self.T = T

    def exp_integral(self) -> np.ndarray:
        """integral of exp(c E(t)) dt over the window, per pixel (flat)."""
        return (self.g * self.length).sum(axis=1)

    def forward(self, n_flat: np.ndarray, params: SensorParams) -> np.ndarray:
        """Predicted mean response B for latent counts n (flat, >= 0)."""
        denom = params.q * params.T_bin + params.tau * n_flat[:, None] * self.g
        return n_flat / self.T * (self.length * self.g / denom).sum(axis=1)


@dataclass(frozen=True)
class BlurObservation:
    b: np.ndarray               # (H, W) mean response, flux units
    events: EventStream
    f: float
    T: float

    def __post_init__(self):
        a, z = self.f - self.T / 2.0, self.f + self.T / 2.0
        lo, hi = self.events.t_span
        if lo > a + 1e-12 or hi < z - 1e-12:
            raise DataError("event stream does not cover the exposure window")
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))

    def segments(self) -> WindowSegments:
        return WindowSegments(self.events, self.f, self.T, self.events.params.c)


def make_blur_observation(agg: SpadAggregateFrame, events: EventStream,
                          params: SensorParams) -> BlurObservation:
    """Normalize an aggregate frame to its mean per-gate response."""
    mean_counts = agg.counts.astype(np.float64) / agg.n_bins
    return BlurObservation(b=spad_response(mean_counts, params), events=events,
                           f=agg.t_center, T=agg.T)


def edi_response_estimate(obs: BlurObservation, params: SensorParams) -> np.ndarray:
    """Linear (EDI) latent estimate in response/flux units: B*T / integral."""
    seg = obs.segments()
    return (obs.b.reshape(-1) * obs.T / seg.exp_integral()).reshape(seg.shape)


def edi_deblur(obs: BlurObservation, params: SensorParams) -> LatentImage:
    """EDI estimate mapped to latent counts through the response inverse."""
    phi = edi_response_estimate(obs, params)
    limit = (1.0 - 1e-9) / params.tau
    saturated = phi >= limit
    counts = spad_response_inverse(np.minimum(phi, limit * (1 - 1e-12)), params)
    return LatentImage(f=obs.f, n_latent=counts, method="edi", T=obs.T,
                       saturated=saturated if saturated.any() else None)


def nedi_forward(n_f, events: EventStream, pixel: tuple[int, int], f: float,
                 T: float, params: SensorParams) -> float:
    """Predicted blur B for one pixel's latent count; monotone in n_f."""
    if n_f < 0:
        raise DataError("latent count must be >= 0")
    seg = WindowSegments(events, f, T, params.c)
    w = events.resolution[0]
    flat = pixel[1] * w + pixel[0]
    n = np.zeros(seg.g.shape[0])
    n[flat] = n_f
    return float(seg.forward(n, params)[flat])


def nedi_deblur(obs: BlurObservation, params: SensorParams,
                tol: float = DEFAULT_TOL) -> LatentImage:
    """Invert the nonlinear blur model per pixel by bracketed bisection.

    Convergence target: |forward(n) - B| <= tol * max(B, B_floor), with
    B_floor = 1e-3 / tau guarding the relative tolerance near zero.
    Deterministic; pixels with B >= 1/tau are flagged and take the EDI
    value instead.
    """
    seg = obs.segments()
    b = obs.b.reshape(-1).astype(np.float64)
    limit = 1.0 / params.tau
    saturated = b >= limit
    b_solve = np.where(saturated, 0.0, b)
    b_floor = 1e-3 * limit
    target = tol * np.maximum(b_solve, b_floor)

    edi = edi_deblur(obs, params)
    n_edi = edi.n_latent.reshape(-1)

    hi = np.maximum(n_edi, 1.0)
    active = ~saturated & (b_solve > 0)
    need = active & (seg.forward(hi, params) < b_solve)
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if not need.any():
            break
        hi[need] *= 2.0
        need &= seg.forward(hi, params) < b_solve
    if need.any():
        raise SolverError(f"{int(need.sum())} pixels not bracketable after "
                          f"{MAX_BRACKET_DOUBLINGS} doublings")

    lo = np.zeros_like(hi)
    n_out = np.zeros_like(hi)
    done = ~active  # B == 0 pixels solve to n = 0; saturated handled below
    for _ in range(MAX_BISECT_ITER):
        if done.all():
            break
        mid = 0.5 * (lo + hi)
        fm = seg.forward(mid, params)
        hit = ~done & (np.abs(fm - b_solve) <= target)
        n_out[hit] = mid[hit]
        done |= hit
        low_side = ~done & (fm < b_solve)
        lo[low_side] = mid[low_side]
        high_side = ~done & (fm >= b_solve)
        hi[high_side] = mid[high_side]
    if not done.all():
        raise SolverError(f"bisection did not converge for {int((~done).sum())} "
                          f"pixels within {MAX_BISECT_ITER} iterations")
    n_out[saturated] = n_edi[saturated]
    h, w = seg.shape
    return LatentImage(f=obs.f, n_latent=n_out.reshape(h, w), method="nedi",
                       T=obs.T,
                       saturated=saturated.reshape(h, w) if saturated.any() else None)


def latent_at(latent: LatentImage, events: EventStream, t: float) -> np.ndarray:
    """Propagate latent counts from the anchor f to time t via events."""
    lo, hi = events.t_span
    if not (lo - 1e-12 <= t <= hi + 1e-12):
        raise DataError(f"t={t} outside event stream span {events.t_span}")
    if t >= latent.f:
        e_map = events.signed_count_map(latent.f, t)
    else:
        e_map = -events.signed_count_map(t, latent.f)
    return latent.n_latent * np.exp(events.params.c * e_map)


# ---------------------------------------------------------------------------
# persistence

def save_latent(base_path, latent: LatentImage, tol: float = DEFAULT_TOL) -> None:
    h, w = latent.n_latent.shape
    header = {"width": w, "height": h, "f": latent.f, "T": latent.T,
              "method": latent.method, "solver_tol": tol}
    write_header_payload(base_path, header, array_to_f32_bytes(latent.n_latent), "f32")


def load_latent(header_path) -> LatentImage:
    header, raw = read_header_payload(header_path)
    arr = f32_bytes_to_array(raw, (header["height"], header["width"]))
    return LatentImage(f=header["f"], n_latent=arr, method=header["method"],
                       T=header["T"])
