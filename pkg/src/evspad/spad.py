"""Passive SPAD sensor model.

Response model: a pixel that detected N photon counts during a gate of
length T_bin (quantum efficiency q, dead time tau) estimates flux as

    flux = N / (q * T_bin + tau * N)

which is monotone in N and softly saturates at 1/tau. The inverse maps
an expected flux back to expected counts and blows up at flux >= 1/tau.

Simulation model: binary (1-bit) gated frames. Per pixel per gate the
detection is Bernoulli(1 - exp(-(q*Phi + phi_dark) * T_bin)) with Phi
sampled at the gate midpoint; at most one detection is recorded per
gate, which subsumes dead times tau <= T_bin. All draws come from the
counter-based hash keyed by (seed, gate index, pixel index), so any
pixel or gate partitioning reproduces the same stream.

Measurement covariance for the fusion filter: R = R_bar / (flux + N_0),
strictly decreasing in flux with a finite R_bar/N_0 value at zero flux.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Iterator

import numpy as np

from . import rng
from .errors import ConfigError, DataError, SaturationError
from .io import read_header_payload, write_header_payload
from .scene import SceneClip, render_flux, render_flux_batch

# floor used whenever a nonpositive flux/count must pass through a log
EPS_LOG = 1e-3


@dataclass(frozen=True)
class SensorParams:
    """Physical constants for the SPAD, event, and reference camera models.

    Defaults: q and T_bin follow current passive SPAD hardware (40%
    quantum efficiency, 10 us gates at 100 kHz); contrast threshold 0.3
    with 0.03 per-pixel mismatch std; camera constants (T_exp, sigma_f,
    n_fwc) are calibrated so the analytic camera SNR curve turns positive
    near 1.7e3 photons/s and cuts off between 6.9e6 and 1.2e7; R_bar/N_0
    put the SPAD measurement variance near 0.01 log^2 at mid flux (1e4).
    """

    q: float = 0.4                 # quantum efficiency, (0, 1]
    T_bin: float = 1e-5            # binary gate exposure [s]
    tau: float = 1e-7              # dead time [s]
    phi_dark: float = 100.0        # dark count rate [photons/s]
    n_fwc: float = 33700.0         # camera full-well capacity [counts]
    T_exp: float = 1e-2            # camera exposure [s]
    sigma_f: float = math.sqrt(1700.0)  # camera read noise std [counts]
    c: float = 0.3                 # event contrast threshold [log units]
    sigma_theta: float = 0.03      # threshold mismatch std [log units]
    rho: float = 1e-6              # event refractory period [s]
    sigma_iso: float = 0.1         # isolated-pixel noise coeff [log/sqrt(s)]
    sigma_shot: float = math.sqrt(10.0)  # event shot-noise coeff
    phi_0: float = 1e3             # event shot-noise flux offset [photons/s]
    rho_ref: float = 1e-4          # refractory noise constant [log^2]
    R_bar: float = 110.0           # SPAD covariance scale [log^2 * photons/s]
    N_0: float = 1e3               # covariance flux offset [photons/s]

    def __post_init__(self):
        if not (0.0 < self.q <= 1.0):
            raise ConfigError("q must be in (0, 1]")
        # sigma_theta and rho admit 0 (no mismatch / no refractory), used
        # by noiseless reference runs
        for name in ("phi_dark", "sigma_theta", "rho"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        positive = ("T_bin", "tau", "n_fwc", "T_exp", "sigma_f", "c",
                    "sigma_iso", "sigma_shot", "phi_0", "rho_ref", "R_bar", "N_0")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.sigma_theta < self.c:
            raise ConfigError("sigma_theta must be < c")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SensorParams":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown sensor parameters: {sorted(extra)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def with_overrides(self, **kw) -> "SensorParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class SpadBinaryFrame:
    t_start: float
    bits: np.ndarray  # (H, W) uint8 in {0, 1}


@dataclass(frozen=True)
class SpadAggregateFrame:
    t_center: float          # anchor time f (window midpoint) [s]
    T: float                 # total exposure = n_bins * T_bin [s]
    counts: np.ndarray       # (H, W) integer photon counts
    n_bins: int

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if np.any(counts < 0) or np.any(counts > self.n_bins):
            raise DataError("aggregate counts must lie in [0, n_bins]")

    @property
    def t_window(self) -> tuple[float, float]:
        return (self.t_center - self.T / 2.0, self.t_center + self.T / 2.0)


def spad_response(counts, params: SensorParams):
    """Counts -> flux estimate [photons/s]; Eq-style soft saturation at 1/tau."""
    n = np.asarray(counts, dtype=np.float64)
    if np.any(n < 0):
        raise DataError("counts must be >= 0")
    out = n / (params.q * params.T_bin + params.tau * n)
    return out if out.ndim else float(out)


def spad_response_inverse(flux, params: SensorParams):
    """Flux [photons/s] -> expected counts. Requires flux * tau < 1."""
    phi = np.asarray(flux, dtype=np.float64)
    if np.any(phi < 0):
        raise DataError("flux must be >= 0")
    if np.any(phi * params.tau >= 1.0):
        raise SaturationError("flux at or beyond the 1/tau saturation limit")
    out = params.q * params.T_bin * phi / (1.0 - params.tau * phi)
    return out if out.ndim else float(out)


def detection_probability(flux, params: SensorParams):
    """Per-gate Bernoulli detection probability for given flux."""
    lam = (params.q * np.asarray(flux, dtype=np.float64) + params.phi_dark) * params.T_bin
    return -np.expm1(-lam)


def simulate_binary_frames(clip: SceneClip, params: SensorParams,
                           t0: float, t1: float, rng_seed: int) -> Iterator[SpadBinaryFrame]:
    """Yield binary frames covering [t0, t1) at the gate rate 1/T_bin."""
    if t1 - t0 < params.T_bin:
        raise DataError("simulation span shorter than one binary gate")
    n_frames = int(np.floor((t1 - t0) / params.T_bin + 1e-9))
    h, w = clip.radiance.shape
    pixel_index = np.arange(h * w, dtype=np.uint64).reshape(h, w)
    seed = rng.substream(rng_seed, "spad-binary")
    chunk = max(1, int(2 ** 21 // max(h * w, 1)))
    for k0 in range(0, n_frames, chunk):
        ks = np.arange(k0, min(k0 + chunk, n_frames))
        mids = t0 + (ks + 0.5) * params.T_bin
        fluxes = render_flux_batch(clip, mids)
        for j, k in enumerate(ks):
            p = detection_probability(fluxes[j], params)
            u = rng.uniform(seed, np.uint64(k), pixel_index)
            yield SpadBinaryFrame(t_start=t0 + float(k) * params.T_bin,
                                  bits=(u < p).astype(np.uint8))


def aggregate(frames: Iterable[SpadBinaryFrame], n_bins: int,
              params: SensorParams) -> SpadAggregateFrame:
    """Sum n_bins consecutive binary frames into one blurred exposure."""
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    it = iter(frames)
    counts = None
    t_first = None
    got = 0
    for frame in it:
        if counts is None:
            counts = frame.bits.astype(np.uint32)
            t_first = frame.t_start
        else:
            counts = counts + frame.bits
        got += 1
        if got == n_bins:
            break
    if got < n_bins:
        raise DataError(f"needed {n_bins} binary frames, stream had {got}")
    T = n_bins * params.T_bin
    return SpadAggregateFrame(t_center=t_first + T / 2.0, T=T,
                              counts=counts, n_bins=n_bins)


def aggregate_stream(frames: Iterable[SpadBinaryFrame], n_bins: int,
                     params: SensorParams) -> list[SpadAggregateFrame]:
    """Split a binary stream into back-to-back aggregate windows."""
    out = []
    it = iter(frames)
    while True:
        try:
            out.append(aggregate(it, n_bins, params))
        except DataError:
            break
    return out


def measurement_covariance(flux_estimate, params: SensorParams):
    """Flux-dependent SPAD measurement variance R [log^2 units]."""
    phi = np.asarray(flux_estimate, dtype=np.float64)
    if np.any(phi < 0):
        raise DataError("flux estimate must be >= 0")
    out = params.R_bar / (phi + params.N_0)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# persistence

def save_binary_frames(base_path, frames: list[SpadBinaryFrame],
                       params: SensorParams) -> None:
    """Packed little-endian bitmaps, one frame after another."""
    if not frames:
        raise DataError("no binary frames to save")
    h, w = frames[0].bits.shape
    payload = b"".join(np.packbits(f.bits.reshape(-1), bitorder="little").tobytes()
                       for f in frames)
    header = {"width": w, "height": h, "T_bin": params.T_bin,
              "t_start": frames[0].t_start, "n_frames": len(frames)}
    write_header_payload(base_path, header, payload, "bits")


def load_binary_frames(header_path) -> list[SpadBinaryFrame]:
    header, raw = read_header_payload(header_path)
    w, h = header["width"], header["height"]
    n = header["n_frames"]
    per_frame = (w * h + 7) // 8
    if len(raw) != per_frame * n:
        raise DataError("binary frame payload size mismatch")
    frames = []
    for k in range(n):
        chunk = np.frombuffer(raw[k * per_frame:(k + 1) * per_frame], dtype=np.uint8)
        bits = np.unpackbits(chunk, bitorder="little")[: w * h].reshape(h, w)
        frames.append(SpadBinaryFrame(t_start=header["t_start"] + k * header["T_bin"],
                                      bits=bits))
    return frames


def save_aggregates(base_path, aggs: list[SpadAggregateFrame]) -> None:
    if not aggs:
        raise DataError("no aggregate frames to save")
    h, w = aggs[0].counts.shape
    if any(a.counts.max(initial=0) > 0xFFFF for a in aggs):
        raise DataError("aggregate counts exceed 16-bit range")
    payload = b"".join(np.ascontiguousarray(a.counts, dtype="<u2").tobytes()
                       for a in aggs)
    header = {"width": w, "height": h, "n_frames": len(aggs),
              "n_bins": aggs[0].n_bins, "T": aggs[0].T,
              "t_centers": [a.t_center for a in aggs]}
    write_header_payload(base_path, header, payload, "u16")


def load_aggregates(header_path) -> list[SpadAggregateFrame]:
    header, raw = read_header_payload(header_path)
    w, h = header["width"], header["height"]
    n = header["n_frames"]
    arr = np.frombuffer(raw, dtype="<u2")
    if arr.size != w * h * n:
        raise DataError("aggregate payload size mismatch")
    arr = arr.reshape(n, h, w)
    return [SpadAggregateFrame(t_center=header["t_centers"][k], T=header["T"],
                               counts=arr[k].astype(np.uint32), n_bins=header["n_bins"])
            for k in range(n)]
