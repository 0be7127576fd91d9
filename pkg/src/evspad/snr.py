"""Analytic SNR-vs-flux curves for camera, SPAD, and event sensors.

Camera (hard full-well clip):

    SNR = 10 log10( flux / (q flux T_exp + sigma_f^2) )   for flux < n_fwc/(q T_exp)
        = -inf                                            otherwise

SPAD (soft saturation): the noise-to-signal ratio is the RSS of a
dark/efficiency term, an integration term, and a dead-time term, all
with a single dead time tau:

    x = q flux tau
    A = phi_dark/flux + q (1+x) exp(-x)
    B = (1+x) / (q flux T_int)
    C = (1+x) / (1 - x^2)
    SNR = -10 log10( (A^2 + B^2 + C^2) / nsr_norm )

C >= 1 for all flux, so without normalization the curve stays below
0 dB; `nsr_norm` plus the curve-specific (tau, phi_dark, T_int) are
calibrated once against the digitized reference data shipped in
data/fig3a_reference.csv (see scripts/calibrate_snr.py, which rederives
every frozen constant below and checks them against the reference).
The domain ends where x >= 1; points beyond are truncated (-inf, with a
mask available from `spad_domain_mask`).

Event sensor, for a relative intensity change delta_phi:

    SNR = 10 log10( P_e * (delta_phi / c) / N(flux) )
    P_e = 0 if delta_phi < c else 1 - exp(-(delta_phi - c)/sigma_theta * pe_scale)
    N(flux) = noise_a / (flux + noise_b) + noise_floor

Raw API values are unclipped; curve emission clips finite values at
0 dB to mirror the reference plotting convention, while -inf rows are
written as the literal "-inf".
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError, DataError
from .io import atomic_write_text
from .spad import SensorParams


@dataclass(frozen=True)
class SnrCalibration:
    """Curve-lane constants frozen by scripts/calibrate_snr.py."""

    tau_snr: float = 2.5e-12        # dead time used by the SNR curve [s]
    phi_dark_snr: float = 1.5e4     # dark rate used by the SNR curve [ph/s]
    T_int: float = 1e-2             # integration time in the B term [s]
    nsr_norm: float = 36692.22054203706   # averaging normalization
    pe_scale: float = 1.0           # trigger-probability sharpness
    noise_a: float = 248.21446979513678   # static-noise shot term
    noise_b: float = 35.5624552611081     # static-noise flux offset
    noise_floor: float = 0.009373987080687525  # static-noise floor

    def with_overrides(self, **kw) -> "SnrCalibration":
        return replace(self, **kw)


DEFAULT_CALIBRATION = SnrCalibration()


@dataclass(frozen=True)
class SnrCurveRequest:
    flux: np.ndarray
    sensor: str                      # "camera" | "spad" | "event" | "all"
    delta_phi: tuple = (0.3, 1.0)    # relative changes, event curves only
    params: SensorParams = SensorParams()
    calibration: SnrCalibration = DEFAULT_CALIBRATION

    def __post_init__(self):
        flux = np.asarray(self.flux, dtype=np.float64)
        if flux.ndim != 1 or flux.size == 0:
            raise ConfigError("flux grid must be a nonempty 1-D array")
        if np.any(flux <= 0) or np.any(np.diff(flux) <= 0):
            raise ConfigError("flux grid must be positive and strictly increasing")
        if self.sensor not in ("camera", "spad", "event", "all"):
            raise ConfigError(f"unknown sensor {self.sensor!r}")
        if self.sensor in ("event", "all") and any(d <= 0 for d in self.delta_phi):
            raise ConfigError("delta_phi values must be positive")
        object.__setattr__(self, "flux", flux)


def load_reference() -> dict[str, np.ndarray]:
    """Digitized reference curves (flux plus four dB series)."""
    ref = importlib.resources.files("evspad.data").joinpath("fig3a_reference.csv")
    raw = np.genfromtxt(ref.open("r"), delimiter=",", names=True)
    return {name: np.asarray(raw[name], dtype=np.float64) for name in raw.dtype.names}


def default_flux_grid() -> np.ndarray:
    """The reference figure's 47-point log grid."""
    return load_reference()["flux"]


def snr_camera(flux, params: SensorParams) -> np.ndarray:
    phi = np.asarray(flux, dtype=np.float64)
    if np.any(phi <= 0):
        raise DataError("flux must be positive")
    cutoff = params.n_fwc / (params.q * params.T_exp)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(phi / (params.q * phi * params.T_exp + params.sigma_f ** 2))
    return np.where(phi < cutoff, db, -np.inf)


def camera_cutoff(params: SensorParams) -> float:
    return params.n_fwc / (params.q * params.T_exp)


def spad_domain_mask(flux, params: SensorParams,
                     cal: SnrCalibration = DEFAULT_CALIBRATION,
                     tau_readout: float | None = None) -> np.ndarray:
    """True where the dead-time term is defined (q^2 flux^2 tau^2 < 1)."""
    tau = cal.tau_snr if tau_readout is None else tau_readout
    phi = np.asarray(flux, dtype=np.float64)
    return (params.q * phi * tau) ** 2 < 1.0


def snr_spad(flux, params: SensorParams,
             cal: SnrCalibration = DEFAULT_CALIBRATION, *,
             tau_p: float | None = None, tau_d: float | None = None,
             tau_readout: float | None = None) -> np.ndarray:
    """SPAD SNR curve. Single dead time by default; the three time
    constants can be overridden separately for sensitivity studies.
    Points beyond the dead-time domain are truncated to -inf (see
    `spad_domain_mask`)."""
    phi = np.asarray(flux, dtype=np.float64)
    if np.any(phi <= 0):
        raise DataError("flux must be positive")
    tp = cal.tau_snr if tau_p is None else tau_p
    td = cal.tau_snr if tau_d is None else tau_d
    tr = cal.tau_snr if tau_readout is None else tau_readout
    q = params.q
    a = cal.phi_dark_snr / phi + q * (1.0 + q * phi * tp) * np.exp(-q * phi * td)
    b = (1.0 + q * phi * td) / (q * phi * cal.T_int)
    valid = (q * phi * tr) ** 2 < 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (1.0 + q * phi * td) / (1.0 - (q * phi * tr) ** 2)
        nsr2 = a ** 2 + b ** 2 + c ** 2
        db = -10.0 * np.log10(nsr2 / cal.nsr_norm)
    return np.where(valid, db, -np.inf)


def hard_trigger_probability(flux, delta_phi: float, params: SensorParams,
                             cal: SnrCalibration = DEFAULT_CALIBRATION) -> np.ndarray:
    """Default P_e model: zero below the contrast threshold, saturating above."""
    phi = np.asarray(flux, dtype=np.float64)
    if delta_phi < params.c:
        return np.zeros_like(phi)
    p = 1.0 - np.exp(-(delta_phi - params.c) / params.sigma_theta * cal.pe_scale)
    return np.full_like(phi, p)


def static_noise(flux, cal: SnrCalibration = DEFAULT_CALIBRATION) -> np.ndarray:
    phi = np.asarray(flux, dtype=np.float64)
    return cal.noise_a / (phi + cal.noise_b) + cal.noise_floor


def snr_event(flux, delta_phi: float, params: SensorParams,
              cal: SnrCalibration = DEFAULT_CALIBRATION,
              pe_model=None) -> np.ndarray:
    """Event SNR for a relative change delta_phi (e.g. 0.3 for 30%)."""
    if not delta_phi > 0:
        raise DataError("delta_phi must be positive")
    phi = np.asarray(flux, dtype=np.float64)
    if pe_model is None:
        pe = hard_trigger_probability(phi, delta_phi, params, cal)
    else:
        pe = np.asarray(pe_model(phi, delta_phi, params), dtype=np.float64)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(pe * (delta_phi / params.c) / static_noise(phi, cal))


def _curves_for_request(req: SnrCurveRequest) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    if req.sensor in ("camera", "all"):
        out["camera_db"] = snr_camera(req.flux, req.params)
    if req.sensor in ("spad", "all"):
        out["spad_db"] = snr_spad(req.flux, req.params, req.calibration)
    if req.sensor in ("event", "all"):
        for d in req.delta_phi:
            key = f"event_dphi{int(round(d * 100))}_db"
            out[key] = snr_event(req.flux, d, req.params, req.calibration)
    return out


def _emit_value(v: float) -> str:
    if np.isneginf(v):
        return "-inf"
    return f"{max(v, 0.0):.10g}"   # plot convention: clip finite values at 0


def emit_curves(request: SnrCurveRequest, path) -> dict[str, np.ndarray]:
    """Write (flux, dB...) rows as CSV; deterministic byte-for-byte."""
    curves = _curves_for_request(request)
    names = list(curves)
    lines = [",".join(["flux"] + names)]
    for i, phi in enumerate(request.flux):
        row = [f"{phi:.10g}"] + [_emit_value(curves[n][i]) for n in names]
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return curves
