"""evspad: event camera + SPAD sensor fusion toolkit.

Simulates passive SPAD binary frames and event streams from a shared
HDR scene, recovers sharp latents from blurred SPAD aggregates using
events (EDI / NEDI), fuses both streams in a per-pixel asynchronous
Kalman filter, and evaluates PSNR / MTF / bandwidth trade-offs,
including uncertainty-triggered adaptive SPAD capture.
"""

from .deblur import (BlurObservation, LatentImage, edi_deblur, latent_at,
                     make_blur_observation, nedi_deblur, nedi_forward)
from .errors import ConfigError, DataError, EvspadError, SaturationError, SolverError
from .events import (Event, EventStream, NoiseBreakdown, event_noise,
                     integrate_events, simulate_events)
from .fusion import (FusionConfig, PixelFilterState, ReconstructedFrame,
                     adaptive_trigger, event_update, frame_update, fuse,
                     uncertainty)
from .metrics import MtfReport, bandwidth, mtf_from_star, psnr
from .scene import (FluxFrame, SceneClip, Trajectory, make_siemens_star,
                    render_flux)
from .snr import SnrCalibration, SnrCurveRequest, emit_curves, snr_camera, \
    snr_event, snr_spad
from .spad import (SensorParams, SpadAggregateFrame, SpadBinaryFrame, aggregate,
                   measurement_covariance, simulate_binary_frames, spad_response,
                   spad_response_inverse)

__version__ = "0.1.0"
