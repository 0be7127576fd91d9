"""Run configuration: one versioned JSON document drives every pipeline.

Unknown keys are rejected everywhere (fail-fast reproducibility): a
typo'd parameter must not silently fall back to a default. All
randomness flows from the single root seed through named substreams
("scene", "spad", "event"), so any module can be re-run in isolation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng, scene
from .errors import ConfigError
from .fusion import FusionConfig
from .spad import SensorParams

CONFIG_VERSION = 1

# declared desk-scale conversion: photons/sec per unit radiance per lux
PHOTON_RATE_PER_LUX = 100.0

_SCENE_KEYS = {
    "texture_pan": {"resolution", "duration", "illumination_lux", "illumination",
                    "amplitude_px", "n_legs"},
    "texture_static": {"resolution", "duration", "illumination_lux", "illumination"},
    "rotating_star": {"resolution", "duration", "illumination_lux", "illumination",
                      "spokes", "contrast", "omega"},
    "static_star": {"resolution", "duration", "illumination_lux", "illumination",
                    "spokes", "contrast"},
    "files": {"radiance_file", "trajectory_file", "duration",
              "illumination_lux", "illumination"},
}


@dataclass(frozen=True)
class SceneConfig:
    preset: str = "texture_pan"
    resolution: tuple[int, int] = (48, 48)
    duration: float = 0.04
    illumination: float = 1e4           # photons/sec per unit radiance
    amplitude_px: float = 6.0
    n_legs: int = 4
    spokes: int = 24
    contrast: float = 1.0
    omega: float = 30.0                 # rad/s
    radiance_file: str | None = None
    trajectory_file: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        preset = d.pop("preset", "texture_pan")
        if preset not in _SCENE_KEYS:
            raise ConfigError(f"unknown scene preset {preset!r}")
        extra = set(d) - _SCENE_KEYS[preset]
        if extra:
            raise ConfigError(f"unknown scene keys for preset {preset!r}: {sorted(extra)}")
        kwargs: dict = {"preset": preset}
        if "illumination_lux" in d and "illumination" in d:
            raise ConfigError("give illumination_lux or illumination, not both")
        if "illumination_lux" in d:
            kwargs["illumination"] = float(d.pop("illumination_lux")) * PHOTON_RATE_PER_LUX
        if "illumination" in d:
            kwargs["illumination"] = float(d.pop("illumination"))
        if "resolution" in d:
            res = d.pop("resolution")
            kwargs["resolution"] = (int(res[0]), int(res[1]))
        for key in ("duration", "amplitude_px", "contrast", "omega"):
            if key in d:
                kwargs[key] = float(d.pop(key))
        for key in ("n_legs", "spokes"):
            if key in d:
                kwargs[key] = int(d.pop(key))
        for key in ("radiance_file", "trajectory_file"):
            if key in d:
                kwargs[key] = str(d.pop(key))
        return cls(**kwargs)

    def build(self) -> scene.SceneClip:
        w, h = self.resolution
        if self.preset == "texture_pan":
            rad = scene.make_hdr_texture((w, h))
            traj = scene.zigzag_pan(self.duration, self.amplitude_px, self.n_legs)
            return scene.SceneClip(radiance=rad, trajectory=traj,
                                   illumination=self.illumination,
                                   duration=self.duration)
        if self.preset == "texture_static":
            rad = scene.make_hdr_texture((w, h))
            return scene.SceneClip(radiance=rad, trajectory=scene.Trajectory.identity(),
                                   illumination=self.illumination,
                                   duration=self.duration)
        if self.preset == "rotating_star":
            traj = scene.constant_rotation(self.duration, self.omega)
            return scene.make_siemens_star(self.spokes, (w, h), self.contrast,
                                           illumination=self.illumination,
                                           duration=self.duration, trajectory=traj)
        if self.preset == "static_star":
            return scene.make_siemens_star(self.spokes, (w, h), self.contrast,
                                           illumination=self.illumination,
                                           duration=self.duration)
        if self.preset == "files":
            if not (self.radiance_file and self.trajectory_file):
                raise ConfigError("files preset needs radiance_file and trajectory_file")
            rad = scene.load_radiance(self.radiance_file)
            traj = scene.load_trajectory(self.trajectory_file)
            return scene.SceneClip(radiance=rad, trajectory=traj,
                                   illumination=self.illumination,
                                   duration=self.duration)
        raise ConfigError(f"unknown scene preset {self.preset!r}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    sensor: SensorParams = field(default_factory=SensorParams)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    adaptive_sweep: tuple = ()          # u_threshold candidates for e2e sweeps

    def seed_for(self, stream: str) -> int:
        return rng.substream(self.seed, stream)

    def to_dict(self) -> dict:
        d = {"version": CONFIG_VERSION, "seed": self.seed,
             "scene": _scene_to_dict(self.scene),
             "sensor": self.sensor.to_dict(), "fusion": self.fusion.to_dict()}
        if self.adaptive_sweep:
            d["adaptive_sweep"] = list(self.adaptive_sweep)
        return d


def _scene_to_dict(sc: SceneConfig) -> dict:
    out = {"preset": sc.preset, "resolution": list(sc.resolution),
           "duration": sc.duration, "illumination": sc.illumination}
    if sc.preset == "texture_pan":
        out.update(amplitude_px=sc.amplitude_px, n_legs=sc.n_legs)
    elif sc.preset in ("rotating_star", "static_star"):
        out.update(spokes=sc.spokes, contrast=sc.contrast)
        if sc.preset == "rotating_star":
            out.update(omega=sc.omega)
    elif sc.preset == "files":
        out.update(radiance_file=sc.radiance_file, trajectory_file=sc.trajectory_file)
    return out


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    version = doc.pop("version", None)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {version!r}")
    known = {"seed", "scene", "sensor", "fusion", "adaptive_sweep"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    seed = int(doc.get("seed", 0))
    sc = SceneConfig.from_dict(doc.get("scene", {}))
    try:
        sensor = SensorParams.from_dict(doc.get("sensor", {}))
        fusion = FusionConfig.from_dict(doc.get("fusion", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    sweep = tuple(float(v) for v in doc.get("adaptive_sweep", ()))
    return RunConfig(seed=seed, scene=sc, sensor=sensor, fusion=fusion,
                     adaptive_sweep=sweep)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(doc)
