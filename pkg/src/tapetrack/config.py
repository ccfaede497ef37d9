"""Single-file pipeline configuration with full defaulting."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from tapetrack.errors import TapeTrackError
from tapetrack.mrf.energies import MRFParams
from tapetrack.mrf.tracker import TrackerConfig
from tapetrack.synth import SceneConfig

SEED_ENV = "TAPE_TRACK_SEED"


class ConfigError(TapeTrackError):
    code = "invalid-config"


@dataclass
class PipelineConfig:
    """Everything the CLI needs; unset paths default to files inside the scene directory."""

    seed: int = 0
    tape: str | None = None
    calibration: str | None = None
    detections: str | None = None
    rasters: str | None = None  # directory holding dots/ and masks/
    truth: str | None = None
    tracks: str | None = None
    scene: SceneConfig = field(default_factory=SceneConfig)
    mrf: MRFParams = field(default_factory=MRFParams)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "PipelineConfig":
        self.seed = int(seed)
        self.scene.rng_seed = self.seed
        self.mrf.rng_seed = self.seed
        return self


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section {name!r}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    cfg = PipelineConfig(
        seed=int(data.get("seed", 0)),
        tape=data.get("tape"),
        calibration=data.get("calibration"),
        detections=data.get("detections"),
        rasters=data.get("rasters"),
        truth=data.get("truth"),
        tracks=data.get("tracks"),
        scene=_section(SceneConfig, data.get("scene"), "scene"),
        mrf=_section(MRFParams, data.get("mrf"), "mrf"),
        tracker=_section(TrackerConfig, data.get("tracker"), "tracker"),
    )
    # an explicit section seed wins over the shared one
    scene_seed = (data.get("scene") or {}).get("rng_seed")
    mrf_seed = (data.get("mrf") or {}).get("rng_seed")
    cfg.with_seed(cfg.seed)
    if scene_seed is not None:
        cfg.scene.rng_seed = int(scene_seed)
    if mrf_seed is not None:
        cfg.mrf.rng_seed = int(mrf_seed)
    return cfg


def load_config(path: str | Path | None, seed: int | None = None) -> PipelineConfig:
    """Read a config file (or defaults when ``path`` is None) and apply seed overrides.

    Precedence: ``seed`` argument, then the ``TAPE_TRACK_SEED`` environment
    variable, then the file.
    """
    if path is None:
        cfg = PipelineConfig()
    else:
        with open(path) as fh:
            cfg = config_from_dict(json.load(fh))
    env = os.environ.get(SEED_ENV)
    if seed is None and env not in (None, ""):
        try:
            seed = int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    if seed is not None:
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        cfg.with_seed(seed)
    return cfg
