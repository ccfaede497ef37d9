"""Scene-directory IO and multi-frame tracking used by the CLI and scripts.

A scene directory holds ``calibration.json``, ``tape.json``,
``detections.json`` and optionally ``dots/`` plus ``masks/`` PGMs named
``cam{id}_frame{f}.pgm``. Tracking results go to ``tracks.json``.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from tapetrack.candidates import Blob, load_detections
from tapetrack.config import PipelineConfig
from tapetrack.geometry import CameraModel, load_calibration
from tapetrack.mrf.energies import MRFParams
from tapetrack.mrf.raster import I_MAX, CostRaster, build_cost_raster, read_pgm
from tapetrack.mrf.tracker import FrameResult, TrackerConfig, track_frame
from tapetrack.synth import SceneBundle, render_view
from tapetrack.tape import TapeTopology, load_tape

logger = logging.getLogger(__name__)


class MissingInputError(FileNotFoundError):
    code = "missing-input"

    def __init__(self, path, what):
        super().__init__(f"{what} not found: {path}")
        self.path = str(path)


@dataclass
class SceneInputs:
    cameras: list[CameraModel]
    topology: TapeTopology
    detections: dict[int, dict[int, list[Blob]]]
    raster_dir: Path | None


def resolve(path: str | None, scene_dir: Path, default: str) -> Path:
    return Path(path) if path else scene_dir / default


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingInputError(path, what)
    return path


def load_inputs(cfg: PipelineConfig, scene_dir: Path) -> SceneInputs:
    calib = _need(resolve(cfg.calibration, scene_dir, "calibration.json"), "calibration")
    tape = _need(resolve(cfg.tape, scene_dir, "tape.json"), "tape description")
    dets = _need(resolve(cfg.detections, scene_dir, "detections.json"), "detections")
    raster_dir = resolve(cfg.rasters, scene_dir, ".")
    if not ((raster_dir / "dots").is_dir() and (raster_dir / "masks").is_dir()):
        if cfg.rasters:
            raise MissingInputError(raster_dir, "raster directory (dots/ and masks/)")
        raster_dir = None
    return SceneInputs(
        _load_json_file(calib, load_calibration),
        _load_json_file(tape, load_tape),
        _load_json_file(dets, load_detections),
        raster_dir,
    )


class MalformedInputError(ValueError):
    code = "malformed-input"

    def __init__(self, path, detail, code=None):
        super().__init__(f"cannot read {path}: {detail}")
        self.path = str(path)
        if code:
            self.code = code


def _load_json_file(path: Path, loader):
    try:
        return loader(path)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
        code = getattr(exc, "code", None)
        raise MalformedInputError(path, exc, code if isinstance(code, str) else None) from exc


def load_rasters(raster_dir: Path | None, cameras: Sequence[CameraModel], frame: int) -> list[CostRaster]:
    """Cost rasters of every camera with both a dot image and a mask for ``frame``."""
    if raster_dir is None:
        return []
    out = []
    for cam in cameras:
        name = f"cam{cam.id}_frame{frame}.pgm"
        dot_path, mask_path = raster_dir / "dots" / name, raster_dir / "masks" / name
        if not (dot_path.exists() and mask_path.exists()):
            continue
        img, maxval = read_pgm(dot_path)
        mask, _ = read_pgm(mask_path)
        out.append(build_cost_raster(img * (I_MAX / maxval), mask > 0, cam))
    return out


def track_record(frame: int, topo: TapeTopology, result: FrameResult) -> dict:
    return {
        "frame": int(frame),
        "nodes": [
            {"row": r, "col": c, "x": float(p[0]), "y": float(p[1]), "z": float(p[2])}
            for (r, c), p in zip(topo.dots, np.asarray(result.positions))
        ],
        "confidence": result.confidence,
        "notes": list(result.notes),
    }


def _track_one(args) -> dict:
    frame, inputs, params, tracker = args
    rasters = load_rasters(inputs.raster_dir, inputs.cameras, frame)
    blobs = inputs.detections.get(frame, {})
    result = track_frame(blobs, inputs.cameras, inputs.topology, params, tracker, rasters, frame=frame)
    logger.info("frame %d: %s %s", frame, result.confidence, ",".join(result.notes))
    return track_record(frame, inputs.topology, result)


def track_frames(
    inputs: SceneInputs,
    frames: Sequence[int],
    params: MRFParams,
    tracker: TrackerConfig,
    jobs: int = 1,
) -> list[dict]:
    """Track records in ``frames`` order; results do not depend on ``jobs``."""
    work = [(f, inputs, params, tracker) for f in frames]
    if jobs <= 1 or len(work) <= 1:
        return [_track_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_track_one, work))


def write_tracks(records: Sequence[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(list(records), fh, indent=1)


def load_tracks(path: str | Path) -> list[dict]:
    with open(path) as fh:
        data = json.load(fh)
    return [data] if isinstance(data, dict) else data


def track_bundle(
    bundle: SceneBundle,
    params: MRFParams | None = None,
    tracker: TrackerConfig | None = None,
    frames: Sequence[int] | None = None,
    refine: bool = True,
) -> tuple[list[dict], list[FrameResult]]:
    """Track an in-memory synthetic scene, rendering rasters on the fly.

    Returns the track records together with the full per-frame results
    (selection, energy traces) for inspection.
    """
    params = params or MRFParams()
    tracker = tracker or TrackerConfig()
    records, results = [], []
    for f in bundle.frames if frames is None else frames:
        rasters = []
        if refine:
            for cam in bundle.cameras:
                image, mask = render_view(bundle.config, cam, bundle.truth, f, bundle.topology)
                rasters.append(build_cost_raster(image, mask, cam))
        result = track_frame(bundle.detections[f], bundle.cameras, bundle.topology, params, tracker, rasters, frame=f)
        records.append(track_record(f, bundle.topology, result))
        results.append(result)
    return records, results

