"""Error metrics: point-to-point error, plane baselines and visibility reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from tapetrack.errors import AlignmentError, UnderdeterminedPlaneError

MAX_PLANES = 3


@dataclass
class FrameErrors:
    frame: int
    per_dot: dict[tuple[int, int], float]

    @property
    def mean(self) -> float:
        return math.fsum(self.per_dot.values()) / len(self.per_dot)


@dataclass
class MetricsReport:
    frames: list[int]
    mean_error: list[float]  # per frame
    per_dot: list[dict[tuple[int, int], float]]
    baselines: dict[int, list[float]] = field(default_factory=dict)  # n_planes -> per frame
    histogram: list[int] = field(default_factory=list)  # dots seen by 0..C cameras
    frame_histograms: list[list[int]] = field(default_factory=list)
    dot_counts: list[int] = field(default_factory=list)

    @property
    def overall_mean(self) -> float:
        return float(np.mean(self.mean_error)) if self.mean_error else float("nan")

    @property
    def pooled_mean(self) -> float:
        values = [v for d in self.per_dot for v in d.values()]
        return math.fsum(values) / len(values) if values else float("nan")


def _as_node_map(nodes) -> dict[tuple[int, int], np.ndarray]:
    if isinstance(nodes, Mapping):
        return {tuple(k): np.asarray(v, dtype=float) for k, v in nodes.items()}
    out = {}
    for n in nodes:
        key = (int(n["row"]), int(n["col"]))
        if key in out:
            raise AlignmentError(f"duplicate node id {key}")
        out[key] = np.array([n["x"], n["y"], n["z"]], dtype=float)
    return out


def point_error(tracks, truth, frame: int = 0) -> FrameErrors:
    """Euclidean distance per ``(row, col)`` node between a track and the truth.

    Both arguments are ``{(row, col): xyz}`` maps or lists of node records
    with ``row``, ``col``, ``x``, ``y``, ``z`` keys.
    """
    a, b = _as_node_map(tracks), _as_node_map(truth)
    if set(a) != set(b):
        missing = sorted(set(b) - set(a))
        extra = sorted(set(a) - set(b))
        raise AlignmentError(f"node ids differ: missing {missing}, unexpected {extra}")
    if not a:
        raise AlignmentError("no nodes to compare")
    return FrameErrors(frame, {k: float(np.linalg.norm(a[k] - b[k])) for k in sorted(a)})


# ---------------------------------------------------------------------------
# Plane baselines
# ---------------------------------------------------------------------------


def fit_plane(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total least-squares plane ``(centroid, unit normal)``."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 4:
        raise UnderdeterminedPlaneError(f"plane fit needs at least 4 points, got {len(points)}")
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    return centroid, vt[-1]


def level_groups(n_levels: int, n_planes: int) -> list[range]:
    """Split level indices into ``n_planes`` contiguous runs sharing their boundary levels."""
    if not 1 <= n_planes <= MAX_PLANES:
        raise ValueError(f"n_planes must lie in 1..{MAX_PLANES}")
    cuts = [round(k * (n_levels - 1) / n_planes) for k in range(n_planes + 1)]
    return [range(cuts[k], cuts[k + 1] + 1) for k in range(n_planes)]


def plane_baseline(keypoints, n_planes: int, truth_dots) -> float:
    """Mean distance from each truth dot to the nearest of ``n_planes`` fitted planes.

    ``keypoints`` has shape ``(levels, 2, 3)``: a left/right pair at each
    level along the spine, ordered along it.
    """
    kp = np.asarray(keypoints, dtype=float)
    if kp.ndim != 3 or kp.shape[1:] != (2, 3):
        raise ValueError("keypoints must have shape (levels, 2, 3)")
    dots = np.asarray(truth_dots, dtype=float).reshape(-1, 3)
    dist = np.full(len(dots), np.inf)
    for group in level_groups(len(kp), n_planes):
        centroid, normal = fit_plane(kp[list(group)].reshape(-1, 3))
        dist = np.minimum(dist, np.abs((dots - centroid) @ normal))
    return float(np.mean(dist))


def visibility_histogram(counts, camera_count: int) -> list[int]:
    counts = np.asarray(counts, dtype=int).ravel()
    return np.bincount(counts, minlength=camera_count + 1)[: camera_count + 1].tolist()


# ---------------------------------------------------------------------------
# Reports over track / truth files
# ---------------------------------------------------------------------------


def evaluate(tracks: Sequence[dict], truth: dict, frames: Sequence[int] | None = None) -> MetricsReport:
    """Compare track records against a truth document (as written by the scene generator)."""
    truth_frames = {int(f["frame"]): f for f in truth["frames"]}
    track_frames = {int(t["frame"]): t for t in tracks}
    if frames is None:
        frames = sorted(track_frames)
    camera_count = int(truth.get("camera_count", 0))
    report = MetricsReport(frames=list(frames), mean_error=[], per_dot=[])
    for n in range(1, MAX_PLANES + 1):
        report.baselines[n] = []
    hist_total = np.zeros(camera_count + 1, dtype=int)
    for f in frames:
        if f not in truth_frames:
            raise AlignmentError(f"frame {f} has no ground truth")
        if f not in track_frames:
            raise AlignmentError(f"frame {f} has no track")
        tf = truth_frames[f]
        errs = point_error(track_frames[f]["nodes"], tf["dots"], f)
        report.mean_error.append(errs.mean)
        report.dot_counts.append(len(errs.per_dot))
        report.per_dot.append(errs.per_dot)
        dots = np.array([[d["x"], d["y"], d["z"]] for d in tf["dots"]])
        kp = tf.get("keypoints")
        for n in range(1, MAX_PLANES + 1):
            report.baselines[n].append(plane_baseline(kp, n, dots) if kp else float("nan"))
        hist = visibility_histogram([d.get("visibility", 0) for d in tf["dots"]], camera_count)
        report.frame_histograms.append(hist)
        hist_total += hist
    report.histogram = hist_total.tolist()
    return report


def write_metrics_csv(report: MetricsReport, path: str | Path) -> None:
    camera_count = len(report.histogram) - 1
    header = ["frame", "mean_error_mm"] + [f"baseline{n}_mm" for n in range(1, MAX_PLANES + 1)]
    header += [f"vis{k}" for k in range(camera_count + 1)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, f in enumerate(report.frames):
            row = [f, f"{report.mean_error[i]:.6f}"]
            row += [f"{report.baselines[n][i]:.6f}" for n in range(1, MAX_PLANES + 1)]
            row += report.frame_histograms[i]
            writer.writerow(row)


def summary(report: MetricsReport) -> dict:
    """Overall means, both averaged per frame and pooled over all dots."""
    out = {
        "frames": len(report.frames),
        "mean_error_mm": report.overall_mean,
        "pooled_error_mm": report.pooled_mean,
        "visibility_histogram": report.histogram,
    }
    weights = np.asarray(report.dot_counts, dtype=float)
    for n, values in report.baselines.items():
        values = np.asarray(values, dtype=float)
        out[f"baseline{n}_mm"] = float(np.mean(values)) if len(values) else float("nan")
        out[f"pooled_baseline{n}_mm"] = float(values @ weights / weights.sum()) if len(values) else float("nan")
    return out


def write_summary(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(summary(report), fh, indent=2)
