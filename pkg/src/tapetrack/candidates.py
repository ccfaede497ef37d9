"""From per-camera blob detections to a merged 3D candidate cloud and its edge cloud."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from tapetrack.errors import TapeTrackError
from tapetrack.geometry import CameraModel, triangulate_pair

logger = logging.getLogger(__name__)

DEFAULT_TH1 = 2.0  # px, back-projection gate
DEFAULT_TH2 = 8.0  # mm, merge radius


@dataclass(frozen=True)
class Blob:
    camera_id: int
    blob_id: int
    center: tuple[float, float]
    radius: float


@dataclass(frozen=True, eq=False)
class CandidatePoint:
    position: np.ndarray
    cameras: frozenset[int]
    blobs: Mapping[int, int]
    normal: np.ndarray


@dataclass(frozen=True, eq=False)
class EdgeCloud:
    points: list[CandidatePoint]
    edges: list[tuple[int, int, float]]

    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.points]).reshape(-1, 3)


# ---------------------------------------------------------------------------
# Blob detection
# ---------------------------------------------------------------------------


def detect_blobs(
    raster: np.ndarray, threshold: float, min_area: float = 1.0, camera_id: int = 0
) -> list[Blob]:
    """Connected bright components with intensity-weighted centroids.

    Pixel ``(row, col)`` has centre coordinates ``(x=col, y=row)``.
    """
    img = np.asarray(raster, dtype=float)
    labels, count = ndimage.label(img >= threshold)
    if count == 0:
        return []
    index = np.arange(1, count + 1)
    areas = ndimage.sum_labels(np.ones_like(img), labels, index)
    centroids = ndimage.center_of_mass(img, labels, index)
    blobs = []
    for area, (cy, cx) in zip(areas, centroids):
        if area < min_area:
            continue
        blobs.append(Blob(camera_id, len(blobs), (float(cx), float(cy)), float(np.sqrt(area / np.pi))))
    return blobs


# ---------------------------------------------------------------------------
# Candidate points
# ---------------------------------------------------------------------------


def _reprojection_ok(point, blobs: Mapping[int, int], cams, lookup, th1) -> bool:
    for cid, bid in blobs.items():
        pix, depth = cams[cid].project_many(point)
        if depth <= 0:
            return False
        if np.linalg.norm(pix - lookup[cid][bid]) >= th1:
            return False
    return True


def _mean_normal(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a + b
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return a.copy()
    return n / norm


def build_candidates(
    blobs: Mapping[int, Sequence[Blob]] | Sequence[Blob],
    cameras: Sequence[CameraModel],
    th1: float = DEFAULT_TH1,
    th2: float = DEFAULT_TH2,
) -> list[CandidatePoint]:
    """Triangulate all cross-camera blob pairs, gate them and merge duplicates.

    Merging repeatedly fuses the globally closest mergeable pair (ties by
    lowest index pair) until no pair closer than ``th2`` whose midpoint
    reprojects within ``th1`` into all member views remains.
    """
    if len(cameras) < 2:
        raise TapeTrackError("need at least two cameras")
    if not isinstance(blobs, Mapping):
        grouped: dict[int, list[Blob]] = {}
        for b in blobs:
            grouped.setdefault(b.camera_id, []).append(b)
        blobs = grouped
    cams = {c.id: c for c in cameras}
    lookup = {
        cid: {b.blob_id: np.asarray(b.center, dtype=float) for b in blist}
        for cid, blist in blobs.items()
        if cid in cams
    }

    points: list[CandidatePoint] = []
    cam_ids = sorted(lookup)
    for ca, cb in itertools.combinations(cam_ids, 2):
        cam_a, cam_b = cams[ca], cams[cb]
        for ba in sorted(lookup[ca]):
            for bb in sorted(lookup[cb]):
                try:
                    p, residual = triangulate_pair(cam_a, cam_b, lookup[ca][ba], lookup[cb][bb])
                except TapeTrackError:
                    continue
                if residual >= th1:
                    continue
                normal = -(cam_a.view_direction(p) + cam_b.view_direction(p))
                normal /= np.linalg.norm(normal)
                points.append(CandidatePoint(p, frozenset((ca, cb)), {ca: ba, cb: bb}, normal))
    return merge_candidates(points, cams, lookup, th1, th2)


def merge_candidates(points, cams, lookup, th1, th2) -> list[CandidatePoint]:
    points = list(points)
    blocked: set[tuple[int, int]] = set()  # ids of pairs known to be unmergeable
    ids = list(range(len(points)))  # stable identity per point
    next_id = len(points)
    while len(points) > 1:
        pos = np.array([p.position for p in points])
        pairs = cKDTree(pos).query_pairs(th2, output_type="ndarray")
        if len(pairs) == 0:
            break
        dist = np.linalg.norm(pos[pairs[:, 0]] - pos[pairs[:, 1]], axis=1)
        order = np.lexsort((pairs[:, 1], pairs[:, 0], dist))
        merged = False
        for k in order:
            i, j = int(pairs[k, 0]), int(pairs[k, 1])
            if dist[k] >= th2:
                continue
            key = (ids[i], ids[j])
            if key in blocked:
                continue
            p1, p2 = points[i], points[j]
            if any(p1.blobs[c] != p2.blobs[c] for c in p1.cameras & p2.cameras):
                blocked.add(key)
                continue
            mid = 0.5 * (p1.position + p2.position)
            union = {**p1.blobs, **p2.blobs}
            if not _reprojection_ok(mid, union, cams, lookup, th1):
                blocked.add(key)
                continue
            p3 = CandidatePoint(mid, p1.cameras | p2.cameras, union, _mean_normal(p1.normal, p2.normal))
            points[i] = p3
            ids[i] = next_id
            next_id += 1
            del points[j]
            del ids[j]
            merged = True
            break
        if not merged:
            break
    return points


def prune_explained(points: Sequence[CandidatePoint], min_views: int = 3) -> list[CandidatePoint]:
    """Drop weakly supported points whose blobs already belong to a well supported one.

    A point seen by fewer than ``min_views`` cameras is removed when any of
    its blobs is also used by a point with at least ``min_views`` cameras:
    every blob images a single dot, so such a point is a mismatch.
    """
    owned = {(c, b) for p in points if len(p.cameras) >= min_views for c, b in p.blobs.items()}
    return [
        p
        for p in points
        if len(p.cameras) >= min_views or not any((c, b) in owned for c, b in p.blobs.items())
    ]


# ---------------------------------------------------------------------------
# Edge cloud
# ---------------------------------------------------------------------------


def build_edge_cloud(points: Sequence[CandidatePoint], th3: float, th4: float) -> EdgeCloud:
    """All point pairs whose distance lies strictly inside ``(th3, th4)``."""
    if not th3 < th4:
        raise ValueError("th3 must be smaller than th4")
    points = list(points)
    if len(points) < 2:
        return EdgeCloud(points, [])
    pos = np.array([p.position for p in points])
    pairs = cKDTree(pos).query_pairs(th4, output_type="ndarray")
    edges = []
    for i, j in sorted(map(tuple, pairs.tolist())):
        length = float(np.linalg.norm(pos[i] - pos[j]))
        if th3 < length < th4:
            edges.append((i, j, length))
    return EdgeCloud(points, edges)


def default_thresholds(d_long: float, d_trans: float, topo=None) -> tuple[float, float]:
    """Edge length band around the nominal short-edge lengths."""
    if topo is not None:
        lengths = [e.length for e in topo.short_edges] or [d_long, d_trans]
    else:
        lengths = [d_long, d_trans]
    return 0.55 * min(lengths), 1.45 * max(lengths)


# ---------------------------------------------------------------------------
# Detections JSON
# ---------------------------------------------------------------------------


def detections_to_dict(frame: int, blobs: Mapping[int, Sequence[Blob]]) -> dict:
    return {
        "frame": int(frame),
        "cameras": [
            {
                "id": int(cid),
                "blobs": [
                    {"id": int(b.blob_id), "x": float(b.center[0]), "y": float(b.center[1]), "r": float(b.radius)}
                    for b in blobs[cid]
                ],
            }
            for cid in sorted(blobs)
        ],
    }


def detections_from_dict(data: dict) -> tuple[int, dict[int, list[Blob]]]:
    out = {}
    for cam in data["cameras"]:
        cid = int(cam["id"])
        out[cid] = [
            Blob(cid, int(b["id"]), (float(b["x"]), float(b["y"])), float(b["r"])) for b in cam["blobs"]
        ]
    return int(data["frame"]), out


def load_detections(path: str | Path) -> dict[int, dict[int, list[Blob]]]:
    """Read ``detections.json``: a list of per-frame objects (or a single one)."""
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    frames = {}
    for entry in data:
        frame, blobs = detections_from_dict(entry)
        frames[frame] = blobs
    return frames
