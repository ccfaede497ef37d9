"""Per-frame tracking: detections to candidate cloud, edge selection, MRF1 then MRF2."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from tapetrack.blp import EdgeSelection, build_problem, solve_selection
from tapetrack.candidates import (
    DEFAULT_TH1,
    DEFAULT_TH2,
    Blob,
    CandidatePoint,
    build_candidates,
    build_edge_cloud,
    default_thresholds,
    prune_explained,
)
from tapetrack.errors import TapeTrackError
from tapetrack.geometry import (
    DEFAULT_SMOOTHING_RADIUS,
    CameraModel,
    NormalField,
    SpineCurve,
    fit_curve,
)
from tapetrack.mrf.energies import FrameContext, MRF1Model, MRF2Model, MRFParams
from tapetrack.mrf.pbp import PBPResult, run_pbp
from tapetrack.mrf.raster import CostRaster
from tapetrack.tape import TapeTopology, build_template

logger = logging.getLogger(__name__)

UP = (0.0, 0.0, 1.0)


@dataclass
class TrackerConfig:
    th1: float = DEFAULT_TH1  # px
    th2: float = DEFAULT_TH2  # mm
    th3: float | None = None  # mm, default from the topology's short edges
    th4: float | None = None
    prune_min_views: int = 3  # 0 keeps every triangulated candidate
    blp_max_nodes: int | None = 200_000
    floor_fraction: float = 0.5
    smoothing_radius: float = DEFAULT_SMOOTHING_RADIUS
    normal_radius: float = 30.0  # mm, neighbourhood of the local plane fit
    normal_source: str = "local-plane"  # or "view"
    refine_context: bool = True  # rebuild curve and normals from MRF1's result for MRF2

    def __post_init__(self):
        if self.normal_source not in ("local-plane", "view"):
            raise ValueError(f"unknown normal_source {self.normal_source!r}")

    def thresholds(self, topo: TapeTopology) -> tuple[float, float]:
        lo, hi = default_thresholds(topo.d_target_long, topo.d_target_trans, topo)
        return (lo if self.th3 is None else self.th3), (hi if self.th4 is None else self.th4)


@dataclass
class FrameResult:
    positions: np.ndarray
    confidence: str = "normal"
    notes: list[str] = field(default_factory=list)
    selection: EdgeSelection | None = None
    feasibility_points: np.ndarray | None = None
    mrf1: PBPResult | None = None
    mrf2: PBPResult | None = None

    @property
    def energy_traces(self) -> list[list[float]]:
        return [r.energy_trace for r in (self.mrf1, self.mrf2) if r is not None]


# ---------------------------------------------------------------------------
# Curve and normals
# ---------------------------------------------------------------------------


def local_plane_normals(positions: np.ndarray, reference: np.ndarray, radius: float) -> np.ndarray:
    """Normal of the best-fit plane around each point, oriented like ``reference``.

    Points with fewer than three neighbours within ``radius`` (itself
    included) fall back to their reference normal.
    """
    positions = np.asarray(positions, dtype=float)
    reference = np.asarray(reference, dtype=float).reshape(-1, 3)
    if len(positions) == 0:
        return reference.copy()
    tree = cKDTree(positions)
    out = reference / np.linalg.norm(reference, axis=1, keepdims=True)
    for k, nb in enumerate(tree.query_ball_point(positions, radius)):
        if len(nb) < 3:
            continue
        local = positions[nb] - positions[nb].mean(axis=0)
        _, _, vt = np.linalg.svd(local, full_matrices=False)
        n = vt[-1]
        if n @ reference[k] < 0:
            n = -n
        out[k] = n
    return out


def facing_normal(cameras: Sequence[CameraModel]) -> np.ndarray:
    n = -np.sum([c.forward for c in cameras], axis=0)
    return n / np.linalg.norm(n)


def fallback_curve(cameras: Sequence[CameraModel], half_length: float) -> SpineCurve:
    """Straight vertical curve through the point closest to all optical axes."""
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for cam in cameras:
        f = cam.forward
        proj = np.eye(3) - np.outer(f, f)
        a += proj
        b += proj @ cam.center
    origin = np.linalg.lstsq(a, b, rcond=None)[0]
    return SpineCurve.straight(origin, UP, (-half_length, half_length))


def build_context(
    points: Sequence[CandidatePoint],
    positions: np.ndarray,
    config: TrackerConfig,
) -> tuple[SpineCurve, NormalField]:
    """Fit the spine curve to ``positions`` and the normal field to their normals."""
    view = np.array([p.normal for p in points]).reshape(-1, 3)
    if config.normal_source == "local-plane":
        normals = local_plane_normals(positions, view, config.normal_radius)
    else:
        normals = view
    curve = fit_curve(positions, UP)
    return curve, NormalField(positions, normals, config.smoothing_radius)


def _solution_context(positions, normals_hint, config: TrackerConfig) -> tuple[SpineCurve, NormalField]:
    normals = local_plane_normals(positions, normals_hint, config.normal_radius)
    return fit_curve(positions, UP), NormalField(positions, normals, config.smoothing_radius)


# ---------------------------------------------------------------------------
# Frame tracking
# ---------------------------------------------------------------------------


def track_frame(
    blobs: Mapping[int, Sequence[Blob]],
    cameras: Sequence[CameraModel],
    topo: TapeTopology,
    params: MRFParams | None = None,
    config: TrackerConfig | None = None,
    rasters: Sequence[CostRaster] | None = None,
    frame: int = 0,
) -> FrameResult:
    """Estimate all dot positions of one frame.

    ``rasters`` (one per camera, any order) enable the image refinement
    field; without them MRF1's result is returned with a ``no-refine`` note.
    ``frame`` keys the random streams, so frames are independent of the
    order they are processed in.
    """
    params = params or MRFParams()
    config = config or TrackerConfig()
    notes: list[str] = []
    confidence = "normal"

    cams_with_blobs = [c for c in cameras if blobs.get(c.id)]
    points: list[CandidatePoint] = []
    if len(cams_with_blobs) >= 2:
        points = build_candidates(blobs, cameras, config.th1, config.th2)
        if config.prune_min_views > 0:
            points = prune_explained(points, config.prune_min_views)

    th3, th4 = config.thresholds(topo)
    cloud = build_edge_cloud(points, th3, th4)
    selection = None
    feasible_idx: list[int] = []
    if cloud.edges:
        selection = solve_selection(build_problem(cloud, topo.n_e), config.blp_max_nodes, config.floor_fraction)
        if not selection.proven_optimal:
            notes.append("blp-budget")
        if selection.feasible:
            if selection.achieved_n_e < topo.n_e:
                notes.append(f"relaxed:{selection.achieved_n_e}")
            feasible_idx = sorted({v for k in selection.indices for v in cloud.edges[k][:2]})
    if not feasible_idx:
        confidence = "low"
        notes.append("infeasible")
        feasible_idx = list(range(len(points)))
    f_points = [points[i] for i in feasible_idx]
    f_pos = np.array([p.position for p in f_points]).reshape(-1, 3)

    half_length = 0.5 * (topo.n_row + 1) * topo.d_target_long
    try:
        curve, normals = build_context(f_points, f_pos, config)
    except TapeTrackError:
        confidence = "low"
        notes.append("fallback-curve")
        curve = fallback_curve(cameras, half_length)
        normals = NormalField(curve.origin[None, :], facing_normal(cameras)[None, :])

    template = build_template(curve, normals, topo)
    if template.extrapolated:
        notes.append("curve-too-short")
    initial = np.column_stack([template.node_positions, template.node_distances])

    if len(f_pos) == 0:
        notes.append("no-candidates")
        return FrameResult(template.node_positions.copy(), "low", notes, selection, f_pos)

    context = FrameContext(f_pos, curve, normals)
    mrf1 = run_pbp(MRF1Model(topo, context, params), initial, params, params.pbp_iterations_mrf1, stream=(frame, 0))
    positions = mrf1.states[:, :3].copy()

    usable = [r for r in (rasters or []) if not r.degenerate]
    if not usable:
        notes.append("no-refine")
        return FrameResult(positions, confidence, notes, selection, f_pos, mrf1)

    cam_by_id = {c.id: c for c in cameras}
    usable = [r for r in usable if r.camera_id in cam_by_id]
    if config.refine_context:
        hint = normals.query(positions)
        curve2, normals2 = _solution_context(positions, hint, config)
        context2 = FrameContext(f_pos, curve2, normals2)
    else:
        context2 = context
    model2 = MRF2Model(topo, context2, params, usable, [cam_by_id[r.camera_id] for r in usable], positions)
    widths = np.full(3, params.refine_slice_width)
    mrf2 = run_pbp(model2, positions, params, params.pbp_iterations_mrf2, stream=(frame, 1), widths=widths)
    return FrameResult(mrf2.states[:, :3].copy(), confidence, notes, selection, f_pos, mrf1, mrf2)
