"""Synthetic multi-camera scenes of a tape on a bending spine.

The spine runs along world +z through the origin and the tape faces -y,
towards an arc of cameras. Bending displaces the spine along the tape
normal by ``A * sin(omega * frame + phase) * (t / H)**2`` (a flexion-like
sagittal curve). Occluders are spheres falling through a cube in front of
the tape.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from skimage import draw

from tapetrack.candidates import Blob, detections_to_dict
from tapetrack.errors import SceneMisconfiguredError
from tapetrack.geometry import CameraModel, NormalField, SpineCurve, look_at, save_calibration
from tapetrack.mrf.raster import I_MAX, write_pgm
from tapetrack.mrf.sampling import substream
from tapetrack.tape import (
    DEFAULT_D_LONG,
    DEFAULT_D_TRANS,
    TapeTopology,
    _arc_table,
    build_template,
    build_topology,
    frame_at,
)

logger = logging.getLogger(__name__)

TAPE_NORMAL = np.array([0.0, -1.0, 0.0])
BACKGROUND_LEVEL = 20.0
TAPE_LEVEL = 100.0
OCCLUDER_LEVEL = 40.0

# substream purposes
_OCCLUDERS, _NOISE, _DROPOUT = 1, 2, 3


@dataclass
class SceneConfig:
    n_row: int = 9
    d_target_long: float = DEFAULT_D_LONG
    d_target_trans: float = DEFAULT_D_TRANS
    camera_count: int = 6
    arc_degrees: float = 180.0
    camera_distance: float = 1200.0  # mm
    camera_elevations: tuple[float, ...] = (0.0, -20.0, 20.0, -5.0, 25.0, 0.0)  # deg, cycled
    resolution: tuple[int, int] = (1224, 800)  # width, height
    focal: float = 2400.0  # px
    bend_amplitude: float = 80.0  # mm
    bend_frequency: float = 0.35  # rad per frame
    bend_phase: float = 0.6  # rad
    spine_half_length: float = 150.0  # mm
    frame_count: int = 10
    pixel_noise_sigma: float = 0.0  # px
    occluder_count: int = 0
    occluder_radius: float = 30.0  # mm
    occluder_box_center: tuple[float, float, float] = (0.0, -560.0, 0.0)
    occluder_box_size: float = 1000.0  # mm, edge of the cube
    occluder_speed: float = 40.0  # mm per frame, falling along -z
    fixed_occluders: tuple[tuple[float, float, float, float], ...] = ()  # (x, y, z, r)
    detection_dropout_prob: float = 0.0
    grazing_limit_deg: float = 75.0  # views further than this from the dot normal see nothing
    dot_diameter: float = 10.0  # mm
    tape_width: float = 50.0  # mm
    keypoint_levels: int = 7
    keypoint_offset: float = 40.0  # mm, lateral distance of keypoints from the spine
    rng_seed: int = 0

    def __post_init__(self):
        self.resolution = tuple(int(v) for v in self.resolution)
        self.camera_elevations = tuple(float(v) for v in self.camera_elevations) or (0.0,)
        self.occluder_box_center = tuple(float(v) for v in self.occluder_box_center)
        self.fixed_occluders = tuple(tuple(float(v) for v in o) for o in self.fixed_occluders)
        if self.camera_count < 2:
            raise ValueError("camera_count must be at least 2")
        dims = (
            self.d_target_long,
            self.d_target_trans,
            self.camera_distance,
            self.focal,
            self.spine_half_length,
            self.dot_diameter,
            self.tape_width,
            self.occluder_box_size,
            *self.resolution,
        )
        if any(v <= 0 for v in dims):
            raise ValueError("physical dimensions must be positive")
        if self.occluder_radius < 0 or self.occluder_count < 0 or self.pixel_noise_sigma < 0:
            raise ValueError("occluder radius, count and noise must be non-negative")
        if not 0.0 <= self.detection_dropout_prob <= 1.0:
            raise ValueError("detection_dropout_prob must lie in [0, 1]")
        if self.frame_count < 1:
            raise ValueError("frame_count must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class SceneTruth:
    dots: np.ndarray  # (F, N, 3)
    normals: np.ndarray  # (F, N, 3)
    visibility: np.ndarray  # (F, N) camera counts
    occluders: np.ndarray  # (F, K, 4) centre and radius
    keypoints: np.ndarray  # (F, L, 2, 3) left/right keypoints per level


@dataclass
class SceneBundle:
    config: SceneConfig
    topology: TapeTopology
    cameras: list[CameraModel]
    detections: dict[int, dict[int, list[Blob]]]
    truth: SceneTruth

    @property
    def frames(self) -> list[int]:
        return list(range(self.config.frame_count))

    def render(self, frame: int) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """``{camera_id: (dot_image, mask)}`` for one frame."""
        return {
            cam.id: render_view(self.config, cam, self.truth, frame, self.topology)
            for cam in self.cameras
        }


# ---------------------------------------------------------------------------
# Scene geometry
# ---------------------------------------------------------------------------


def make_cameras(config: SceneConfig) -> list[CameraModel]:
    """Cameras evenly spread over the arc, centred on the -y axis, aimed at the origin."""
    width, height = config.resolution
    if config.camera_count == 1:
        angles = np.zeros(1)
    else:
        half = 0.5 * config.arc_degrees
        angles = np.linspace(-half, half, config.camera_count)
    cams = []
    for k, a in enumerate(np.radians(angles)):
        elev = np.radians(config.camera_elevations[k % len(config.camera_elevations)])
        r = config.camera_distance
        center = np.array([r * np.cos(elev) * np.sin(a), -r * np.cos(elev) * np.cos(a), r * np.sin(elev)])
        cams.append(look_at(k, center, (0.0, 0.0, 0.0), focal=config.focal, width=width, height=height))
    return cams


def bend_at(config: SceneConfig, frame: int) -> float:
    return config.bend_amplitude * np.sin(config.bend_frequency * frame + config.bend_phase)


def spine_curve(config: SceneConfig, frame: int) -> SpineCurve:
    """Analytic spine of one frame: ``(0, -b (t/H)^2, t)`` for ``t`` in ``[-H, H]``."""
    h = config.spine_half_length
    coeffs = np.zeros((3, 4))
    coeffs[2, 1] = 1.0
    coeffs[1, 2] = -bend_at(config, frame) / h**2
    return SpineCurve(axis=np.array([0.0, 0.0, 1.0]), origin=np.zeros(3), coeffs=coeffs, t_range=(-h, h))


def surface_normals() -> NormalField:
    return NormalField(np.zeros((1, 3)), TAPE_NORMAL[None, :])


def occluder_tracks(config: SceneConfig) -> np.ndarray:
    """Sphere centres and radii per frame, shape ``(F, K, 4)``."""
    size = config.occluder_box_size
    lo = np.asarray(config.occluder_box_center) - 0.5 * size
    rng = substream(config.rng_seed, _OCCLUDERS)
    start = lo + size * rng.random((config.occluder_count, 3))
    out = []
    for f in range(config.frame_count):
        pos = start.copy()
        pos[:, 2] = lo[2] + np.mod(pos[:, 2] - lo[2] - config.occluder_speed * f, size)
        spheres = np.column_stack([pos, np.full(len(pos), config.occluder_radius)])
        fixed = np.array(config.fixed_occluders, dtype=float).reshape(-1, 4)
        out.append(np.vstack([spheres, fixed]))
    return np.array(out).reshape(config.frame_count, -1, 4)


def segment_hits_sphere(origin: np.ndarray, target: np.ndarray, spheres: np.ndarray) -> np.ndarray:
    """Whether the segment ``origin -> target`` meets any sphere, per target row.

    Solves ``|o + s (q - o) - c|^2 = r^2`` for ``s`` in ``[0, 1]``.
    """
    target = np.atleast_2d(target)
    if len(spheres) == 0:
        return np.zeros(len(target), dtype=bool)
    d = target - origin  # (N, 3)
    oc = origin - spheres[:, :3]  # (K, 3)
    a = np.sum(d * d, axis=1)[:, None]
    b = 2.0 * d @ oc.T
    c = np.sum(oc * oc, axis=1)[None, :] - spheres[:, 3][None, :] ** 2
    disc = b * b - 4 * a * c
    ok = disc >= 0
    root = np.sqrt(np.where(ok, disc, 0.0))
    s1 = (-b - root) / (2 * a)
    s2 = (-b + root) / (2 * a)
    hit = ok & (s2 >= 0) & (s1 <= 1) & (spheres[:, 3][None, :] > 0)
    return np.any(hit, axis=1)


def facing(normals: np.ndarray, view: np.ndarray, grazing_limit_deg: float = 90.0) -> np.ndarray:
    """Front-facing test ``n . v < -cos(limit) |v|``; a 90 degree limit is plain ``n . v < 0``."""
    limit = np.cos(np.radians(grazing_limit_deg)) if grazing_limit_deg < 90.0 else 0.0
    return np.sum(normals * view, axis=-1) < -limit * np.linalg.norm(view, axis=-1)


def visible_mask(
    dots: np.ndarray,
    normals: np.ndarray,
    cameras: Sequence[CameraModel],
    spheres: np.ndarray,
    grazing_limit_deg: float = 90.0,
) -> np.ndarray:
    """``(C, N)`` visibility: in frustum, front-facing and not blocked by a sphere."""
    out = np.zeros((len(cameras), len(dots)), dtype=bool)
    for k, cam in enumerate(cameras):
        pix, depth = cam.project_many(dots)
        inside = (depth > 0) & cam.in_frame(pix)
        front = facing(normals, dots - cam.center, grazing_limit_deg)
        out[k] = inside & front & ~segment_hits_sphere(cam.center, dots, spheres)
    return out


def compute_visibility(dots, normals, cameras, spheres, grazing_limit_deg: float = 90.0) -> np.ndarray:
    """Number of cameras seeing each dot."""
    spheres = np.asarray(spheres, dtype=float).reshape(-1, 4)
    mask = visible_mask(np.asarray(dots, float), np.asarray(normals, float), cameras, spheres, grazing_limit_deg)
    return mask.sum(axis=0)


def keypoints_for(config: SceneConfig, curve: SpineCurve, topo: TapeTopology) -> np.ndarray:
    """Left/right skin points at evenly spaced levels spanning the tape."""
    half = 0.5 * (topo.n_row - 1) * topo.d_target_long + 0.5 * topo.d_target_long
    levels = np.linspace(-half, half, config.keypoint_levels)
    normals = surface_normals()
    out = np.zeros((len(levels), 2, 3))
    for k, t in enumerate(levels):
        p = curve.position(t)
        _, _, b = frame_at(curve, normals, t, p)
        out[k, 0] = p - config.keypoint_offset * b
        out[k, 1] = p + config.keypoint_offset * b
    return out


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _sees_any(camera: CameraModel, points: np.ndarray) -> bool:
    pix, depth = camera.project_many(points)
    return bool(np.any((depth > 0) & camera.in_frame(pix)))


def generate_scene(config: SceneConfig) -> SceneBundle:
    topo = build_topology(config.n_row, config.d_target_long, config.d_target_trans)
    cameras = make_cameras(config)
    spheres = occluder_tracks(config)
    normals_field = surface_normals()
    dot_radius = 0.5 * config.dot_diameter

    all_dots, all_normals, all_vis, all_kp = [], [], [], []
    detections: dict[int, dict[int, list[Blob]]] = {}
    for f in range(config.frame_count):
        curve = spine_curve(config, f)
        template = build_template(curve, normals_field, topo)
        dots, dot_normals = template.node_positions, template.node_normals
        vis = visible_mask(dots, dot_normals, cameras, spheres[f], config.grazing_limit_deg)
        if not any(_sees_any(cam, dots) for cam in cameras):
            raise SceneMisconfiguredError(f"frame {f}: tape lies outside every camera frustum")
        noise_rng = substream(config.rng_seed, _NOISE, f)
        drop_rng = substream(config.rng_seed, _DROPOUT, f)
        frame_blobs = {}
        for k, cam in enumerate(cameras):
            pix, depth = cam.project_many(dots)
            noise = noise_rng.normal(0.0, 1.0, pix.shape) * config.pixel_noise_sigma
            dropped = drop_rng.random(len(dots)) < config.detection_dropout_prob
            blobs = []
            for n in np.flatnonzero(vis[k] & ~dropped):
                center = pix[n] + noise[n] if config.pixel_noise_sigma > 0 else pix[n]
                if not cam.in_frame(center[None, :])[0]:
                    continue
                radius = config.focal * dot_radius / depth[n]
                blobs.append(Blob(cam.id, len(blobs), (float(center[0]), float(center[1])), float(radius)))
            frame_blobs[cam.id] = blobs
        detections[f] = frame_blobs
        all_dots.append(dots)
        all_normals.append(dot_normals)
        all_vis.append(vis.sum(axis=0))
        all_kp.append(keypoints_for(config, curve, topo))

    truth = SceneTruth(
        dots=np.array(all_dots),
        normals=np.array(all_normals),
        visibility=np.array(all_vis),
        occluders=spheres,
        keypoints=np.array(all_kp),
    )
    return SceneBundle(config, topo, cameras, detections, truth)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _tape_outline(config: SceneConfig, curve: SpineCurve, topo: TapeTopology, samples: int = 48):
    """Centre, binormal and normal at samples along the tape including end margins."""
    half = 0.5 * (topo.n_row - 1) * topo.d_target_long + 0.5 * topo.d_target_long
    normals = surface_normals()
    t_tab, s_tab = _arc_table(curve)
    s_mid = 0.5 * s_tab[-1]
    rows = []
    for s in np.linspace(s_mid - half, s_mid + half, samples):
        t = float(np.interp(s, s_tab, t_tab))
        p = curve.position(t)
        _, n, b = frame_at(curve, normals, t, p)
        rows.append((p, b, n))
    return rows


def render_view(
    config: SceneConfig, camera: CameraModel, truth: SceneTruth, frame: int, topo: TapeTopology
) -> tuple[np.ndarray, np.ndarray]:
    """Dot image (intensity in ``[0, I_MAX]``) and tape mask seen by ``camera``.

    Dots are shaded as hemispherical bumps peaking at ``I_MAX`` on a grey
    tape; occluding spheres are drawn as dark discs and cut from the mask.
    """
    width, height = config.resolution
    image = np.full((height, width), BACKGROUND_LEVEL, dtype=float)
    mask = np.zeros((height, width), dtype=bool)
    curve = spine_curve(config, frame)
    outline = _tape_outline(config, curve, topo)
    w = 0.5 * config.tape_width
    for (p0, b0, n0), (p1, b1, n1) in zip(outline[:-1], outline[1:]):
        quad = np.array([p0 - w * b0, p0 + w * b0, p1 + w * b1, p1 - w * b1])
        center = quad.mean(axis=0)
        if not facing(0.5 * (n0 + n1), center - camera.center, config.grazing_limit_deg):
            continue
        pix, depth = camera.project_many(quad)
        if np.any(depth <= 0):
            continue
        rr, cc = draw.polygon(pix[:, 1], pix[:, 0], shape=mask.shape)
        mask[rr, cc] = True
    image[mask] = TAPE_LEVEL

    dots, normals = truth.dots[frame], truth.normals[frame]
    spheres = truth.occluders[frame]
    radius = 0.5 * config.dot_diameter
    pix, depth = camera.project_many(dots)
    front = facing(normals, dots - camera.center, config.grazing_limit_deg)
    inv_rot = camera.rotation.T
    for n in np.flatnonzero(front & (depth > 0)):
        r_px = camera.fx * radius / depth[n] + 2.0
        c0, c1 = int(np.floor(pix[n, 0] - r_px)), int(np.ceil(pix[n, 0] + r_px))
        r0, r1 = int(np.floor(pix[n, 1] - r_px)), int(np.ceil(pix[n, 1] + r_px))
        c0, r0 = max(c0, 0), max(r0, 0)
        c1, r1 = min(c1, width - 1), min(r1, height - 1)
        if c0 > c1 or r0 > r1:
            continue
        rows, cols = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        rays_cam = np.stack(
            [(cols - camera.cx) / camera.fx, (rows - camera.cy) / camera.fy, np.ones(cols.shape)], axis=-1
        )
        rays = rays_cam @ inv_rot.T
        denom = rays @ normals[n]
        lam = np.dot(dots[n] - camera.center, normals[n]) / np.where(np.abs(denom) < 1e-12, np.nan, denom)
        hit = camera.center + lam[..., None] * rays
        rho = np.linalg.norm(hit - dots[n], axis=-1) / radius
        inside = np.isfinite(rho) & (rho < 1.0) & (lam > 0)
        if not np.any(inside):
            continue
        bump = TAPE_LEVEL + (I_MAX - TAPE_LEVEL) * np.sqrt(np.clip(1.0 - rho**2, 0.0, 1.0))
        patch = image[r0 : r1 + 1, c0 : c1 + 1]
        patch[inside] = np.maximum(patch[inside], bump[inside])
        mask[r0 : r1 + 1, c0 : c1 + 1] |= inside

    # spheres in front of the tape, drawn as projected discs
    tape_depth = float(np.max(depth)) if len(depth) else np.inf
    for sphere in spheres:
        if sphere[3] <= 0:
            continue
        spix, sdepth = camera.project_many(sphere[:3])
        if sdepth <= sphere[3] or sdepth - sphere[3] > tape_depth:
            continue
        r_px = camera.fx * sphere[3] / sdepth
        rr, cc = draw.disk((spix[1], spix[0]), r_px, shape=mask.shape)
        image[rr, cc] = OCCLUDER_LEVEL
        mask[rr, cc] = False
    return image, mask


# ---------------------------------------------------------------------------
# Bundle output
# ---------------------------------------------------------------------------


def truth_to_dict(bundle: SceneBundle) -> dict:
    t = bundle.truth
    topo = bundle.topology
    frames = []
    for f in bundle.frames:
        frames.append(
            {
                "frame": f,
                "dots": [
                    {
                        "row": r,
                        "col": c,
                        "x": float(p[0]),
                        "y": float(p[1]),
                        "z": float(p[2]),
                        "visibility": int(v),
                    }
                    for (r, c), p, v in zip(topo.dots, t.dots[f], t.visibility[f])
                ],
                "keypoints": t.keypoints[f].tolist(),
                "occluders": t.occluders[f].tolist(),
            }
        )
    return {"camera_count": len(bundle.cameras), "tape": topo.to_dict(), "frames": frames}


def load_truth(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_bundle(bundle: SceneBundle, out_dir: str | Path, images: bool = True) -> Path:
    """Write calibration, tape, detections, truth and (optionally) rasters to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_calibration(bundle.cameras, out / "calibration.json")
    with open(out / "tape.json", "w") as fh:
        json.dump(bundle.topology.to_dict(), fh, indent=2)
    with open(out / "scene.json", "w") as fh:
        json.dump(bundle.config.to_dict(), fh, indent=2)
    with open(out / "detections.json", "w") as fh:
        json.dump([detections_to_dict(f, bundle.detections[f]) for f in bundle.frames], fh, indent=1)
    with open(out / "truth.json", "w") as fh:
        json.dump(truth_to_dict(bundle), fh, indent=1)
    if images:
        (out / "masks").mkdir(exist_ok=True)
        (out / "dots").mkdir(exist_ok=True)
        for f in bundle.frames:
            for cid, (image, mask) in bundle.render(f).items():
                write_pgm(out / "dots" / f"cam{cid}_frame{f}.pgm", image * (65535.0 / I_MAX), maxval=65535)
                write_pgm(out / "masks" / f"cam{cid}_frame{f}.pgm", mask.astype(np.uint8) * 255, maxval=255)
    return out
