"""Pinhole cameras, two-view triangulation, spine curve fitting and normal fields."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from tapetrack.errors import (
    BehindCameraError,
    DegeneratePairError,
    UnderdeterminedFitError,
)

DEGENERATE_RAY_ANGLE_DEG = 0.1
DEFAULT_SMOOTHING_RADIUS = 30.0  # mm
NORMAL_GUARD = 1e-6


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Ideal pinhole camera with a world-to-camera rigid transform.

    A world point ``X`` maps to camera coordinates ``R @ X + t``; pixels are
    ``(fx * X/Z + cx, fy * Y/Z + cy)``. Units are millimetres and pixels.
    """

    id: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"camera {self.id}: focal lengths must be positive")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9) or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError(f"camera {self.id}: rotation is not a proper rotation")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        """Optical axis direction in world coordinates."""
        return self.rotation[2].copy()

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def project_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised projection without depth checks.

        Returns ``(pixels, depth)``; pixels of points with non-positive depth
        are meaningless and callers must mask them with ``depth > 0``.
        """
        pc = self.to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def ray(self, pixel: Sequence[float]) -> np.ndarray:
        """Unit direction (world frame) of the viewing ray through ``pixel``."""
        d_cam = np.array([(pixel[0] - self.cx) / self.fx, (pixel[1] - self.cy) / self.fy, 1.0])
        d = self.rotation.T @ d_cam
        return d / np.linalg.norm(d)

    def view_direction(self, point: np.ndarray) -> np.ndarray:
        """Unit vector from the camera centre towards ``point``."""
        d = np.asarray(point, dtype=float) - self.center
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def in_frame(self, pixel: np.ndarray) -> np.ndarray:
        pixel = np.asarray(pixel)
        return (
            (pixel[..., 0] >= 0)
            & (pixel[..., 0] <= self.width - 1)
            & (pixel[..., 1] >= 0)
            & (pixel[..., 1] <= self.height - 1)
        )

    def to_dict(self) -> dict:
        return {
            "id": int(self.id),
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        return cls(
            id=int(data["id"]),
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            rotation=np.asarray(data["rotation"], dtype=float).reshape(3, 3),
            translation=np.asarray(data["translation"], dtype=float),
            width=int(data["width"]),
            height=int(data["height"]),
        )


def look_at(
    camera_id: int,
    center: Sequence[float],
    target: Sequence[float],
    up: Sequence[float] = (0.0, 0.0, 1.0),
    focal: float = 2400.0,
    width: int = 1224,
    height: int = 800,
) -> CameraModel:
    """Camera at ``center`` looking at ``target`` with image y pointing down."""
    center = np.asarray(center, dtype=float)
    forward = np.asarray(target, dtype=float) - center
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-12:
        raise ValueError("up vector is parallel to the viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return CameraModel(
        id=camera_id,
        fx=focal,
        fy=focal,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        rotation=rot,
        translation=-rot @ center,
        width=width,
        height=height,
    )


def load_calibration(path: str | Path) -> list[CameraModel]:
    with open(path) as fh:
        data = json.load(fh)
    return [CameraModel.from_dict(entry) for entry in data]


def save_calibration(cameras: Iterable[CameraModel], path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump([cam.to_dict() for cam in cameras], fh, indent=1)


def project(camera: CameraModel, point: Sequence[float]) -> np.ndarray:
    """Project a single world point to pixel coordinates.

    Raises:
        BehindCameraError: if the point has non-positive depth.
    """
    pc = camera.to_camera(point)
    if pc[2] <= 0:
        raise BehindCameraError(f"point {list(point)} is behind camera {camera.id}")
    return np.array([camera.fx * pc[0] / pc[2] + camera.cx, camera.fy * pc[1] / pc[2] + camera.cy])


def triangulate_pair(
    cam_a: CameraModel,
    cam_b: CameraModel,
    pix_a: Sequence[float],
    pix_b: Sequence[float],
) -> tuple[np.ndarray, float]:
    """Least-squares intersection of two viewing rays.

    The point minimises the summed squared distance to both rays, which for
    two rays is the midpoint of their common perpendicular. The residual is
    the larger of the two reprojection errors in pixels.
    """
    c_a, c_b = cam_a.center, cam_b.center
    if np.linalg.norm(c_a - c_b) < 1e-9:
        raise DegeneratePairError(f"cameras {cam_a.id} and {cam_b.id} share a centre")
    d_a, d_b = cam_a.ray(pix_a), cam_b.ray(pix_b)
    cos_angle = abs(float(d_a @ d_b))
    if cos_angle > np.cos(np.deg2rad(DEGENERATE_RAY_ANGLE_DEG)):
        raise DegeneratePairError(
            f"rays of cameras {cam_a.id} and {cam_b.id} are nearly parallel"
        )
    p_a = np.eye(3) - np.outer(d_a, d_a)
    p_b = np.eye(3) - np.outer(d_b, d_b)
    point = np.linalg.solve(p_a + p_b, p_a @ c_a + p_b @ c_b)
    err_a = np.linalg.norm(project(cam_a, point) - np.asarray(pix_a, dtype=float))
    err_b = np.linalg.norm(project(cam_b, point) - np.asarray(pix_b, dtype=float))
    return point, float(max(err_a, err_b))


# ---------------------------------------------------------------------------
# Spine curve and normal field
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpineCurve:
    """Cubic space curve ``origin + sum_k coeffs[:, k] * t**k``.

    ``t`` is the signed coordinate along ``axis`` measured from ``origin``.
    """

    axis: np.ndarray
    origin: np.ndarray
    coeffs: np.ndarray
    t_range: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValueError("curve axis must be a unit vector")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).reshape(3, 4))

    def parameter(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.origin) @ self.axis

    def position(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        powers = np.stack([np.ones_like(t), t, t**2, t**3], axis=-1)
        return self.origin + powers @ self.coeffs.T

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        powers = np.stack([np.zeros_like(t), np.ones_like(t), 2 * t, 3 * t**2], axis=-1)
        return powers @ self.coeffs.T

    def tangent(self, t) -> np.ndarray:
        d = self.derivative(t)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    @classmethod
    def straight(cls, origin, axis, t_range=(-100.0, 100.0)) -> "SpineCurve":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        coeffs = np.zeros((3, 4))
        coeffs[:, 1] = axis
        return cls(axis=axis, origin=np.asarray(origin, dtype=float), coeffs=coeffs, t_range=t_range)


@dataclass(frozen=True, eq=False)
class NormalField:
    """Gaussian-smoothed field of unit normals sampled at 3D positions."""

    positions: np.ndarray
    normals: np.ndarray
    smoothing_radius: float = DEFAULT_SMOOTHING_RADIUS

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if len(pos) == 0 or len(pos) != len(nrm):
            raise ValueError("normal field needs matching, non-empty samples")
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "normals", nrm)

    def query(self, points: np.ndarray) -> np.ndarray:
        """Smoothed unit normal at each query point (shape ``(..., 3)``)."""
        q = np.asarray(points, dtype=float)
        flat = q.reshape(-1, 3)
        d2 = (
            np.sum(flat**2, axis=1)[:, None]
            - 2.0 * flat @ self.positions.T
            + np.sum(self.positions**2, axis=1)[None, :]
        )
        d2 = np.maximum(d2, 0.0)
        nearest = np.argmin(d2, axis=1)
        r2 = 2.0 * max(self.smoothing_radius, 1e-300) ** 2
        # shift by the nearest distance so at least one weight is exactly 1
        w = np.exp(-(d2 - d2[np.arange(len(flat)), nearest][:, None]) / r2)
        avg = (w @ self.normals) / np.sum(w, axis=1, keepdims=True)
        norm = np.linalg.norm(avg, axis=1)
        out = np.empty_like(avg)
        ok = norm >= NORMAL_GUARD
        out[ok] = avg[ok] / norm[ok, None]
        out[~ok] = self.normals[nearest[~ok]]
        return out.reshape(q.shape)


def principal_axis(positions: np.ndarray, up: Sequence[float] | None = None) -> np.ndarray:
    centred = positions - positions.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    axis = vt[0]
    if up is not None and axis @ np.asarray(up, dtype=float) < 0:
        axis = -axis
    elif up is None:
        # deterministic sign: largest-magnitude component positive
        if axis[np.argmax(np.abs(axis))] < 0:
            axis = -axis
    return axis


def fit_curve(
    positions: np.ndarray, up: Sequence[float] | None = (0.0, 0.0, 1.0)
) -> SpineCurve:
    """Least-squares cubic through ``positions`` parameterised along their first principal axis."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) < 4:
        raise UnderdeterminedFitError(f"need at least 4 points, got {len(positions)}")
    origin = positions.mean(axis=0)
    axis = principal_axis(positions, up)
    t = (positions - origin) @ axis
    design = np.stack([np.ones_like(t), t, t**2, t**3], axis=1)
    if np.linalg.matrix_rank(design) < 4:
        raise UnderdeterminedFitError("fewer than 4 distinct positions along the principal axis")
    coeffs, *_ = np.linalg.lstsq(design, positions - origin, rcond=None)
    return SpineCurve(axis=axis, origin=origin, coeffs=coeffs.T, t_range=(float(t.min()), float(t.max())))


def fit_curve_and_normals(
    points,
    smoothing_radius: float = DEFAULT_SMOOTHING_RADIUS,
    up: Sequence[float] | None = (0.0, 0.0, 1.0),
) -> tuple[SpineCurve, NormalField]:
    """Fit the spine curve and normal field to candidate points.

    ``points`` is a sequence of objects exposing ``position`` and ``normal``.
    """
    points = list(points)
    if len(points) < 4:
        raise UnderdeterminedFitError(f"need at least 4 points, got {len(points)}")
    positions = np.array([p.position for p in points], dtype=float)
    normals = np.array([p.normal for p in points], dtype=float)
    curve = fit_curve(positions, up)
    return curve, NormalField(positions, normals, smoothing_radius)
