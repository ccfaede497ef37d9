"""Per-camera cost rasters and 16-bit PGM input/output."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from tapetrack.geometry import CameraModel

I_MAX = 255.0
C_MAX = 1e6


@dataclass(frozen=True, eq=False)
class CostRaster:
    """Scalar cost per pixel; ``values[row, col]`` sits at pixel ``(x=col, y=row)``."""

    camera_id: int
    values: np.ndarray
    degenerate: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def sample(self, pixels: np.ndarray) -> np.ndarray:
        """Bilinear lookup; off-frame points are clamped and charged their pixel distance."""
        pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
        h, w = self.values.shape
        x = np.clip(pix[:, 0], 0.0, w - 1.0)
        y = np.clip(pix[:, 1], 0.0, h - 1.0)
        penalty = np.hypot(pix[:, 0] - x, pix[:, 1] - y)
        x0 = np.minimum(np.floor(x).astype(np.int64), w - 2) if w > 1 else np.zeros(len(x), np.int64)
        y0 = np.minimum(np.floor(y).astype(np.int64), h - 2) if h > 1 else np.zeros(len(y), np.int64)
        fx, fy = x - x0, y - y0
        v = self.values
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        top = v[y0, x0] * (1 - fx) + v[y0, x1] * fx
        bottom = v[y1, x0] * (1 - fx) + v[y1, x1] * fx
        out = top * (1 - fy) + bottom * fy + penalty
        return out.reshape(np.shape(pixels)[:-1])


class RasterStack:
    """Several cameras' rasters evaluated together.

    ``cost(points)`` sums the bilinear samples of every raster at the
    point's projection, charging ``C_MAX`` for cameras the point is behind.
    Equivalent to looping ``CostRaster.sample`` over cameras, but vectorised.
    """

    def __init__(self, rasters: Sequence[CostRaster], cameras: Sequence[CameraModel]):
        self.rasters = list(rasters)
        self.cameras = list(cameras)
        shapes = {r.shape for r in self.rasters}
        self.uniform = len(shapes) == 1
        if self.uniform and self.rasters:
            self.values = np.stack([r.values for r in self.rasters]).astype(float)
            self.flat = self.values.reshape(len(self.rasters), -1)
            self.rot = np.stack([c.rotation for c in self.cameras])
            self.trans = np.stack([c.translation for c in self.cameras])
            self.focal = np.array([[c.fx, c.fy] for c in self.cameras])
            self.principal = np.array([[c.cx, c.cy] for c in self.cameras])

    def cost(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        flat_pts = pts.reshape(-1, 3)
        if not self.rasters:
            return np.zeros(pts.shape[:-1])
        if not self.uniform:
            total = np.zeros(len(flat_pts))
            for raster, cam in zip(self.rasters, self.cameras):
                pix, depth = cam.project_many(flat_pts)
                ok = depth > 0
                vals = np.full(len(flat_pts), C_MAX)
                if np.any(ok):
                    vals[ok] = raster.sample(pix[ok])
                total += vals
            return total.reshape(pts.shape[:-1])

        cam_pts = np.matmul(flat_pts[None, :, :], self.rot.transpose(0, 2, 1)) + self.trans[:, None, :]
        depth = cam_pts[..., 2]
        ok = depth > 0
        safe = np.where(ok, depth, 1.0)
        pix = self.focal[:, None, :] * cam_pts[..., :2] / safe[..., None] + self.principal[:, None, :]
        _, h, w = self.values.shape
        x = np.clip(pix[..., 0], 0.0, w - 1.0)
        y = np.clip(pix[..., 1], 0.0, h - 1.0)
        penalty = np.hypot(pix[..., 0] - x, pix[..., 1] - y)
        x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
        y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
        fx, fy = x - x0, y - y0
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        cam_idx = np.arange(len(self.rasters))[:, None]
        v00 = self.flat[cam_idx, y0 * w + x0]
        v01 = self.flat[cam_idx, y0 * w + x1]
        v10 = self.flat[cam_idx, y1 * w + x0]
        v11 = self.flat[cam_idx, y1 * w + x1]
        top = v00 * (1 - fx) + v01 * fx
        bottom = v10 * (1 - fx) + v11 * fx
        vals = top * (1 - fy) + bottom * fy + penalty
        vals = np.where(ok, vals, C_MAX)
        return vals.sum(axis=0).reshape(pts.shape[:-1])


def build_cost_raster(
    dot_image: np.ndarray, mask: np.ndarray, camera: CameraModel, i_max: float = I_MAX
) -> CostRaster:
    """Inverted intensity inside the mask, ``i_max`` plus Euclidean distance outside.

    An empty mask yields a pure distance raster measured from the image
    centre, flagged ``degenerate``.
    """
    img = np.asarray(dot_image, dtype=float)
    m = np.asarray(mask, dtype=bool)
    if img.shape != m.shape:
        raise ValueError("dot image and mask must share a shape")
    if img.shape != (camera.height, camera.width):
        raise ValueError(
            f"raster shape {img.shape} does not match camera {camera.id} resolution "
            f"{(camera.height, camera.width)}"
        )
    if not m.any():
        rows, cols = np.indices(m.shape)
        dist = np.hypot(cols - camera.cx, rows - camera.cy)
        return CostRaster(camera.id, i_max + dist, degenerate=True)
    dist = ndimage.distance_transform_edt(~m)
    values = np.where(m, i_max - img, i_max + dist)
    return CostRaster(camera.id, values)


# ---------------------------------------------------------------------------
# PGM (binary, P5)
# ---------------------------------------------------------------------------


def write_pgm(path: str | Path, image: np.ndarray, maxval: int = 65535) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images are 2D")
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.clip(np.rint(img), 0, maxval).astype(dtype)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: str | Path) -> tuple[np.ndarray, int]:
    """Return ``(image, maxval)`` of a binary PGM file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw, dtype=dtype, count=width * height, offset=pos)
    return data.reshape(height, width).astype(float), maxval


def save_raster_pgm(raster: CostRaster, path: str | Path) -> None:
    """Inspection dump: cost values rounded and clipped to 16 bits."""
    write_pgm(path, raster.values, maxval=65535)
