"""A-priori structure of perforated kinesiology tape.

Rows alternate between two and three dots, starting and ending with a
two-dot row. Dots are indexed row-major; column indices increase along the
tape's binormal (curve tangent x surface normal).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from tapetrack.errors import InvalidRowsError
from tapetrack.geometry import NormalField, SpineCurve

logger = logging.getLogger(__name__)

DEFAULT_D_LONG = 22.0  # mm, row spacing along the tape
DEFAULT_D_TRANS = 13.0  # mm, dot spacing across the tape

TRANSVERSE = "transverse"
LONGITUDINAL = "longitudinal"
LONG = "long"
SHORT_CLASSES = (TRANSVERSE, LONGITUDINAL)
EDGE_CLASSES = (TRANSVERSE, LONGITUDINAL, LONG)


@dataclass(frozen=True)
class TapeEdge:
    """Edge between dots ``i < j`` with its nominal flat-layout geometry.

    ``along`` and ``across`` are the components of ``dot_j - dot_i`` in the
    flat layout (along the tape axis and along the binormal).
    """

    i: int
    j: int
    kind: str
    length: float
    along: float
    across: float


def target_edge_count(n_row: int) -> int:
    """Number of short (transverse + longitudinal) edges of a complete stripe."""
    if n_row < 1:
        raise InvalidRowsError(f"n_row must be >= 1, got {n_row}")
    return (n_row // 2) * 2 + math.ceil(n_row / 2) + (n_row - 1) * 6


def row_sizes_for(n_row: int) -> tuple[int, ...]:
    if n_row < 1 or n_row % 2 == 0:
        raise InvalidRowsError(
            f"n_row must be odd and >= 1 so the stripe starts and ends with a two-dot row, got {n_row}"
        )
    return tuple(2 if r % 2 == 0 else 3 for r in range(n_row))


def column_offset(row_size: int, col: int, d_trans: float) -> float:
    if row_size == 2:
        return (col - 0.5) * d_trans
    return (col - 1) * d_trans


@dataclass(frozen=True, eq=False)
class TapeTopology:
    n_row: int
    row_sizes: tuple[int, ...]
    dots: tuple[tuple[int, int], ...]
    transverse_edges: tuple[TapeEdge, ...]
    longitudinal_edges: tuple[TapeEdge, ...]
    long_edges: tuple[TapeEdge, ...]
    n_e: int
    d_target_long: float
    d_target_trans: float

    @property
    def dot_count(self) -> int:
        return len(self.dots)

    @property
    def short_edges(self) -> tuple[TapeEdge, ...]:
        return self.transverse_edges + self.longitudinal_edges

    @property
    def all_edges(self) -> tuple[TapeEdge, ...]:
        return self.short_edges + self.long_edges

    @cached_property
    def index(self) -> dict[tuple[int, int], int]:
        return {rc: k for k, rc in enumerate(self.dots)}

    def flat_layout(self) -> np.ndarray:
        """Dot positions in tape coordinates ``(along, across)`` [mm]."""
        return np.array(
            [
                (r * self.d_target_long, column_offset(self.row_sizes[r], c, self.d_target_trans))
                for r, c in self.dots
            ]
        )

    def to_dict(self) -> dict:
        return {
            "n_row": self.n_row,
            "d_target_long_mm": self.d_target_long,
            "d_target_trans_mm": self.d_target_trans,
        }


def build_topology(
    n_row: int, d_target_long: float = DEFAULT_D_LONG, d_target_trans: float = DEFAULT_D_TRANS
) -> TapeTopology:
    sizes = row_sizes_for(n_row)
    if d_target_long <= 0 or d_target_trans <= 0:
        raise ValueError("target lengths must be positive")
    dots = tuple((r, c) for r, size in enumerate(sizes) for c in range(size))
    index = {rc: k for k, rc in enumerate(dots)}

    def layout(rc):
        r, c = rc
        return r * d_target_long, column_offset(sizes[r], c, d_target_trans)

    def edge(a, b, kind):
        i, j = sorted((index[a], index[b]))
        (ai, ci), (aj, cj) = layout(dots[i]), layout(dots[j])
        along, across = aj - ai, cj - ci
        return TapeEdge(i, j, kind, math.hypot(along, across), along, across)

    transverse, longitudinal, long_edges = [], [], []
    for r, size in enumerate(sizes):
        for c in range(size - 1):
            transverse.append(edge((r, c), (r, c + 1), TRANSVERSE))
        if size == 3:
            long_edges.append(edge((r, 0), (r, 2), LONG))
        if r + 1 < n_row:
            for c in range(size):
                for c2 in range(sizes[r + 1]):
                    longitudinal.append(edge((r, c), (r + 1, c2), LONGITUDINAL))
        if r + 2 < n_row:
            for c in range(size):
                long_edges.append(edge((r, c), (r + 2, c), LONG))

    return TapeTopology(
        n_row=n_row,
        row_sizes=sizes,
        dots=dots,
        transverse_edges=tuple(transverse),
        longitudinal_edges=tuple(longitudinal),
        long_edges=tuple(long_edges),
        n_e=target_edge_count(n_row),
        d_target_long=float(d_target_long),
        d_target_trans=float(d_target_trans),
    )


def short_edge_neighbor_counts(topo: TapeTopology) -> list[int]:
    """|Omega_e| for every short edge: other short edges sharing an endpoint."""
    edges = topo.short_edges
    degree = np.zeros(topo.dot_count, dtype=int)
    for e in edges:
        degree[e.i] += 1
        degree[e.j] += 1
    return [int(degree[e.i] + degree[e.j] - 2) for e in edges]


def load_tape(path: str | Path) -> TapeTopology:
    with open(path) as fh:
        data = json.load(fh)
    return build_topology(
        int(data["n_row"]),
        float(data.get("d_target_long_mm", DEFAULT_D_LONG)),
        float(data.get("d_target_trans_mm", DEFAULT_D_TRANS)),
    )


def save_tape(topo: TapeTopology, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(topo.to_dict(), fh, indent=1)


# ---------------------------------------------------------------------------
# Template along a curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TapeTemplate:
    node_positions: np.ndarray
    node_distances: np.ndarray
    node_normals: np.ndarray = field(default=None)
    extrapolated: bool = False


def _arc_table(curve: SpineCurve, samples: int = 4001) -> tuple[np.ndarray, np.ndarray]:
    t0, t1 = curve.t_range
    t = np.linspace(t0, t1, samples)
    speed = np.linalg.norm(curve.derivative(t), axis=1)
    # cumulative trapezoid
    s = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(t))])
    return t, s


def frame_at(curve: SpineCurve, normals, t: float, point: np.ndarray, tangent=None):
    """Orthonormal (tangent, normal, binormal) frame at curve parameter ``t``.

    The field normal is orthogonalised against the tangent; the binormal is
    ``tangent x normal``.
    """
    tan = curve.tangent(t) if tangent is None else tangent
    n = normals.query(point)
    n = n - (n @ tan) * tan
    norm = np.linalg.norm(n)
    if norm < 1e-9:
        raise ValueError("normal field is parallel to the curve tangent")
    n = n / norm
    return tan, n, np.cross(tan, n)


def build_template(curve: SpineCurve, normals: NormalField, topo: TapeTopology) -> TapeTemplate:
    """Lay the complete stripe along ``curve``, centred on its fitted range.

    Rows are spaced ``d_target_long`` apart in arc length; beyond the fitted
    parameter range the curve is continued linearly along its end tangent.
    """
    t_tab, s_tab = _arc_table(curve)
    total = s_tab[-1]
    half_span = 0.5 * (topo.n_row - 1) * topo.d_target_long
    s_mid = 0.5 * total
    extrapolated = half_span > s_mid + 1e-3
    if extrapolated:
        logger.warning(
            "curve-too-short: fitted arc %.1f mm < template span %.1f mm, extrapolating",
            total,
            2 * half_span,
        )

    start_t, end_t = t_tab[0], t_tab[-1]
    start_p, end_p = curve.position(start_t), curve.position(end_t)
    start_tan, end_tan = curve.tangent(start_t), curve.tangent(end_t)

    positions = np.zeros((topo.dot_count, 3))
    node_normals = np.zeros((topo.dot_count, 3))
    for r, size in enumerate(topo.row_sizes):
        s = s_mid + (r - 0.5 * (topo.n_row - 1)) * topo.d_target_long
        if s < 0:
            center, tangent, t = start_p + s * start_tan, start_tan, start_t
        elif s > total:
            center, tangent, t = end_p + (s - total) * end_tan, end_tan, end_t
        else:
            t = float(np.interp(s, s_tab, t_tab))
            center, tangent = curve.position(t), None
        tan, n, b = frame_at(curve, normals, t, center, tangent)
        for c in range(size):
            k = topo.index[(r, c)]
            positions[k] = center + column_offset(size, c, topo.d_target_trans) * b
            node_normals[k] = n
    return TapeTemplate(
        node_positions=positions,
        node_distances=np.full(topo.dot_count, topo.d_target_long),
        node_normals=node_normals,
        extrapolated=extrapolated,
    )
