"""Potentials of the alignment MRF (MRF1) and the image refinement MRF (MRF2).

MRF1 nodes carry ``(x, y, z, d)``; MRF2 nodes carry ``(x, y, z)``. The
total energy of either field is the sum of node unaries plus, for every
undirected edge ``{s, t}``, both directed binaries ``psi_st + psi_ts``.

Edge targets are the nominal flat-layout length of each individual edge,
and a node's local distance ``d`` is expressed on the longitudinal scale:
edge ``e`` is expected to measure ``d * length_e / d_reference``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from tapetrack.errors import EmptyFeasibilityError, InvalidEdgeClassError
from tapetrack.geometry import CameraModel, NormalField, SpineCurve
from tapetrack.mrf.raster import C_MAX, CostRaster, RasterStack
from tapetrack.tape import LONG, SHORT_CLASSES, TapeEdge, TapeTopology


@dataclass
class MRFParams:
    theta1: float = 1.0
    theta2: float = 50.0
    theta3: float = 10.0
    theta4: float = 5.0
    theta5: float = 1.0
    theta6: float = 50.0
    theta7: float = 50.0
    theta8: float = 5.0
    d_min: float = 7.0  # mm
    d_reference: float = 22.0  # mm, longitudinal scale of the local distance d
    particle_count: int = 30
    chains_per_node: int = 10  # independent slice-sampling chains sharing the particle budget
    pbp_iterations_mrf1: int = 20
    pbp_iterations_mrf2: int = 20
    knn_k: int = 3
    slice_width: float = 10.0  # mm
    refine_slice_width: float = 2.0  # mm, MRF2 only moves nodes locally
    slice_max_steps: int = 8
    temperature: float = 1.0
    bp_sweeps: int = 12
    patience: int = 5
    tolerance: float = 1e-6
    rng_seed: int = 0

    def __post_init__(self):
        weights = [getattr(self, f"theta{k}") for k in range(1, 9)]
        if any(w < 0 for w in weights):
            raise ValueError("MRF weights must be non-negative")
        if self.d_min <= 0:
            raise ValueError("d_min must be positive")
        if self.particle_count < 2:
            raise ValueError("particle_count must be at least 2")
        if self.chains_per_node < 1:
            raise ValueError("chains_per_node must be positive")


@dataclass(eq=False)
class FrameContext:
    """Per-frame quantities shared by both MRFs."""

    feasibility_points: np.ndarray
    curve: SpineCurve
    normals: NormalField
    _tree: cKDTree | None = field(default=None, repr=False)

    def __post_init__(self):
        self.feasibility_points = np.asarray(self.feasibility_points, dtype=float).reshape(-1, 3)
        self._tree = cKDTree(self.feasibility_points) if len(self.feasibility_points) else None

    def nearest_distance(self, points: np.ndarray) -> np.ndarray:
        if self._tree is None:
            raise EmptyFeasibilityError("feasibility set is empty")
        d, _ = self._tree.query(np.asarray(points, dtype=float).reshape(-1, 3))
        return d.reshape(np.shape(points)[:-1])

    def knn(self, point: np.ndarray, k: int) -> np.ndarray:
        if self._tree is None or k <= 0:
            return np.zeros((0, 3))
        k = min(k, len(self.feasibility_points))
        _, idx = self._tree.query(np.asarray(point, dtype=float), k=k)
        return self.feasibility_points[np.atleast_1d(idx)]

    def tangent_at(self, points: np.ndarray) -> np.ndarray:
        return self.curve.tangent(self.curve.parameter(points))

    def normal_at(self, points: np.ndarray) -> np.ndarray:
        """Field normal made orthogonal to the local curve tangent."""
        n = self.normals.query(points)
        tan = self.tangent_at(points)
        n = n - np.sum(n * tan, axis=-1, keepdims=True) * tan
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        return n / np.maximum(norm, 1e-12)

    def edge_misalignment_axis(self, edges: Sequence[TapeEdge], positions: np.ndarray) -> np.ndarray:
        """Unit vector orthogonal to each edge's intended direction, in the local tape plane.

        The intended direction mixes the curve tangent (along) and the
        binormal (across) in the edge's nominal proportions.
        """
        positions = np.asarray(positions, dtype=float)
        out = np.zeros((len(edges), 3))
        if not len(edges):
            return out
        mids = np.array([0.5 * (positions[e.i] + positions[e.j]) for e in edges])
        tan = self.tangent_at(mids)
        nrm = self.normal_at(mids)
        binormal = np.cross(tan, nrm)
        for k, e in enumerate(edges):
            along, across = e.along / e.length, e.across / e.length
            out[k] = -across * tan[k] + along * binormal[k]
        return out / np.linalg.norm(out, axis=1, keepdims=True)


def class_edge(kind: str, d_long: float, d_trans: float) -> TapeEdge:
    """A straight nominal edge of the given class (long edges span two units)."""
    if kind == "transverse":
        return TapeEdge(0, 1, kind, d_trans, 0.0, d_trans)
    if kind == "longitudinal":
        return TapeEdge(0, 1, kind, d_long, d_long, 0.0)
    if kind == LONG:
        return TapeEdge(0, 1, kind, 2 * d_long, 2 * d_long, 0.0)
    raise InvalidEdgeClassError(f"unknown edge class {kind!r}")


# ---------------------------------------------------------------------------
# Scalar potentials
# ---------------------------------------------------------------------------


def _state(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def mrf1_unary(state, context: FrameContext) -> float:
    """Distance from the node position to the nearest feasibility point."""
    return float(context.nearest_distance(_state(state)[:3]))


def mrf1_binary(s, t, edge: TapeEdge, params: MRFParams, context: FrameContext) -> float:
    s, t = _state(s), _state(t)
    p = s[:3] - t[:3]
    length = float(np.linalg.norm(p))
    n = context.normal_at(0.5 * (s[:3] + t[:3]))
    expected = s[3] * edge.length / params.d_reference
    energy = params.theta1 * (length - expected) ** 2
    energy += params.theta2 * float(p @ n) ** 2
    if length < params.d_min:
        energy += params.theta3 * np.exp(params.d_min - length) ** 2
    energy += params.theta4 * (length - edge.length) ** 2
    return float(energy)


def _camera_costs(point, rasters: Sequence[CostRaster], cameras: Sequence[CameraModel]) -> list[float]:
    out = []
    for raster, cam in zip(rasters, cameras):
        pix, depth = cam.project_many(np.asarray(point, dtype=float))
        out.append(C_MAX if depth <= 0 else float(raster.sample(pix)))
    return out


def mrf2_unary(state, rasters: Sequence[CostRaster], cameras: Sequence[CameraModel]) -> float:
    """Summed raster cost of the node's projections."""
    return float(sum(_camera_costs(_state(state)[:3], rasters, cameras)))


def mrf2_binary(
    s,
    t,
    edge: TapeEdge,
    params: MRFParams,
    context: FrameContext,
    rasters: Sequence[CostRaster],
    cameras: Sequence[CameraModel],
    misalignment_axis: np.ndarray | None = None,
) -> float:
    if edge.kind not in SHORT_CLASSES:
        raise InvalidEdgeClassError(f"MRF2 only uses short edges, got {edge.kind!r}")
    s, t = _state(s)[:3], _state(t)[:3]
    p = s - t
    mid = 0.5 * (s + t)
    if misalignment_axis is None:
        misalignment_axis = context.edge_misalignment_axis([TapeEdge(0, 1, edge.kind, edge.length, edge.along, edge.across)], np.stack([s, t]))[0]
    cs = _camera_costs(s, rasters, cameras)
    ct = _camera_costs(t, rasters, cameras)
    cm = _camera_costs(mid, rasters, cameras)
    energy = params.theta5 * sum(a + b - 2 * c for a, b, c in zip(cs, ct, cm))
    energy += params.theta6 * float(p @ context.normal_at(mid)) ** 2
    energy += params.theta7 * float(p @ misalignment_axis) ** 2
    energy += params.theta8 * (float(np.linalg.norm(p)) - edge.length) ** 2
    return float(energy)


# ---------------------------------------------------------------------------
# Vectorised models for belief propagation
# ---------------------------------------------------------------------------


class EnergyModel:
    """Pairwise MRF over ``n_nodes`` with undirected ``edges``.

    Subclasses provide vectorised ``unary(nodes, X)`` and
    ``pair(edge_idx, Xs, Xt)``; ``pair`` returns the summed contribution
    of both directed binaries of each edge.
    """

    dim: int = 3
    n_nodes: int
    edges: np.ndarray  # (E, 2) node indices

    def unary(self, nodes: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def pair(self, edge_idx: np.ndarray, Xs: np.ndarray, Xt: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def valid(self, X: np.ndarray) -> np.ndarray:
        return np.all(np.isfinite(X), axis=-1)

    # Optional per-state features shared between unary and pair terms, so
    # callers evaluating many pairs over few states can compute them once.
    def features(self, X: np.ndarray):
        return None

    def unary_f(self, nodes, X, f):
        return self.unary(nodes, X)

    def pair_f(self, edge_idx, Xs, Xt, fs, ft):
        return self.pair(edge_idx, Xs, Xt)

    def knn_points(self, node: int, state: np.ndarray, k: int) -> np.ndarray:
        return np.zeros((0, self.dim))

    def total(self, X: np.ndarray) -> float:
        X = np.asarray(X, dtype=float)
        nodes = np.arange(self.n_nodes)
        total = float(np.sum(self.unary(nodes, X)))
        if len(self.edges):
            k = np.arange(len(self.edges))
            total += float(np.sum(self.pair(k, X[self.edges[:, 0]], X[self.edges[:, 1]])))
        return total


class TableModel(EnergyModel):
    """Discrete model defined by explicit tables; states are particle indices."""

    dim = 1

    def __init__(self, unary_tables, pair_tables, edges):
        self.unary_tables = [np.asarray(u, dtype=float) for u in unary_tables]
        self.pair_tables = [np.asarray(p, dtype=float) for p in pair_tables]
        self.edges = np.asarray(edges, dtype=int).reshape(-1, 2)
        self.n_nodes = len(self.unary_tables)

    def unary(self, nodes, X):
        idx = np.asarray(X, dtype=int).reshape(len(nodes))
        return np.array([self.unary_tables[n][i] for n, i in zip(nodes, idx)])

    def pair(self, edge_idx, Xs, Xt):
        a = np.asarray(Xs, dtype=int).reshape(len(edge_idx))
        b = np.asarray(Xt, dtype=int).reshape(len(edge_idx))
        return np.array([self.pair_tables[k][i, j] for k, i, j in zip(edge_idx, a, b)])


class MRF1Model(EnergyModel):
    dim = 4

    def __init__(self, topology: TapeTopology, context: FrameContext, params: MRFParams):
        self.topology = topology
        self.context = context
        self.params = params
        self.edge_list = list(topology.all_edges)
        self.edges = np.array([(e.i, e.j) for e in self.edge_list], dtype=int).reshape(-1, 2)
        self.lengths = np.array([e.length for e in self.edge_list])
        self.n_nodes = topology.dot_count

    def valid(self, X):
        X = np.asarray(X)
        return np.all(np.isfinite(X), axis=-1) & (X[..., 3] > 0)

    def unary(self, nodes, X):
        return self.context.nearest_distance(np.asarray(X)[..., :3])

    def pair(self, edge_idx, Xs, Xt):
        prm = self.params
        Xs, Xt = np.asarray(Xs, dtype=float), np.asarray(Xt, dtype=float)
        target = self.lengths[edge_idx]
        p = Xs[..., :3] - Xt[..., :3]
        length = np.linalg.norm(p, axis=-1)
        n = self.context.normal_at(0.5 * (Xs[..., :3] + Xt[..., :3]))
        ratio = target / prm.d_reference
        e = prm.theta1 * ((length - Xs[..., 3] * ratio) ** 2 + (length - Xt[..., 3] * ratio) ** 2)
        e += 2 * prm.theta2 * np.sum(p * n, axis=-1) ** 2
        close = length < prm.d_min
        if np.any(close):
            e = e + 2 * prm.theta3 * np.where(close, np.exp(2 * (prm.d_min - np.minimum(length, prm.d_min))), 0.0)
        e += 2 * prm.theta4 * (length - target) ** 2
        return e

    def knn_points(self, node, state, k):
        pts = self.context.knn(state[:3], k)
        return np.column_stack([pts, np.full(len(pts), state[3])]) if len(pts) else np.zeros((0, 4))


class MRF2Model(EnergyModel):
    dim = 3

    def __init__(
        self,
        topology: TapeTopology,
        context: FrameContext,
        params: MRFParams,
        rasters: Sequence[CostRaster],
        cameras: Sequence[CameraModel],
        reference_positions: np.ndarray,
    ):
        self.topology = topology
        self.context = context
        self.params = params
        self.rasters = list(rasters)
        self.cameras = list(cameras)
        self.edge_list = list(topology.short_edges)
        self.edges = np.array([(e.i, e.j) for e in self.edge_list], dtype=int).reshape(-1, 2)
        self.lengths = np.array([e.length for e in self.edge_list])
        self.axes = context.edge_misalignment_axis(self.edge_list, reference_positions)
        # normals are looked up once at the reference midpoints: refinement moves
        # nodes by fractions of a millimetre, far below the field's smoothing scale
        ref = np.asarray(reference_positions, dtype=float)
        if len(self.edges):
            self.edge_normals = context.normal_at(0.5 * (ref[self.edges[:, 0]] + ref[self.edges[:, 1]]))
        else:
            self.edge_normals = np.zeros((0, 3))
        self.stack = RasterStack(self.rasters, self.cameras)
        self.n_nodes = topology.dot_count

    def image_cost(self, X: np.ndarray) -> np.ndarray:
        return self.stack.cost(np.asarray(X, dtype=float)[..., :3])

    def unary(self, nodes, X):
        return self.image_cost(X)

    def features(self, X):
        return self.image_cost(X)

    def unary_f(self, nodes, X, f):
        return f

    def pair(self, edge_idx, Xs, Xt):
        Xs, Xt = np.asarray(Xs, dtype=float)[..., :3], np.asarray(Xt, dtype=float)[..., :3]
        cs, ct = self.image_cost(np.stack([Xs, Xt]))
        return self.pair_f(edge_idx, Xs, Xt, cs, ct)

    def pair_f(self, edge_idx, Xs, Xt, fs, ft):
        """``pair`` given the image costs ``fs``, ``ft`` of both end states."""
        prm = self.params
        Xs, Xt = np.asarray(Xs, dtype=float)[..., :3], np.asarray(Xt, dtype=float)[..., :3]
        p = Xs - Xt
        mid = 0.5 * (Xs + Xt)
        e = prm.theta5 * (fs + ft - 2 * self.image_cost(mid))
        e += prm.theta6 * np.sum(p * self.edge_normals[edge_idx], axis=-1) ** 2
        e += prm.theta7 * np.sum(p * self.axes[edge_idx], axis=-1) ** 2
        e += prm.theta8 * (np.linalg.norm(p, axis=-1) - self.lengths[edge_idx]) ** 2
        return 2 * e

    def knn_points(self, node, state, k):
        return self.context.knn(state[:3], k)
