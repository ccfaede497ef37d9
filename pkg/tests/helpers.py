"""Shared builders for randomised test instances."""

import itertools

import numpy as np

from tapetrack.blp import build_problem
from tapetrack.candidates import CandidatePoint, EdgeCloud
from tapetrack.geometry import NormalField, SpineCurve
from tapetrack.mrf.energies import FrameContext
from tapetrack.tape import build_template

NORMAL = np.array([0.0, -1.0, 0.0])


def random_cloud(seed, max_edges=20, blob_ids=None):
    """Random graph on 5..8 points dressed up as an edge cloud.

    Each point carries blob ids in two cameras; ``blob_ids`` points reuse
    another point's blob in camera 0, so some edges share a blob pair and
    become exclusive.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 8))
    pairs = list(itertools.combinations(range(n), 2))
    m = int(rng.integers(min(max_edges, (3 * len(pairs)) // 4), min(max_edges, len(pairs)) + 1))
    chosen = sorted(rng.choice(len(pairs), size=m, replace=False).tolist())
    ids = list(range(n))
    if blob_ids:
        # a few points reuse another point's blob in camera 0
        for k in rng.choice(n, size=blob_ids, replace=False):
            ids[k] = int(rng.integers(n))
    points = [CandidatePoint(rng.normal(size=3), frozenset({0, 1}), {0: ids[k], 1: k}, NORMAL) for k in range(n)]
    edges = [(pairs[c][0], pairs[c][1], 1.0) for c in chosen]
    return EdgeCloud(points, edges)


def random_problem(seed, kind="plain"):
    """``kind``: "plain", "exclusive" (forces exclusivity pairs) or "relax" (target above the edge count)."""
    rng = np.random.default_rng(seed + 10_000)
    cloud = random_cloud(seed, blob_ids=int(rng.integers(1, 3)) if kind == "exclusive" else None)
    m = len(cloud.edges)
    if kind == "relax":
        n_e = m + int(rng.integers(1, 4))
    else:
        n_e = int(rng.integers(max(1, m // 2), m + 1))
    return build_problem(cloud, n_e)


def straight_context(points=((0.0, 0.0, 0.0),)):
    curve = SpineCurve.straight([0, 0, 0], [0, 0, 1], (-150, 150))
    return FrameContext(np.array(points, float), curve, NormalField([[0, 0, 0]], [[0, -1, 0]]))


def bent_context(seed, n_points=50):
    rng = np.random.default_rng(seed)
    t = np.linspace(-120, 120, 9)
    coeffs = np.zeros((3, 4))
    coeffs[2, 1] = 1.0
    coeffs[1, 2] = rng.uniform(-3e-3, 3e-3)
    coeffs[0, 3] = rng.uniform(-1e-6, 1e-6)
    curve = SpineCurve(np.array([0.0, 0, 1]), np.zeros(3), coeffs, (-150, 150))
    pos = curve.position(t)
    normals = np.array([0, -1.0, 0]) + rng.normal(0, 0.2, (len(t), 3))
    return FrameContext(rng.normal(size=(n_points, 3)) * 60, curve, NormalField(pos, normals, 30.0))


def random_configuration(topo, ctx, rng):
    base = build_template(ctx.curve, ctx.normals, topo)
    X = np.column_stack([base.node_positions, base.node_distances])
    X[:, :3] += rng.normal(0, rng.uniform(0.1, 8), (topo.dot_count, 3))
    X[:, 3] += rng.normal(0, 2, topo.dot_count)
    return X
