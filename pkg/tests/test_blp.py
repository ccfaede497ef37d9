import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_problem
from oracles import enumerate_selection, enumerate_with_relaxation
from tapetrack.blp import (
    C_MAX,
    SelectionProblem,
    build_problem,
    edge_costs,
    edge_neighbors,
    exclusive_pairs,
    solve_selection,
)
from tapetrack.candidates import CandidatePoint, EdgeCloud, build_candidates, build_edge_cloud, default_thresholds, prune_explained
from tapetrack.tape import build_topology

NORMAL = np.array([0.0, -1.0, 0.0])


def tape_cloud(n_row):
    topo = build_topology(n_row)
    flat = topo.flat_layout()
    points = [
        CandidatePoint(np.array([a, 0.0, z]), frozenset({0, 1}), {0: k, 1: k}, NORMAL)
        for k, (z, a) in enumerate(flat)
    ]
    edges = [(e.i, e.j, e.length) for e in topo.short_edges]
    return topo, EdgeCloud(points, sorted(edges))


def test_cost_at_lower_degree_bound():
    # a star of 7 edges around one point: each edge sees the other 6
    pts = [CandidatePoint(np.zeros(3), frozenset({0, 1}), {0: k, 1: k}, NORMAL) for k in range(8)]
    cloud = EdgeCloud(pts, [(0, k, 1.0) for k in range(1, 8)])
    assert edge_costs(cloud) == [1 / 6] * 7


def test_isolated_edge_cost():
    pts = [CandidatePoint(np.zeros(3), frozenset({0, 1}), {0: k, 1: k}, NORMAL) for k in range(4)]
    cloud = EdgeCloud(pts, [(0, 1, 1.0), (2, 3, 1.0)])
    assert edge_costs(cloud) == [C_MAX, C_MAX]


def test_interior_transverse_edge_cost_on_reconstructed_cloud(clean_scene):
    topo = clean_scene.topology
    pts = prune_explained(build_candidates(clean_scene.detections[0], clean_scene.cameras))
    cloud = build_edge_cloud(pts, *default_thresholds(topo.d_target_long, topo.d_target_trans, topo))
    pos = cloud.positions()
    dots = clean_scene.truth.dots[0]
    match = [int(np.argmin(np.linalg.norm(pos - d, axis=1))) for d in dots]
    costs = edge_costs(cloud)
    lookup = {frozenset((i, j)): k for k, (i, j, _) in enumerate(cloud.edges)}
    interior = [e for e in topo.transverse_edges if topo.row_sizes[topo.dots[e.i][0]] == 2][1:-1]
    for e in interior:
        assert costs[lookup[frozenset((match[e.i], match[e.j]))]] == pytest.approx(1 / 12)


def test_true_three_row_edges_all_selected():
    topo, cloud = tape_cloud(3)
    problem = build_problem(cloud, topo.n_e)
    sel = solve_selection(problem)
    assert sel.feasible and sel.achieved_n_e == 16
    assert sel.indices == list(range(16))
    assert sel.objective == math.fsum(1 / len(nb) for nb in edge_neighbors(cloud.edges))
    ref = enumerate_selection(problem.costs, problem.neighbor_sets, problem.exclusivity_groups, 16)
    assert sel.objective == ref[0]


def test_ghost_edge_is_exclusive():
    topo, cloud = tape_cloud(3)
    i, j, length = cloud.edges[0]
    ghost = CandidatePoint(cloud.points[j].position + 1.0, frozenset({0, 2}), {0: cloud.points[j].blobs[0], 2: 99}, NORMAL)
    points = cloud.points + [ghost]
    g = len(points) - 1
    cloud2 = EdgeCloud(points, cloud.edges + [(i, g, length)])
    problem = build_problem(cloud2, topo.n_e)
    assert (0, len(cloud2.edges) - 1) in problem.exclusivity_groups
    sel = solve_selection(problem)
    assert sel.selected[0] + sel.selected[-1] == 1
    ref = enumerate_with_relaxation(problem.costs, problem.neighbor_sets, problem.exclusivity_groups, topo.n_e)
    assert (sel.achieved_n_e, sel.objective) == (ref[0], ref[1][0])


def test_zero_target():
    _, cloud = tape_cloud(3)
    sel = solve_selection(build_problem(cloud, 0))
    assert sel.feasible and sel.objective == 0 and sel.indices == []


def test_floor_reached_is_infeasible():
    pts = [CandidatePoint(np.zeros(3), frozenset({0, 1}), {0: k, 1: k}, NORMAL) for k in range(4)]
    cloud = EdgeCloud(pts, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)])
    sel = solve_selection(build_problem(cloud, 3))
    assert not sel.feasible and sel.indices == []
    assert sel.achieved_n_e == 1


def test_exclusive_pairs_from_blob_maps():
    pts = [
        CandidatePoint(np.zeros(3), frozenset({0, 1}), {0: 0, 1: 0}, NORMAL),
        CandidatePoint(np.zeros(3), frozenset({0, 1}), {0: 1, 1: 1}, NORMAL),
        CandidatePoint(np.zeros(3), frozenset({0, 2}), {0: 1, 2: 5}, NORMAL),
        CandidatePoint(np.zeros(3), frozenset({1, 2}), {1: 7, 2: 6}, NORMAL),
    ]
    cloud = EdgeCloud(pts, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)])
    assert exclusive_pairs(cloud) == [(0, 1)]


@pytest.mark.parametrize(
    "problem",
    [
        SelectionProblem([0.0], [[]], [], 1),
        SelectionProblem([1.0, 1.0], [[1], []], [], 1),
        SelectionProblem([1.0], [[0]], [], 1),
        SelectionProblem([1.0, 1.0], [[1], [0]], [(0, 0)], 1),
        SelectionProblem([1.0], [[]], [], -1),
    ],
)
def test_invalid_problems(problem):
    with pytest.raises(ValueError):
        solve_selection(problem)


def test_problem_dict_round_trip(tmp_path):
    p = random_problem(3, "exclusive")
    p.dump(tmp_path / "p.json")
    import json

    back = SelectionProblem.from_dict(json.loads((tmp_path / "p.json").read_text()))
    assert back == p


KINDS = st.sampled_from(["plain", "exclusive", "relax"])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), KINDS)
def test_matches_enumeration(seed, kind):
    p = random_problem(seed, kind)
    sel = solve_selection(p)
    ref = enumerate_with_relaxation(p.costs, p.neighbor_sets, p.exclusivity_groups, p.n_e_target)
    if ref is None:
        assert not sel.feasible
    else:
        assert sel.feasible
        assert sel.achieved_n_e == ref[0]
        assert sel.objective == ref[1][0]
        assert tuple(sel.indices) == ref[1][1]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), KINDS)
def test_selection_invariants(seed, kind):
    p = random_problem(seed, kind)
    sel = solve_selection(p)
    chosen = set(sel.indices)
    assert len(chosen) <= sel.achieved_n_e <= p.n_e_target
    for e in chosen:
        assert 6 <= len(chosen & set(p.neighbor_sets[e])) <= 12
    for a, b in p.exclusivity_groups:
        assert not (a in chosen and b in chosen)
    assert solve_selection(p) == sel
