import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import bent_context, random_configuration, straight_context
from oracles import oracle_mrf1_binary, oracle_mrf1_total

from tapetrack.errors import EmptyFeasibilityError, InvalidEdgeClassError
from tapetrack.geometry import CameraModel, NormalField, SpineCurve, look_at
from tapetrack.mrf.energies import (
    FrameContext,
    MRF1Model,
    MRF2Model,
    MRFParams,
    class_edge,
    mrf1_binary,
    mrf1_unary,
    mrf2_binary,
    mrf2_unary,
)
from tapetrack.mrf.raster import CostRaster
from tapetrack.tape import build_template, build_topology


# --- MRF1 -------------------------------------------------------------------


def test_unary_zero_on_feasibility_point():
    ctx = straight_context([(1, 2, 3), (4, 5, 6)])
    assert mrf1_unary([1, 2, 3, 22], ctx) == 0


def test_unary_nearer_endpoint():
    ctx = straight_context([(0, 0, 0), (100, 0, 0)])
    assert mrf1_unary([40, 0, 0, 22], ctx) == 40


def test_unary_matches_brute_force():
    rng = np.random.default_rng(2)
    F = rng.normal(size=(50, 3)) * 40
    ctx = straight_context(F)
    states = rng.normal(size=(100, 3)) * 60
    ref = np.sqrt(((states[:, None] - F[None]) ** 2).sum(-1)).min(axis=1)
    got = np.array([mrf1_unary(s, ctx) for s in states])
    assert np.array_equal(got, ref)


def test_empty_feasibility():
    ctx = straight_context(np.zeros((0, 3)))
    with pytest.raises(EmptyFeasibilityError):
        mrf1_unary([0, 0, 0, 1], ctx)


def test_binary_vanishes_at_target():
    prm = MRFParams()
    ctx = straight_context()
    edge = class_edge("longitudinal", 22.0, 13.0)
    s = np.array([0, 0, 22.0, prm.d_reference])
    t = np.array([0, 0, 0.0, prm.d_reference])
    assert mrf1_binary(s, t, edge, prm, ctx) == 0


def test_close_pair_penalty():
    prm = MRFParams(theta1=0, theta2=0, theta4=0)
    ctx = straight_context()
    s = np.array([prm.d_min / 2, 0, 0, 22.0])
    t = np.array([0.0, 0, 0, 22.0])
    e = mrf1_binary(s, t, class_edge("transverse", 22.0, 13.0), prm, ctx)
    assert e == pytest.approx(prm.theta3 * np.exp(prm.d_min / 2) ** 2, rel=1e-12)


def test_unknown_edge_class():
    with pytest.raises(InvalidEdgeClassError):
        class_edge("diagonal", 22, 13)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_binary_matches_term_oracle(seed):
    rng = np.random.default_rng(seed)
    ctx = bent_context(seed)
    prm = MRFParams()
    topo = build_topology(5)
    for e in topo.all_edges[:: max(1, len(topo.all_edges) // 6)]:
        s = np.r_[rng.normal(size=3) * 20, rng.uniform(10, 30)]
        t = s + np.r_[rng.normal(size=3) * 10, rng.normal()]
        got = mrf1_binary(s, t, e, prm, ctx)
        assert got == pytest.approx(oracle_mrf1_binary(s, t, e.length, prm, ctx), rel=1e-9, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_model_total_decomposes(seed):
    rng = np.random.default_rng(seed)
    ctx = bent_context(seed)
    prm = MRFParams()
    topo = build_topology(9)
    model = MRF1Model(topo, ctx, prm)
    X = random_configuration(topo, ctx, rng)
    ref = oracle_mrf1_total(X, topo, prm, ctx)
    assert abs(model.total(X) - ref) <= 1e-9 * max(1.0, abs(ref))


def test_global_zero_configuration():
    topo = build_topology(9)
    ctx0 = straight_context()
    tpl = build_template(ctx0.curve, ctx0.normals, topo)
    ctx = FrameContext(tpl.node_positions, ctx0.curve, ctx0.normals)
    prm = MRFParams()
    X = np.column_stack([tpl.node_positions, np.full(topo.dot_count, prm.d_reference)])
    assert MRF1Model(topo, ctx, prm).total(X) < 1e-9


def test_invalid_params():
    with pytest.raises(ValueError):
        MRFParams(theta3=-1)
    with pytest.raises(ValueError):
        MRFParams(d_min=0)
    with pytest.raises(ValueError):
        MRFParams(particle_count=1)


# --- MRF2 -------------------------------------------------------------------


def flat_camera(w=40, h=30):
    return CameraModel(0, 100.0, 100.0, (w - 1) / 2, (h - 1) / 2, np.eye(3), np.zeros(3), w, h)


def test_mrf2_unary_zero_on_dot_centres():
    cam = flat_camera()
    r = CostRaster(0, np.full((30, 40), 5.0))
    r.values[14, 19] = 0.0
    # projects exactly onto pixel (19, 14)
    p = np.array([19 - cam.cx, 14 - cam.cy, 100.0])
    assert mrf2_unary(p, [r], [cam]) == 0.0


def test_mrf2_unary_single_camera_value():
    cam = flat_camera()
    r = CostRaster(0, np.full((30, 40), 7.5))
    assert mrf2_unary([3.0, -2.0, 100.0], [r], [cam]) == 7.5


def test_mrf2_unary_behind_camera():
    cam = flat_camera()
    r = CostRaster(0, np.zeros((30, 40)))
    assert mrf2_unary([0, 0, -10.0], [r], [cam]) == pytest.approx(1e6)


def manual_cost(values, cam, point):
    X = cam.rotation @ point + cam.translation
    u = cam.fx * X[0] / X[2] + cam.cx
    v = cam.fy * X[1] / X[2] + cam.cy
    x0, y0 = int(np.floor(u)), int(np.floor(v))
    fx, fy = u - x0, v - y0
    return (
        values[y0, x0] * (1 - fx) * (1 - fy)
        + values[y0, x0 + 1] * fx * (1 - fy)
        + values[y0 + 1, x0] * (1 - fx) * fy
        + values[y0 + 1, x0 + 1] * fx * fy
    )


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mrf2_unary_matches_manual_bilinear(seed):
    rng = np.random.default_rng(seed)
    cams = [look_at(i, [300 * i - 300, -900, 50 * i], [0, 0, 0], focal=400, width=80, height=60) for i in range(3)]
    rasters = [CostRaster(c.id, rng.random((60, 80)) * 100) for c in cams]
    x = rng.uniform(-40, 40, 3)
    ref = sum(manual_cost(r.values, c, x) for r, c in zip(rasters, cams))
    assert mrf2_unary(x, rasters, cams) == pytest.approx(ref, rel=1e-12)


def two_dot_setup():
    cam = flat_camera(60, 30)
    values = np.full((30, 60), 200.0)
    values[14, 19] = values[14, 39] = 0.0  # dots
    raster = CostRaster(0, values)
    s = np.array([(19 - cam.cx), (14 - cam.cy), 100.0])
    t = np.array([(39 - cam.cx), (14 - cam.cy), 100.0])
    return cam, raster, s, t


def test_midpoint_term_rewards_spanning_a_gap():
    cam, raster, s, t = two_dot_setup()
    prm = MRFParams(theta6=0, theta7=0, theta8=0)
    ctx = straight_context()
    edge = class_edge("transverse", 22.0, 20.0)
    assert mrf2_binary(s, t, edge, prm, ctx, [raster], [cam]) < 0


def test_only_image_term_survives_when_aligned():
    cam, raster, s, t = two_dot_setup()
    prm = MRFParams()
    curve = SpineCurve.straight([0, 0, 100], [0, 1, 0], (-150, 150))
    ctx = FrameContext(np.zeros((1, 3)), curve, NormalField([[0, 0, 100]], [[0, 0, -1]]))
    edge = class_edge("transverse", 22.0, 20.0)
    # transverse runs along tangent x normal = y x -z = -x; here t - s points along +x
    e = mrf2_binary(t, s, edge, prm, ctx, [raster], [cam])
    image_only = mrf2_binary(t, s, edge, MRFParams(theta6=0, theta7=0, theta8=0), ctx, [raster], [cam])
    assert e == pytest.approx(image_only, abs=1e-9)


def test_mrf2_rejects_long_edges():
    cam, raster, s, t = two_dot_setup()
    with pytest.raises(InvalidEdgeClassError):
        mrf2_binary(s, t, class_edge("long", 22, 13), MRFParams(), straight_context(), [raster], [cam])


def test_mrf2_model_decomposes_at_reference():
    rng = np.random.default_rng(5)
    topo = build_topology(5)
    ctx = bent_context(5)
    cams = [look_at(i, [500 * np.sin(a), -500 * np.cos(a), 0], [0, 0, 0], focal=300, width=120, height=100) for i, a in enumerate((-0.5, 0.0, 0.5))]
    rasters = [CostRaster(c.id, rng.random((100, 120)) * 100) for c in cams]
    X = build_template(ctx.curve, ctx.normals, topo).node_positions + rng.normal(0, 1, (topo.dot_count, 3))
    prm = MRFParams()
    model = MRF2Model(topo, ctx, prm, rasters, cams, X)
    ref = sum(mrf2_unary(x, rasters, cams) for x in X)
    for e in topo.short_edges:
        ref += mrf2_binary(X[e.i], X[e.j], e, prm, ctx, rasters, cams)
        ref += mrf2_binary(X[e.j], X[e.i], e, prm, ctx, rasters, cams)
    assert model.total(X) == pytest.approx(ref, rel=1e-9)
