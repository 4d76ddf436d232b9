import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polycuboid import metrics
from polycuboid import reconstruct as rc
from polycuboid.core import yaw_matrix
from reference import chamfer_bruteforce

UNIT = [[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]]


def _cube_mesh():
    grid = rc.NonUniformGrid(([0.0, 1.0],) * 3)
    return rc.mesh_from_selection(rc.BoxSelection(grid, np.ones((1, 1, 1)), np.ones((1, 1, 1), bool)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 40), st.integers(1, 40))
def test_chamfer_matches_bruteforce(seed, n, m):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, 3))
    b = rng.normal(size=(m, 3)) + rng.uniform(-3, 3)
    assert metrics.chamfer_points(a, b) == pytest.approx(chamfer_bruteforce(a, b), rel=1e-12, abs=1e-12)


def test_chamfer_basics():
    pts = np.random.default_rng(0).random((30, 3))
    assert metrics.chamfer_points(pts, pts) == 0.0
    with pytest.raises(metrics.EmptyInput):
        metrics.chamfer_points(pts, np.zeros((0, 3)))
    with pytest.raises(metrics.EmptyInput):
        metrics.chamfer(pts, [])


def test_chamfer_of_surface_samples_against_own_mesh_is_small():
    mesh = _cube_mesh()
    samples = metrics.sample_meshes([mesh], 0.05)
    assert metrics.chamfer(samples, [mesh], 0.05) == 0.0
    assert metrics.chamfer(samples + [0, 0, 0.01], [mesh], 0.05) <= 0.01 + 1e-12


def test_sample_quad_includes_borders():
    q = np.array([[0, 0, 0], [1, 0, 0], [1, 0.5, 0], [0, 0.5, 0]], float)
    s = metrics.sample_quad(q, 0.25)
    assert len(s) == 5 * 3
    assert s[:, 0].max() == pytest.approx(1.0) and s[:, 1].max() == pytest.approx(0.5)


def test_voxel_iou_self_and_shifted():
    a = metrics.Solid(UNIT)
    ka = metrics.voxelize(a, 0.05)
    assert len(ka) == 20 ** 3
    assert metrics.voxel_iou(ka, ka) == 1.0
    b = metrics.Solid(UNIT, offset=np.array([0.5, 0.0, 0.0]))
    assert metrics.voxel_iou(ka, metrics.voxelize(b, 0.05)) == pytest.approx(1 / 3, abs=1e-9)
    far = metrics.Solid(UNIT, offset=np.array([5.0, 0, 0]))
    assert metrics.iou_matrix([a], [far], 0.05)[0, 0] == 0.0


@settings(max_examples=20, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(0.3, 1.5), st.floats(0.3, 1.5))
def test_voxel_counts_track_volume(yaw, wx, wy):
    s = metrics.Solid([[[0, 0, 0], [wx, wy, 0.4]]], yaw_matrix(yaw), np.array([0.1, 0.2, 0.0]))
    vox = 0.02
    count = len(metrics.voxelize(s, vox))
    assert count * vox ** 3 == pytest.approx(s.volume(), rel=0.08)
    centers = np.array([[0.5 * wx, 0.5 * wy, 0.2]]) @ s.rotation.T + s.offset
    assert s.contains(centers).all()


def test_greedy_match_is_one_to_one_and_greedy():
    iou = np.array([[0.9, 0.8], [0.85, 0.1]])
    assert metrics.greedy_match(iou, 0.5) == [(0, 0)]
    assert metrics.greedy_match(iou, 0.95) == []
    ties = np.array([[0.6, 0.6], [0.6, 0.6]])
    assert metrics.greedy_match(ties, 0.5) == [(0, 0), (1, 1)]


def test_iou_pr_counts():
    gts = [metrics.Solid(UNIT), metrics.Solid(UNIT, offset=np.array([3.0, 0, 0]))]
    preds = [metrics.Solid(UNIT, offset=np.array([0.1, 0, 0]))]
    pr = metrics.iou_pr(preds, gts, voxel=0.05)
    assert pr[0.5].matched == 1 and pr[0.5].recall == 0.5 and pr[0.5].precision == 1.0
    none = metrics.iou_pr([], gts, voxel=0.05)[0.25]
    assert none.precision == 0.0 and none.precision_undefined and none.recall == 0.0


def test_mesh_stats_welds_vertices():
    mesh = _cube_mesh()
    assert metrics.mesh_stats([mesh]) == (8, 12)
    dup = rc.RectilinearMesh(np.vstack([mesh.vertices, mesh.vertices]), mesh.quads)
    assert metrics.mesh_stats([dup]) == (8, 12)
    assert metrics.weld_count(np.array([[0, 0, 0], [1e-9, 0, 0], [1, 0, 0]], float)) == 2


def test_report_rendering():
    pr = {t: metrics.PrScore(t, 1, 1, 2) for t in metrics.DEFAULT_THRESHOLDS}
    empty = {t: metrics.PrScore(t, 0, 0, 3) for t in metrics.DEFAULT_THRESHOLDS}
    rep = metrics.EvalReport([
        metrics.SceneEval("a", 0.01, pr, 8, 12, 1, 2),
        metrics.SceneEval("b", None, empty, 0, 0, 0, 3),
    ])
    agg = rep.aggregate()
    assert agg["chamfer_mean"] == pytest.approx(0.01)
    assert agg["pr"]["0.50"]["recall"] == pytest.approx(0.2)
    text = rep.to_text()
    assert rep.header() == ["scene", "CD", "R@25", "P@25", "R@50", "P@50", "vertices", "faces"]
    assert "0.000*" in text and "precision undefined" in text
    csv = rep.to_csv().splitlines()
    assert csv[0].startswith("scene,CD") and csv[-1].startswith("mean,")
    assert len(csv) == 4
