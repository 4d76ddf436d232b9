import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polycuboid import reconstruct as rc
from polycuboid.core import FaceLabel, rotation_angle, yaw_matrix
from polycuboid.synth import sample_surface
from reference import naive_scores
from support import CUBE, L_SHAPE, cloud_of, fit_single, oracle_instances, scene_of


def _mesh_volume(mesh):
    v = mesh.vertices
    total = 0.0
    for a, b, c, d in mesh.quads:
        for t in ((a, b, c), (a, c, d)):
            total += np.linalg.det(v[list(t)]) / 6.0
    return total


def _sel(mask, cuts=None):
    mask = np.asarray(mask, bool)
    cuts = cuts or [np.arange(n + 1, dtype=float) for n in mask.shape]
    return rc.BoxSelection(rc.NonUniformGrid(tuple(cuts)), mask.astype(float), mask)


@st.composite
def grids_and_points(draw):
    cuts = []
    for _ in range(3):
        n = draw(st.integers(1, 4))
        widths = draw(st.lists(st.floats(0.03, 0.8), min_size=n, max_size=n))
        cuts.append(np.concatenate([[0.0], np.cumsum(widths)]))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    m = draw(st.integers(0, 150))
    hi = np.array([c[-1] for c in cuts])
    pts = rng.uniform(-0.1, 1, size=(m, 3)) * (hi + 0.2)
    # snap some points onto cut planes so every face sees votes
    for k in range(0, m, 3):
        a = k % 3
        pts[k, a] = cuts[a][rng.integers(len(cuts[a]))]
    labels = rng.integers(0, 6, size=m)
    return cuts, pts, labels


@settings(max_examples=60, deadline=None)
@given(grids_and_points(), st.sampled_from([0.02, 0.05]), st.sampled_from([0.0, 0.02, 0.1]))
def test_score_grid_matches_naive(case, band, margin):
    cuts, pts, labels = case
    grid = rc.NonUniformGrid(tuple(cuts))
    fast = rc.score_grid(grid, pts, labels, band, margin)
    slow = naive_scores(cuts, pts, labels, band, margin)
    assert np.allclose(fast, slow, atol=1e-9)


def test_grid_validation_and_subdivide():
    with pytest.raises(ValueError):
        rc.NonUniformGrid(([0.0], [0.0, 1.0], [0.0, 1.0]))
    with pytest.raises(ValueError):
        rc.NonUniformGrid(([0.0, 0.0], [0.0, 1.0], [0.0, 1.0]))
    g = rc.NonUniformGrid(([0.0, 0.25, 1.0], [0.0, 0.05], [0.0, 1.0]))
    fine, parents = g.subdivide(0.1)
    assert fine.shape == (3 + 8, 1, 10)
    assert parents[0].tolist() == [0] * 3 + [1] * 8
    assert np.isclose(fine.cuts[0][-1], 1.0)


def test_cube_grid_and_mesh():
    _, _, inst, fits = fit_single(CUBE)
    fit = fits[0]
    assert fit.grid.shape == (1, 1, 1)
    assert fit.selection.scores[0, 0, 0] == pytest.approx(6.0)
    assert len(fit.mesh.vertices) == 8 and len(fit.mesh.quads) == 6
    assert fit.mesh.n_triangles == 12
    assert rc.is_watertight(fit.mesh) and rc.euler_characteristic(fit.mesh) == 2
    assert _mesh_volume(fit.mesh) == pytest.approx(1.0, abs=1e-9)


def test_l_shape_removes_corner_cell():
    _, _, _, fits = fit_single(L_SHAPE)
    fit = fits[0]
    assert fit.grid.shape == (2, 2, 1)
    assert fit.selection.cells == {(0, 0, 0), (1, 0, 0), (0, 1, 0)}
    assert fit.selection.scores[1, 1, 0] < 0
    assert len(fit.mesh.quads) == 10
    assert rc.is_watertight(fit.mesh)
    assert _mesh_volume(fit.mesh) == pytest.approx(3.0, abs=1e-9)


def test_fill_enclosed_only_fills_sealed_zero_cells():
    mask = np.ones((3, 3, 3), bool)
    mask[1, 1, 1] = False
    sel = rc.BoxSelection(rc.NonUniformGrid(tuple(np.arange(4.0) for _ in range(3))), np.ones((3, 3, 3)), mask)
    sel.scores[1, 1, 1] = 0.0
    assert rc.fill_enclosed(sel).selected.all()
    sel.scores[1, 1, 1] = -0.5
    assert not rc.fill_enclosed(sel).selected[1, 1, 1]
    mask[0, 0, 0] = False
    sel2 = rc.BoxSelection(sel.grid, np.where(mask, 1.0, 0.0), mask)
    # the corner hole touches the exterior and stays open
    assert not rc.fill_enclosed(sel2).selected[0, 0, 0]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=27, max_size=27), st.booleans())
def test_mesh_encloses_selected_volume(bits, merge):
    mask = np.array(bits).reshape(3, 3, 3)
    if not mask.any():
        return
    cuts = [np.array([0.0, 0.3, 1.0, 1.2]), np.array([0.0, 1.0, 1.5, 2.5]), np.array([0.0, 0.1, 0.2, 0.6])]
    sel = _sel(mask, cuts)
    mesh = rc.mesh_from_selection(sel, merge=merge)
    assert _mesh_volume(mesh) == pytest.approx(sel.volume(), abs=1e-9)
    rot = yaw_matrix(0.7)
    assert _mesh_volume(rc.mesh_from_selection(sel, rot, merge=merge)) == pytest.approx(sel.volume(), abs=1e-9)


def test_merged_slab_is_six_quads_and_watertight_with_t_junctions():
    mesh = rc.mesh_from_selection(_sel(np.ones((3, 2, 1))))
    assert len(mesh.quads) == 6 and len(mesh.vertices) == 8
    step = np.zeros((2, 2, 2), bool)
    step[:, :, 0] = True
    step[0, 0, 1] = True
    m = rc.mesh_from_selection(_sel(step))
    assert rc.is_watertight(m) and rc.euler_characteristic(m) == 2
    unmerged = rc.mesh_from_selection(_sel(step), merge=False)
    assert len(unmerged.quads) > len(m.quads) and rc.is_watertight(unmerged)


def test_edge_touching_cells_are_not_watertight():
    diag = np.zeros((2, 2, 1), bool)
    diag[0, 0, 0] = diag[1, 1, 0] = True
    assert not rc.is_watertight(rc.mesh_from_selection(_sel(diag)))
    with pytest.raises(rc.EmptySelection):
        rc.mesh_from_selection(_sel(np.zeros((1, 1, 1))))


def test_colorize_mean_and_fallback():
    mesh = rc.mesh_from_selection(_sel(np.ones((1, 1, 1))))
    pts = np.array([[0.5, 0.5, 1.0], [0.4, 0.6, 1.01]])
    cols = np.array([[255, 0, 0], [255, 0, 10]])
    out = rc.colorize(mesh, pts, cols, fallback=np.array([1, 2, 3]))
    top = int(np.argmax(mesh.vertices[mesh.quads][:, :, 2].mean(axis=1)))
    assert out.colors[top].tolist() == [255, 0, 5]
    others = [c.tolist() for k, c in enumerate(out.colors) if k != top]
    assert all(c == [1, 2, 3] for c in others)
    assert rc.colorize(mesh, pts, None) is mesh


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.5, 0.5), st.integers(0, 1000))
def test_alignment_is_orthonormal_and_recovers_yaw(yaw, seed):
    scene = scene_of([L_SHAPE], yaws=[yaw])
    cloud = cloud_of(scene, 0.05, sigma=0.003, seed=seed)
    inst = oracle_instances(scene, cloud)[0]
    r = rc.align_instance(inst, cloud.points)
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-9)
    assert np.linalg.det(r) == pytest.approx(1.0)
    assert rotation_angle(r.T @ yaw_matrix(yaw)) < np.deg2rad(2.0)


def test_single_axis_instance_uses_yaw_only_alignment():
    scene = scene_of([CUBE], yaws=[0.3])
    cloud = sample_surface(scene, 0.02)
    inst = oracle_instances(scene, cloud)[0]
    tops = [k for k, lab in enumerate(inst.labels) if FaceLabel(lab).axis == 2]
    with pytest.raises(rc.DegenerateAlignment):
        rc.wahba_align([inst.faces[k] for k in tops], [inst.labels[k] for k in tops])
    r = rc.yaw_only_align([inst.faces[k] for k in tops], [inst.labels[k] for k in tops],
                          cloud.points[np.concatenate([inst.faces[k].point_indices for k in tops])])
    assert rotation_angle(r.T @ yaw_matrix(0.3)) < 1e-6


@pytest.mark.parametrize("boxes", [CUBE, L_SHAPE])
def test_fine_volume_close_to_coarse(boxes):
    _, _, _, coarse = fit_single(boxes, sigma=0.005, seed=2)
    _, _, _, fine = fit_single(boxes, sigma=0.005, seed=2, level=rc.FINE)
    vc, vf = coarse[0].selection.volume(), fine[0].selection.volume()
    assert abs(vf - vc) <= 0.2 * vc
    assert fine[0].selection.grid.n_cells > coarse[0].selection.grid.n_cells


def test_grid_cuts_dedup_close_planes():
    _, _, _, fits = fit_single(CUBE, sigma=0.004, seed=5)
    for c in fits[0].grid.cuts:
        assert np.all(np.diff(c) >= rc.DEFAULT_MIN_SLAB)
