import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polycuboid import synth
from polycuboid.core import Aabb, FaceLabel, RelationType, snap_to_label
from support import CUBE, L_SHAPE, cloud_of, scene_of


def _box_polygon(shape, lo, hi):
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    return corners @ shape.rotation[:2, :2].T + shape.translation[:2]


def _separated(p, q):
    for poly in (p, q):
        for i in range(4):
            e = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-e[1], e[0]])
            a, b = p @ axis, q @ axis
            if a.max() <= b.min() + 1e-12 or b.max() <= a.min() + 1e-12:
                return True
    return False


def test_cube_sampling_counts():
    cloud = synth.sample_surface(scene_of([CUBE]), interval=0.5)
    assert len(cloud) == 54
    assert len(np.unique(cloud.gt_face_id)) == 6
    assert sorted(np.unique(cloud.gt_label).tolist()) == list(range(6))


def test_l_shape_has_no_points_on_interior_face():
    cloud = synth.sample_surface(scene_of([L_SHAPE]), interval=0.05)
    # the two boxes share the face y = 1, x in [0, 1]; its interior is not surface
    on_shared = (np.abs(cloud.points[:, 1] - 1.0) < 1e-9) & (cloud.points[:, 0] > 0.01) & (cloud.points[:, 0] < 0.99) & (
        cloud.points[:, 2] > 0.01) & (cloud.points[:, 2] < 0.99)
    assert not on_shared.any()
    assert len(synth.shape_faces(scene_of([L_SHAPE]).shapes[0])) == 8


def test_label_and_shift_soundness():
    scene = scene_of([L_SHAPE], yaws=[0.4])
    cloud = synth.sample_surface(scene, 0.05)
    faces = synth.scene_faces(scene)
    for fid in np.unique(cloud.gt_face_id):
        f = faces[int(fid)]
        expected = snap_to_label(scene.shapes[0].rotation @ f.local_label.vector)
        assert np.all(cloud.gt_label[cloud.gt_face_id == fid] == int(expected))
        pts = cloud.points[cloud.gt_face_id == fid]
        moved = pts + cloud.gt_shift[cloud.gt_face_id == fid]
        assert np.abs(moved - pts.mean(axis=0)).max() < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_gen_polycuboid_properties(seed, max_boxes):
    shape = synth.gen_polycuboid(np.random.default_rng(seed), max_boxes)
    boxes = shape.boxes
    assert 1 <= len(boxes) <= max_boxes
    assert np.all(boxes[:, 1] - boxes[:, 0] >= 0.1 - 1e-9)
    assert synth.face_connected(boxes)
    ext = shape.local_aabb().extent
    assert 0.4 - 1e-9 <= ext.max() <= 2.4 + 1e-9
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            overlap = np.minimum(boxes[i, 1], boxes[j, 1]) - np.maximum(boxes[i, 0], boxes[j, 0])
            assert np.any(overlap <= 1e-9), "box interiors must be disjoint"


def test_gen_polycuboid_single_box_and_determinism():
    a = synth.gen_polycuboid(np.random.default_rng(3), 1)
    assert len(a.boxes) == 1
    b = synth.gen_polycuboid(np.random.default_rng(5), 3)
    c = synth.gen_polycuboid(np.random.default_rng(5), 3)
    assert np.array_equal(b.boxes, c.boxes)


def test_scene_random_determinism_and_count():
    a = synth.gen_scene_random(0)
    b = synth.gen_scene_random(0)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert len(synth.gen_scene_random(1, n_shapes=5).shapes) == 5
    with pytest.raises(ValueError):
        synth.gen_scene_random(1, n_shapes=21)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_scene_shapes_do_not_overlap(seed):
    scene = synth.gen_scene_random(seed)
    for i, a in enumerate(scene.shapes):
        for b in scene.shapes[i + 1:]:
            for alo, ahi in a.boxes:
                for blo, bhi in b.boxes:
                    z_apart = ahi[2] <= blo[2] or bhi[2] <= alo[2]
                    assert z_apart or _separated(_box_polygon(a, alo, ahi), _box_polygon(b, blo, bhi))


def test_placement_failure():
    with pytest.raises(synth.PlacementFailure):
        synth.gen_scene_random(0, n_shapes=20, clearance=50.0, max_attempts=3)


def test_contextual_scene_fits_boxes():
    boxes = synth.load_gt_boxes({"boxes": [
        {"min": [0, 0, 0], "max": [1, 1, 1]},
        {"center": [3, 0.5, 0.4], "extent": [1.2, 0.8, 0.8]},
    ]})
    scene = synth.gen_scene_contextual(boxes, np.random.default_rng(0))
    assert len(scene.shapes) == 2
    for shape, box in zip(scene.shapes, boxes):
        w = shape.world_aabb()
        assert np.all(w.min >= box.min - 1e-9) and np.all(w.max <= box.max + 1e-9)
    again = synth.gen_scene_contextual(boxes, np.random.default_rng(0))
    assert all(np.array_equal(a.boxes, b.boxes) for a, b in zip(scene.shapes, again.shapes))


def test_corrupt_identity_and_holes():
    scene = scene_of([CUBE])
    clean = synth.sample_surface(scene, 0.05)
    same = synth.corrupt(clean, 0.0, np.random.default_rng(0), 0)
    assert np.array_equal(same.points, clean.points)
    holed = synth.corrupt(clean, 0.0, np.random.default_rng(0), 1)
    per_face = len(clean) // 6
    assert len(clean) - len(holed) == per_face
    assert len(np.unique(holed.gt_face_id)) == 5


def test_corrupt_noise_bound_and_shift_recompute():
    sigma = 0.005
    clean = synth.sample_surface(scene_of([CUBE]), 0.02)
    noisy = synth.corrupt(clean, sigma, np.random.default_rng(1), 0)
    disp = np.linalg.norm(noisy.points - clean.points, axis=1)
    assert np.mean(disp < 4 * sigma * np.sqrt(3)) >= 0.99
    for fid in np.unique(noisy.gt_face_id):
        sel = noisy.gt_face_id == fid
        moved = noisy.points[sel] + noisy.gt_shift[sel]
        assert np.abs(moved - noisy.points[sel].mean(axis=0)).max() < 1e-9


def test_corrupt_keeps_a_face_per_shape():
    clean = synth.sample_surface(scene_of([CUBE]), 0.1)
    out = synth.corrupt(clean, 0.0, np.random.default_rng(0), 10)
    assert len(np.unique(out.gt_face_id)) == 1


def test_gt_graph_cube_and_l_shape():
    scene = scene_of([CUBE])
    g = synth.gt_graph(scene, synth.sample_surface(scene, 0.05))
    rels = [r for _, _, r in g.edges]
    assert len(g.nodes) == 6
    convex = [r for r in rels if r.is_convex]
    assert len(convex) == 12 and len(set(convex)) == 12
    assert rels.count(RelationType.DISCONNECTED) == 3

    lscene = scene_of([L_SHAPE])
    lg = synth.gt_graph(lscene, synth.sample_surface(lscene, 0.05))
    concave = [(a, b) for a, b, r in lg.edges if r is RelationType.CONCAVE]
    assert len(concave) == 1
    labels = {lg.nodes[f]["label"] for f in concave[0]}
    assert labels == {FaceLabel.PX, FaceLabel.PY}


def test_gt_graph_distant_cuboids_cross_edges_disconnected():
    scene = scene_of([CUBE, CUBE], offsets=[[0, 0, 0], [5, 0, 0]])
    g = synth.gt_graph(scene, synth.sample_surface(scene, 0.05))
    for a, b, r in g.edges:
        if a // synth.FACE_ID_STRIDE != b // synth.FACE_ID_STRIDE:
            assert r is RelationType.DISCONNECTED


def test_serialization_roundtrips():
    scene = synth.gen_scene_random(4)
    back = synth.SyntheticScene.from_dict(json.loads(json.dumps(scene.to_dict())))
    assert all(np.array_equal(a.boxes, b.boxes) and a.yaw == b.yaw for a, b in zip(scene.shapes, back.shapes))
    cloud = cloud_of(scene_of([L_SHAPE]), interval=0.1)
    g = synth.gt_graph(scene_of([L_SHAPE]), cloud)
    g2 = synth.GtRelationGraph.from_dict(json.loads(json.dumps(g.to_dict())))
    assert g2.edges == g.edges and g2.nodes == g.nodes


def test_manifold_lattice_rejects_edge_contact():
    # two unit boxes touching only along an edge
    boxes = np.array([[[0, 0, 0], [1, 1, 1]], [[1, 1, 0], [2, 2, 1]]], float)
    assert not synth.is_manifold_lattice(boxes)
    assert synth.is_manifold_lattice(np.array(L_SHAPE))


def test_load_gt_boxes_rejects_garbage():
    with pytest.raises((KeyError, ValueError, TypeError)):
        synth.load_gt_boxes({"boxes": [{"foo": 1}]})
    assert isinstance(synth.load_gt_boxes([{"min": [0, 0, 0], "max": [1, 1, 1]}])[0], Aabb)
