import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from polycuboid import assemble
from polycuboid.core import FaceLabel, Plane, RelationType
from polycuboid.facedetect import DetectedFace
from polycuboid.relgraph import FaceGraph
from support import CUBE, L_SHAPE, cloud_of, oracle_instances, scene_of


def test_edge_validity_rules():
    px, nx, py, pz = FaceLabel.PX, FaceLabel.NX, FaceLabel.PY, FaceLabel.PZ
    rel = RelationType.convex(px, py)
    assert assemble.edge_is_valid(px, py, rel)
    assert assemble.edge_is_valid(py, px, rel)
    assert not assemble.edge_is_valid(px, pz, rel)
    assert assemble.edge_is_valid(px, pz, RelationType.CONCAVE)
    assert not assemble.edge_is_valid(px, nx, RelationType.CONCAVE)
    assert not assemble.edge_is_valid(px, py, RelationType.DISCONNECTED)
    assert not assemble.edge_is_valid(px, py, None)


def test_two_cubes_give_two_instances():
    scene = scene_of([CUBE, L_SHAPE], offsets=[[0, 0, 0], [3, 0, 0]])
    inst = oracle_instances(scene, cloud_of(scene, 0.05))
    assert [len(i.faces) for i in inst] == [6, 8]
    assert inst[0].face_ids < inst[1].face_ids
    assert all(r is not RelationType.DISCONNECTED for i in inst for _, _, r in i.edges)


def test_touching_cubes_stay_separate():
    # the faces across the 2 cm gap are parallel, so no valid edge links the cubes
    scene = scene_of([CUBE, CUBE], offsets=[[0, 0, 0], [1.02, 0, 0]])
    inst = oracle_instances(scene, cloud_of(scene, 0.05))
    assert len(inst) == 2


def _dummy_faces(labels):
    return [
        DetectedFace(i, np.array([i]), FaceLabel(lab), Plane(FaceLabel(lab).vector, 0.0), np.zeros(3), (1, 1))
        for i, lab in enumerate(labels)
    ]


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_instances_invariant_under_node_renumbering(data):
    n = data.draw(st.integers(1, 12))
    labels = data.draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
    faces = _dummy_faces(labels)
    rels = list(RelationType) + [None]
    edges = {}
    for i in range(n):
        for j in range(i + 1, n):
            if data.draw(st.booleans()):
                edges[(i, j)] = data.draw(st.sampled_from(rels))
    g = FaceGraph(faces, [FaceLabel(x) for x in labels], edges)
    perm = data.draw(st.permutations(range(n)))
    inv = {old: new for new, old in enumerate(perm)}
    g2 = FaceGraph(
        [faces[p] for p in perm],
        [FaceLabel(labels[p]) for p in perm],
        {tuple(sorted((inv[i], inv[j]))): r for (i, j), r in edges.items()},
    )

    def summary(graph):
        inst = assemble.extract_instances(assemble.validate_edges(graph))
        return [(i.face_ids, sorted((min(a, b), max(a, b), r) for a, b, r in i.edges)) for i in inst]

    a, b = summary(g), summary(g2)
    assert [x[0] for x in a] == [x[0] for x in b]
    assert [len(x[1]) for x in a] == [len(x[1]) for x in b]
    covered = sorted(f for ids, _ in a for f in ids)
    assert covered == list(range(n))


def test_instance_dict_and_points():
    scene = scene_of([CUBE])
    cloud = cloud_of(scene, 0.1)
    inst = oracle_instances(scene, cloud)
    assert len(inst) == 1
    assert len(inst[0].point_indices()) == len(cloud)
    d = assemble.instances_to_dict(inst)
    assert d["instances"][0]["index"] == 0 and len(d["instances"][0]["edges"]) == 12
