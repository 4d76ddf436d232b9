"""Shared scene builders for the test suite."""

from __future__ import annotations

import numpy as np

from polycuboid import assemble, facedetect, relgraph, synth
from polycuboid import reconstruct as rc

CUBE = [[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]]
# 2 x 2 x 1 block minus the (1..2, 1..2) corner column
L_SHAPE = [[[0.0, 0.0, 0.0], [2.0, 1.0, 1.0]], [[0.0, 1.0, 0.0], [1.0, 2.0, 1.0]]]


def scene_of(boxes_list, yaws=None, offsets=None, seed=0):
    shapes = []
    for i, boxes in enumerate(boxes_list):
        yaw = 0.0 if yaws is None else yaws[i]
        off = np.zeros(3) if offsets is None else np.asarray(offsets[i], float)
        shapes.append(synth.PolycuboidShape(np.array(boxes, float), yaw, off))
    return synth.SyntheticScene(shapes, seed, "random")


def cloud_of(scene, interval=0.01, sigma=0.0, holes=0, seed=0):
    cloud = synth.sample_surface(scene, interval)
    if sigma or holes:
        cloud = synth.corrupt(cloud, sigma, np.random.default_rng(seed), holes)
    return cloud


def oracle_faces(cloud):
    faces = facedetect.detect_faces(cloud.points, cloud.gt_label, cloud.gt_shift)
    facedetect.assign_gt_faces(faces, cloud.gt_face_id)
    return faces


def oracle_graph(scene, cloud, faces=None):
    faces = oracle_faces(cloud) if faces is None else faces
    gt = synth.gt_graph(scene, cloud)
    graph = relgraph.build_knn_graph(faces)
    provider = relgraph.relation_provider("oracle", cloud.points, gt, scene)
    return relgraph.classify_relations(graph, provider)


def oracle_instances(scene, cloud):
    return assemble.extract_instances(assemble.validate_edges(oracle_graph(scene, cloud)))


def fit_single(boxes, yaw=0.0, sigma=0.0, level=rc.COARSE, seed=0):
    scene = scene_of([boxes], [yaw])
    cloud = cloud_of(scene, sigma=sigma, seed=seed)
    instances = oracle_instances(scene, cloud)
    fits = [rc.reconstruct_instance(i, cloud.points, level) for i in instances]
    return scene, cloud, instances, fits
