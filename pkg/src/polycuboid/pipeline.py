"""End-to-end fitting of a point cloud into polycuboid meshes."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import assemble, facedetect, reconstruct, relgraph
from .config import PipelineConfig
from .facedetect import MissingGroundTruth
from .metrics import Solid
from .synth import GtRelationGraph, LabeledPointCloud, SyntheticScene

log = logging.getLogger(__name__)

LAYOUT, OBJECT = "layout", "object"


@dataclass
class FittedInstance:
    index: int
    tag: Optional[str]
    instance: assemble.PolycuboidInstance
    fit: reconstruct.InstanceFit

    @property
    def mesh(self) -> reconstruct.RectilinearMesh:
        return self.fit.mesh

    def solid(self) -> Solid:
        return Solid(self.fit.selection.boxes(), self.fit.rotation)

    def to_dict(self) -> dict:
        sel = self.fit.selection
        cells = sorted(sel.cells)
        return {
            "index": self.index,
            "tag": self.tag,
            "face_ids": self.instance.face_ids,
            "gt_face_ids": [f.gt_face_id for f in self.instance.faces],
            "n_faces": len(self.instance.faces),
            "n_points": int(len(self.instance.point_indices())),
            "rotation": self.fit.rotation.tolist(),
            "grid": sel.grid.to_dict(),
            "selected_cells": [list(c) for c in cells],
            "scores": [float(sel.scores[c]) for c in cells],
            "boxes": sel.boxes().tolist(),
            "n_vertices": int(len(self.mesh.vertices)),
            "n_quads": int(len(self.mesh.quads)),
        }


@dataclass
class FitResult:
    instances: list
    n_faces: int
    skipped: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    debug: dict = field(default_factory=dict)

    @property
    def meshes(self) -> list:
        return [fi.mesh for fi in self.instances]

    def report(self, config: PipelineConfig) -> dict:
        return {
            "config": config.to_dict(),
            "n_instances": len(self.instances),
            "n_faces": self.n_faces,
            "instances": [fi.to_dict() for fi in self.instances],
            "skipped": self.skipped,
        }


def _params(config: PipelineConfig) -> reconstruct.ReconstructParams:
    return reconstruct.ReconstructParams(
        band=config.band,
        margin=config.margin,
        dedup=config.dedup,
        min_slab=config.min_slab,
        min_thickness=config.min_thickness,
        fine_interval=config.fine_interval,
        merge_quads=config.merge_quads,
    )


def _fit_subset(
    cloud: LabeledPointCloud,
    config: PipelineConfig,
    gt: Optional[GtRelationGraph],
    scene: Optional[SyntheticScene],
    tag: Optional[str],
    start_index: int,
    out: FitResult,
) -> None:
    timing = out.timing
    t0 = time.perf_counter()
    provider = facedetect.LabelProvider(config.mode, config.k_normals, config.eps, config.min_pts)
    labels, shifts = facedetect.classify_labels(cloud, provider)
    faces = facedetect.detect_faces(cloud.points, labels, shifts, config.eps, config.min_pts, config.min_size)
    if cloud.gt_face_id is not None:
        facedetect.assign_gt_faces(faces, cloud.gt_face_id)
    t1 = time.perf_counter()
    graph = relgraph.build_knn_graph(faces, config.k)
    rel = relgraph.relation_provider(
        config.mode, cloud.points, gt, scene,
        **({} if config.mode == "oracle" else dict(
            tau_touch=config.tau_touch, tau_side=config.tau_side, contact_radius=config.contact_radius)),
    )
    graph = relgraph.classify_relations(graph, rel, relabel=config.do_relabel)
    valid = assemble.validate_edges(graph)
    instances = assemble.extract_instances(valid)
    t2 = time.perf_counter()
    params = _params(config)
    index = start_index
    for inst in instances:
        name = f"instance_{index:03d}"
        try:
            fit = reconstruct.reconstruct_instance(inst, cloud.points, config.level, params, name)
        except reconstruct.EmptySelection:
            out.skipped.append({"tag": tag, "face_ids": inst.face_ids, "reason": "empty selection"})
            log.info("instance with faces %s selected no cells", inst.face_ids)
            continue
        if cloud.colors is not None:
            idx = inst.point_indices()
            fit.mesh = reconstruct.colorize(
                fit.mesh, cloud.points[idx], cloud.colors[idx], config.band,
                fallback=cloud.colors[idx].astype(float).mean(axis=0),
            )
        fit.mesh.name, fit.mesh.tag = name, tag
        out.instances.append(FittedInstance(index, tag, inst, fit))
        index += 1
    t3 = time.perf_counter()
    out.n_faces += len(faces)
    for key, dt in (("faces", t1 - t0), ("graph", t2 - t1), ("reconstruct", t3 - t2)):
        timing[key] = timing.get(key, 0.0) + dt
    prefix = tag or "all"
    out.debug[prefix] = {
        "face_ids": facedetect.face_cluster_ids(len(cloud), faces),
        "graph": graph.to_dict(),
        "instances": assemble.instances_to_dict(instances),
    }


def fit_cloud(
    cloud: LabeledPointCloud,
    config: Optional[PipelineConfig] = None,
    gt: Optional[GtRelationGraph] = None,
    scene: Optional[SyntheticScene] = None,
    layout_mask: Optional[np.ndarray] = None,
) -> FitResult:
    """Run the full pipeline; with a layout mask, layout (mask != 0) and objects are fitted separately."""
    config = config or PipelineConfig()
    if config.mode == "oracle":
        if not cloud.has_ground_truth:
            raise MissingGroundTruth("oracle mode needs gt_label, gt_shift and gt_face_id per point")
        if gt is None:
            raise MissingGroundTruth("oracle mode needs a ground-truth relation graph")
    out = FitResult([], 0)
    t = time.perf_counter()
    if layout_mask is None:
        _fit_subset(cloud, config, gt, scene, None, 0, out)
    else:
        mask = np.asarray(layout_mask) != 0
        for tag, sel in ((LAYOUT, mask), (OBJECT, ~mask)):
            if sel.any():
                _fit_subset(cloud.subset(sel), config, gt, scene, tag, len(out.instances), out)
    out.timing["total"] = time.perf_counter() - t
    return out
