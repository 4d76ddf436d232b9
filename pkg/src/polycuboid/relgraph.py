"""Face adjacency graph and relation classification."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import FaceLabel, PolycuboidError, RelationType, knn_union_edges, snap_to_label
from .facedetect import DetectedFace
from .synth import FACE_ID_STRIDE, GtRelationGraph, SyntheticScene, face_relation, scene_faces

log = logging.getLogger(__name__)

DEFAULT_K = 5
TAU_TOUCH = 0.05
TAU_SIDE = 0.01
CONTACT_RADIUS = 0.15


class OracleMismatch(PolycuboidError):
    pass


@dataclass
class FaceGraph:
    """Undirected graph over detected faces.

    ``labels`` holds each node's working label (may differ from the detected
    one after re-labelling). ``edges`` maps (i, j), i < j, to a RelationType
    or None while unclassified.
    """

    faces: list
    labels: list
    edges: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.faces)

    def neighbours(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def copy(self, edges: Optional[dict] = None) -> "FaceGraph":
        return FaceGraph(list(self.faces), list(self.labels), dict(self.edges if edges is None else edges))

    def to_dict(self) -> dict:
        nodes = []
        for f, lab in zip(self.faces, self.labels):
            node = {"face_id": int(f.id), "label": FaceLabel(lab).short, "detected_face": int(f.id)}
            if f.gt_face_id is not None:
                node["gt_face_id"] = int(f.gt_face_id)
            nodes.append(node)
        edges = [
            {
                "a": int(self.faces[i].id),
                "b": int(self.faces[j].id),
                "relation": None if r is None else r.value,
            }
            for (i, j), r in sorted(self.edges.items())
        ]
        return {"nodes": nodes, "edges": edges}

    @classmethod
    def from_dict(cls, data: dict, faces: list) -> "FaceGraph":
        by_id = {f.id: k for k, f in enumerate(faces)}
        labels = [FaceLabel.from_short(n["label"]) for n in data["nodes"]]
        edges = {}
        for e in data["edges"]:
            i, j = sorted((by_id[e["a"]], by_id[e["b"]]))
            edges[(i, j)] = None if e["relation"] is None else RelationType(e["relation"])
        return cls(list(faces), labels, edges)


def build_knn_graph(faces: list, k: int = DEFAULT_K) -> FaceGraph:
    """Union of each face's ``k`` nearest faces by centroid distance."""
    if k < 1:
        raise ValueError("k must be >= 1")
    centroids = np.array([f.centroid for f in faces]).reshape(-1, 3)
    edges = {e: None for e in knn_union_edges(centroids, k)}
    return FaceGraph(list(faces), [f.label for f in faces], edges)


# ---------------------------------------------------------------------------
# relation providers

@dataclass
class OracleRelations:
    """Relations copied from a ground-truth graph via majority gt_face_id.

    Pairs absent from the ground-truth edge list fall back to the analytic
    relation when the scene is known, else Disconnected.
    """

    gt: GtRelationGraph
    scene: Optional[SyntheticScene] = None

    def __post_init__(self):
        self._faces = scene_faces(self.scene) if self.scene is not None else None

    def classify(self, graph: FaceGraph, i: int, j: int) -> RelationType:
        ga, gb = graph.faces[i].gt_face_id, graph.faces[j].gt_face_id
        for g in (ga, gb):
            if g is None or g not in self.gt.nodes:
                raise OracleMismatch(f"detected face matches no ground-truth face (gt id {g})")
        if ga == gb:
            return RelationType.DISCONNECTED
        rel = self.gt.relation(ga, gb)
        if rel is not None:
            return rel
        if ga // FACE_ID_STRIDE != gb // FACE_ID_STRIDE:
            return RelationType.DISCONNECTED
        if self._faces is not None:
            fa, fb = self._faces[ga], self._faces[gb]
            return face_relation(fa, fb, self.scene.shapes[fa.shape_index].rotation)
        return RelationType.DISCONNECTED


@dataclass
class GeometricRelations:
    """Classical relation test from face planes and point sets.

    Parallel faces are Disconnected. Perpendicular faces must come within
    ``tau_touch`` of each other; then each face's contact-local centroid (its
    points within ``contact_radius`` of the other face) is tested against the
    other face's plane: both inside by more than ``tau_side`` is convex, both
    outside is concave, anything else Disconnected.
    """

    points: np.ndarray
    tau_touch: float = TAU_TOUCH
    tau_side: float = TAU_SIDE
    contact_radius: float = CONTACT_RADIUS
    _trees: dict = field(default_factory=dict, repr=False)

    def _tree(self, face: DetectedFace) -> cKDTree:
        tree = self._trees.get(face.id)
        if tree is None:
            tree = cKDTree(self.points[face.point_indices])
            self._trees[face.id] = tree
        return tree

    def classify(self, graph: FaceGraph, i: int, j: int) -> RelationType:
        fa, fb = graph.faces[i], graph.faces[j]
        la, lb = FaceLabel(graph.labels[i]), FaceLabel(graph.labels[j])
        if not la.perpendicular(lb):
            return RelationType.DISCONNECTED
        pa = self.points[fa.point_indices]
        pb = self.points[fb.point_indices]
        da, _ = self._tree(fb).query(pa, k=1, distance_upper_bound=self.contact_radius)
        if not np.isfinite(da).any() or da.min() > self.tau_touch:
            return RelationType.DISCONNECTED
        db, _ = self._tree(fa).query(pb, k=1, distance_upper_bound=self.contact_radius)
        near_a = pa[np.isfinite(da)]
        near_b = pb[np.isfinite(db)]
        if len(near_a) == 0 or len(near_b) == 0:
            return RelationType.DISCONNECTED
        na, nb = _oriented_normal(fa, la), _oriented_normal(fb, lb)
        side_a = (near_a.mean(axis=0) - fb.centroid) @ nb
        side_b = (near_b.mean(axis=0) - fa.centroid) @ na
        if side_a < -self.tau_side and side_b < -self.tau_side:
            return RelationType.convex(la, lb)
        if side_a > self.tau_side and side_b > self.tau_side:
            return RelationType.CONCAVE
        return RelationType.DISCONNECTED


def _oriented_normal(face: DetectedFace, label: FaceLabel) -> np.ndarray:
    n = face.plane.normal
    return n if n @ label.vector >= 0 else -n


def classify_relations(graph: FaceGraph, provider, relabel: bool = False) -> FaceGraph:
    """Classify every edge; optionally run one label-correction pass first."""
    out = graph.copy()
    if relabel:
        out = relabel_nodes(out, provider)
    for i, j in sorted(out.edges):
        out.edges[(i, j)] = provider.classify(out, i, j)
    return out


def relabel_nodes(graph: FaceGraph, provider) -> FaceGraph:
    """Single pass, ascending node id: flip labels that contradict most convex edges.

    The candidates for a node are the two labels on its plane's normal axis.
    An edge supports a candidate when it classifies as convex with the node
    carrying that label. If more than half of the supporting edges reject
    the current label, the node takes the candidate with the most support
    (ties keep the current label).
    """
    out = graph.copy()
    for i in range(out.n_nodes):
        current = FaceLabel(out.labels[i])
        axis = int(np.argmax(np.abs(out.faces[i].plane.normal)))
        candidates = [FaceLabel.from_axis(axis, 1), FaceLabel.from_axis(axis, -1)]
        support = {c: set() for c in candidates}
        for j in out.neighbours(i):
            a, b = sorted((i, j))
            for cand in candidates:
                out.labels[i] = cand
                if provider.classify(out, a, b).is_convex:
                    support[cand].add(j)
        out.labels[i] = current
        convex = set().union(*support.values())
        if not convex:
            continue
        agree = len(support.get(current, ()))
        if (len(convex) - agree) * 2 > len(convex):
            best = max(candidates, key=lambda c: (len(support[c]), c == current))
            if best != current:
                log.debug("relabel node %d: %s -> %s", i, current.short, best.short)
                out.labels[i] = best
    return out


def relation_provider(mode: str, points: np.ndarray, gt: Optional[GtRelationGraph] = None,
                      scene: Optional[SyntheticScene] = None, **params):
    if mode == "oracle":
        if gt is None:
            from .facedetect import MissingGroundTruth

            raise MissingGroundTruth("oracle relations need a ground-truth graph")
        return OracleRelations(gt, scene)
    return GeometricRelations(points, **params)


def world_label(normal: np.ndarray) -> FaceLabel:
    return snap_to_label(normal)
