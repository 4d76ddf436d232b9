"""Edge pruning and polycuboid instance extraction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import FaceLabel, RelationType
from .relgraph import FaceGraph


@dataclass
class PolycuboidInstance:
    faces: list
    labels: list
    edges: list
    rotation: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def face_ids(self) -> list[int]:
        return [int(f.id) for f in self.faces]

    def point_indices(self) -> np.ndarray:
        if not self.faces:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([f.point_indices for f in self.faces]))

    def to_dict(self) -> dict:
        return {
            "face_ids": self.face_ids,
            "labels": [FaceLabel(lab).short for lab in self.labels],
            "edges": [[int(a), int(b), r.value] for a, b, r in self.edges],
        }


def edge_is_valid(label_a: FaceLabel, label_b: FaceLabel, relation: Optional[RelationType]) -> bool:
    if relation is None or relation is RelationType.DISCONNECTED:
        return False
    if relation is RelationType.CONCAVE:
        return FaceLabel(label_a).perpendicular(FaceLabel(label_b))
    canon = relation.labels
    return tuple(sorted((FaceLabel(label_a), FaceLabel(label_b)))) == canon


def validate_edges(graph: FaceGraph) -> FaceGraph:
    """Keep convex edges whose endpoint labels match the type, and perpendicular concave edges."""
    kept = {
        (i, j): r
        for (i, j), r in graph.edges.items()
        if edge_is_valid(graph.labels[i], graph.labels[j], r)
    }
    return graph.copy(kept)


def extract_instances(graph: FaceGraph) -> list[PolycuboidInstance]:
    """Connected components of ``graph``, ordered by smallest member face id."""
    n = graph.n_nodes
    if n == 0:
        return []
    pairs = np.array(sorted(graph.edges), dtype=np.int64).reshape(-1, 2)
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, comp = connected_components(adj, directed=False)
    members: dict[int, list[int]] = {}
    for node in range(n):
        members.setdefault(int(comp[node]), []).append(node)
    groups = sorted(members.values(), key=lambda nodes: min(graph.faces[k].id for k in nodes))
    out = []
    for nodes in groups:
        nodes = sorted(nodes, key=lambda k: graph.faces[k].id)
        node_set = set(nodes)
        edges = [
            (graph.faces[i].id, graph.faces[j].id, r)
            for (i, j), r in sorted(graph.edges.items())
            if i in node_set and j in node_set
        ]
        out.append(
            PolycuboidInstance(
                [graph.faces[k] for k in nodes], [FaceLabel(graph.labels[k]) for k in nodes], edges
            )
        )
    return out


def instances_to_dict(instances: list[PolycuboidInstance]) -> dict:
    return {"instances": [dict(index=i, **inst.to_dict()) for i, inst in enumerate(instances)]}
