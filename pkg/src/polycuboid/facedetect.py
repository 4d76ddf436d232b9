"""Per-point face labelling and polycuboid face detection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import (
    AXIS_DIRECTIONS,
    DegenerateInput,
    FaceLabel,
    Plane,
    PolycuboidError,
    SpatialIndex,
    fit_plane,
    orient_by_probe,
    plane_basis,
)
from .synth import LabeledPointCloud

log = logging.getLogger(__name__)

DEFAULT_EPS = 0.03
DEFAULT_MIN_PTS = 10
DEFAULT_MIN_SIZE = 0.05
# Shifted points are snapped to this lattice so float round-off does not
# spread points that land on the same face centre.
SHIFT_QUANTUM = 1e-6


class MissingGroundTruth(PolycuboidError):
    pass


@dataclass
class LabelProvider:
    """Where per-point labels come from: ground truth (oracle) or normals (classical)."""

    mode: str = "oracle"
    k_normals: int = 30
    eps: float = DEFAULT_EPS
    min_pts: int = DEFAULT_MIN_PTS

    def __post_init__(self):
        if self.mode not in ("oracle", "classical"):
            raise ValueError(f"unknown label provider mode {self.mode!r}")


@dataclass
class DetectedFace:
    id: int
    point_indices: np.ndarray
    label: FaceLabel
    plane: Plane
    centroid: np.ndarray
    extent_2d: tuple
    gt_face_id: Optional[int] = None
    extra: dict = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return len(self.point_indices)


# ---------------------------------------------------------------------------
# DBSCAN

def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Cluster id per point (noise = -1).

    Core points have at least ``min_pts`` points (self included) within
    ``eps``. Clusters are numbered by their lowest-index core point; a border
    point joins the lowest-numbered cluster among its core neighbours, which
    is what the sequential algorithm produces when scanning points in index
    order. Exact duplicates are collapsed first, which leaves the result
    unchanged.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts = np.asarray(points, float).reshape(-1, 3)
    n_all = len(pts)
    if n_all == 0:
        return np.zeros(0, dtype=np.int64)
    uniq, first, inverse, counts = _unique_with_first(pts)
    n = len(uniq)
    pairs = cKDTree(uniq).query_pairs(eps, output_type="ndarray")
    if len(pairs) == 0:
        pairs = np.zeros((0, 2), dtype=np.int64)
    i, j = pairs[:, 0], pairs[:, 1]
    weight = counts.astype(np.int64).copy()
    np.add.at(weight, i, counts[j])
    np.add.at(weight, j, counts[i])
    core = weight >= min_pts

    both = core[i] & core[j]
    graph = coo_matrix((np.ones(int(both.sum())), (i[both], j[both])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)

    big = np.iinfo(np.int64).max
    labels = np.full(n, -1, dtype=np.int64)
    core_idx = np.flatnonzero(core)
    if len(core_idx):
        comp_core = comp[core_idx]
        lowest = np.full(comp.max() + 1, big)
        np.minimum.at(lowest, comp_core, first[core_idx])
        present = np.unique(comp_core)
        remap = np.full(comp.max() + 1, -1, dtype=np.int64)
        remap[present[np.argsort(lowest[present], kind="stable")]] = np.arange(len(present))
        labels[core_idx] = remap[comp_core]
        best = np.full(n, big)
        for a, b in ((i, j), (j, i)):
            sel = ~core[a] & core[b]
            np.minimum.at(best, a[sel], labels[b[sel]])
        border = ~core & (best < big)
        labels[border] = best[border]
    return labels[inverse]


def _unique_with_first(pts: np.ndarray):
    uniq, first, inverse, counts = np.unique(
        pts, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    return uniq, first, inverse.reshape(-1), counts


def gap_split(values: np.ndarray, gap: float) -> np.ndarray:
    """1-D clustering: consecutive sorted values further apart than ``gap`` start a new group."""
    order = np.argsort(values, kind="stable")
    breaks = np.diff(values[order]) > gap
    groups_sorted = np.concatenate([[0], np.cumsum(breaks)])
    out = np.empty(len(values), dtype=np.int64)
    out[order] = groups_sorted
    return out


# ---------------------------------------------------------------------------
# normals and labels

def _pca_normals(points: np.ndarray, index: SpatialIndex, k: int, chunk: int = 200_000) -> np.ndarray:
    normals = np.empty_like(points)
    for s in range(0, len(points), chunk):
        _, idx = index.knn_many(points[s:s + chunk], k)
        nb = points[idx]
        nb = nb - nb.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", nb, nb)
        _, evecs = np.linalg.eigh(cov)
        normals[s:s + chunk] = evecs[:, :, 0]
    return normals


def _patches(points: np.ndarray, normals: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Planar patch id per point (-1 = none): dominant normal axis, DBSCAN, then depth gaps."""
    patch = np.full(len(points), -1, dtype=np.int64)
    axis = np.argmax(np.abs(normals), axis=1)
    next_id = 0
    for a in range(3):
        idx = np.flatnonzero(axis == a)
        if len(idx) == 0:
            continue
        cl = dbscan(points[idx], eps, min_pts)
        for c in range(cl.max() + 1):
            members = idx[cl == c]
            depth = gap_split(points[members, a], eps)
            for g in range(depth.max() + 1):
                patch[members[depth == g]] = next_id
                next_id += 1
    return patch


def orient_patch(
    points: np.ndarray,
    members: np.ndarray,
    normal: np.ndarray,
    margin: float = 0.05,
    near: float = 0.02,
    depth: float = 0.3,
) -> Optional[np.ndarray]:
    """Empty-side probe for a whole planar patch.

    Counts cloud points outside the patch that fall in the slab prism over
    the patch footprint (dilated by ``margin``) at depth ``near..depth`` on
    either side, and points the normal toward the side with fewer. None on a
    tie.
    """
    pts = points[members]
    c = pts.mean(axis=0)
    basis = plane_basis(normal)
    uv = (pts - c) @ basis.T
    lo, hi = uv.min(axis=0) - margin, uv.max(axis=0) + margin
    radius = np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))) + depth
    rel = points - c
    cand = np.flatnonzero(np.einsum("ij,ij->i", rel, rel) <= radius * radius)
    cand = np.setdiff1d(cand, members, assume_unique=False)
    if len(cand) == 0:
        return None
    r = rel[cand]
    s = r @ normal
    q = r @ basis.T
    inside = np.all((q >= lo) & (q <= hi), axis=1)
    front = int(np.count_nonzero(inside & (s >= near) & (s <= depth)))
    back = int(np.count_nonzero(inside & (s <= -near) & (s >= -depth)))
    if front == back:
        return None
    return normal if front < back else -normal


def estimate_normals(
    cloud, k: int = 30, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS
) -> np.ndarray:
    """Unit normal per point from PCA over the k nearest neighbours.

    Signs are resolved per planar patch with the empty-side probe; points
    outside any patch use the point-wise probe, and undecided cases point away
    from the cloud centroid.
    """
    points = cloud.points if isinstance(cloud, LabeledPointCloud) else np.asarray(cloud, float)
    if len(points) == 0:
        return np.zeros((0, 3))
    index = SpatialIndex(points)
    k = max(3, min(int(k), len(points)))
    raw = _pca_normals(points, index, k)
    # Fold onto the positive hemisphere of the dominant axis before averaging.
    dom = np.argmax(np.abs(raw), axis=1)
    flip = raw[np.arange(len(raw)), dom] < 0
    raw[flip] *= -1
    out = raw.copy()
    patch = _patches(points, raw, eps, min_pts)
    center = points.mean(axis=0)
    for p in range(patch.max() + 1 if len(patch) else 0):
        members = np.flatnonzero(patch == p)
        mean_n = raw[members].mean(axis=0)
        mean_n /= np.linalg.norm(mean_n)
        oriented = orient_patch(points, members, mean_n)
        if oriented is None:
            away = points[members].mean(axis=0) - center
            sign = 1.0 if away @ mean_n >= 0 else -1.0
        else:
            sign = 1.0 if oriented @ mean_n > 0 else -1.0
        out[members] = sign * raw[members]
    loose = np.flatnonzero(patch < 0)
    for i in loose:
        o = orient_by_probe(points[i], raw[i], index)
        if o is None:
            o = raw[i] if (points[i] - center) @ raw[i] >= 0 else -raw[i]
        out[i] = o
    return out


def labels_from_normals(normals: np.ndarray) -> np.ndarray:
    """Argmax of normal . axis over +X,-X,+Y,-Y,+Z,-Z (first wins ties)."""
    return np.argmax(np.asarray(normals, float) @ AXIS_DIRECTIONS.T, axis=1).astype(np.uint8)


def classify_labels(cloud: LabeledPointCloud, provider: LabelProvider):
    """Face label per point and, in oracle mode, the shift vectors.

    Returns (labels, shifts) where ``shifts`` is None in classical mode.
    """
    if provider.mode == "oracle":
        if not cloud.has_ground_truth:
            raise MissingGroundTruth("oracle mode needs gt_label and gt_shift on the cloud")
        return cloud.gt_label.astype(np.uint8).copy(), cloud.gt_shift.copy()
    normals = estimate_normals(cloud, provider.k_normals, provider.eps, provider.min_pts)
    return labels_from_normals(normals), None


# ---------------------------------------------------------------------------
# face detection

def _extent_2d(points: np.ndarray, normal: np.ndarray) -> tuple:
    basis = plane_basis(normal)
    uv = (points - points.mean(axis=0)) @ basis.T
    if len(uv) >= 2:
        cov = np.cov(uv.T)
        _, vecs = np.linalg.eigh(cov)
        uv = uv @ vecs
    ext = uv.max(axis=0) - uv.min(axis=0)
    return (float(ext[1]), float(ext[0]))


def detect_faces(
    points: np.ndarray,
    labels: np.ndarray,
    shifts: Optional[np.ndarray] = None,
    eps: float = DEFAULT_EPS,
    min_pts: int = DEFAULT_MIN_PTS,
    min_size: float = DEFAULT_MIN_SIZE,
) -> list[DetectedFace]:
    """Cluster same-label points into faces.

    With shifts, points are moved by their shift before DBSCAN. Without, raw
    points are clustered and each cluster is split where its depth along the
    label axis jumps by more than ``eps``. Faces whose bounding rectangle is
    smaller than ``min_size`` in both directions are dropped.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    points = np.asarray(points, float)
    labels = np.asarray(labels)
    faces: list[DetectedFace] = []
    for lab in FaceLabel:
        idx = np.flatnonzero(labels == int(lab))
        if len(idx) == 0:
            continue
        if shifts is not None:
            moved = points[idx] + shifts[idx]
            moved = np.round(moved / SHIFT_QUANTUM) * SHIFT_QUANTUM
            cl = dbscan(moved, eps, min_pts)
            groups = [idx[cl == c] for c in range(cl.max() + 1)]
        else:
            cl = dbscan(points[idx], eps, min_pts)
            groups = []
            for c in range(cl.max() + 1):
                members = idx[cl == c]
                depth = gap_split(points[members, lab.axis], eps)
                groups.extend(members[depth == g] for g in range(depth.max() + 1))
        for members in groups:
            if len(members) < min_pts:
                continue
            pts = points[members]
            try:
                plane = fit_plane(pts)
            except DegenerateInput:
                continue
            if plane.normal @ lab.vector < 0:
                plane = plane.flipped()
            extent = _extent_2d(pts, plane.normal)
            if max(extent) < min_size:
                continue
            faces.append(
                DetectedFace(len(faces), np.sort(members), lab, plane, pts.mean(axis=0), extent)
            )
    return faces


def assign_gt_faces(faces: list[DetectedFace], gt_face_id: np.ndarray) -> None:
    """Record the majority ground-truth face id of every detected face."""
    for f in faces:
        ids, counts = np.unique(gt_face_id[f.point_indices], return_counts=True)
        f.gt_face_id = int(ids[np.argmax(counts)])


def face_cluster_ids(n_points: int, faces: list[DetectedFace]) -> np.ndarray:
    """Per-point detected face id (-1 for dropped points), for debug dumps."""
    out = np.full(n_points, -1, dtype=np.int32)
    for f in faces:
        out[f.point_indices] = f.id
    return out
