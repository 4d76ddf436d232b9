"""Shared geometric types: face labels, relation types, planes, boxes, k-NN."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree


class PolycuboidError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateInput(PolycuboidError):
    pass


class FaceLabel(enum.IntEnum):
    """Six cuboid face directions; integer values are the on-disk encoding."""

    PX = 0
    NX = 1
    PY = 2
    NY = 3
    PZ = 4
    NZ = 5

    @property
    def axis(self) -> int:
        return int(self) // 2

    @property
    def sign(self) -> int:
        return 1 if int(self) % 2 == 0 else -1

    @property
    def vector(self) -> np.ndarray:
        v = np.zeros(3)
        v[self.axis] = self.sign
        return v

    @property
    def short(self) -> str:
        return ("+" if self.sign > 0 else "-") + "XYZ"[self.axis]

    @classmethod
    def from_axis(cls, axis: int, sign: int) -> "FaceLabel":
        return cls(2 * axis + (0 if sign > 0 else 1))

    @classmethod
    def from_short(cls, text: str) -> "FaceLabel":
        return cls.from_axis("XYZ".index(text[1].upper()), 1 if text[0] == "+" else -1)

    def opposite(self) -> "FaceLabel":
        return FaceLabel.from_axis(self.axis, -self.sign)

    def perpendicular(self, other: "FaceLabel") -> bool:
        return self.axis != FaceLabel(other).axis


# Label order doubles as the tie-break order for argmax labelling.
AXIS_DIRECTIONS = np.stack([lab.vector for lab in FaceLabel])


def snap_to_label(vector: np.ndarray) -> FaceLabel:
    """Nearest of the six directions; ties resolved in +X,-X,+Y,-Y,+Z,-Z order."""
    return FaceLabel(int(np.argmax(AXIS_DIRECTIONS @ np.asarray(vector, float))))


def _convex_pairs() -> list[tuple[FaceLabel, FaceLabel]]:
    pairs = []
    for a, b in itertools.combinations(FaceLabel, 2):
        if a.perpendicular(b):
            pairs.append((a, b))
    return pairs


_CONVEX_PAIRS = _convex_pairs()


class RelationType(enum.Enum):
    """Twelve convex cuboid-edge relations plus concave and disconnected.

    A convex relation is identified by its pair of perpendicular face labels,
    stored in ascending label order (the canonical orientation).
    """

    CONVEX_PX_PY = "convex_+x_+y"
    CONVEX_PX_NY = "convex_+x_-y"
    CONVEX_PX_PZ = "convex_+x_+z"
    CONVEX_PX_NZ = "convex_+x_-z"
    CONVEX_NX_PY = "convex_-x_+y"
    CONVEX_NX_NY = "convex_-x_-y"
    CONVEX_NX_PZ = "convex_-x_+z"
    CONVEX_NX_NZ = "convex_-x_-z"
    CONVEX_PY_PZ = "convex_+y_+z"
    CONVEX_PY_NZ = "convex_+y_-z"
    CONVEX_NY_PZ = "convex_-y_+z"
    CONVEX_NY_NZ = "convex_-y_-z"
    CONCAVE = "concave"
    DISCONNECTED = "disconnected"

    @property
    def is_convex(self) -> bool:
        return self not in (RelationType.CONCAVE, RelationType.DISCONNECTED)

    @property
    def labels(self) -> tuple[FaceLabel, FaceLabel]:
        """Canonical face-label pair of a convex relation."""
        if not self.is_convex:
            raise ValueError(f"{self.value} has no face-label pair")
        return _RELATION_TO_PAIR[self]

    @classmethod
    def convex(cls, a: FaceLabel, b: FaceLabel) -> "RelationType":
        a, b = FaceLabel(a), FaceLabel(b)
        if not a.perpendicular(b):
            raise ValueError(f"labels {a.short} and {b.short} are not perpendicular")
        return _PAIR_TO_RELATION[(min(a, b), max(a, b))]

    @classmethod
    def convex_types(cls) -> list["RelationType"]:
        return [r for r in cls if r.is_convex]


_PAIR_TO_RELATION = {
    pair: RelationType(f"convex_{pair[0].short.lower()}_{pair[1].short.lower()}")
    for pair in _CONVEX_PAIRS
}
_RELATION_TO_PAIR = {rel: pair for pair, rel in _PAIR_TO_RELATION.items()}


@dataclass(frozen=True)
class Plane:
    """Oriented plane ``{p : normal . p = offset}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if not np.all(np.isfinite(n)) or abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be a finite unit vector")
        object.__setattr__(self, "normal", n)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, float) @ self.normal - self.offset

    def flipped(self) -> "Plane":
        return Plane(-self.normal, -self.offset)


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def intersects(self, other: "Aabb", strict: bool = True) -> bool:
        """Interior overlap when ``strict``, closed overlap otherwise."""
        if strict:
            return bool(np.all(self.min < other.max) and np.all(other.min < self.max))
        return bool(np.all(self.min <= other.max) and np.all(other.min <= self.max))

    @classmethod
    def from_points(cls, points: np.ndarray) -> "Aabb":
        pts = np.asarray(points, float)
        return cls(pts.min(axis=0), pts.max(axis=0))


class SpatialIndex:
    """Read-only nearest-neighbour index over a fixed point set."""

    def __init__(self, points: np.ndarray):
        self.points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
        if len(self.points) == 0:
            raise DegenerateInput("cannot index an empty point set")
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def knn(self, query: np.ndarray, k: int) -> np.ndarray:
        """Indices of the ``min(k, n)`` nearest points, ties by ascending index."""
        k = min(int(k), len(self.points))
        q = np.asarray(query, float).reshape(3)
        dist, _ = self._tree.query(q, k=k)
        kth = float(np.atleast_1d(dist)[-1])
        # Pull every point tied with the k-th distance, then order exactly.
        cand = np.asarray(self._tree.query_ball_point(q, kth * (1 + 1e-12) + 1e-15), dtype=int)
        d = np.linalg.norm(self.points[cand] - q, axis=1)
        order = np.lexsort((cand, d))
        return cand[order[:k]]

    def knn_many(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Batched k-NN (distances, indices); kd-tree order, no exact tie rule."""
        k = min(int(k), len(self.points))
        dist, idx = self._tree.query(np.asarray(queries, float), k=k)
        if k == 1:
            dist, idx = dist[:, None], idx[:, None]
        return dist, idx

    def count_within(self, queries: np.ndarray, radius: float) -> np.ndarray:
        return np.asarray(
            self._tree.query_ball_point(np.asarray(queries, float), radius, return_length=True)
        )

    def within(self, queries: np.ndarray, radius: float):
        return self._tree.query_ball_point(np.asarray(queries, float), radius)

    def nearest_distance(self, queries: np.ndarray) -> np.ndarray:
        dist, _ = self._tree.query(np.asarray(queries, float), k=1)
        return dist


def knn(query: np.ndarray, cloud: SpatialIndex, k: int) -> np.ndarray:
    return cloud.knn(query, k)


def principal_frame(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centroid, eigenvalues (ascending) and eigenvectors (columns) of the covariance."""
    pts = np.asarray(points, float)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    evals, evecs = np.linalg.eigh(centered.T @ centered / len(pts))
    return centroid, evals, evecs


def orient_by_probe(
    center: np.ndarray,
    normal: np.ndarray,
    index: SpatialIndex,
    probe_offset: float = 0.03,
    probe_radius: float = 0.02,
) -> Optional[np.ndarray]:
    """Point ``normal`` toward the emptier of the two probe spheres at ``center +- offset``.

    Returns None when both probes see the same number of points.
    """
    n = np.asarray(normal, float)
    probes = np.stack([center + probe_offset * n, center - probe_offset * n])
    front, back = index.count_within(probes, probe_radius)
    if front == back:
        return None
    return n if front < back else -n


def canonical_sign(normal: np.ndarray) -> np.ndarray:
    """Flip so the largest-magnitude component is positive (lowest axis wins ties)."""
    n = np.asarray(normal, float)
    return n if n[int(np.argmax(np.abs(n)))] >= 0 else -n


def fit_plane(
    points: np.ndarray,
    index: Optional[SpatialIndex] = None,
    probe_offset: float = 0.03,
    probe_radius: float = 0.02,
) -> Plane:
    """Total-least-squares plane through ``points``.

    With a spatial ``index`` the normal is oriented toward the emptier side of
    the face (probe test at the centroid); otherwise, or when the probe is
    inconclusive, the largest normal component is made positive.

    Raises:
        DegenerateInput: fewer than three points, or all points collinear.
    """
    pts = np.asarray(points, float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateInput(f"need at least 3 points to fit a plane, got {len(pts)}")
    centroid, evals, evecs = principal_frame(pts)
    scale = max(evals[2], 1e-300)
    if evals[1] <= 1e-12 * scale or evals[2] <= 0:
        raise DegenerateInput("points are collinear")
    normal = evecs[:, 0]
    normal = normal / np.linalg.norm(normal)
    oriented = None
    if index is not None:
        oriented = orient_by_probe(centroid, normal, index, probe_offset, probe_radius)
    normal = canonical_sign(normal) if oriented is None else oriented
    return Plane(normal, float(normal @ centroid))


def plane_basis(normal: np.ndarray) -> np.ndarray:
    """Two unit vectors spanning the plane orthogonal to ``normal`` (rows)."""
    n = np.asarray(normal, float)
    ref = np.eye(3)[int(np.argmin(np.abs(n)))]
    u = np.cross(n, ref)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return np.stack([u, v])


def wahba_rotation(body: np.ndarray, observed: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Rotation R maximising sum_i w_i (R body_i) . observed_i, with det(R) = +1."""
    a = np.asarray(body, float).reshape(-1, 3)
    b = np.asarray(observed, float).reshape(-1, 3)
    w = np.ones(len(a)) if weights is None else np.asarray(weights, float)
    m = (b * w[:, None]).T @ a
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(r: np.ndarray) -> float:
    """Angle of the rotation ``r`` in radians."""
    c = (np.trace(r) - 1.0) / 2.0
    # arccos is ill-conditioned near 0; use the skew part for small angles
    s = np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))


def unique_rows(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique rows, inverse mapping and multiplicities."""
    uniq, inverse, counts = np.unique(
        np.asarray(points, float), axis=0, return_inverse=True, return_counts=True
    )
    return uniq, inverse.reshape(-1), counts


def as_points(points: Sequence) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise DegenerateInput("point coordinates must be finite")
    return pts


def knn_union_edges(centroids: np.ndarray, k: int) -> list[tuple[int, int]]:
    """Undirected union of each node's ``k`` nearest other nodes.

    Distances are exact (brute force); ties go to the lower node index.
    """
    c = np.asarray(centroids, float).reshape(-1, 3)
    n = len(c)
    if k < 1:
        raise ValueError("k must be >= 1")
    edges = set()
    if n < 2:
        return []
    dist = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
    idx = np.arange(n)
    for i in range(n):
        others = idx[idx != i]
        order = np.lexsort((others, dist[i, others]))
        for j in others[order[: min(k, n - 1)]]:
            edges.add((min(i, int(j)), max(i, int(j))))
    return sorted(edges)
