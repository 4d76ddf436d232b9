"""Synthetic polycuboid scenes with exact ground truth.

Shapes are grown on an integer lattice (so every box edge and every gap between
parallel faces is at least one lattice step) and then scaled to metres. Their
outer surface is sampled on a regular grid per face, yielding per-point face
labels, shift vectors and face ids.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .core import (
    Aabb,
    FaceLabel,
    PolycuboidError,
    RelationType,
    knn_union_edges,
    snap_to_label,
    yaw_matrix,
)

# gt_face_id = FACE_ID_STRIDE * shape_index + face_index_within_shape
FACE_ID_STRIDE = 1000
MIN_FEATURE = 0.1
MIN_EXTENT, MAX_EXTENT = 0.4, 2.4
DEFAULT_SIGMA = 0.005
DEFAULT_CLEARANCE = 0.15
DEFAULT_MAX_YAW = math.radians(30.0)


class PlacementFailure(PolycuboidError):
    pass


@dataclass
class PolycuboidShape:
    """Union of axis-aligned boxes in a local frame, yawed and translated into the world.

    ``boxes`` has shape (n, 2, 3): per box its min and max corner.
    """

    boxes: np.ndarray
    yaw: float = 0.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=float).reshape(-1, 2, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        self.yaw = float(self.yaw)

    @property
    def rotation(self) -> np.ndarray:
        return yaw_matrix(self.yaw)

    def local_aabb(self) -> Aabb:
        return Aabb(self.boxes[:, 0].min(axis=0), self.boxes[:, 1].max(axis=0))

    def to_world(self, local_points: np.ndarray) -> np.ndarray:
        return np.asarray(local_points, float) @ self.rotation.T + self.translation

    def to_local(self, world_points: np.ndarray) -> np.ndarray:
        return (np.asarray(world_points, float) - self.translation) @ self.rotation

    def world_corners(self) -> np.ndarray:
        """All box corners in world coordinates, (n_boxes * 8, 3)."""
        corners = []
        for lo, hi in self.boxes:
            for pick in itertools.product((0, 1), repeat=3):
                corners.append(np.where(np.array(pick) == 1, hi, lo))
        return self.to_world(np.array(corners))

    def world_aabb(self) -> Aabb:
        return Aabb.from_points(self.world_corners())

    def contains(self, world_points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        local = self.to_local(world_points)
        inside = np.zeros(len(local), dtype=bool)
        for lo, hi in self.boxes:
            inside |= np.all((local >= lo - tol) & (local <= hi + tol), axis=1)
        return inside

    def volume(self) -> float:
        return float(np.prod(self.boxes[:, 1] - self.boxes[:, 0], axis=1).sum())

    def to_dict(self) -> dict:
        return {
            "boxes": [{"min": lo.tolist(), "max": hi.tolist()} for lo, hi in self.boxes],
            "yaw": self.yaw,
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolycuboidShape":
        boxes = [[b["min"], b["max"]] for b in data["boxes"]]
        return cls(np.array(boxes), data.get("yaw", 0.0), data.get("translation", [0, 0, 0]))


@dataclass
class SyntheticScene:
    shapes: list
    seed: Optional[int] = None
    config_kind: str = "random"

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_kind": self.config_kind,
            "shapes": [s.to_dict() for s in self.shapes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticScene":
        return cls(
            [PolycuboidShape.from_dict(s) for s in data["shapes"]],
            data.get("seed"),
            data.get("config_kind", "random"),
        )


@dataclass
class LabeledPointCloud:
    """Points with optional colors and ground-truth annotations (all per point)."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None
    gt_label: Optional[np.ndarray] = None
    gt_shift: Optional[np.ndarray] = None
    gt_face_id: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = len(self.points)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if self.gt_label is not None:
            self.gt_label = np.asarray(self.gt_label, dtype=np.uint8).reshape(-1)
        if self.gt_shift is not None:
            self.gt_shift = np.asarray(self.gt_shift, dtype=float).reshape(-1, 3)
        if self.gt_face_id is not None:
            self.gt_face_id = np.asarray(self.gt_face_id, dtype=np.uint32).reshape(-1)
        for name in ("colors", "gt_label", "gt_shift", "gt_face_id"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} entries for {n} points")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_ground_truth(self) -> bool:
        return self.gt_label is not None and self.gt_shift is not None

    def subset(self, selector) -> "LabeledPointCloud":
        def take(arr):
            return None if arr is None else arr[selector]

        return LabeledPointCloud(
            self.points[selector],
            take(self.colors),
            take(self.gt_label),
            take(self.gt_shift),
            take(self.gt_face_id),
        )


@dataclass
class GtFace:
    """One maximal planar region of a shape's outer surface, in the shape's local frame.

    ``rects`` are (u0, u1, v0, v1) cell faces covering the region, where (u, v)
    are the two axes other than ``axis`` in increasing order.
    """

    face_id: int
    shape_index: int
    axis: int
    sign: int
    coord: float
    rects: np.ndarray

    @property
    def local_label(self) -> FaceLabel:
        return FaceLabel.from_axis(self.axis, self.sign)

    @property
    def in_plane_axes(self) -> tuple[int, int]:
        u, v = [a for a in range(3) if a != self.axis]
        return u, v


@dataclass
class GtRelationGraph:
    """Nodes are face ids with labels (and owning shape); edges carry relation types."""

    nodes: dict
    edges: list

    def relation(self, face_a: int, face_b: int) -> Optional[RelationType]:
        key = (min(face_a, face_b), max(face_a, face_b))
        return self._lookup().get(key)

    def _lookup(self) -> dict:
        cache = getattr(self, "_edge_cache", None)
        if cache is None or len(cache) != len(self.edges):
            cache = {(min(a, b), max(a, b)): r for a, b, r in self.edges}
            self._edge_cache = cache
        return cache

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"face_id": int(fid), "label": FaceLabel(n["label"]).short, "shape": int(n["shape"])}
                for fid, n in sorted(self.nodes.items())
            ],
            "edges": [
                {"a": int(a), "b": int(b), "relation": r.value} for a, b, r in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GtRelationGraph":
        nodes = {
            int(n["face_id"]): {"label": FaceLabel.from_short(n["label"]), "shape": int(n.get("shape", -1))}
            for n in data["nodes"]
        }
        edges = [(int(e["a"]), int(e["b"]), RelationType(e["relation"])) for e in data["edges"]]
        return cls(nodes, edges)


# ---------------------------------------------------------------------------
# Lattice shape growth

def _manifold_table() -> np.ndarray:
    """For each of the 256 occupancy patterns of a 2x2x2 block, whether the
    boundary surface is a manifold at the shared vertex."""
    cells = list(itertools.product((0, 1), repeat=3))

    def connected(members):
        if len(members) <= 1:
            return True
        members = set(members)
        seen = {next(iter(members))}
        stack = list(seen)
        while stack:
            c = stack.pop()
            for m in members:
                if m not in seen and sum(abs(a - b) for a, b in zip(c, m)) == 1:
                    seen.add(m)
                    stack.append(m)
        return seen == members

    table = np.zeros(256, dtype=bool)
    for code in range(256):
        full = [c for i, c in enumerate(cells) if code >> i & 1]
        empty = [c for i, c in enumerate(cells) if not code >> i & 1]
        table[code] = connected(full) and connected(empty)
    return table


_MANIFOLD = _manifold_table()


def _occupancy(boxes: np.ndarray) -> np.ndarray:
    lo = boxes[:, 0].min(axis=0)
    ext = (boxes[:, 1].max(axis=0) - lo).astype(int)
    occ = np.zeros(ext, dtype=bool)
    for b in boxes:
        s = (b[0] - lo).astype(int)
        e = (b[1] - lo).astype(int)
        occ[s[0]:e[0], s[1]:e[1], s[2]:e[2]] = True
    return occ


def is_manifold_lattice(boxes: np.ndarray) -> bool:
    """True when the union of integer boxes has a 2-manifold boundary."""
    occ = np.pad(_occupancy(np.asarray(boxes)), 1)
    code = np.zeros(tuple(s - 1 for s in occ.shape), dtype=np.int32)
    for i, (dx, dy, dz) in enumerate(itertools.product((0, 1), repeat=3)):
        code |= occ[dx:dx + code.shape[0], dy:dy + code.shape[1], dz:dz + code.shape[2]].astype(np.int32) << i
    return bool(_MANIFOLD[code].all())


def _interiors_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.all(a[0] < b[1]) and np.all(b[0] < a[1]))


def face_connected(boxes: np.ndarray, tol: float = 1e-9) -> bool:
    """BFS over boxes linked by a positive-area shared face."""
    boxes = np.asarray(boxes, float)
    n = len(boxes)

    def touching(a, b):
        for axis in range(3):
            if abs(a[1, axis] - b[0, axis]) <= tol or abs(b[1, axis] - a[0, axis]) <= tol:
                others = [x for x in range(3) if x != axis]
                if all(min(a[1, o], b[1, o]) - max(a[0, o], b[0, o]) > tol for o in others):
                    return True
        return False

    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in range(n):
            if j not in seen and touching(boxes[i], boxes[j]):
                seen.add(j)
                stack.append(j)
    return len(seen) == n


def _lattice_polycuboid(rng: np.random.Generator, n_boxes: int, budget: np.ndarray) -> np.ndarray:
    """Grow ``n_boxes`` integer boxes, each attached flush to a corner of an existing face."""
    budget = np.maximum(np.asarray(budget, int), 1)
    lo_dim = np.maximum(1, budget // 3)
    first = np.array([rng.integers(lo_dim[a], budget[a] + 1) for a in range(3)])
    boxes = [np.array([np.zeros(3, int), first])]
    attempts = 0
    while len(boxes) < n_boxes and attempts < 60:
        attempts += 1
        parent = boxes[int(rng.integers(len(boxes)))]
        axis = int(rng.integers(3))
        side = int(rng.choice([-1, 1]))
        pdim = parent[1] - parent[0]
        child = np.zeros((2, 3), int)
        for a in range(3):
            if a == axis:
                d = int(rng.integers(1, max(1, budget[a] // 2) + 1))
                if side > 0:
                    child[:, a] = parent[1, a], parent[1, a] + d
                else:
                    child[:, a] = parent[0, a] - d, parent[0, a]
            else:
                d = int(rng.integers(1, pdim[a] + 1))
                if rng.random() < 0.5:
                    child[:, a] = parent[0, a], parent[0, a] + d
                else:
                    child[:, a] = parent[1, a] - d, parent[1, a]
        if any(_interiors_overlap(child, b) for b in boxes):
            continue
        candidate = np.array(boxes + [child])
        ext = candidate[:, 1].max(axis=0) - candidate[:, 0].min(axis=0)
        if np.any(ext > budget):
            continue
        if not is_manifold_lattice(candidate):
            continue
        boxes.append(child)
    out = np.array(boxes, dtype=float)
    out -= out[:, 0].min(axis=0)
    return out


def gen_polycuboid(
    rng: np.random.Generator,
    max_boxes: int = 4,
    extent: Optional[Union[float, Sequence[float]]] = None,
) -> PolycuboidShape:
    """Random face-connected polycuboid of 1..max_boxes disjoint boxes.

    ``extent`` is either the target largest extent in metres (uniform scaling,
    drawn from [0.4, 2.4] when None) or a per-axis size the shape must fill
    exactly (anisotropic scaling). Lattice steps map to at least 0.1 m.
    """
    if max_boxes < 1:
        raise ValueError("max_boxes must be >= 1")
    n_boxes = int(rng.integers(1, max_boxes + 1))
    if extent is None:
        extent = float(rng.uniform(MIN_EXTENT, MAX_EXTENT))
    ext = np.atleast_1d(np.asarray(extent, dtype=float))
    if ext.size == 1:
        budget = np.full(3, max(1, int(math.floor(ext[0] / MIN_FEATURE + 1e-9))))
        lattice = _lattice_polycuboid(rng, n_boxes, budget)
        size = lattice[:, 1].max(axis=0)
        scale = np.full(3, ext[0] / size.max())
    else:
        budget = np.maximum(1, np.floor(ext / MIN_FEATURE + 1e-9).astype(int))
        lattice = _lattice_polycuboid(rng, n_boxes, budget)
        size = lattice[:, 1].max(axis=0)
        scale = ext / size
    return PolycuboidShape(lattice * scale)


# ---------------------------------------------------------------------------
# Scenes

def _footprint(shape: PolycuboidShape, inflate: float) -> np.ndarray:
    """Yawed 2-D rectangle (4 corners) around the shape's local AABB, inflated."""
    box = shape.local_aabb()
    lo, hi = box.min[:2] - inflate, box.max[:2] + inflate
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    r = shape.rotation[:2, :2]
    return corners @ r.T + shape.translation[:2]


def _polygons_overlap(p: np.ndarray, q: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons."""
    for poly in (p, q):
        for i in range(len(poly)):
            edge = poly[(i + 1) % len(poly)] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            a, b = p @ axis, q @ axis
            if a.max() <= b.min() or b.max() <= a.min():
                return False
    return True


def gen_scene_random(
    seed: int,
    n_shapes: Optional[int] = None,
    max_boxes: int = 4,
    max_yaw: float = DEFAULT_MAX_YAW,
    clearance: float = DEFAULT_CLEARANCE,
    max_attempts: int = 1000,
) -> SyntheticScene:
    """Random arrangement of 5..20 non-overlapping shapes resting on z = 0."""
    rng = np.random.default_rng(seed)
    if n_shapes is None:
        n_shapes = int(rng.integers(5, 21))
    if not 5 <= n_shapes <= 20:
        raise ValueError("n_shapes must be in [5, 20]")
    side = max(4.0, 3.0 * math.sqrt(n_shapes))
    placed: list[PolycuboidShape] = []
    footprints: list[np.ndarray] = []
    for _ in range(n_shapes):
        shape = gen_polycuboid(rng, max_boxes)
        for _attempt in range(max_attempts):
            yaw = float(rng.uniform(-max_yaw, max_yaw))
            xy = rng.uniform(0.0, side, size=2)
            candidate = PolycuboidShape(shape.boxes, yaw, [xy[0], xy[1], 0.0])
            fp = _footprint(candidate, clearance / 2)
            if not any(_polygons_overlap(fp, other) for other in footprints):
                placed.append(candidate)
                footprints.append(fp)
                break
        else:
            raise PlacementFailure(f"could not place shape {len(placed)} after {max_attempts} attempts")
    return SyntheticScene(placed, seed, "random")


def gen_scene_contextual(
    gt_boxes: Sequence[Aabb], rng: np.random.Generator, max_boxes: int = 4, seed: Optional[int] = None
) -> SyntheticScene:
    """Replace each (axis-aligned, non-overlapping) box by a polycuboid filling it."""
    shapes = []
    for box in gt_boxes:
        local = gen_polycuboid(rng, max_boxes, extent=box.extent)
        shapes.append(PolycuboidShape(local.boxes, 0.0, box.min))
    return SyntheticScene(shapes, seed, "contextual")


def load_gt_boxes(data: dict) -> list[Aabb]:
    """Boxes from a ScanNet-style JSON document.

    Accepts ``{"boxes": [...]}`` or a bare list; each box is either
    ``{"min": [..], "max": [..]}`` or ``{"center": [..], "extent": [..]}``.
    """
    items = data["boxes"] if isinstance(data, dict) else data
    boxes = []
    for item in items:
        if "min" in item:
            boxes.append(Aabb(item["min"], item["max"]))
        else:
            c = np.asarray(item["center"], float)
            e = np.asarray(item["extent"], float)
            boxes.append(Aabb(c - e / 2, c + e / 2))
    return boxes


# ---------------------------------------------------------------------------
# Surface faces and sampling

def shape_faces(shape: PolycuboidShape, shape_index: int = 0) -> list[GtFace]:
    """Maximal coplanar connected regions of the shape's outer surface (local frame)."""
    boxes = shape.boxes
    cuts = [np.unique(np.concatenate([boxes[:, 0, a], boxes[:, 1, a]])) for a in range(3)]
    centers = [0.5 * (c[:-1] + c[1:]) for c in cuts]
    cx, cy, cz = np.meshgrid(*centers, indexing="ij")
    cell_centers = np.stack([cx, cy, cz], axis=-1).reshape(-1, 3)
    occ = np.zeros(len(cell_centers), dtype=bool)
    for lo, hi in boxes:
        occ |= np.all((cell_centers > lo) & (cell_centers < hi), axis=1)
    occ = occ.reshape(cx.shape)
    padded = np.pad(occ, 1)

    faces: list[GtFace] = []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        moved = np.moveaxis(padded, axis, 0)
        for c in range(len(cuts[axis])):
            below, above = moved[c], moved[c + 1]
            # padded index c is cell c-1; plane c separates cells c-1 and c
            for sign, mask in ((1, below & ~above), (-1, above & ~below)):
                mask = mask[1:-1, 1:-1]
                if not mask.any():
                    continue
                comp, n_comp = ndimage.label(mask)
                for k in range(1, n_comp + 1):
                    iu, iv = np.nonzero(comp == k)
                    rects = np.stack(
                        [cuts[u][iu], cuts[u][iu + 1], cuts[v][iv], cuts[v][iv + 1]], axis=1
                    )
                    faces.append(GtFace(-1, shape_index, axis, sign, float(cuts[axis][c]), rects))
    for i, f in enumerate(faces):
        f.face_id = FACE_ID_STRIDE * shape_index + i
    return faces


def _grid_axis(lo: float, hi: float, interval: float) -> np.ndarray:
    n = max(1, int(math.ceil((hi - lo) / interval - 1e-9)))
    return lo + (hi - lo) * np.arange(n + 1) / n


def sample_face(face: GtFace, interval: float) -> np.ndarray:
    """Regular grid samples (borders included) on a face region, local frame."""
    u, v = face.in_plane_axes
    r = face.rects
    us = _grid_axis(r[:, 0].min(), r[:, 1].max(), interval)
    vs = _grid_axis(r[:, 2].min(), r[:, 3].max(), interval)
    gu, gv = np.meshgrid(us, vs, indexing="ij")
    gu, gv = gu.ravel(), gv.ravel()
    tol = 1e-9
    inside = np.zeros(len(gu), dtype=bool)
    for u0, u1, v0, v1 in r:
        inside |= (gu >= u0 - tol) & (gu <= u1 + tol) & (gv >= v0 - tol) & (gv <= v1 + tol)
    pts = np.zeros((int(inside.sum()), 3))
    pts[:, face.axis] = face.coord
    pts[:, u] = gu[inside]
    pts[:, v] = gv[inside]
    return pts


def face_shifts(points: np.ndarray, face_ids: np.ndarray) -> np.ndarray:
    """Displacement from each point to the mean of its face's points."""
    shifts = np.zeros_like(points)
    order = np.argsort(face_ids, kind="stable")
    sorted_ids = face_ids[order]
    bounds = np.flatnonzero(np.diff(sorted_ids)) + 1
    for group in np.split(order, bounds):
        if len(group):
            shifts[group] = points[group].mean(axis=0) - points[group]
    return shifts


def shape_color(rng: np.random.Generator) -> np.ndarray:
    return rng.integers(40, 256, size=3).astype(np.uint8)


def sample_surface(scene: SyntheticScene, interval: float = 0.01, color_seed: int = 0) -> LabeledPointCloud:
    """Sample every shape's outer surface on a per-face regular grid."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    rng = np.random.default_rng(color_seed if scene.seed is None else [scene.seed, color_seed])
    pts, labels, ids, colors = [], [], [], []
    for si, shape in enumerate(scene.shapes):
        color = shape_color(rng)
        rot = shape.rotation
        for face in shape_faces(shape, si):
            local = sample_face(face, interval)
            pts.append(shape.to_world(local))
            world_label = snap_to_label(rot @ face.local_label.vector)
            labels.append(np.full(len(local), int(world_label), np.uint8))
            ids.append(np.full(len(local), face.face_id, np.uint32))
            colors.append(np.tile(color, (len(local), 1)))
    if not pts:
        return LabeledPointCloud(np.zeros((0, 3)))
    points = np.concatenate(pts)
    face_ids = np.concatenate(ids)
    return LabeledPointCloud(
        points,
        np.concatenate(colors),
        np.concatenate(labels),
        face_shifts(points, face_ids),
        face_ids,
    )


def corrupt(
    cloud: LabeledPointCloud,
    sigma: float,
    rng: np.random.Generator,
    holes_per_shape: Union[int, tuple] = 0,
) -> LabeledPointCloud:
    """Remove whole faces (holes) and add isotropic Gaussian noise.

    ``holes_per_shape`` is a count or an inclusive (lo, hi) range drawn per
    shape; at least one face of every shape always survives. Shifts are
    recomputed against the surviving noisy points.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if cloud.gt_face_id is None:
        raise ValueError("corrupt needs gt_face_id to pick faces")
    lo, hi = (holes_per_shape, holes_per_shape) if np.isscalar(holes_per_shape) else holes_per_shape
    face_ids = np.unique(cloud.gt_face_id)
    removed = []
    if hi > 0:
        shapes = face_ids // FACE_ID_STRIDE
        for s in np.unique(shapes):
            own = face_ids[shapes == s]
            count = int(rng.integers(lo, hi + 1))
            count = min(count, len(own) - 1)
            if count > 0:
                removed.extend(rng.choice(own, size=count, replace=False).tolist())
    keep = ~np.isin(cloud.gt_face_id, removed)
    out = cloud.subset(keep)
    if sigma > 0:
        out.points = out.points + rng.normal(0.0, sigma, size=out.points.shape)
    if out.gt_face_id is not None and out.gt_shift is not None:
        out.gt_shift = face_shifts(out.points, out.gt_face_id)
    return out


# ---------------------------------------------------------------------------
# Ground-truth relations

def _touch_sides(face: GtFace, line_axis: int, line_coord: float, tol: float):
    """(side, lo, hi) for each rect of ``face`` bordering the plane ``line_axis = line_coord``.

    ``side`` is the direction (+1/-1) in which the rect extends away from the
    line; (lo, hi) is its interval along the remaining (edge) axis.
    """
    u, v = face.in_plane_axes
    col = 0 if line_axis == u else 2
    other = 2 if col == 0 else 0
    out = []
    for r in face.rects:
        if abs(r[col + 1] - line_coord) <= tol:
            out.append((-1, r[other], r[other + 1]))
        elif abs(r[col] - line_coord) <= tol:
            out.append((1, r[other], r[other + 1]))
    return out


def face_relation(
    a: GtFace, b: GtFace, rotation: Optional[np.ndarray] = None, tol: float = 1e-9
) -> RelationType:
    """Analytic relation between two faces of the same shape.

    Convex relations are typed by the world labels, i.e. the local face
    directions rotated by ``rotation`` and snapped.
    """
    if a.shape_index != b.shape_index or a.axis == b.axis:
        return RelationType.DISCONNECTED
    a_sides = _touch_sides(a, b.axis, b.coord, tol)
    b_sides = _touch_sides(b, a.axis, a.coord, tol)
    kinds = set()
    for sa, alo, ahi in a_sides:
        for sb, blo, bhi in b_sides:
            if min(ahi, bhi) - max(alo, blo) <= tol:
                continue
            if sa == -b.sign and sb == -a.sign:
                kinds.add("convex")
            elif sa == b.sign and sb == a.sign:
                kinds.add("concave")
    if "convex" in kinds:
        rot = np.eye(3) if rotation is None else rotation
        return RelationType.convex(
            snap_to_label(rot @ a.local_label.vector), snap_to_label(rot @ b.local_label.vector)
        )
    if "concave" in kinds:
        return RelationType.CONCAVE
    return RelationType.DISCONNECTED


def gt_graph(
    scene: SyntheticScene, cloud: LabeledPointCloud, k: int = 5
) -> GtRelationGraph:
    """k-NN graph over the faces present in ``cloud``, with analytic relation labels."""
    faces = {}
    for si, shape in enumerate(scene.shapes):
        for f in shape_faces(shape, si):
            faces[f.face_id] = f
    present = np.unique(cloud.gt_face_id) if len(cloud) else np.zeros(0, np.uint32)
    centroids = np.array([cloud.points[cloud.gt_face_id == fid].mean(axis=0) for fid in present]).reshape(-1, 3)
    nodes = {}
    for fid in present:
        f = faces[int(fid)]
        shape = scene.shapes[f.shape_index]
        nodes[int(fid)] = {
            "label": snap_to_label(shape.rotation @ f.local_label.vector),
            "shape": f.shape_index,
        }
    edges = []
    for i, j in knn_union_edges(centroids, k):
        fa, fb = faces[int(present[i])], faces[int(present[j])]
        rel = face_relation(fa, fb, scene.shapes[fa.shape_index].rotation)
        edges.append((int(present[i]), int(present[j]), rel))
    return GtRelationGraph(nodes, edges)


def scene_faces(scene: SyntheticScene) -> dict:
    out = {}
    for si, shape in enumerate(scene.shapes):
        for f in shape_faces(shape, si):
            out[f.face_id] = f
    return out


def make_scene_cloud(
    scene: SyntheticScene,
    rng: np.random.Generator,
    interval: float = 0.01,
    sigma: float = DEFAULT_SIGMA,
    holes_per_shape: Union[int, tuple] = (0, 3),
) -> LabeledPointCloud:
    return corrupt(sample_surface(scene, interval), sigma, rng, holes_per_shape)


def with_points(cloud: LabeledPointCloud, points: np.ndarray) -> LabeledPointCloud:
    return replace(cloud, points=points)
