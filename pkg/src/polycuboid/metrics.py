"""Reconstruction metrics: Chamfer distance, volumetric IoU precision/recall, mesh size."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import PolycuboidError
from .synth import _grid_axis

DEFAULT_THRESHOLDS = (0.25, 0.50)
DEFAULT_VOXEL = 0.02
DEFAULT_SAMPLE_INTERVAL = 0.01


class EmptyInput(PolycuboidError):
    pass


class MissingScene(PolycuboidError):
    pass


# ---------------------------------------------------------------------------
# Chamfer

def _fractions(length: float, interval: float) -> np.ndarray:
    if length <= 0:
        return np.zeros(1)
    return _grid_axis(0.0, 1.0, interval / length)


def sample_quad(corners: np.ndarray, interval: float) -> np.ndarray:
    """Regular grid on a planar rectangle (corners in order), borders included."""
    p0, p1, _, p3 = np.asarray(corners, float)
    e1, e2 = p1 - p0, p3 - p0
    s = _fractions(float(np.linalg.norm(e1)), interval)
    t = _fractions(float(np.linalg.norm(e2)), interval)
    ss, tt = np.meshgrid(s, t, indexing="ij")
    return p0 + ss.reshape(-1, 1) * e1 + tt.reshape(-1, 1) * e2


def sample_meshes(meshes, interval: float = DEFAULT_SAMPLE_INTERVAL) -> np.ndarray:
    chunks = [sample_quad(m.vertices[q], interval) for m in meshes for q in m.quads]
    return np.concatenate(chunks) if chunks else np.zeros((0, 3))


def chamfer_points(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean of unsquared nearest-neighbour distances."""
    a, b = np.asarray(a, float).reshape(-1, 3), np.asarray(b, float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("chamfer needs two non-empty point sets")
    # unbalanced, uncompacted trees answer far-away queries (hole regions) much faster
    opts = dict(balanced_tree=False, compact_nodes=False)
    d_ab, _ = cKDTree(b, **opts).query(a, k=1)
    d_ba, _ = cKDTree(a, **opts).query(b, k=1)
    return float(0.5 * (d_ab.mean() + d_ba.mean()))


def chamfer(cloud: np.ndarray, meshes, sample_interval: float = DEFAULT_SAMPLE_INTERVAL) -> float:
    if not meshes or all(len(m.quads) == 0 for m in meshes):
        raise EmptyInput("no mesh faces to sample")
    return chamfer_points(cloud, sample_meshes(meshes, sample_interval))


# ---------------------------------------------------------------------------
# volumetric IoU

@dataclass
class Solid:
    """Union of boxes in a local frame; world = rotation @ local + offset."""

    boxes: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, float).reshape(-1, 2, 3)
        self.rotation = np.asarray(self.rotation, float)
        self.offset = np.asarray(self.offset, float)

    def world_corners(self) -> np.ndarray:
        signs = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])
        out = []
        for lo, hi in self.boxes:
            local = lo + signs * (hi - lo)
            out.append(local @ self.rotation.T + self.offset)
        return np.concatenate(out) if out else np.zeros((0, 3))

    def contains(self, points: np.ndarray) -> np.ndarray:
        local = (np.asarray(points, float) - self.offset) @ self.rotation
        inside = np.zeros(len(local), bool)
        for lo, hi in self.boxes:
            inside |= np.all((local >= lo) & (local < hi), axis=1)
        return inside

    def volume(self) -> float:
        return float(np.prod(self.boxes[:, 1] - self.boxes[:, 0], axis=1).sum())

    def to_dict(self) -> dict:
        return {
            "boxes": self.boxes.tolist(),
            "rotation": self.rotation.tolist(),
            "offset": self.offset.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Solid":
        return cls(np.array(data["boxes"]), np.array(data.get("rotation", np.eye(3))),
                   np.array(data.get("offset", np.zeros(3))))

    @classmethod
    def from_shape(cls, shape) -> "Solid":
        return cls(shape.boxes, shape.rotation, shape.translation)


_KEY_BIAS = 1 << 20


def _encode(idx: np.ndarray) -> np.ndarray:
    sel = idx + _KEY_BIAS
    return (sel[:, 0] << 42) | (sel[:, 1] << 21) | sel[:, 2]


def voxelize(solid: Solid, voxel: float = DEFAULT_VOXEL, chunk: int = 2_000_000) -> np.ndarray:
    """Sorted int64 keys of the global-lattice voxels whose centers lie in ``solid``.

    Each box is rasterized over its own world AABB, so yawed unions stay cheap.
    """
    if voxel <= 0:
        raise ValueError("voxel must be > 0")
    signs = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    keys = [np.zeros(0, np.int64)]
    for lo, hi in solid.boxes:
        corners = (lo + signs * (hi - lo)) @ solid.rotation.T + solid.offset
        vlo = np.floor(corners.min(axis=0) / voxel).astype(np.int64)
        vhi = np.ceil(corners.max(axis=0) / voxel).astype(np.int64)
        axes = [np.arange(vlo[a], vhi[a] + 1) for a in range(3)]
        step = max(1, chunk // max(len(axes[1]) * len(axes[2]), 1))
        for x0 in range(0, len(axes[0]), step):
            ix, iy, iz = np.meshgrid(axes[0][x0:x0 + step], axes[1], axes[2], indexing="ij")
            idx = np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1)
            local = ((idx + 0.5) * voxel - solid.offset) @ solid.rotation
            inside = np.all((local >= lo) & (local < hi), axis=1)
            keys.append(_encode(idx[inside]))
    return np.unique(np.concatenate(keys))


def voxel_iou(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) == 0 and len(b) == 0:
        return 0.0
    inter = len(np.intersect1d(a, b, assume_unique=True))
    return inter / (len(a) + len(b) - inter)


def _aabb(solid: Solid) -> tuple[np.ndarray, np.ndarray]:
    c = solid.world_corners()
    return c.min(axis=0), c.max(axis=0)


def iou_matrix(preds: Sequence[Solid], gts: Sequence[Solid], voxel: float = DEFAULT_VOXEL) -> np.ndarray:
    pk = [voxelize(s, voxel) for s in preds]
    gk = [voxelize(s, voxel) for s in gts]
    pb = [_aabb(s) for s in preds]
    gb = [_aabb(s) for s in gts]
    out = np.zeros((len(preds), len(gts)))
    for i in range(len(preds)):
        for j in range(len(gts)):
            if np.all(pb[i][0] <= gb[j][1] + voxel) and np.all(gb[j][0] <= pb[i][1] + voxel):
                out[i, j] = voxel_iou(pk[i], gk[j])
    return out


def greedy_match(iou: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """One-to-one matching by descending IoU (ties by prediction, then GT index)."""
    pairs = [(-iou[i, j], i, j) for i in range(iou.shape[0]) for j in range(iou.shape[1]) if iou[i, j] >= threshold]
    pairs.sort()
    used_p, used_g, out = set(), set(), []
    for _, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        out.append((i, j))
    return out


@dataclass
class PrScore:
    threshold: float
    matched: int
    n_pred: int
    n_gt: int

    @property
    def precision(self) -> float:
        return self.matched / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return self.matched / self.n_gt if self.n_gt else 0.0

    @property
    def precision_undefined(self) -> bool:
        return self.n_pred == 0

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "matched": self.matched,
            "n_pred": self.n_pred,
            "n_gt": self.n_gt,
            "precision": self.precision,
            "recall": self.recall,
            "precision_undefined": self.precision_undefined,
        }


def iou_pr(
    preds: Sequence[Solid],
    gts: Sequence[Solid],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    voxel: float = DEFAULT_VOXEL,
    iou: Optional[np.ndarray] = None,
) -> dict:
    if iou is None:
        iou = iou_matrix(preds, gts, voxel)
    return {float(t): PrScore(float(t), len(greedy_match(iou, t)), len(preds), len(gts)) for t in thresholds}


# ---------------------------------------------------------------------------
# size

def weld_count(vertices: np.ndarray, tol: float = 1e-6) -> int:
    v = np.asarray(vertices, float).reshape(-1, 3)
    if len(v) == 0:
        return 0
    keys = np.round(v / tol).astype(np.int64)
    return len(np.unique(keys, axis=0))


def mesh_stats(meshes) -> tuple[int, int]:
    """(vertex count after welding, triangle count with quads counted as two)."""
    verts = sum(weld_count(m.vertices[np.unique(m.quads)]) if len(m.quads) else 0 for m in meshes)
    faces = sum(2 * len(m.quads) for m in meshes)
    return int(verts), int(faces)


# ---------------------------------------------------------------------------
# report

@dataclass
class SceneEval:
    scene_id: str
    chamfer: Optional[float]
    pr: dict
    vertex_count: int
    face_count: int
    n_pred: int
    n_gt: int

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "chamfer": self.chamfer,
            "pr": {f"{t:.2f}": s.to_dict() for t, s in sorted(self.pr.items())},
            "vertex_count": self.vertex_count,
            "face_count": self.face_count,
            "n_pred": self.n_pred,
            "n_gt": self.n_gt,
        }


@dataclass
class EvalReport:
    scenes: list
    thresholds: tuple = DEFAULT_THRESHOLDS

    def aggregate(self) -> dict:
        chamfers = [s.chamfer for s in self.scenes if s.chamfer is not None]
        pr = {}
        for t in self.thresholds:
            m = sum(s.pr[t].matched for s in self.scenes)
            n_p = sum(s.pr[t].n_pred for s in self.scenes)
            n_g = sum(s.pr[t].n_gt for s in self.scenes)
            pr[f"{t:.2f}"] = PrScore(t, m, n_p, n_g).to_dict()
        return {
            "n_scenes": len(self.scenes),
            "chamfer_mean": float(np.mean(chamfers)) if chamfers else None,
            "pr": pr,
            "vertex_count": int(sum(s.vertex_count for s in self.scenes)),
            "face_count": int(sum(s.face_count for s in self.scenes)),
        }

    def to_dict(self) -> dict:
        return {"aggregate": self.aggregate(), "scenes": [s.to_dict() for s in self.scenes]}

    def rows(self) -> list[list]:
        rows = []
        for s in self.scenes + [None]:
            d = self.aggregate() if s is None else s.to_dict()
            pr = d["pr"]
            cd = d["chamfer_mean"] if s is None else d["chamfer"]
            row = ["mean" if s is None else s.scene_id, "" if cd is None else f"{cd:.4f}"]
            for t in self.thresholds:
                p = pr[f"{t:.2f}"]
                flag = "*" if p["precision_undefined"] else ""
                row += [f"{p['recall']:.3f}", f"{p['precision']:.3f}{flag}"]
            row += [str(d["vertex_count"]), str(d["face_count"])]
            rows.append(row)
        return rows

    def header(self) -> list[str]:
        h = ["scene", "CD"]
        for t in self.thresholds:
            h += [f"R@{int(round(t * 100))}", f"P@{int(round(t * 100))}"]
        return h + ["vertices", "faces"]

    def to_text(self) -> str:
        rows = [self.header()] + self.rows()
        widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        if any(s.pr[t].precision_undefined for s in self.scenes for t in self.thresholds):
            lines.append("* precision undefined (no predictions); reported as 0")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        import csv
        import io

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        writer.writerows(self.rows())
        return buf.getvalue()
