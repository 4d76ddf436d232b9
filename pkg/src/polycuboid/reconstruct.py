"""Polycuboid instance to rectilinear mesh.

Pipeline per instance: rotation alignment, non-uniform grid from face
planes, per-cell scoring, selection of positive cells, and extraction of the
outer surface of the selected cells as merged axis-aligned quads.

Coordinates inside this module are either *world* (input points) or
*aligned* (``q = R.T @ p``, face normals along the axes).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .core import AXIS_DIRECTIONS, FaceLabel, PolycuboidError, plane_basis, wahba_rotation

log = logging.getLogger(__name__)

DEFAULT_BAND = 0.05
DEFAULT_MARGIN = 0.02
DEFAULT_DEDUP = 0.02
DEFAULT_MIN_SLAB = 0.01
DEFAULT_MIN_THICKNESS = 0.02
DEFAULT_FINE_INTERVAL = 0.1
COARSE, FINE = "coarse", "fine"

# cell faces are visited in this order when summing a score
FACE_ORDER = (FaceLabel.NX, FaceLabel.PX, FaceLabel.NY, FaceLabel.PY, FaceLabel.NZ, FaceLabel.PZ)


class DegenerateAlignment(PolycuboidError):
    """All face normals share a single axis; only a yaw about it is recoverable."""


class EmptySelection(PolycuboidError):
    pass


# ---------------------------------------------------------------------------
# types

@dataclass
class NonUniformGrid:
    cuts: tuple

    def __post_init__(self):
        self.cuts = tuple(np.asarray(c, float) for c in self.cuts)
        for c in self.cuts:
            if len(c) < 2 or np.any(np.diff(c) <= 0):
                raise ValueError("each axis needs >= 2 strictly increasing cuts")

    @property
    def shape(self) -> tuple:
        return tuple(len(c) - 1 for c in self.cuts)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def cell_bounds(self, cell) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.cuts[a][cell[a]] for a in range(3)])
        hi = np.array([self.cuts[a][cell[a] + 1] for a in range(3)])
        return lo, hi

    def subdivide(self, interval: float) -> tuple["NonUniformGrid", tuple]:
        """Split every slab longer than ``interval`` evenly; also return fine-to-coarse index maps."""
        new, parents = [], []
        for c in self.cuts:
            pts, par = [c[0]], []
            for i in range(len(c) - 1):
                n = max(1, math.ceil((c[i + 1] - c[i]) / interval - 1e-9))
                step = (c[i + 1] - c[i]) / n
                pts.extend(c[i] + step * np.arange(1, n))
                pts.append(c[i + 1])
                par.extend([i] * n)
            new.append(np.array(pts))
            parents.append(np.array(par))
        return NonUniformGrid(tuple(new)), tuple(parents)

    def to_dict(self) -> dict:
        return {"cuts": [c.tolist() for c in self.cuts]}


@dataclass
class BoxSelection:
    grid: NonUniformGrid
    scores: np.ndarray
    selected: np.ndarray

    @property
    def cells(self) -> set:
        return {tuple(int(x) for x in c) for c in np.argwhere(self.selected)}

    def boxes(self) -> np.ndarray:
        """Selected cells as (n, 2, 3) [lo, hi] arrays in the aligned frame."""
        out = [np.stack(self.grid.cell_bounds(c)) for c in sorted(self.cells)]
        return np.array(out).reshape(-1, 2, 3)

    def volume(self) -> float:
        b = self.boxes()
        return float(np.prod(b[:, 1] - b[:, 0], axis=1).sum()) if len(b) else 0.0


@dataclass
class RectilinearMesh:
    vertices: np.ndarray
    quads: np.ndarray
    colors: Optional[np.ndarray] = None
    name: Optional[str] = None
    tag: Optional[str] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float).reshape(-1, 3)
        self.quads = np.asarray(self.quads, np.int64).reshape(-1, 4)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, np.uint8).reshape(-1, 3)

    @property
    def n_triangles(self) -> int:
        return 2 * len(self.quads)


# ---------------------------------------------------------------------------
# alignment

def _oriented_normals(faces, labels) -> np.ndarray:
    out = []
    for f, lab in zip(faces, labels):
        n = f.plane.normal
        out.append(n if n @ FaceLabel(lab).vector >= 0 else -n)
    return np.array(out).reshape(-1, 3)


def wahba_align(faces, labels) -> np.ndarray:
    """Weighted least-squares rotation taking label axes onto face normals.

    Raises DegenerateAlignment when all labels share one axis.
    """
    if not faces:
        raise ValueError("no faces to align")
    axes = {FaceLabel(lab).axis for lab in labels}
    if len(axes) < 2:
        raise DegenerateAlignment("all faces share one axis")
    body = np.array([FaceLabel(lab).vector for lab in labels])
    weights = np.array([f.n_points for f in faces], float)
    return wahba_rotation(body, _oriented_normals(faces, labels), weights)


def _tilt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` to ``b``."""
    v = np.cross(a, b)
    c = float(a @ b)
    s = np.linalg.norm(v)
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        perp = plane_basis(a)[0]
        return 2.0 * np.outer(perp, perp) - np.eye(3)
    k = v / s
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * kx + (1 - c) * kx @ kx


def _fold(t: float) -> float:
    return (t + math.pi / 4) % (math.pi / 2) - math.pi / 4


def _footprint_angle(uv: np.ndarray) -> float:
    """In-plane angle of the minimum-area bounding rectangle, folded into [-45, 45) degrees.

    Rectangle sides are aligned with convex hull edges; collinear input falls
    back to the principal direction.
    """
    try:
        hull = uv[ConvexHull(uv).vertices]
    except (QhullError, ValueError):
        evals, evecs = np.linalg.eigh(uv.T @ uv)
        major = evecs[:, int(np.argmax(evals))]
        return _fold(math.atan2(major[1], major[0]))
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.unique(np.round([_fold(math.atan2(e[1], e[0])) for e in edges], 12))
    best, best_area = 0.0, np.inf
    for t in angles:
        c, s = math.cos(t), math.sin(t)
        r = hull @ np.array([[c, -s], [s, c]])
        area = float(np.prod(r.max(axis=0) - r.min(axis=0)))
        if area < best_area - 1e-12:
            best, best_area = float(t), area
    return best


def yaw_only_align(faces, labels, points: np.ndarray) -> np.ndarray:
    """Tilt the shared axis onto the mean normal, then fix the in-plane angle.

    The angle comes from the minimum-area rectangle around the projected
    points and is folded into [-45, 45) degrees.
    """
    lab0 = FaceLabel(labels[0])
    axis = lab0.axis
    normals = _oriented_normals(faces, labels)
    signs = np.array([FaceLabel(lab).sign for lab in labels], float)
    w = np.array([f.n_points for f in faces], float)
    mean = (normals * (signs * w)[:, None]).sum(axis=0)
    mean /= np.linalg.norm(mean)
    tilt = _tilt(AXIS_DIRECTIONS[2 * axis], mean)
    q = points @ tilt
    u, v = [a for a in range(3) if a != axis]
    uv = q[:, [u, v]] - q[:, [u, v]].mean(axis=0)
    if len(uv) < 2:
        return tilt
    theta = _footprint_angle(uv)
    c, s = math.cos(theta), math.sin(theta)
    spin = np.eye(3)
    spin[u, u], spin[u, v], spin[v, u], spin[v, v] = c, -s, s, c
    # rotation about the shared axis in the (u, v) plane keeps right-handedness
    return tilt @ spin


def align_instance(instance, points: np.ndarray) -> np.ndarray:
    """Rotation R with world = R @ aligned, stored on ``instance.rotation``."""
    try:
        r = wahba_align(instance.faces, instance.labels)
    except DegenerateAlignment:
        r = yaw_only_align(instance.faces, instance.labels, points[instance.point_indices()])
    instance.rotation = r
    return r


# ---------------------------------------------------------------------------
# grid

def _merge_cuts(values, weights, limit, dedup: float, min_slab: float):
    order = np.lexsort((limit, values))
    values, weights, limit = values[order], weights[order], limit[order]
    merged = []
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] - values[i - 1] > dedup:
            vs, ws, ls = values[start:i], weights[start:i], limit[start:i]
            if ws.sum() > 0:
                val = float((vs * ws).sum() / ws.sum())
            else:
                val = float(vs.mean())
            merged.append([val, float(ws.sum()), bool(ls.all())])
            start = i
    changed = True
    while changed and len(merged) > 1:
        changed = False
        for i in range(len(merged) - 1):
            if merged[i + 1][0] - merged[i][0] < min_slab:
                a, b = merged[i], merged[i + 1]
                drop = i if (a[1], i == 0) < (b[1], i + 1 == len(merged) - 1) else i + 1
                del merged[drop]
                changed = True
                break
    return merged


def build_grid(
    instance,
    aligned: np.ndarray,
    dedup: float = DEFAULT_DEDUP,
    min_slab: float = DEFAULT_MIN_SLAB,
    min_thickness: float = DEFAULT_MIN_THICKNESS,
) -> NonUniformGrid:
    """Cuts from face planes (area-weighted, deduplicated) plus the bounding box limits.

    ``aligned`` holds all cloud points in the aligned frame; only the
    instance's face points are used. An axis left with a single cut is
    thickened inward from its face by ``min_thickness``.
    """
    cuts = []
    face_pts = [aligned[f.point_indices] for f in instance.faces]
    pts = np.concatenate(face_pts)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    for a in range(3):
        vals, wts, lim = [lo[a], hi[a]], [0.0, 0.0], [True, True]
        signs = []
        for f, fp, lab in zip(instance.faces, face_pts, instance.labels):
            if FaceLabel(lab).axis == a:
                vals.append(float(fp[:, a].mean()))
                wts.append(float(len(fp)))
                lim.append(False)
                signs.append(FaceLabel(lab).sign)
        merged = _merge_cuts(np.array(vals), np.array(wts), np.array(lim), dedup, min_slab)
        c = [m[0] for m in merged]
        if len(c) < 2:
            inward = -signs[0] if signs else 1
            c = sorted([c[0], c[0] + inward * min_thickness])
        cuts.append(np.array(c))
    return NonUniformGrid(tuple(cuts))


# ---------------------------------------------------------------------------
# scoring

def eroded_interval(lo: float, hi: float, margin: float) -> tuple[float, float]:
    m = min(margin, 0.25 * (hi - lo))
    return lo + m, hi - m


def _eroded_bounds(cuts: np.ndarray, margin: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = cuts[:-1], cuts[1:]
    m = np.minimum(margin, 0.25 * (hi - lo))
    return lo + m, hi - m


def _locate(values: np.ndarray, cuts: np.ndarray, margin: float) -> tuple[np.ndarray, np.ndarray]:
    """Cell indices whose eroded interval holds each value (-1 = none).

    Eroded intervals only touch when the margin is zero; a value on such a
    shared end belongs to both cells, so a second index is returned too.
    """
    elo, ehi = _eroded_bounds(cuts, margin)
    idx = np.searchsorted(elo, values, side="right") - 1
    ok = idx >= 0
    idx_c = np.clip(idx, 0, len(elo) - 1)
    ok &= values >= elo[idx_c]
    ok &= values <= ehi[idx_c]
    prev = idx_c - 1
    prev_c = np.clip(prev, 0, len(elo) - 1)
    also = (prev >= 0) & (values >= elo[prev_c]) & (values <= ehi[prev_c])
    return np.where(ok, idx_c, -1), np.where(also, prev_c, -1)


def _cell_pairs(iu: tuple, iv: tuple):
    """All (point, u cell, v cell) combinations from two :func:`_locate` results."""
    rows, cu, cv = [], [], []
    for a in iu:
        for b in iv:
            hit = np.flatnonzero((a >= 0) & (b >= 0))
            rows.append(hit)
            cu.append(a[hit])
            cv.append(b[hit])
    return np.concatenate(rows), np.concatenate(cu), np.concatenate(cv)


def score_grid(
    grid: NonUniformGrid,
    points: np.ndarray,
    labels: np.ndarray,
    band: float = DEFAULT_BAND,
    margin: float = DEFAULT_MARGIN,
) -> np.ndarray:
    """Score every cell.

    For each cell face, the voting set is the points within ``band`` of its
    plane whose in-plane projection lies inside the face rectangle eroded by
    ``margin`` (capped at a quarter of each side). The face contributes
    ``sgn * w``: sgn is +1 when the face's outward label is among the most
    frequent labels of the voting set, -1 otherwise; w is the area of the
    set's 2D bounding box over the eroded area, clamped to [0, 1]. Empty sets
    contribute 0.
    """
    points = np.asarray(points, float).reshape(-1, 3)
    labels = np.asarray(labels, np.int64)
    shape = grid.shape
    contrib = {lab: np.zeros(shape) for lab in FACE_ORDER}
    for a in range(3):
        u, v = [x for x in range(3) if x != a]
        cu, cv = grid.cuts[u], grid.cuts[v]
        nu, nv = len(cu) - 1, len(cv) - 1
        elo_u, ehi_u = _eroded_bounds(cu, margin)
        elo_v, ehi_v = _eroded_bounds(cv, margin)
        area = (ehi_u - elo_u)[:, None] * (ehi_v - elo_v)[None, :]
        rows, iu_all, iv_all = _cell_pairs(_locate(points[:, u], cu, margin), _locate(points[:, v], cv, margin))
        pa = points[rows, a]
        for ci, c in enumerate(grid.cuts[a]):
            near = np.abs(pa - c) <= band
            if not near.any():
                continue
            iu, iv = iu_all[near], iv_all[near]
            sel = rows[near]
            pu, pv, pl = points[sel, u], points[sel, v], labels[sel]
            key = iu * nv + iv
            counts = np.zeros((nu * nv, 6), np.int64)
            np.add.at(counts, (key, pl), 1)
            umin = np.full(nu * nv, np.inf)
            umax = np.full(nu * nv, -np.inf)
            vmin = np.full(nu * nv, np.inf)
            vmax = np.full(nu * nv, -np.inf)
            np.minimum.at(umin, key, pu)
            np.maximum.at(umax, key, pu)
            np.minimum.at(vmin, key, pv)
            np.maximum.at(vmax, key, pv)
            total = counts.sum(axis=1)
            has = total > 0
            w = np.zeros(nu * nv)
            w[has] = (umax[has] - umin[has]) * (vmax[has] - vmin[has]) / area.reshape(-1)[has]
            w = np.clip(w, 0.0, 1.0)
            best = counts.max(axis=1)
            for sign, cell_i in ((1, ci - 1), (-1, ci)):
                if cell_i < 0 or cell_i >= len(grid.cuts[a]) - 1:
                    continue
                lab = FaceLabel.from_axis(a, sign)
                sgn = np.where(counts[:, int(lab)] == best, 1.0, -1.0)
                term = np.where(has, sgn * w, 0.0).reshape(nu, nv)
                idx = [slice(None)] * 3
                idx[a] = cell_i
                contrib[lab][tuple(idx)] = term
    scores = np.zeros(shape)
    for lab in FACE_ORDER:
        scores = scores + contrib[lab]
    return scores


def select_boxes(
    grid: NonUniformGrid,
    points: np.ndarray,
    labels: np.ndarray,
    band: float = DEFAULT_BAND,
    margin: float = DEFAULT_MARGIN,
) -> BoxSelection:
    scores = score_grid(grid, points, labels, band, margin)
    return BoxSelection(grid, scores, scores > 0)


def fill_enclosed(selection: BoxSelection) -> BoxSelection:
    """Select zero-score cells that are sealed off from the grid exterior.

    A cell whose faces see no points at all scores exactly 0; when such a
    cell sits inside the selected solid it would leave a closed cavity.
    Unselected components that do not reach the grid boundary have their
    zero-score cells filled; negative cells stay unselected.
    """
    free = ~selection.selected
    labels, n = ndimage.label(np.pad(free, 1, constant_values=True))
    if n <= 1:
        return selection
    outside = labels[0, 0, 0]
    enclosed = (labels[1:-1, 1:-1, 1:-1] != outside) & free
    fill = enclosed & (selection.scores == 0)
    if not fill.any():
        return selection
    return BoxSelection(selection.grid, selection.scores, selection.selected | fill)


def instance_labels(instance) -> np.ndarray:
    """Per-point labels aligned with ``instance.point_indices()``."""
    idx = np.concatenate([f.point_indices for f in instance.faces])
    lab = np.concatenate([np.full(len(f.point_indices), int(l)) for f, l in zip(instance.faces, instance.labels)])
    order = np.argsort(idx, kind="stable")
    idx, lab = idx[order], lab[order]
    first = np.concatenate([[True], idx[1:] != idx[:-1]])
    return lab[first]


# ---------------------------------------------------------------------------
# surface extraction

def _greedy_rects(mask: np.ndarray) -> list[tuple[int, int, int, int]]:
    """Cover a 2D boolean mask with rectangles (r0, r1, c0, c1), half-open; rows first."""
    todo = mask.copy()
    rects = []
    nr, nc = mask.shape
    for r in range(nr):
        for c in range(nc):
            if not todo[r, c]:
                continue
            c1 = c
            while c1 < nc and todo[r, c1]:
                c1 += 1
            r1 = r + 1
            while r1 < nr and todo[r1, c:c1].all():
                r1 += 1
            todo[r:r1, c:c1] = False
            rects.append((r, r1, c, c1))
    return rects


def _corner_nodes(rects) -> int:
    return len({(r, c) for r0, r1, c0, c1 in rects for r in (r0, r1) for c in (c0, c1)})


def _greedy_covers(mask: np.ndarray) -> list[list[tuple[int, int, int, int]]]:
    """Greedy rectangle covers of a 2D mask in the eight scan orientations."""
    out = []
    for transpose in (False, True):
        for flip_r in (False, True):
            for flip_c in (False, True):
                m = mask.T if transpose else mask
                if flip_r:
                    m = m[::-1]
                if flip_c:
                    m = m[:, ::-1]
                rects = []
                mr, mc = m.shape
                for r0, r1, c0, c1 in _greedy_rects(m):
                    if flip_r:
                        r0, r1 = mr - r1, mr - r0
                    if flip_c:
                        c0, c1 = mc - c1, mc - c0
                    rects.append((c0, c1, r0, r1) if transpose else (r0, r1, c0, c1))
                out.append(sorted(rects))
    return out


def _all_partitions(mask: np.ndarray, limit: int):
    """Every partition of ``mask`` into grid rectangles, or None if there are more than ``limit``."""
    todo = mask.copy()
    out: list = []
    current: list = []
    nr, nc = mask.shape

    def recurse() -> bool:
        free = np.argwhere(todo)
        if len(free) == 0:
            out.append(sorted(current))
            return len(out) <= limit
        r, c = (int(x) for x in free[0])
        c1 = c
        while c1 < nc and todo[r, c1]:
            c1 += 1
        for ce in range(c + 1, c1 + 1):
            r1 = r + 1
            while r1 < nr and todo[r1, c:ce].all():
                r1 += 1
            for re in range(r + 1, r1 + 1):
                todo[r:re, c:ce] = False
                current.append((r, re, c, ce))
                ok = recurse()
                current.pop()
                todo[r:re, c:ce] = True
                if not ok:
                    return False
        return True

    return out if recurse() else None


def rect_covers(mask: np.ndarray, limit: int = 256) -> list[list[tuple[int, int, int, int]]]:
    """Candidate rectangle partitions of a 2D mask.

    Small masks get every partition; larger ones the greedy covers from
    the eight scan orientations. Duplicates are dropped, order is stable.
    """
    mask = np.asarray(mask, bool)
    found = _all_partitions(mask, limit) if mask.sum() <= 16 else None
    cands = _greedy_covers(mask) + (found or [])
    out, seen = [], set()
    for rects in cands:
        key = tuple(rects)
        if key not in seen:
            seen.add(key)
            out.append(rects)
    return out


def merge_rects(mask: np.ndarray) -> list[tuple[int, int, int, int]]:
    """Rectangle cover of a 2D mask with few distinct corners (then few rectangles)."""
    return min(rect_covers(mask), key=lambda rects: (_corner_nodes(rects), len(rects)))


def corner_nodes(selected: np.ndarray) -> set:
    """Grid nodes where the selected solid has a true polyhedron vertex.

    A node is a vertex unless its 2x2x2 cell neighbourhood is an extrusion
    along some axis (flat face, straight edge, or empty/full space).
    """
    p = np.pad(np.asarray(selected, bool), 1)
    blocks = np.lib.stride_tricks.sliding_window_view(p, (2, 2, 2))
    extruded = np.zeros(blocks.shape[:3], bool)
    for a in range(3):
        extruded |= np.all(np.take(blocks, 0, axis=3 + a) == np.take(blocks, 1, axis=3 + a), axis=(3, 4))
    return {tuple(int(x) for x in ijk) for ijk in np.argwhere(~extruded)}


def _plane_masks(sel: np.ndarray):
    for a in range(3):
        pad = [(0, 0)] * 3
        pad[a] = (1, 1)
        p = np.pad(sel, pad)
        lo = np.take(p, range(0, p.shape[a] - 1), axis=a)
        hi = np.take(p, range(1, p.shape[a]), axis=a)
        for sign, mask3 in ((1, lo & ~hi), (-1, hi & ~lo)):
            for ci in range(mask3.shape[a]):
                m = np.take(mask3, ci, axis=a)
                if m.any():
                    yield a, sign, ci, m


def _to_node(a: int, ci: int, r: int, c: int) -> tuple:
    u, v = [x for x in range(3) if x != a]
    ijk = [0, 0, 0]
    ijk[a], ijk[u], ijk[v] = ci, r, c
    return tuple(ijk)


def _rect_nodes(a: int, ci: int, rects) -> set:
    return {_to_node(a, ci, r, c) for r0, r1, c0, c1 in rects for r in (r0, r1) for c in (c0, c1)}


def _descend(options, required: set, choice: list, passes: int) -> list:
    choice = list(choice)
    for _ in range(passes):
        changed = False
        for pi, opts in enumerate(options):
            others = set(required)
            for pj, k in enumerate(choice):
                if pj != pi:
                    others |= options[pj][k][1]
            best = min(range(len(opts)), key=lambda k: (len(opts[k][1] - others), len(opts[k][0]), k))
            if best != choice[pi]:
                choice[pi] = best
                changed = True
        if not changed:
            break
    return choice


def _node_count(options, required: set, choice: list) -> int:
    nodes = set(required)
    for opts, k in zip(options, choice):
        nodes |= opts[k][1]
    return len(nodes)


def _branch_and_bound(options, required: set, choice: list, budget: int) -> list:
    """Search plane covers for the fewest distinct nodes, starting from ``choice``.

    The running union of nodes is a lower bound on any completion, so
    branches that cannot beat the incumbent are cut. At most ``budget``
    partial assignments are expanded; the incumbent is returned either way.
    """
    order = sorted(range(len(options)), key=lambda i: len(options[i]))
    best = [_node_count(options, required, choice), list(choice)]
    visits = 0
    current = list(choice)

    def recurse(depth: int, nodes: set) -> None:
        nonlocal visits
        if visits >= budget:
            return
        visits += 1
        if depth == len(order):
            if len(nodes) < best[0]:
                best[0], best[1] = len(nodes), list(current)
            return
        pi = order[depth]
        ranked = sorted(range(len(options[pi])), key=lambda k: (len(options[pi][k][1] - nodes), k))
        for k in ranked:
            merged = nodes | options[pi][k][1]
            if len(merged) >= best[0]:
                continue
            current[pi] = k
            recurse(depth + 1, merged)

    recurse(0, set(required))
    return best[1]


def surface_quads(selected: np.ndarray, merge: bool = True, budget: int = 20_000):
    """Boundary faces of the selected cells as (axis, sign, plane index, u0, u1, v0, v1) node ranges.

    With ``merge``, each boundary plane is covered by rectangles chosen so
    that their corners reuse nodes the mesh needs anyway: the solid's true
    vertices and the corners picked on other planes. A coordinate sweep
    gives a first choice, then a bounded branch-and-bound improves it.
    """
    sel = np.asarray(selected, bool)
    planes = list(_plane_masks(sel))
    if not merge:
        return [(a, sign, ci, r, r + 1, c, c + 1) for a, sign, ci, m in planes for r, c in np.argwhere(m)]
    options = [[(rects, _rect_nodes(a, ci, rects)) for rects in rect_covers(m)] for a, _, ci, m in planes]
    required = corner_nodes(sel)
    start = [min(range(len(opts)), key=lambda k: (len(opts[k][1] - required), len(opts[k][0])))
             for opts in options]
    choice = _descend(options, required, start, passes=3)
    if len(planes) and budget > 0:
        choice = _branch_and_bound(options, required, choice, budget)
    out = []
    for (a, sign, ci, _), opts, k in zip(planes, options, choice):
        for r0, r1, c0, c1 in opts[k][0]:
            out.append((a, sign, ci, r0, r1, c0, c1))
    return out


def mesh_from_selection(
    selection: BoxSelection,
    rotation: Optional[np.ndarray] = None,
    merge: bool = True,
    name: Optional[str] = None,
) -> RectilinearMesh:
    if not selection.selected.any():
        raise EmptySelection("no cell selected")
    grid = selection.grid
    rot = np.eye(3) if rotation is None else np.asarray(rotation, float)
    node_index: dict = {}
    verts, quads = [], []

    def node(ijk):
        k = node_index.get(ijk)
        if k is None:
            k = len(verts)
            node_index[ijk] = k
            verts.append([grid.cuts[x][ijk[x]] for x in range(3)])
        return k

    for a, sign, ci, r0, r1, c0, c1 in surface_quads(selection.selected, merge):
        u, v = [x for x in range(3) if x != a]
        corners = []
        for ru, rv in ((r0, c0), (r1, c0), (r1, c1), (r0, c1)):
            ijk = [0, 0, 0]
            ijk[a], ijk[u], ijk[v] = ci, ru, rv
            corners.append(node(tuple(ijk)))
        # e_u x e_v is +x, -y, +z for a = 0, 1, 2
        natural = -1 if a == 1 else 1
        if natural != sign:
            corners = corners[::-1]
        quads.append(corners)
    aligned = np.array(verts)
    return RectilinearMesh(aligned @ rot.T, np.array(quads), name=name)


def mesh_edges(mesh: RectilinearMesh, tol: float = 1e-6):
    """Directed elementary edges after splitting quad edges at collinear vertices."""
    v = mesh.vertices
    tree = cKDTree(v)
    out = []
    for q in mesh.quads:
        for k in range(4):
            a, b = int(q[k]), int(q[(k + 1) % 4])
            pa, pb = v[a], v[b]
            d = pb - pa
            length = np.linalg.norm(d)
            cand = tree.query_ball_point((pa + pb) / 2, length / 2 + tol)
            on = []
            for c in cand:
                if c in (a, b):
                    continue
                t = (v[c] - pa) @ d / (length * length)
                if 0 < t < 1 and np.linalg.norm(pa + t * d - v[c]) <= tol:
                    on.append((t, c))
            chain = [a] + [c for _, c in sorted(on)] + [b]
            out.extend(zip(chain[:-1], chain[1:]))
    return out


def is_watertight(mesh: RectilinearMesh) -> bool:
    """Every elementary edge is used exactly once in each direction.

    Quads abutting a larger coplanar quad create T-junctions; edges are split
    at such vertices first, so this is the closed-manifold test for merged
    rectilinear surfaces.
    """
    if len(mesh.quads) == 0:
        return False
    from collections import Counter

    directed = Counter(mesh_edges(mesh))
    if any(n != 1 for n in directed.values()):
        return False
    return all(directed.get((b, a), 0) == 1 for a, b in directed)


def euler_characteristic(mesh: RectilinearMesh) -> int:
    undirected = {tuple(sorted(e)) for e in mesh_edges(mesh)}
    used = np.unique(mesh.quads)
    return int(len(used) - len(undirected) + len(mesh.quads))


# ---------------------------------------------------------------------------
# color

def _quad_distance(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    p0 = corners[0]
    e1, e2 = corners[1] - p0, corners[3] - p0
    l1, l2 = e1 @ e1, e2 @ e2
    rel = points - p0
    s = np.clip(rel @ e1 / l1, 0.0, 1.0)
    t = np.clip(rel @ e2 / l2, 0.0, 1.0)
    closest = p0 + s[:, None] * e1 + t[:, None] * e2
    return np.linalg.norm(points - closest, axis=1)


def colorize(
    mesh: RectilinearMesh,
    points: np.ndarray,
    colors: Optional[np.ndarray],
    band: float = DEFAULT_BAND,
    fallback: Optional[np.ndarray] = None,
) -> RectilinearMesh:
    """Per-quad mean color of the points within ``band`` of the quad."""
    if colors is None:
        return mesh
    points = np.asarray(points, float)
    colors = np.asarray(colors, float)
    if fallback is None:
        fallback = colors.mean(axis=0) if len(colors) else np.full(3, 200.0)
    tree = cKDTree(points) if len(points) else None
    out = np.empty((len(mesh.quads), 3))
    for qi, quad in enumerate(mesh.quads):
        corners = mesh.vertices[quad]
        center = corners.mean(axis=0)
        radius = np.linalg.norm(corners - center, axis=1).max() + band
        cand = np.array(tree.query_ball_point(center, radius), dtype=np.int64) if tree is not None else np.zeros(0, int)
        if len(cand):
            cand = cand[_quad_distance(points[cand], corners) <= band]
        out[qi] = colors[cand].mean(axis=0) if len(cand) else fallback
    return RectilinearMesh(mesh.vertices, mesh.quads, np.rint(out).astype(np.uint8), mesh.name, mesh.tag)


# ---------------------------------------------------------------------------
# per-instance driver

@dataclass
class ReconstructParams:
    band: float = DEFAULT_BAND
    margin: float = DEFAULT_MARGIN
    dedup: float = DEFAULT_DEDUP
    min_slab: float = DEFAULT_MIN_SLAB
    min_thickness: float = DEFAULT_MIN_THICKNESS
    fine_interval: float = DEFAULT_FINE_INTERVAL
    merge_quads: bool = True


@dataclass
class InstanceFit:
    rotation: np.ndarray
    grid: NonUniformGrid
    selection: BoxSelection
    coarse: BoxSelection
    mesh: RectilinearMesh
    level: str
    extra: dict = field(default_factory=dict)


def refine(coarse: BoxSelection, points: np.ndarray, labels: np.ndarray, params: ReconstructParams) -> BoxSelection:
    """Fine level: split slabs to ``fine_interval`` and rescore.

    A fine cell with a zero score saw no evidence either way and keeps the
    selection of its coarse parent; otherwise its own sign decides.
    """
    fine, parents = coarse.grid.subdivide(params.fine_interval)
    scores = score_grid(fine, points, labels, params.band, params.margin)
    pi, pj, pk = np.meshgrid(*parents, indexing="ij")
    inherited = coarse.selected[pi, pj, pk]
    selected = np.where(scores == 0, inherited, scores > 0)
    return fill_enclosed(BoxSelection(fine, scores, selected))


def reconstruct_instance(
    instance,
    points: np.ndarray,
    level: str = COARSE,
    params: Optional[ReconstructParams] = None,
    name: Optional[str] = None,
) -> InstanceFit:
    """Align, grid, score and mesh one instance. ``points`` is the whole cloud (world frame)."""
    params = params or ReconstructParams()
    if level not in (COARSE, FINE):
        raise ValueError(f"unknown level {level!r}")
    rot = align_instance(instance, points)
    idx = instance.point_indices()
    aligned_all = np.zeros_like(points)
    aligned_all[idx] = points[idx] @ rot
    grid = build_grid(instance, aligned_all, params.dedup, params.min_slab, params.min_thickness)
    q = aligned_all[idx]
    labels = instance_labels(instance)
    if len(instance.faces) == 1:
        # a lone face is boxed as a thin slab behind it
        scores = np.ones(grid.shape)
        coarse = BoxSelection(grid, scores, np.ones(grid.shape, bool))
    else:
        coarse = fill_enclosed(select_boxes(grid, q, labels, params.band, params.margin))
    selection = refine(coarse, q, labels, params) if level == FINE and coarse.selected.any() else coarse
    mesh = mesh_from_selection(selection, rot, params.merge_quads, name)
    return InstanceFit(rot, grid, selection, coarse, mesh, level)
