"""Reading and writing point clouds (PLY), meshes (OBJ/MTL, PLY) and JSON documents."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

import numpy as np
from plyfile import PlyData, PlyElement

from .core import PolycuboidError
from .synth import LabeledPointCloud


class FormatError(PolycuboidError):
    pass


_GT_FIELDS = ("gt_label", "gt_shift_x", "gt_shift_y", "gt_shift_z", "gt_face_id")


def write_cloud_ply(path, cloud: LabeledPointCloud, extra: Optional[dict] = None) -> None:
    """Binary little-endian PLY; ``extra`` adds per-point scalar properties."""
    fields = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if cloud.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if cloud.gt_label is not None:
        fields += [("gt_label", "u1")]
    if cloud.gt_shift is not None:
        fields += [("gt_shift_x", "f8"), ("gt_shift_y", "f8"), ("gt_shift_z", "f8")]
    if cloud.gt_face_id is not None:
        fields += [("gt_face_id", "u4")]
    extra = extra or {}
    for name, values in extra.items():
        fields.append((name, np.asarray(values).dtype.str.lstrip("<>|=")))
    data = np.empty(len(cloud), dtype=fields)
    data["x"], data["y"], data["z"] = cloud.points.T
    if cloud.colors is not None:
        data["red"], data["green"], data["blue"] = cloud.colors.T
    if cloud.gt_label is not None:
        data["gt_label"] = cloud.gt_label
    if cloud.gt_shift is not None:
        data["gt_shift_x"], data["gt_shift_y"], data["gt_shift_z"] = cloud.gt_shift.T
    if cloud.gt_face_id is not None:
        data["gt_face_id"] = cloud.gt_face_id
    for name, values in extra.items():
        data[name] = values
    PlyData([PlyElement.describe(data, "vertex")], text=False, byte_order="<").write(str(path))


def read_cloud_ply(path) -> LabeledPointCloud:
    try:
        ply = PlyData.read(str(path))
        vertex = ply["vertex"].data
    except FileNotFoundError:
        raise
    except Exception as exc:  # plyfile raises several unrelated types
        raise FormatError(f"{path}: malformed PLY ({exc})") from exc
    names = vertex.dtype.names or ()
    if not {"x", "y", "z"} <= set(names):
        raise FormatError(f"{path}: vertex element lacks x/y/z")
    points = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=1).astype(float)
    colors = None
    if {"red", "green", "blue"} <= set(names):
        colors = np.stack([vertex["red"], vertex["green"], vertex["blue"]], axis=1)
    gt_label = vertex["gt_label"] if "gt_label" in names else None
    gt_shift = None
    if {"gt_shift_x", "gt_shift_y", "gt_shift_z"} <= set(names):
        gt_shift = np.stack([vertex["gt_shift_x"], vertex["gt_shift_y"], vertex["gt_shift_z"]], axis=1)
    gt_face_id = vertex["gt_face_id"] if "gt_face_id" in names else None
    if gt_label is not None and np.any(np.asarray(gt_label) > 5):
        raise FormatError(f"{path}: gt_label outside 0..5")
    return LabeledPointCloud(points, colors, gt_label, gt_shift, gt_face_id)


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def read_mask(path, n_points: int) -> np.ndarray:
    """Per-point uint8 layout mask: ``.npy``, text (one value per line) or raw bytes."""
    path = Path(path)
    if path.suffix == ".npy":
        mask = np.load(path)
    elif path.suffix in (".txt", ".csv"):
        mask = np.loadtxt(path, dtype=np.int64)
    else:
        mask = np.fromfile(path, dtype=np.uint8)
    mask = np.asarray(mask).reshape(-1).astype(np.uint8)
    if len(mask) != n_points:
        raise FormatError(f"{path}: mask has {len(mask)} entries for {n_points} points")
    return mask


# ---------------------------------------------------------------------------
# meshes

def _fmt(x: float) -> str:
    return repr(float(x))


def write_obj(path, meshes, mtl_name: Optional[str] = None) -> None:
    """Write quad meshes to OBJ, one group per mesh; colors go to a sibling MTL."""
    path = Path(path)
    has_color = any(m.colors is not None for m in meshes)
    materials: dict = {}
    lines = []
    if has_color:
        mtl_name = mtl_name or path.with_suffix(".mtl").name
        lines.append(f"mtllib {mtl_name}")
    base = 1
    for mi, mesh in enumerate(meshes):
        lines.append(f"o {mesh.name or f'mesh_{mi}'}")
        if mesh.tag:
            lines.append(f"g {mesh.tag}")
        for v in mesh.vertices:
            lines.append("v " + " ".join(_fmt(c) for c in v))
        current = None
        for qi, quad in enumerate(mesh.quads):
            if mesh.colors is not None:
                rgb = tuple(int(c) for c in mesh.colors[qi])
                name = materials.setdefault(rgb, f"color_{rgb[0]:03d}_{rgb[1]:03d}_{rgb[2]:03d}")
                if name != current:
                    lines.append(f"usemtl {name}")
                    current = name
            lines.append("f " + " ".join(str(base + int(i)) for i in quad))
        base += len(mesh.vertices)
    path.write_text("\n".join(lines) + "\n")
    if has_color:
        mtl = []
        for rgb, name in sorted(materials.items(), key=lambda kv: kv[1]):
            mtl.append(f"newmtl {name}")
            mtl.append("Kd " + " ".join(f"{c / 255:.6f}" for c in rgb))
            mtl.append("")
        (path.parent / mtl_name).write_text("\n".join(mtl))


def read_obj(path):
    """Minimal OBJ reader for files written by :func:`write_obj` (quad faces only)."""
    from .reconstruct import RectilinearMesh

    vertices, meshes = [], []
    faces, name, tag, offset = [], None, None, 0

    def flush():
        if name is not None or faces:
            verts = np.array(vertices[offset:], float).reshape(-1, 3)
            quads = np.array(faces, int).reshape(-1, 4) - offset if faces else np.zeros((0, 4), int)
            meshes.append(RectilinearMesh(verts, quads, name=name, tag=tag))

    try:
        for raw in Path(path).read_text().splitlines():
            parts = raw.split()
            if not parts:
                continue
            if parts[0] == "o":
                flush()
                name, faces, offset = parts[1] if len(parts) > 1 else None, [], len(vertices)
                tag = None
            elif parts[0] == "g" and len(parts) > 1:
                tag = parts[1]
            elif parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 4:
                    raise FormatError(f"{path}: only quad faces are supported")
                faces.append(idx)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed OBJ ({exc})") from exc
    flush()
    return meshes


def write_mesh_ply(path, meshes) -> None:
    """All meshes in one binary PLY with per-face colors when available."""
    verts, quads, colors = [], [], []
    base = 0
    has_color = any(m.colors is not None for m in meshes)
    for m in meshes:
        verts.append(m.vertices)
        quads.append(m.quads + base)
        if has_color:
            c = m.colors if m.colors is not None else np.full((len(m.quads), 3), 200, np.uint8)
            colors.append(c)
        base += len(m.vertices)
    v = np.concatenate(verts) if verts else np.zeros((0, 3))
    q = np.concatenate(quads) if quads else np.zeros((0, 4), int)
    vdata = np.empty(len(v), dtype=[("x", "f8"), ("y", "f8"), ("z", "f8")])
    vdata["x"], vdata["y"], vdata["z"] = v.T
    fields = [("vertex_indices", "i4", (4,))]
    if has_color:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    fdata = np.empty(len(q), dtype=fields)
    fdata["vertex_indices"] = q
    if has_color:
        c = np.concatenate(colors)
        fdata["red"], fdata["green"], fdata["blue"] = c.T
    face_el = PlyElement.describe(fdata, "face", len_types={"vertex_indices": "u1"})
    PlyData([PlyElement.describe(vdata, "vertex"), face_el], text=False, byte_order="<").write(str(path))


def replace_dir(tmp_dir: Path, final_dir: Path) -> None:
    """Move a fully written ``tmp_dir`` into place as ``final_dir``."""
    import shutil

    final_dir = Path(final_dir)
    if final_dir.exists():
        shutil.rmtree(final_dir)
    os.replace(tmp_dir, final_dir)
