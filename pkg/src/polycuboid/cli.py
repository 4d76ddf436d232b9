"""Command line interface: generate, fit, eval, export.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import formats, synth
from .config import ConfigError, PipelineConfig, load_config
from .core import PolycuboidError
from .metrics import EvalReport, MissingScene, SceneEval, Solid, chamfer, iou_pr, mesh_stats
from .pipeline import fit_cloud

log = logging.getLogger("polycuboid")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DEFAULT_TRAIN, DEFAULT_VAL = 1800, 200


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# generate

def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_one(args: tuple) -> dict:
    out_dir, scene_id, seed, params = args
    out_dir = Path(out_dir)
    if params.get("gt_boxes") is not None:
        rng = np.random.default_rng(seed)
        boxes = synth.load_gt_boxes(params["gt_boxes"])
        scene = synth.gen_scene_contextual(boxes, rng, params["max_boxes"], seed=seed)
    else:
        scene = synth.gen_scene_random(seed, n_shapes=params["n_shapes"], max_boxes=params["max_boxes"])
    rng = np.random.default_rng([seed, 1])
    cloud = synth.make_scene_cloud(scene, rng, params["interval"], params["sigma"], tuple(params["holes"]))
    graph = synth.gt_graph(scene, cloud)
    doc = scene.to_dict()
    doc["sampling"] = {k: params[k] for k in ("interval", "sigma", "holes")}
    formats.write_json(out_dir / f"{scene_id}.json", doc)
    formats.write_cloud_ply(out_dir / f"{scene_id}.ply", cloud)
    formats.write_json(out_dir / f"{scene_id}.graph.json", graph.to_dict())
    return {
        "id": scene_id,
        "seed": seed,
        "n_shapes": len(scene.shapes),
        "n_boxes": int(sum(len(s.boxes) for s in scene.shapes)),
        "n_points": len(cloud),
    }


def _pool_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def generate_split(out_dir: Path, n: int, seed: int, params: dict, jobs: int = 1) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    items = [(str(out_dir), f"scene_{i:04d}", scene_seed(seed, i), params) for i in range(n)]
    entries = _pool_map(generate_one, items, jobs)
    manifest = {"seed": seed, "n": n, "params": {k: v for k, v in params.items() if k != "gt_boxes"}, "scenes": entries}
    formats.write_json(out_dir / "manifest.json", manifest)
    return manifest


def cmd_generate(args) -> int:
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise OSError(f"{out}: exists and is not a directory")
    params = {
        "interval": args.interval,
        "sigma": args.sigma,
        "holes": list(args.holes),
        "max_boxes": args.max_boxes,
        "n_shapes": args.n_shapes,
        "gt_boxes": formats.read_json(args.contextual) if args.contextual else None,
    }
    if args.n is not None:
        generate_split(out, args.n, args.seed, params, args.jobs)
    else:
        generate_split(out / "train", args.n_train, args.seed, params, args.jobs)
        generate_split(out / "val", args.n_val, args.seed + 1, params, args.jobs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit

def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _mask_path(mask_arg: Optional[str], cloud_path: Path) -> Optional[Path]:
    if mask_arg is None:
        return None
    p = Path(mask_arg)
    if p.is_dir():
        for suffix in (".mask.npy", ".mask.txt", ".mask"):
            cand = p / (cloud_path.stem + suffix)
            if cand.exists():
                return cand
        raise FileNotFoundError(f"no layout mask for {cloud_path.stem} in {p}")
    return p


def fit_one(args: tuple) -> dict:
    cloud_path, out_root, config_dict, gt_graph_path, mask_arg, debug, timing = args
    cloud_path, out_root = Path(cloud_path), Path(out_root)
    config = PipelineConfig(**config_dict)
    cloud = formats.read_cloud_ply(cloud_path)
    gt = scene = None
    if config.mode == "oracle":
        gpath = Path(gt_graph_path) if gt_graph_path else _sibling(cloud_path, ".graph.json")
        if gpath.exists():
            gt = synth.GtRelationGraph.from_dict(formats.read_json(gpath))
        spath = _sibling(cloud_path, ".json")
        if spath.exists():
            scene = synth.SyntheticScene.from_dict(formats.read_json(spath))
    mask_path = _mask_path(mask_arg or config.layout_mask, cloud_path)
    mask = formats.read_mask(mask_path, len(cloud)) if mask_path else None
    result = fit_cloud(cloud, config, gt, scene, mask)

    scene_id = cloud_path.stem
    out_root.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{scene_id}.", dir=out_root))
    try:
        inst_dir = tmp / "instances"
        inst_dir.mkdir()
        for fi in result.instances:
            formats.write_obj(inst_dir / f"{fi.mesh.name}.obj", [fi.mesh])
        formats.write_obj(tmp / "combined.obj", result.meshes)
        report = result.report(config)
        report["scene_id"] = scene_id
        report["input"] = cloud_path.name
        report["layout_mask"] = mask_path is not None
        formats.write_json(tmp / "report.json", report)
        if timing:
            # wall-clock numbers are kept out of report.json so reruns stay byte-identical
            formats.write_json(tmp / "timing.json", {k: round(v, 6) for k, v in sorted(result.timing.items())})
        if debug:
            ddir = tmp / "debug"
            ddir.mkdir()
            for prefix, d in sorted(result.debug.items()):
                np.save(ddir / f"{prefix}.face_ids.npy", d["face_ids"])
                formats.write_json(ddir / f"{prefix}.graph.json", d["graph"])
                formats.write_json(ddir / f"{prefix}.instances.json", d["instances"])
        formats.replace_dir(tmp, out_root / scene_id)
    except BaseException:
        import shutil

        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return {"scene_id": scene_id, "n_instances": len(result.instances), "seconds": result.timing.get("total", 0.0)}


def _config_from_args(args) -> PipelineConfig:
    base = load_config(args.config) if args.config else PipelineConfig()
    overrides = {"mode": args.mode, "level": args.level}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    return base.merged(overrides)


def cmd_fit(args) -> int:
    config = _config_from_args(args)
    src = Path(args.input)
    if src.is_dir():
        inputs = sorted(src.glob("*.ply"))
        if not inputs:
            raise FileNotFoundError(f"{src}: no .ply files")
        if args.gt_graph:
            raise UsageError("--gt-graph applies to a single input file")
    elif src.exists():
        inputs = [src]
    else:
        raise FileNotFoundError(f"{src}: no such file")
    items = [(str(p), args.out, config.to_dict(), args.gt_graph, args.layout_mask, args.debug, args.timing)
             for p in inputs]
    for r in _pool_map(fit_one, items, args.jobs):
        log.info("%s: %d instances (%.2f s)", r["scene_id"], r["n_instances"], r["seconds"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def gt_scene_ids(gt_dir: Path) -> list[str]:
    manifest = gt_dir / "manifest.json"
    if manifest.exists():
        return [s["id"] for s in formats.read_json(manifest)["scenes"]]
    return sorted(p.stem for p in gt_dir.glob("*.json") if not p.name.endswith(".graph.json") and p.name != "manifest.json")


def evaluate_scene(pred_dir: Optional[Path], gt_dir: Path, scene_id: str, thresholds, voxel: float) -> SceneEval:
    scene = synth.SyntheticScene.from_dict(formats.read_json(gt_dir / f"{scene_id}.json"))
    gts = [Solid.from_shape(s) for s in scene.shapes]
    if pred_dir is None:
        return SceneEval(scene_id, None, iou_pr([], gts, thresholds, voxel), 0, 0, 0, len(gts))
    report = formats.read_json(pred_dir / "report.json")
    preds = [Solid(np.array(i["boxes"]), np.array(i["rotation"])) for i in report["instances"]]
    meshes = formats.read_obj(pred_dir / "combined.obj")
    cloud = formats.read_cloud_ply(gt_dir / f"{scene_id}.ply")
    cd = chamfer(cloud.points, meshes) if meshes and any(len(m.quads) for m in meshes) else None
    v, f = mesh_stats(meshes)
    return SceneEval(scene_id, cd, iou_pr(preds, gts, thresholds, voxel), v, f, len(preds), len(gts))


def run_eval(pred_root: Path, gt_dir: Path, thresholds=(0.25, 0.5), voxel: float = 0.02) -> EvalReport:
    ids = gt_scene_ids(gt_dir)
    if not ids:
        raise MissingScene(f"{gt_dir}: no ground-truth scenes")
    present = {i for i in ids if (pred_root / i / "report.json").exists()}
    if present and present != set(ids):
        missing = sorted(set(ids) - present)
        raise MissingScene(f"{pred_root}: no predictions for {', '.join(missing[:5])}")
    scenes = [
        evaluate_scene(pred_root / i if present else None, gt_dir, i, thresholds, voxel) for i in ids
    ]
    return EvalReport(scenes, tuple(thresholds))


def cmd_eval(args) -> int:
    from .plotting import render_report_figures

    pred, gt, out = Path(args.pred), Path(args.gt), Path(args.out)
    for p in (pred, gt):
        if not p.is_dir():
            raise FileNotFoundError(f"{p}: not a directory")
    report = run_eval(pred, gt, tuple(args.thresholds), args.voxel)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_json(out / "report.json", report.to_dict())
    (out / "report.txt").write_text(report.to_text())
    (out / "report.csv").write_text(report.to_csv())
    if not args.no_figures:
        render_report_figures(report, out / "figures")
    sys.stdout.write(report.to_text())
    return EXIT_OK


# ---------------------------------------------------------------------------
# export

def cmd_export(args) -> int:
    src = Path(args.input)
    obj = src / "combined.obj" if src.is_dir() else src
    if not obj.exists():
        raise FileNotFoundError(f"{obj}: no such file")
    meshes = formats.read_obj(obj)
    mtl = obj.with_suffix(".mtl")
    if mtl.exists():
        _apply_mtl_colors(obj, mtl, meshes)
    out = Path(args.out)
    if args.format == "ply":
        formats.write_mesh_ply(out, meshes)
    else:
        formats.write_obj(out, meshes)
    return EXIT_OK


def _apply_mtl_colors(obj: Path, mtl: Path, meshes) -> None:
    colors = {}
    name = None
    for line in mtl.read_text().splitlines():
        parts = line.split()
        if parts[:1] == ["newmtl"]:
            name = parts[1]
        elif parts[:1] == ["Kd"] and name:
            colors[name] = [int(round(float(c) * 255)) for c in parts[1:4]]
    per_mesh, current, mi = [], None, -1
    for line in obj.read_text().splitlines():
        parts = line.split()
        if parts[:1] == ["o"]:
            per_mesh.append([])
            mi += 1
        elif parts[:1] == ["usemtl"]:
            current = colors.get(parts[1])
        elif parts[:1] == ["f"] and mi >= 0:
            per_mesh[mi].append(current)
    for mesh, cols in zip(meshes, per_mesh):
        if cols and all(c is not None for c in cols):
            mesh.colors = np.array(cols, np.uint8)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polycuboid", description="Fit polycuboid meshes to indoor point clouds.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic labelled dataset")
    g.add_argument("--n", type=int, help="number of scenes (default: 1800 train + 200 val)")
    g.add_argument("--n-train", type=int, default=DEFAULT_TRAIN)
    g.add_argument("--n-val", type=int, default=DEFAULT_VAL)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--interval", type=float, default=0.01)
    g.add_argument("--sigma", type=float, default=synth.DEFAULT_SIGMA)
    g.add_argument("--holes", type=int, nargs=2, default=(0, 3), metavar=("LO", "HI"))
    g.add_argument("--max-boxes", type=int, default=4)
    g.add_argument("--n-shapes", type=int, help="shapes per scene (default: random 5..20)")
    g.add_argument("--contextual", help="JSON of ground-truth boxes to place shapes in")
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit polycuboids to a PLY cloud or a directory of clouds")
    f.add_argument("--input", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--config")
    f.add_argument("--mode", choices=("oracle", "classical"))
    f.add_argument("--level", choices=("coarse", "fine"))
    f.add_argument("--layout-mask")
    f.add_argument("--gt-graph")
    f.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    f.add_argument("--debug", action="store_true", help="also dump faces, graph and instances")
    f.add_argument("--timing", action="store_true", help="write per-stage wall-clock times to timing.json")
    f.add_argument("--jobs", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score fitted scenes against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--thresholds", type=float, nargs="+", default=[0.25, 0.5])
    e.add_argument("--voxel", type=float, default=0.02)
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="convert a fitted mesh to OBJ or PLY")
    x.add_argument("--input", required=True, help="fit output directory or OBJ file")
    x.add_argument("--format", choices=("obj", "ply"), required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"polycuboid: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PolycuboidError, OSError, KeyError, ValueError) as exc:
        print(f"polycuboid: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"polycuboid: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
