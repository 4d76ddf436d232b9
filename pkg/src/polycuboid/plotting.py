"""Figures for evaluation reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import EvalReport  # noqa: E402

_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_chamfer(report: EvalReport, path) -> Path:
    ids = [s.scene_id for s in report.scenes]
    values = [np.nan if s.chamfer is None else s.chamfer for s in report.scenes]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(ids) + 2), 3.2))
    ax.bar(range(len(ids)), values, color="#4c72b0")
    mean = report.aggregate()["chamfer_mean"]
    if mean is not None:
        ax.axhline(mean, color="#c44e52", lw=1, ls="--", label=f"mean {mean:.4f} m")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xticks(range(len(ids)))
    ax.set_xticklabels(ids, rotation=90, fontsize=7)
    ax.set_ylabel("Chamfer distance (m)")
    return _save(fig, Path(path))


def plot_precision_recall(report: EvalReport, path) -> Path:
    agg = report.aggregate()["pr"]
    keys = sorted(agg)
    x = np.arange(len(keys))
    fig, ax = plt.subplots(figsize=(4, 3.2))
    ax.bar(x - 0.18, [agg[k]["recall"] for k in keys], 0.36, label="recall", color="#55a868")
    ax.bar(x + 0.18, [agg[k]["precision"] for k in keys], 0.36, label="precision", color="#8172b2")
    ax.set_xticks(x)
    ax.set_xticklabels([f"IoU {float(k):.2f}" for k in keys])
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    return _save(fig, Path(path))


def plot_mesh_sizes(report: EvalReport, path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3.2))
    v = [s.vertex_count for s in report.scenes]
    f = [s.face_count for s in report.scenes]
    ax.scatter(v, f, s=14, color="#dd8452")
    ax.set_xlabel("vertices")
    ax.set_ylabel("triangle faces")
    return _save(fig, Path(path))


def render_report_figures(report: EvalReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        plot_chamfer(report, out_dir / "chamfer.png"),
        plot_precision_recall(report, out_dir / "precision_recall.png"),
        plot_mesh_sizes(report, out_dir / "mesh_sizes.png"),
    ]
