"""Static figures: flow error against horizon, PR curves and mask overlays."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fields import InstanceMask  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_mse_horizon(curves: Dict[str, List[Dict[str, float]]], path) -> Path:
    """One line per component (and per named run) of per-step flow MSE."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, steps in curves.items():
        k = np.arange(1, len(steps) + 1)
        for comp, style in (("mse", "-"), ("mse_u", "--"), ("mse_v", ":")):
            ax.plot(k, [s[comp] for s in steps], style, marker="o", ms=3,
                    label=f"{name} {comp}" if len(curves) > 1 else comp)
    ax.set_xlabel("steps ahead")
    ax.set_ylabel("MSE (px$^2$)")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_pr_curves(curves: Dict[str, tuple], path, title: str = "IoU 0.5") -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for name, (recall, precision) in curves.items():
        if len(recall):
            ax.step(np.r_[0, recall], np.r_[precision[0], precision], where="post", label=name)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_overlay(image_shape, preds: Sequence[InstanceMask], gts: Sequence[InstanceMask],
                 path, title: str = "") -> Path:
    """Ground truth in green, forecast in magenta, overlap in white."""
    h, w = image_shape
    rgb = np.zeros((h, w, 3))
    for g in gts:
        rgb[g.mask, 1] = 1.0
    for p in preds:
        rgb[p.mask, 0] = 1.0
        rgb[p.mask, 2] = 1.0
    fig, ax = plt.subplots(figsize=(w / 32 + 1, h / 32 + 0.6))
    ax.imshow(rgb, interpolation="nearest")
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_grid(grid: Dict, path, metric: str = "iou") -> Path:
    """Bar chart of seed-mean metric per regime and horizon with std error bars."""
    regimes = list(grid["rows"])
    horizons = sorted({h for r in grid["rows"].values() for h in r})
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(len(horizons), 1)
    x = np.arange(len(regimes))
    for i, h in enumerate(horizons):
        mean = [grid["rows"][r].get(h, {}).get("mean", {}).get(metric, np.nan) for r in regimes]
        std = [grid["rows"][r].get(h, {}).get("std", {}).get(metric, 0.0) for r in regimes]
        ax.bar(x + i * width, mean, width, yerr=std, label=h, capsize=2)
    ax.set_xticks(x + width * (len(horizons) - 1) / 2)
    ax.set_xticklabels(regimes, rotation=20, fontsize=7)
    ax.set_ylabel(metric)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)
