"""Figures: per-frame mask overlays and AP report charts (PNG)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.image as mpimg  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from hosfuse.datamodel import Category, FusedFrame  # noqa: E402
from hosfuse.evaluation import IOU_THRESHOLDS, SCHEMES, EvalReport  # noqa: E402
from hosfuse.maskops import rle_decode  # noqa: E402

BACKGROUND = (24, 24, 24)
HAND_COLOR = (220, 50, 47)
OBJECT_COLOR = (38, 139, 210)

# fixed metadata so repeated runs write identical bytes
_PNG_META = {"Software": None}


def overlay_image(frame: FusedFrame) -> np.ndarray:
    """RGB uint8 image, hands then objects painted over a flat background."""
    img = np.empty((frame.height, frame.width, 3), dtype=np.uint8)
    img[...] = BACKGROUND
    for category, color in ((Category.HAND, HAND_COLOR), (Category.OBJECT, OBJECT_COLOR)):
        for inst in frame.instances:
            if inst.category is category:
                img[rle_decode(inst.mask)] = color
    return img


def save_overlay(frame: FusedFrame, path: Path) -> None:
    mpimg.imsave(path, overlay_image(frame), format="png", metadata=_PNG_META)


def report_figure(reports: dict[str, EvalReport], path: Path) -> None:
    """Grouped AP bars per scheme next to per-threshold AP curves."""
    fig, (ax_bar, ax_thr) = plt.subplots(1, 2, figsize=(11, 4))
    labels = [s.value for s in SCHEMES] + ["Mean"]
    n = len(reports)
    width = 0.8 / max(n, 1)
    x = np.arange(len(labels))
    for k, (name, rep) in enumerate(reports.items()):
        values = [rep.schemes[s].ap for s in SCHEMES] + [rep.mean_ap]
        ax_bar.bar(x + (k - (n - 1) / 2) * width, np.nan_to_num(values), width, label=name)
        for s in SCHEMES:
            ax_thr.plot(
                [t / 100 for t in IOU_THRESHOLDS], rep.schemes[s].per_threshold,
                marker="o", ms=3, label=f"{name}: {s.value}",
            )
    ax_bar.set_xticks(x)
    ax_bar.set_xticklabels(labels, rotation=20, ha="right")
    ax_bar.set_ylim(0, 1.05)
    ax_bar.set_ylabel("mask AP")
    ax_bar.legend(frameon=False, loc="lower right")
    ax_thr.set_xlabel("IoU threshold")
    ax_thr.set_ylabel("AP")
    ax_thr.set_ylim(0, 1.05)
    ax_thr.legend(fontsize=6, frameon=False, ncol=max(n, 1))
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
