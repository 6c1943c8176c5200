"""Figure rendering: axis overlays, sweep scatter plots, dataset charts.

Matplotlib figures are written next to the delimited outputs they
illustrate; dates are stripped from metadata so reruns stay byte-stable.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

AXIS_RED = (255, 0, 0)


def _stamp_text(stamp):
    if not stamp:
        return None
    return (f"tool_version={stamp['tool_version']} "
            f"config_hash={stamp['config_hash']} seed={stamp['seed']}")


def axis_overlay(img, axis, out_path, stamp=None):
    """Write the grayscale raster with the axis drawn in pure red."""
    rgb = np.stack([img.pixels] * 3, axis=-1)
    for r, c in axis.points:
        rgb[r, c] = AXIS_RED
    out = Image.fromarray(rgb, mode="RGB")
    if stamp:
        from PIL.PngImagePlugin import PngInfo
        info = PngInfo()
        info.add_text("kseq", _stamp_text(stamp))
        out.save(out_path, pnginfo=info)
    else:
        out.save(out_path)


def _save(fig, out_path, title, stamp=None):
    out_path = Path(out_path)
    metadata = {"Title": title}
    if _stamp_text(stamp):
        metadata["Description" if out_path.suffix.lower() == ".svg"
                 else "Comment"] = _stamp_text(stamp)
    if out_path.suffix.lower() == ".svg":
        metadata["Date"] = None
    fig.savefig(out_path, metadata=metadata)
    plt.close(fig)


def sweep_scatter(points, front, out_path, title="abnormality sweep",
                  stamp=None):
    """Scatter of (fpr, fnr) per sweep point with the Pareto front in red."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter([p.fpr for p in points], [p.fnr for p in points],
               s=18, c="#4878cf", label="sweep points", zorder=2)
    if front:
        fx = [p.fpr for p in front]
        fy = [p.fnr for p in front]
        order = np.argsort(fx)
        ax.plot(np.array(fx)[order], np.array(fy)[order],
                c="#d65f5f", lw=1, zorder=3)
        ax.scatter(fx, fy, s=30, c="#d65f5f", label="Pareto front", zorder=4)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("false negative rate")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, out_path, title, stamp)


def class_counts_chart(counts, out_path, title="instances per class",
                       stamp=None):
    """Bar chart of per-class instance counts (22 autosomes + X + Y)."""
    labels = sorted(counts)
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.bar([str(l) for l in labels], [counts[l] for l in labels], color="#4878cf")
    ax.set_xlabel("class label")
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, out_path, title, stamp)
