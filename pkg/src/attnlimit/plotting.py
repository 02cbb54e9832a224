"""Static SVG figures: density overlays and log-KL against width."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .io import IoFailure
from .stats import DensityEstimate

# fixed salt and no timestamp so identical data gives an identical file
_SVG_RC = {"svg.hashsalt": "attnlimit", "svg.fonttype": "none"}


def _is_limit(d: DensityEstimate) -> bool:
    return d.label.startswith("limit")


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    try:
        with matplotlib.rc_context(_SVG_RC):
            fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def emit_svg(
    overlays: Sequence[DensityEstimate],
    path,
    title: str = "",
    xlabel: str = "value",
    xlim: tuple[float, float] | None = None,
) -> Path:
    """Overlay density curves in one SVG.

    Curves whose label starts with ``"limit"`` are drawn solid, all others
    dashed.  Axes are linear.
    """
    overlays = list(overlays)
    if not overlays:
        raise ValueError("emit_svg needs at least one density")
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot()
    for d in overlays:
        style = dict(color="black", lw=1.8) if _is_limit(d) else dict(ls="--", lw=1.2)
        ax.plot(d.grid, d.density, label=d.label or "density", **style)
    if xlim is not None:
        ax.set_xlim(*xlim)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_log_kl(widths, mean_log_kl, std_log_kl, path, title: str = "") -> Path:
    """Mean log-KL with one-std error bars against log_4(width)."""
    x = np.log(np.asarray(widths, dtype=float)) / np.log(4.0)
    fig = Figure(figsize=(5.0, 3.6))
    ax = fig.add_subplot()
    ax.errorbar(x, mean_log_kl, yerr=std_log_kl, marker="o", capsize=3, color="black")
    ax.set_xlabel(r"$\log_4 n$")
    ax.set_ylabel("log KL")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
