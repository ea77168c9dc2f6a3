"""Figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"unoptimized": "#9e9e9e", "global-only": "#4c72b0", "sgool": "#dd8452"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "sgool",
}


def _grouped(records, attr: str) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for r in records:
        out.setdefault(r.method, []).append(getattr(r, attr))
    return out


def _order(methods) -> list[str]:
    known = [m for m in COLORS if m in methods]
    return known + sorted(m for m in methods if m not in COLORS)


def box_plots(records, path) -> None:
    """Global and salient-part alignment distributions per method."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.0))
        for ax, attr, title in zip(axes, ("alignment_global", "alignment_parts"),
                                   ("global alignment", "salient-part alignment")):
            groups = _grouped(records, attr)
            names = _order(groups)
            bp = ax.boxplot([groups[n] for n in names], patch_artist=True)
            ax.set_xticks(range(1, len(names) + 1), names)
            for patch, n in zip(bp["boxes"], names):
                patch.set_facecolor(COLORS.get(n, "#cccccc"))
            ax.set_title(title)
            ax.set_ylabel("100 x cosine")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def bar_plots(records, path) -> None:
    """Mean alignment per method with standard-error whiskers."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.0))
        for ax, attr, title in zip(axes, ("alignment_global", "alignment_parts"),
                                   ("global alignment", "salient-part alignment")):
            groups = _grouped(records, attr)
            names = _order(groups)
            means = [float(np.mean(groups[n])) for n in names]
            sems = [float(np.std(groups[n]) / np.sqrt(max(len(groups[n]), 1))) for n in names]
            ax.bar(names, means, yerr=sems, capsize=3, color=[COLORS.get(n, "#cccccc") for n in names])
            ax.set_title(title)
            ax.set_ylabel("mean, 100 x cosine")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def loss_curve(trace, path) -> None:
    steps = [r.step for r in trace.records]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        ax.plot(steps, [r.L for r in trace.records], label="L", color="k")
        ax.plot(steps, [r.L_g for r in trace.records], label="L_g", color=COLORS["global-only"], lw=1)
        if any(np.isfinite(r.L_s) for r in trace.records):
            ax.plot(steps, [r.L_s for r in trace.records], label="L_s", color=COLORS["sgool"], lw=1)
        ax.set_xlabel("optimization step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def image_strip(images, titles, path) -> None:
    """Side-by-side grayscale views (channel mean) of (C, H, W) images."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(images), figsize=(1.8 * len(images), 2.0))
        axes = np.atleast_1d(axes)
        for ax, img, title in zip(axes, images, titles):
            a = np.asarray(img)
            ax.imshow(a.mean(axis=0) if a.ndim == 3 else a, cmap="gray", vmin=-1 if a.min() < 0 else 0, vmax=1)
            ax.set_title(title)
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
