"""Kaplan-Meier figure rendering.

Produces SVG step plots with shaded Greenwood 95% bands. Output is kept
byte-reproducible: fixed hash salt for element ids, no embedded dates, and
every style set explicitly rather than inherited from user rc files.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

GROUP_COLORS = ("#c0392b", "#2980b9", "#27ae60", "#8e44ad")
SVG_HASHSALT = "survfuse-km"


def _step_xy(curve, t_max: float):
    t = np.concatenate([[0.0], curve.times])
    s = np.concatenate([[1.0], curve.surv_prob])
    if t_max > t[-1]:
        # hold the last value out to the end of follow-up
        t = np.concatenate([t, [t_max]])
        s = np.concatenate([s, [s[-1]]])
    return t, s


def render_km_svg(path, groups, annotation: str = None, title: str = None):
    """Write an SVG with one KM step curve (plus band) per group.

    groups: list of (label, SurvCurve, t_max) with t_max the group's
    largest observed time, so curves extend past the final event.
    """
    with plt.rc_context({
        "svg.hashsalt": SVG_HASHSALT,
        "font.family": "DejaVu Sans",
        "font.size": 10,
        "axes.spines.top": False,
        "axes.spines.right": False,
    }):
        fig, ax = plt.subplots(figsize=(6.4, 4.4))
        for i, (label, curve, t_max) in enumerate(groups):
            color = GROUP_COLORS[i % len(GROUP_COLORS)]
            t, s = _step_xy(curve, t_max)
            ax.step(t, s, where="post", color=color, linewidth=1.6, label=label)
            lo, hi = curve.confidence_bands()
            tb = np.concatenate([[0.0], curve.times])
            lo = np.concatenate([[1.0], lo])
            hi = np.concatenate([[1.0], hi])
            if t_max > tb[-1]:
                tb = np.concatenate([tb, [t_max]])
                lo = np.concatenate([lo, [lo[-1]]])
                hi = np.concatenate([hi, [hi[-1]]])
            ax.fill_between(tb, lo, hi, step="post", color=color,
                            alpha=0.18, linewidth=0)
        ax.set_xlabel("Time (days)")
        ax.set_ylabel("Survival probability")
        ax.set_ylim(0.0, 1.02)
        ax.set_xlim(left=0.0)
        if title:
            ax.set_title(title)
        if annotation:
            ax.text(0.02, 0.04, annotation, transform=ax.transAxes,
                    fontsize=9, color="#333333")
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        tmp = f"{path}.tmp"
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        plt.close(fig)
        os.replace(tmp, path)
