"""Render the plot-ready report CSVs as figures.

Station bias maps and interpolated-field maps mirror the delimited outputs
one-to-one; rendering is optional and never alters the CSV contracts.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_bias_map(bias_rows, path, title="Mean forecast error"):
    """Scatter map of per-station mean errors on a diverging scale.

    ``bias_rows`` are dicts with station_id, x_km, y_km, mean_error_c keys
    (the bias CSV rows).
    """
    x = np.array([float(r["x_km"]) for r in bias_rows])
    y = np.array([float(r["y_km"]) for r in bias_rows])
    err = np.array([float(r["mean_error_c"]) for r in bias_rows])
    span = max(float(np.max(np.abs(err))), 1e-6)
    fig, ax = plt.subplots(figsize=(6.0, 5.4))
    sc = ax.scatter(x, y, c=err, cmap="RdBu_r", vmin=-span, vmax=span,
                    s=36, edgecolors="k", linewidths=0.3)
    fig.colorbar(sc, ax=ax, label="mean error (degC)")
    ax.set_xlabel("x (km)")
    ax.set_ylabel("y (km)")
    ax.set_title(title)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_field_maps(field_rows, path, title=None):
    """Three-panel map of the interpolated window mean, its kriging standard
    deviation, and the local uncertainty predictor.

    ``field_rows`` are dicts with x_km, y_km, ybar_c, ybar_sd_c, xi_c keys
    (the fields CSV rows).
    """
    x = np.array([float(r["x_km"]) for r in field_rows])
    y = np.array([float(r["y_km"]) for r in field_rows])
    panels = [
        ("ybar_c", "window mean (degC)", "viridis"),
        ("ybar_sd_c", "kriging sd (degC)", "magma"),
        ("xi_c", "local uncertainty (degC)", "cividis"),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(13.5, 4.4))
    for ax, (key, label, cmap) in zip(axes, panels):
        vals = np.array([float(r[key]) for r in field_rows])
        sc = ax.scatter(x, y, c=vals, cmap=cmap, s=28)
        fig.colorbar(sc, ax=ax, label=label)
        ax.set_xlabel("x (km)")
        ax.set_ylabel("y (km)")
        ax.set_aspect("equal")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_score_intervals(score_rows, levels, path):
    """Bar chart of interval widths with empirical vs nominal coverage."""
    methods = [r["method"] for r in score_rows]
    fig, axes = plt.subplots(1, len(levels), figsize=(5.4 * len(levels), 4.2),
                             squeeze=False)
    for j, level in enumerate(levels):
        tag = ("%g" % (level * 100.0)).replace(".", "")
        ax = axes[0][j]
        widths = [float(r[f"width{tag}_c"]) for r in score_rows]
        covs = [float(r[f"cov{tag}"]) for r in score_rows]
        pos = np.arange(len(methods))
        ax.bar(pos, widths, color="tab:blue", alpha=0.75)
        ax.set_xticks(pos, methods, rotation=20)
        ax.set_ylabel("mean width (degC)")
        ax.set_title(f"{level:.1%} interval")
        twin = ax.twinx()
        twin.plot(pos, covs, "o-", color="tab:red")
        twin.axhline(level, color="tab:red", linestyle="--", linewidth=1)
        twin.set_ylim(0.0, 1.0)
        twin.set_ylabel("empirical coverage")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
