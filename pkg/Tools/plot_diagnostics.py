#!/usr/bin/env python3
"""
Diagnostics plotter: renders the output of `main.py diagnose` as PNG figures.

For every model variant it draws the 20-bucket relevance-score histogram, and,
when the diagnostics carry projection coordinates, a scatter of the table-token
latents coloured relevant / non-relevant.

Usage:
    python Tools/plot_diagnostics.py diagnostics.json --out plots/

Requires: matplotlib, numpy
"""
import os
import sys
import argparse

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

# Add the parent directory to the path so we can import from the Utils package
current_dir = os.path.dirname(os.path.abspath(__file__))
parent_dir = os.path.dirname(current_dir)
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

from Utils.log_utils import get_logger, DEBUG_L1
from Utils.save_utils import read_json

logger = get_logger()


def plot_histograms(diagnostics, path):
    variants = diagnostics["variants"]
    fig, axes = plt.subplots(1, len(variants), figsize=(4 * len(variants), 3.2), squeeze=False)
    for ax, (name, result) in zip(axes[0], variants.items()):
        hist = result["histogram"]
        edges = np.asarray(hist["edges"])
        ax.bar(edges[:-1], hist["counts"], width=np.diff(edges), align="edge", color="tab:blue", edgecolor="white")
        ax.set_title(f"{name}\nmiddle {hist['middle_fraction']:.2f}")
        ax.set_xlim(0.0, 1.0)
        ax.set_xlabel("relevance score")
    axes[0][0].set_ylabel("table tokens")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_projections(diagnostics, path):
    variants = [(n, r["projection"]) for n, r in diagnostics["variants"].items() if "projection" in r]
    if not variants:
        return None
    fig, axes = plt.subplots(1, len(variants), figsize=(4 * len(variants), 4), squeeze=False)
    for ax, (name, proj) in zip(axes[0], variants):
        points = np.asarray(proj["points"])
        relevant = np.asarray(proj["relevant"], dtype=bool)
        ax.scatter(points[~relevant, 0], points[~relevant, 1], s=6, c="tab:gray", label="non-relevant")
        ax.scatter(points[relevant, 0], points[relevant, 1], s=6, c="tab:red", label="relevant")
        ax.set_title(f"{name} ({proj['method']})")
        ax.set_xticks([])
        ax.set_yticks([])
    axes[0][0].legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_diagnostics(diagnostics, out_dir):
    """Write histogram (and projection) figures into out_dir; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = [plot_histograms(diagnostics, os.path.join(out_dir, "score_histograms.png"))]
    projection = plot_projections(diagnostics, os.path.join(out_dir, "latent_projection.png"))
    if projection:
        written.append(projection)
    logger.debug_at_level(DEBUG_L1, "Plot", f"Wrote {written}")
    return written


def main():
    parser = argparse.ArgumentParser(description="Plot relevance-score diagnostics")
    parser.add_argument("diagnostics", help="JSON file written by `main.py diagnose`")
    parser.add_argument("--out", default="plots", help="Output directory")
    args = parser.parse_args()
    for path in plot_diagnostics(read_json(args.diagnostics), args.out):
        logger.info("Plot", f"Saved {path}")


if __name__ == "__main__":
    main()
