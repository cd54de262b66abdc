"""Figure rendering for benchmark and evaluation reports.

Figures are written as PNG next to the delimited outputs. The Agg
backend keeps rendering headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport

__all__ = ["suite_figure", "eval_figure"]


def suite_figure(suite: str, records: list[dict], summary: dict, path: str | Path) -> None:
    """Per-seed scatter with medians for comparison suites; error
    histograms for the numeric-verification suites."""
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    if any("test_mse" in r for r in records):
        methods = sorted({r["method"] for r in records if "test_mse" in r})
        rng = np.random.default_rng(0)
        for pos, method in enumerate(methods):
            vals = np.array([r["test_mse"] for r in records if r["method"] == method])
            jitter = rng.uniform(-0.12, 0.12, vals.size)
            ax.scatter(pos + jitter, vals, s=18, alpha=0.6)
            ax.hlines(np.median(vals), pos - 0.25, pos + 0.25, color="k", linewidth=2)
        ax.set_xticks(range(len(methods)), methods, rotation=15)
        ax.set_ylabel("test MSE vs truth")
        ax.set_yscale("log")
    elif suite == "gradcheck":
        errs = [r["max_rel_err"] for r in records]
        ax.hist(np.log10(np.maximum(errs, 1e-18)), bins=20)
        ax.axvline(np.log10(summary.get("max_rel_err", 1e-18)), color="k", linestyle="--")
        ax.set_xlabel("log10 max relative gradient error")
        ax.set_ylabel("replications")
    else:
        proj = [r.get("max_projection_distance", 0.0) for r in records]
        prox = [r.get("max_prox_residual", 0.0) for r in records]
        ax.hist(np.log10(np.maximum(proj, 1e-18)), bins=20, alpha=0.6, label="projection distance")
        ax.hist(np.log10(np.maximum(prox, 1e-18)), bins=20, alpha=0.6, label="prox residual")
        ax.set_xlabel("log10 error vs oracle")
        ax.set_ylabel("replications")
        ax.legend()
    verdict = summary.get("verdict", "n/a")
    ax.set_title(f"{suite}: {verdict} ({summary.get('replications', 0)} replications)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def eval_figure(report: EvalReport, path: str | Path) -> None:
    """Bar chart of the evaluation metrics, with bootstrap error bars
    when available."""
    names = ["clip_distance", "clip_correlation", "r2"]
    values = [report.clip_distance, report.clip_correlation, report.r2]
    for k in sorted(report.topk_accuracy):
        names.append(f"top{k}_accuracy")
        values.append(report.topk_accuracy[k])
    errs = None
    if report.bootstrap_se:
        errs = [report.bootstrap_se.get(name, 0.0) for name in names]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.bar(range(len(names)), values, yerr=errs, capsize=4)
    ax.set_xticks(range(len(names)), names, rotation=20)
    ax.set_ylim(-0.05, 1.1)
    ax.axhline(0.0, color="k", linewidth=0.8)
    ax.set_title(f"evaluation on {report.n_test} rows (mse={report.mse:.4g})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
