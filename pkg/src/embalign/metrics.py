"""Evaluation metrics over embedding matrices.

The retrieval-style metrics operate directly on predicted and true
embedding rows: mean cosine similarity, the fraction of pairwise
Pearson comparisons won by the matching row (strict inequality, so ties
count as failures), and top-k accuracy against class centroids with
nearest-centroid labeling. Regression metrics (row-wise mean squared
error and R^2) round out the report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .rng import stream

__all__ = [
    "EvalReport",
    "clip_distance",
    "clip_correlation",
    "topk_accuracy",
    "topk_accuracy_distractors",
    "evaluate",
    "format_mean_se",
]

_RANGE_SLACK = 1e-12


@dataclass
class EvalReport:
    clip_distance: float
    clip_correlation: float
    topk_accuracy: dict[int, float]
    mse: float
    r2: float
    n_test: int
    bootstrap_se: dict[str, float] | None = None

    def __post_init__(self) -> None:
        if not (-1.0 - _RANGE_SLACK <= self.clip_distance <= 1.0 + _RANGE_SLACK):
            raise DomainError(f"clip_distance out of range: {self.clip_distance}")
        if not (-_RANGE_SLACK <= self.clip_correlation <= 1.0 + _RANGE_SLACK):
            raise DomainError(f"clip_correlation out of range: {self.clip_correlation}")
        ks = sorted(self.topk_accuracy)
        for prev, cur in zip(ks, ks[1:]):
            if self.topk_accuracy[cur] < self.topk_accuracy[prev] - _RANGE_SLACK:
                raise DomainError("top-k accuracy must be non-decreasing in k")
        for k, acc in self.topk_accuracy.items():
            if not (-_RANGE_SLACK <= acc <= 1.0 + _RANGE_SLACK):
                raise DomainError(f"top-{k} accuracy out of range: {acc}")
        if self.n_test < 1:
            raise DomainError("n_test must be >= 1")

    def to_dict(self) -> dict:
        out: dict = {
            "clip_distance": self.clip_distance,
            "clip_correlation": self.clip_correlation,
            "topk_accuracy": {str(k): v for k, v in sorted(self.topk_accuracy.items())},
            "mse": self.mse,
            "r2": self.r2,
            "n_test": self.n_test,
        }
        if self.bootstrap_se is not None:
            out["bootstrap_se"] = dict(sorted(self.bootstrap_se.items()))
            display = {}
            scalars = {
                "clip_distance": self.clip_distance,
                "clip_correlation": self.clip_correlation,
                "mse": self.mse,
                "r2": self.r2,
            }
            for k, acc in self.topk_accuracy.items():
                scalars[f"top{k}_accuracy"] = acc
            for name, value in scalars.items():
                if name in self.bootstrap_se:
                    display[name] = format_mean_se(value, self.bootstrap_se[name])
            out["display"] = display
        return out


def format_mean_se(mean: float, se: float) -> str:
    return f"{mean:.3f}±{se:.3f}"


def _check_same_shape(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim != 2 or truth.ndim != 2 or pred.shape != truth.shape:
        raise ShapeError(f"pred {pred.shape} and truth {truth.shape} must be equal 2-d shapes")
    return pred, truth


def clip_distance(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean row-wise cosine similarity between predictions and truth."""
    pred, truth = _check_same_shape(pred, truth)
    pp = np.sum(pred * pred, axis=1)
    tt = np.sum(truth * truth, axis=1)
    for name, sq in (("pred", pp), ("truth", tt)):
        zeros = np.nonzero(sq == 0.0)[0]
        if zeros.size:
            raise DomainError(f"{name} row {zeros[0]} has zero norm; cosine undefined")
    # sqrt(pp * tt) instead of sqrt(pp)*sqrt(tt): when pred == truth the
    # numerator equals pp bit-for-bit and sqrt(pp*pp) == pp, so identical
    # rows score exactly 1
    cos = np.sum(pred * truth, axis=1) / np.sqrt(pp * tt)
    return float(np.mean(cos))


def _standardize_rows(a: np.ndarray, name: str) -> np.ndarray:
    centered = a - a.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    flat = np.nonzero(norms == 0.0)[0]
    if flat.size:
        raise DomainError(f"{name} row {flat[0]} is constant; correlation undefined")
    return centered / norms[:, None]


def clip_correlation(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of ordered pairs (i, j != i) where the Pearson
    correlation of pred_i with truth_i strictly exceeds that with
    truth_j, averaged over i."""
    pred, truth = _check_same_shape(pred, truth)
    n, m = pred.shape
    if n < 2 or m < 2:
        raise DomainError("need at least 2 rows and 2 columns")
    p = _standardize_rows(pred, "pred")
    t = _standardize_rows(truth, "truth")
    corr = p @ t.T
    own = np.diag(corr)
    wins = (own[:, None] > corr).sum(axis=1)  # own > corr[i, i] is false, no self-count
    return float(np.mean(wins / (n - 1)))


def topk_accuracy(
    pred: np.ndarray,
    truth_labels: np.ndarray,
    class_centroids: np.ndarray,
    k: int,
) -> float:
    """Fraction of rows whose true label lands in the k classes most
    cosine-similar to the prediction; ties at the k-th slot go to the
    lower class index."""
    pred = np.asarray(pred, dtype=np.float64)
    centroids = np.asarray(class_centroids, dtype=np.float64)
    labels = np.asarray(truth_labels)
    if pred.ndim != 2 or centroids.ndim != 2 or pred.shape[1] != centroids.shape[1]:
        raise ShapeError("pred and centroids must be 2-d with equal widths")
    n, c = pred.shape[0], centroids.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels must be a length-{n} vector")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DomainError("labels must be integer class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DomainError(f"labels must index the {c} centroids")
    if k < 1:
        raise DomainError("k must be >= 1")
    if c < k:
        raise DomainError(f"need at least k={k} classes, got {c}")
    pn = np.linalg.norm(pred, axis=1)
    cn = np.linalg.norm(centroids, axis=1)
    if np.any(pn == 0.0):
        raise DomainError(f"pred row {int(np.nonzero(pn == 0.0)[0][0])} has zero norm")
    if np.any(cn == 0.0):
        raise DomainError(f"centroid {int(np.nonzero(cn == 0.0)[0][0])} has zero norm")
    sims = (pred / pn[:, None]) @ (centroids / cn[:, None]).T
    # stable argsort on -sims: equal similarities keep ascending class index
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    hits = (order == labels[:, None]).any(axis=1)
    return float(np.mean(hits))


def topk_accuracy_distractors(
    pred: np.ndarray,
    truth_labels: np.ndarray,
    class_centroids: np.ndarray,
    k: int,
    n_distractors: int,
    seed: int = 0,
) -> float:
    """Top-k accuracy where each row competes only against its true
    class plus ``n_distractors`` seeded random distractor classes,
    instead of the full centroid set."""
    pred = np.asarray(pred, dtype=np.float64)
    centroids = np.asarray(class_centroids, dtype=np.float64)
    labels = np.asarray(truth_labels)
    c = centroids.shape[0]
    if n_distractors < 0 or n_distractors > c - 1:
        raise DomainError(f"n_distractors must lie in [0, {c - 1}]")
    if k < 1 or k > n_distractors + 1:
        raise DomainError(f"k must lie in [1, {n_distractors + 1}] for this candidate set")
    rng = stream(seed, "topk-distractors")
    hits = 0
    for i in range(pred.shape[0]):
        others = np.setdiff1d(np.arange(c), [labels[i]])
        chosen = rng.choice(others, size=n_distractors, replace=False)
        candidates = np.sort(np.concatenate([[labels[i]], chosen]))
        sub_label = int(np.searchsorted(candidates, labels[i]))
        hits += topk_accuracy(
            pred[i : i + 1], np.array([sub_label]), centroids[candidates], k
        )
    return float(hits / pred.shape[0]) if pred.shape[0] else 0.0


def _core_metrics(
    pred: np.ndarray,
    truth: np.ndarray,
    labels: np.ndarray | None,
    centroids: np.ndarray | None,
    ks: tuple[int, ...],
) -> dict:
    gap = pred - truth
    mse = float(np.mean(np.sum(gap * gap, axis=1)))
    center = truth - truth.mean(axis=0, keepdims=True)
    sstot = float(np.sum(center * center))
    ssres = float(np.sum(gap * gap))
    if sstot > 0.0:
        r2 = 1.0 - ssres / sstot
    else:
        r2 = 1.0 if ssres == 0.0 else -math.inf
    out = {
        "clip_distance": clip_distance(pred, truth),
        "clip_correlation": clip_correlation(pred, truth),
        "mse": mse,
        "r2": r2,
    }
    if labels is not None and centroids is not None:
        for k in ks:
            out[f"top{k}_accuracy"] = topk_accuracy(pred, labels, centroids, k)
    return out


def evaluate(
    pred: np.ndarray,
    truth: np.ndarray,
    labels: np.ndarray | None = None,
    centroids: np.ndarray | None = None,
    ks: tuple[int, ...] = (1, 3),
    bootstrap_reps: int = 0,
    seed: int = 0,
) -> EvalReport:
    """Assemble the full metric report; with ``bootstrap_reps`` > 0,
    standard errors come from seeded resampling of test rows."""
    pred, truth = _check_same_shape(pred, truth)
    n = pred.shape[0]
    if labels is not None and centroids is not None:
        centroids = np.asarray(centroids, dtype=np.float64)
        ks = tuple(k for k in ks if k <= centroids.shape[0])
    vals = _core_metrics(pred, truth, labels, centroids, ks)

    se = None
    if bootstrap_reps > 0:
        rng = stream(seed, "bootstrap")
        samples: dict[str, list[float]] = {k: [] for k in vals}
        for _ in range(bootstrap_reps):
            idx = rng.integers(0, n, size=n)
            sub_labels = labels[idx] if labels is not None else None
            try:
                resampled = _core_metrics(pred[idx], truth[idx], sub_labels, centroids, ks)
            except DomainError:
                continue  # degenerate resample (e.g. constant rows); skip
            for key, value in resampled.items():
                samples[key].append(value)
        se = {
            key: (float(np.std(v, ddof=1)) if len(v) > 1 else math.inf)
            for key, v in samples.items()
        }

    topk = {
        int(key[3 : key.index("_")]): val
        for key, val in vals.items()
        if key.startswith("top")
    }
    return EvalReport(
        clip_distance=vals["clip_distance"],
        clip_correlation=vals["clip_correlation"],
        topk_accuracy=topk,
        mse=vals["mse"],
        r2=vals["r2"],
        n_test=n,
        bootstrap_se=se,
    )
