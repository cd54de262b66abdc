"""Inverse semi-supervised learning.

Three passes over the data: (1) fit an inverse map from responses back
to inputs on the paired rows, (2) refit the forward map on the paired
rows pooled with pseudo-pairs built by pushing unpaired responses
through the inverse map, (3) fit a residual corrector on the paired
rows against the pooled model's errors. The final predictor is the sum
of the augmented and residual networks, which cancels the bias the
pseudo-pairs introduce while keeping their sample-size benefit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import PairedDataset, UnpairedResponses
from .errors import DomainError, ShapeError
from .nn import MlpParams, forward_batch, rms_row_maxabs
from .rng import derive_key
from .train import (
    Architecture,
    FitReport,
    TrainConfig,
    fit_with_selection,
    penalty_candidates,
)

__all__ = [
    "IslArchitectures",
    "IslLambdas",
    "IslModel",
    "step_seed",
    "fit_inverse",
    "make_pseudo_predictors",
    "fit_augmented",
    "fit_residual",
    "fit_isl",
    "predict_isl",
]


@dataclass(frozen=True)
class IslArchitectures:
    """Architectures for the three stages; defaults follow the full-scale
    configuration (3 hidden layers for the inverse net, 2 for the rest)."""

    inverse: Architecture = field(default_factory=lambda: Architecture((512, 512, 256)))
    augmented: Architecture = field(default_factory=lambda: Architecture((512, 256)))
    residual: Architecture = field(default_factory=lambda: Architecture((512, 256)))

    @classmethod
    def uniform(cls, arch: Architecture) -> "IslArchitectures":
        return cls(inverse=arch, augmented=arch, residual=arch)


@dataclass(frozen=True)
class IslLambdas:
    inverse: float
    augmented: float
    residual: float


@dataclass
class IslModel:
    inverse: MlpParams
    augmented: MlpParams
    residual: MlpParams
    lambdas: IslLambdas
    n_paired: int
    n_unpaired: int
    reports: dict[str, FitReport] = field(default_factory=dict)

    def __post_init__(self) -> None:
        d, m = self.augmented.in_dim, self.augmented.out_dim
        if (self.inverse.in_dim, self.inverse.out_dim) != (m, d):
            raise ShapeError("inverse map must run responses back to inputs")
        if (self.residual.in_dim, self.residual.out_dim) != (d, m):
            raise ShapeError("residual map must match the augmented map's shape")
        if self.n_paired < 0 or self.n_unpaired < 0:
            raise DomainError("sample counts must be >= 0")

    def predict(self, x: np.ndarray) -> np.ndarray:
        return predict_isl(self, x)


def step_seed(seed: int, step: int) -> int:
    """Derived seed for stage ``step`` (1, 2, or 3) of the procedure."""
    return derive_key(seed, "isl-step", step)


def fit_inverse(
    data: PairedDataset, arch: Architecture, cfg: TrainConfig
) -> tuple[MlpParams, FitReport]:
    """Stage 1: regress inputs on responses to learn the inverse map."""
    if data.n < 2:
        raise DomainError("inverse fit needs at least 2 paired rows")
    v = rms_row_maxabs(data.y)
    p_total = arch.total_params(data.out_dim, data.in_dim)
    log_arg = float(data.n) * data.in_dim * p_total
    candidates = penalty_candidates(cfg.lambda_mode, v, arch.depth(), log_arg, data.n)
    return fit_with_selection(data.y, data.x, arch, cfg, candidates)


def make_pseudo_predictors(inverse: MlpParams, unpaired: UnpairedResponses) -> np.ndarray:
    """Push unpaired responses through the inverse map, one row each."""
    if unpaired.out_dim != inverse.in_dim:
        raise ShapeError(
            f"unpaired responses have {unpaired.out_dim} columns, inverse map expects "
            f"{inverse.in_dim}"
        )
    return forward_batch(inverse, unpaired.y)


def fit_augmented(
    data: PairedDataset,
    pseudo: np.ndarray,
    unpaired: UnpairedResponses,
    arch: Architecture,
    cfg: TrainConfig,
) -> tuple[MlpParams, FitReport]:
    """Stage 2: fit the forward map on paired rows pooled with
    (pseudo-input, unpaired response) rows.

    The penalty rate uses the pooled row count and the input scale of
    the pooled design, matching the risk actually minimized.
    """
    pseudo = np.asarray(pseudo, dtype=np.float64)
    if pseudo.ndim != 2 or pseudo.shape[0] != unpaired.n:
        raise ShapeError(
            f"pseudo predictors have {pseudo.shape[0] if pseudo.ndim == 2 else '?'} rows, "
            f"unpaired responses have {unpaired.n}"
        )
    if pseudo.shape[1] != data.in_dim:
        raise ShapeError(
            f"pseudo predictors have {pseudo.shape[1]} columns, expected {data.in_dim}"
        )
    if unpaired.out_dim != data.out_dim:
        raise ShapeError("unpaired responses and paired responses disagree on width")
    x_pool = np.vstack([data.x, pseudo])
    y_pool = np.vstack([data.y, unpaired.y])
    n_pool = x_pool.shape[0]
    v = rms_row_maxabs(x_pool)
    p_total = arch.total_params(data.in_dim, data.out_dim)
    log_arg = float(n_pool) * data.out_dim * p_total
    candidates = penalty_candidates(cfg.lambda_mode, v, arch.depth(), log_arg, n_pool)
    return fit_with_selection(x_pool, y_pool, arch, cfg, candidates)


def fit_residual(
    data: PairedDataset, augmented: MlpParams, arch: Architecture, cfg: TrainConfig
) -> tuple[MlpParams, FitReport]:
    """Stage 3: fit a corrector to the augmented model's residuals on
    the paired rows."""
    if data.n < 2:
        raise DomainError("residual fit needs at least 2 paired rows")
    targets = data.y - forward_batch(augmented, data.x)
    v = rms_row_maxabs(data.x)
    p_total = arch.total_params(data.in_dim, data.out_dim)
    log_arg = float(data.n) * data.out_dim * p_total
    candidates = penalty_candidates(cfg.lambda_mode, v, arch.depth(), log_arg, data.n)
    return fit_with_selection(data.x, targets, arch, cfg, candidates)


def _annotated(step: int, name: str, exc: Exception) -> Exception:
    note = f"isl step {step} ({name})"
    if exc.args and isinstance(exc.args[0], str):
        exc.args = (f"{note}: {exc.args[0]}",) + exc.args[1:]
    else:
        exc.args = (note,) + exc.args
    return exc


def fit_isl(
    data: PairedDataset,
    unpaired: UnpairedResponses,
    archs: IslArchitectures,
    cfg: TrainConfig,
) -> IslModel:
    """Run the three stages in order with decorrelated per-stage seeds."""
    if data.n < 1:
        raise DomainError("paired dataset is empty")

    try:
        inverse, rep_inv = fit_inverse(data, archs.inverse, replace(cfg, seed=step_seed(cfg.seed, 1)))
        pseudo = make_pseudo_predictors(inverse, unpaired)
    except Exception as exc:
        raise _annotated(1, "inverse map", exc)
    try:
        augmented, rep_aug = fit_augmented(
            data, pseudo, unpaired, archs.augmented, replace(cfg, seed=step_seed(cfg.seed, 2))
        )
    except Exception as exc:
        raise _annotated(2, "augmented fit", exc)
    try:
        residual, rep_res = fit_residual(
            data, augmented, archs.residual, replace(cfg, seed=step_seed(cfg.seed, 3))
        )
    except Exception as exc:
        raise _annotated(3, "residual fit", exc)

    return IslModel(
        inverse=inverse,
        augmented=augmented,
        residual=residual,
        lambdas=IslLambdas(
            rep_inv.lambda_used, rep_aug.lambda_used, rep_res.lambda_used
        ),
        n_paired=data.n,
        n_unpaired=unpaired.n,
        reports={"inverse": rep_inv, "augmented": rep_aug, "residual": rep_res},
    )


def predict_isl(model: IslModel, x: np.ndarray) -> np.ndarray:
    """Element-wise sum of the augmented and residual predictions."""
    return forward_batch(model.augmented, x) + forward_batch(model.residual, x)
