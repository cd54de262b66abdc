"""Penalized, norm-constrained MLP training.

The solver is proximal-projected stochastic gradient descent: each step
takes a gradient step on the smooth squared loss, applies the prox of
the last-layer lq^q penalty, then projects every layer back onto the lq
ball. The penalty weight either comes from the theory-driven rate (a
constant times input scale times sqrt(depth * log^3 / n)) or is fixed
explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .data import PairedDataset
from .errors import DomainError, NumericError
from .nn import (
    Activation,
    MlpParams,
    forward_batch,
    loss_and_grad,
    lq_norm,
    project_lq_ball,
    prox_lq,
    rms_row_maxabs,
)
from .rng import stream

__all__ = [
    "TheoryRate",
    "FixedPenalty",
    "LambdaMode",
    "TrainConfig",
    "FitReport",
    "Architecture",
    "AlignmentModel",
    "penalty_rate",
    "penalty_candidates",
    "fit_penalized",
    "fit_with_selection",
    "fit_baseline",
]

DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class TheoryRate:
    """Resolve the penalty from the theoretical rate, scaled by ``c``.

    When ``grid`` is given, one fit per grid constant is run and the
    winner is chosen by validation loss.
    """

    c: float = 0.1
    grid: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not (self.c > 0 and math.isfinite(self.c)):
            raise DomainError(f"rate constant must be positive, got {self.c}")
        if self.grid is not None and (
            len(self.grid) == 0 or any(g <= 0 for g in self.grid)
        ):
            raise DomainError("grid constants must be positive")


@dataclass(frozen=True)
class FixedPenalty:
    value: float = 0.0

    def __post_init__(self) -> None:
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise DomainError(f"fixed penalty must be >= 0, got {self.value}")


LambdaMode = Union[TheoryRate, FixedPenalty]


@dataclass(frozen=True)
class TrainConfig:
    q: float = 2.0
    lambda_mode: LambdaMode = field(default_factory=TheoryRate)
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.1
    lr_decay: float = 0.99
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 10
    constraint_radius: float = 1.0
    tol: float = 1e-8
    enforce_constraint: bool = True

    def __post_init__(self) -> None:
        if not (1.0 <= self.q <= 2.0):
            raise DomainError(f"q must lie in [1, 2], got {self.q}")
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be >= 1")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise DomainError("learning_rate must be positive and finite")
        if not (0.0 < self.lr_decay <= 1.0):
            raise DomainError("lr_decay must lie in (0, 1]")
        if not (0.0 <= self.val_fraction < 1.0):
            raise DomainError("val_fraction must lie in [0, 1)")
        if self.patience < 0:
            raise DomainError("patience must be >= 0")
        if not (self.constraint_radius > 0):
            raise DomainError("constraint_radius must be > 0")
        if not (self.tol > 0):
            raise DomainError("tol must be > 0")


@dataclass
class FitReport:
    final_objective: float
    lambda_used: float
    epochs_run: int
    best_val_loss: float | None
    objective_trace: list[float]

    def to_dict(self) -> dict:
        return {
            "final_objective": self.final_objective,
            "lambda_used": self.lambda_used,
            "epochs_run": self.epochs_run,
            "best_val_loss": self.best_val_loss,
            "objective_trace": list(self.objective_trace),
        }


@dataclass(frozen=True)
class Architecture:
    """Hidden layer widths plus the activation between layers."""

    hidden: tuple[int, ...] = ()
    activation: Activation = field(default_factory=Activation.relu)

    def __post_init__(self) -> None:
        if any(h < 1 for h in self.hidden):
            raise DomainError("hidden widths must be >= 1")

    def dims(self, in_dim: int, out_dim: int) -> list[int]:
        return [in_dim, *self.hidden, out_dim]

    def total_params(self, in_dim: int, out_dim: int) -> int:
        d = self.dims(in_dim, out_dim)
        return sum(d[i + 1] * d[i] for i in range(len(d) - 1))

    def depth(self) -> int:
        """Number of activation applications; at least 1 in rate formulas."""
        return max(len(self.hidden), 1)


@dataclass
class AlignmentModel:
    """A fitted forward map plus its fit report and method tag."""

    params: MlpParams
    report: FitReport
    method: str = "baseline"

    def predict(self, x: np.ndarray) -> np.ndarray:
        return forward_batch(self.params, x)


def penalty_rate(v: float, depth: int, log_arg: float, n: int, c: float) -> float:
    """Theory-driven penalty weight c * v * sqrt(depth * ln(log_arg)^3 / n)."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if not (log_arg > 1.0):
        raise DomainError(f"log argument must exceed 1, got {log_arg}")
    if depth < 1:
        raise DomainError(f"depth must be >= 1, got {depth}")
    if v < 0 or not math.isfinite(v):
        raise DomainError(f"input scale must be a finite non-negative real, got {v}")
    if not (c > 0):
        raise DomainError(f"rate constant must be positive, got {c}")
    return c * v * math.sqrt(depth * math.log(log_arg) ** 3 / n)


def penalty_candidates(
    mode: LambdaMode, v: float, depth: int, log_arg: float, n: int
) -> list[float]:
    """Expand a penalty mode into concrete candidate weights."""
    if isinstance(mode, FixedPenalty):
        return [mode.value]
    constants = mode.grid if mode.grid is not None else (mode.c,)
    return [penalty_rate(v, depth, log_arg, n, c) for c in constants]


def _init_params(
    dims: Sequence[int], activation: Activation, q: float, radius: float, rng
) -> MlpParams:
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        a = 1.0 / math.sqrt(fan_in * fan_out)
        w = rng.uniform(-a, a, size=(fan_out, fan_in))
        layers.append(project_lq_ball(w, q, radius))
    return MlpParams(layers, activation, q)


def _mse(params: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    # fast internal evaluation; not bound by the row-stability contract
    h = x
    for w in params.layers[:-1]:
        h = params.activation.apply(h @ w.T)
    r = h @ params.layers[-1].T - y
    return float(np.sum(r * r) / x.shape[0])


def _objective(params: MlpParams, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    return _mse(params, x, y) + lam * lq_norm(params.layers[-1], params.q) ** params.q


def fit_penalized(
    x: np.ndarray,
    y: np.ndarray,
    arch: Architecture,
    cfg: TrainConfig,
    lam: float,
    callback: Callable[[int, MlpParams], None] | None = None,
) -> tuple[MlpParams, FitReport]:
    """Minimize mean squared loss + lam * lq_norm(last layer)^q over the
    constrained parameter set.

    Deterministic given (data, arch, cfg): the validation split, the
    initialization, and the batch order all come from named substreams
    of ``cfg.seed``. Early stopping tracks validation loss and restores
    the best snapshot. ``callback`` observes every iterate (for
    feasibility monitoring); it must not mutate the parameters.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DomainError("x and y must be 2-d with matching row counts")
    n_total = x.shape[0]
    n_val = int(cfg.val_fraction * n_total)
    if n_total - n_val < 2:
        raise DomainError(
            f"need at least 2 training rows after the validation split, got {n_total - n_val}"
        )
    if lam < 0 or not math.isfinite(lam):
        raise DomainError(f"penalty weight must be a finite non-negative real, got {lam}")

    perm = stream(cfg.seed, "val-split").permutation(n_total)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    xt, yt = x[train_idx], y[train_idx]
    xv, yv = x[val_idx], y[val_idx]
    n_train = xt.shape[0]

    dims = arch.dims(x.shape[1], y.shape[1])
    params = _init_params(dims, arch.activation, cfg.q, cfg.constraint_radius, stream(cfg.seed, "init"))
    order_rng = stream(cfg.seed, "batch-order")

    use_val = n_val > 0 and cfg.patience > 0
    best_val = math.inf
    best_params = None
    stall = 0
    trace: list[float] = []
    epochs_run = 0
    step = 0

    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay**epoch
        order = order_rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grads = loss_and_grad(params, xt[batch], yt[batch])
            for l, g in enumerate(grads):
                params.layers[l] = params.layers[l] - lr * g
            params.layers[-1] = prox_lq(params.layers[-1], cfg.q, lr * lam)
            if cfg.enforce_constraint:
                for l in range(len(params.layers)):
                    params.layers[l] = project_lq_ball(
                        params.layers[l], cfg.q, cfg.constraint_radius
                    )
            if callback is not None:
                callback(step, params)
            step += 1

        epochs_run = epoch + 1
        obj = _objective(params, xt, yt, lam)
        trace.append(obj)
        if not math.isfinite(obj) or obj > DIVERGENCE_LIMIT:
            raise NumericError(f"objective diverged at epoch {epoch}: {obj}")
        if use_val:
            val_loss = _mse(params, xv, yv)
            if val_loss < best_val - cfg.tol:
                best_val = val_loss
                best_params = params.copy()
                stall = 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    break

    if use_val and best_params is not None:
        params = best_params
    result = params.copy()
    report = FitReport(
        final_objective=_objective(result, xt, yt, lam),
        lambda_used=lam,
        epochs_run=epochs_run,
        best_val_loss=(best_val if use_val and best_val < math.inf else None),
        objective_trace=trace,
    )
    return result, report


def fit_with_selection(
    x: np.ndarray,
    y: np.ndarray,
    arch: Architecture,
    cfg: TrainConfig,
    candidates: Sequence[float],
) -> tuple[MlpParams, FitReport]:
    """Fit once per candidate penalty and keep the best validation loss.

    With a single candidate this is exactly ``fit_penalized``. Ties keep
    the earliest candidate, so selection is deterministic.
    """
    if len(candidates) == 0:
        raise DomainError("need at least one penalty candidate")
    if len(candidates) == 1:
        return fit_penalized(x, y, arch, cfg, candidates[0])
    if cfg.val_fraction <= 0 or cfg.patience <= 0:
        raise DomainError("penalty selection over a grid needs a validation split")
    best: tuple[MlpParams, FitReport] | None = None
    for lam in candidates:
        fitted = fit_penalized(x, y, arch, cfg, lam)
        score = fitted[1].best_val_loss
        assert score is not None
        if best is None or score < best[1].best_val_loss:  # type: ignore[operator]
            best = fitted
    assert best is not None
    return best


def fit_baseline(data: PairedDataset, arch: Architecture, cfg: TrainConfig) -> AlignmentModel:
    """Fit the plain penalized regression of responses on inputs."""
    if data.n < 1:
        raise DomainError("dataset is empty")
    v = rms_row_maxabs(data.x)
    p_total = arch.total_params(data.in_dim, data.out_dim)
    log_arg = 2.0 * data.out_dim * data.n * p_total
    candidates = penalty_candidates(cfg.lambda_mode, v, arch.depth(), log_arg, data.n)
    params, report = fit_with_selection(data.x, data.y, arch, cfg, candidates)
    return AlignmentModel(params, report, method="baseline")
