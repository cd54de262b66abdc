"""Meta transfer learning over a bank of frozen source models.

Stage 1 regresses the target responses on the stacked source-model
predictions with an l1 penalty, solved by cyclic coordinate descent to
a KKT certificate. Stage 2 fits a residual network to whatever the
weighted sources leave unexplained. Source models are never modified;
the fitted model pins the bank it was trained against by content
digest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import PairedDataset
from .errors import DomainError, IntegrityError, ShapeError
from .nn import MlpParams, forward_batch, rms_row_maxabs
from .train import (
    Architecture,
    FitReport,
    FixedPenalty,
    TheoryRate,
    TrainConfig,
    fit_with_selection,
    penalty_candidates,
)

__all__ = [
    "SourceBank",
    "SigmaEstimate",
    "LassoResult",
    "MtlLambdas",
    "MtlModel",
    "source_predictions",
    "estimate_sigma",
    "fit_weights_lasso",
    "lasso_penalty_rate",
    "fit_residual_mtl",
    "fit_mtl",
    "predict_mtl",
    "restricted_eigen_diag",
]


@dataclass
class SourceBank:
    """Frozen source models, all mapping the same input width to the
    same output width."""

    models: list[MlpParams]
    labels: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.models:
            raise DomainError("a source bank needs at least one model")
        d, m = self.models[0].in_dim, self.models[0].out_dim
        for i, model in enumerate(self.models):
            if model.in_dim != d or model.out_dim != m:
                raise ShapeError(
                    f"source {i} maps {model.in_dim}->{model.out_dim}, expected {d}->{m}"
                )
        if not self.labels:
            self.labels = [f"source-{i:02d}" for i in range(len(self.models))]
        if len(self.labels) != len(self.models):
            raise DomainError("labels and models differ in length")

    @property
    def k(self) -> int:
        return len(self.models)

    @property
    def in_dim(self) -> int:
        return self.models[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.models[0].out_dim

    def digest(self) -> int:
        from .formats import bank_digest

        return bank_digest(self.models)


@dataclass(frozen=True)
class SigmaEstimate:
    """Per-coordinate noise scale from an unpenalized pilot regression.

    ``ridge_fallback`` flags that the source Gram matrix was too close
    to singular and a small ridge was added to stabilize the solve.
    """

    value: float
    ridge_fallback: bool = False


@dataclass
class LassoResult:
    gamma: np.ndarray
    sweeps: int
    converged: bool
    kkt_violation: float
    degenerate: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class MtlLambdas:
    weights: float
    residual: float


@dataclass
class MtlModel:
    gamma: np.ndarray
    residual: MlpParams
    bank_digest: int
    lambdas: MtlLambdas
    sigma_hat: float
    lasso: LassoResult | None = None
    reports: dict[str, FitReport] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)


def source_predictions(bank: SourceBank, x: np.ndarray) -> np.ndarray:
    """Stacked predictions, shape (rows, sources, out_dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != bank.in_dim:
        raise ShapeError(f"inputs must be 2-d with {bank.in_dim} columns")
    return np.stack([forward_batch(m, x) for m in bank.models], axis=1)


def _gram_and_cross(preds: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    n = preds.shape[0]
    gram = np.einsum("ikm,ilm->kl", preds, preds) / n
    cross = np.einsum("im,ikm->k", y, preds) / n
    yy = float(np.sum(y * y)) / n
    return gram, cross, yy


def estimate_sigma(data: PairedDataset, bank: SourceBank) -> SigmaEstimate:
    """Noise scale from the residuals of unpenalized least squares of the
    responses on the source predictions, normalized per coordinate with
    a degrees-of-freedom correction."""
    n, k, m = data.n, bank.k, data.out_dim
    if n <= k:
        raise DomainError(f"sigma estimation needs n > K, got n={n}, K={k}")
    preds = source_predictions(bank, data.x)
    gram, cross, yy = _gram_and_cross(preds, data.y)
    ridge = False
    if np.linalg.cond(gram) > 1e12:
        ridge = True
        gram = gram + (1e-8 * max(np.trace(gram), 1.0) / k) * np.eye(k)
    gamma = np.linalg.solve(gram, cross)
    rss = max(float(n * (yy - 2.0 * cross @ gamma + gamma @ gram @ gamma)), 0.0)
    return SigmaEstimate(math.sqrt(rss / (m * (n - k))), ridge_fallback=ridge)


def lasso_penalty_rate(sigma_hat: float, k: float, n: int, c: float) -> float:
    """Sparse-weights penalty c * sigma * sqrt(max(ln K, 1) / n).

    The log is floored at 1 so a single-source bank still gets a usable
    penalty.
    """
    if sigma_hat < 0 or not math.isfinite(sigma_hat):
        raise DomainError(f"sigma must be a finite non-negative real, got {sigma_hat}")
    if k < 1:
        raise DomainError(f"need at least one source, got {k}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if not (c > 0):
        raise DomainError(f"rate constant must be positive, got {c}")
    return c * sigma_hat * math.sqrt(max(math.log(k), 1.0) / n)


def fit_weights_lasso(
    data: PairedDataset,
    bank: SourceBank,
    lam: float,
    tol: float = 1e-10,
    max_sweeps: int = 50_000,
) -> LassoResult:
    """Cyclic coordinate descent on
    (1/n) sum_i ||y_i - sum_k gamma_k f_k(x_i)||^2 + lam * ||gamma||_1.

    Each coordinate update is an exact scalar soft-threshold. Iteration
    stops once a full sweep moves no coordinate by more than ``tol``
    and the KKT conditions hold within ``tol``: |a_k| <= lam/2 for zero
    coordinates and a_k - b_k*gamma_k = (lam/2)*sign(gamma_k) otherwise,
    where a_k is the correlation of source k with the residual that
    excludes it and b_k its mean squared prediction norm.
    """
    if lam < 0 or not math.isfinite(lam):
        raise DomainError(f"penalty must be a finite non-negative real, got {lam}")
    if data.n < 1:
        raise DomainError("need at least one paired row")
    preds = source_predictions(bank, data.x)
    gram, cross, _ = _gram_and_cross(preds, data.y)
    b = np.diag(gram).copy()
    degenerate = [k for k in range(bank.k) if b[k] <= 0.0]
    active = np.array([k for k in range(bank.k) if b[k] > 0.0], dtype=int)

    gamma = np.zeros(bank.k)
    half = lam / 2.0
    sweeps = 0
    converged = False
    kkt = math.inf
    while sweeps < max_sweeps:
        sweeps += 1
        max_move = 0.0
        for k in active:
            a_k = cross[k] - (gram[k] @ gamma - gram[k, k] * gamma[k])
            new = math.copysign(max(abs(a_k) - half, 0.0), a_k) / b[k]
            max_move = max(max_move, abs(new - gamma[k]))
            gamma[k] = new
        if max_move <= tol:
            kkt = _kkt_violation(gram, cross, b, gamma, half, active)
            if kkt <= tol:
                converged = True
                break
    if not converged:
        kkt = _kkt_violation(gram, cross, b, gamma, half, active)
    return LassoResult(gamma, sweeps, converged, kkt, degenerate)


def _kkt_violation(gram, cross, b, gamma, half, active) -> float:
    worst = 0.0
    for k in active:
        a_k = cross[k] - (gram[k] @ gamma - gram[k, k] * gamma[k])
        if gamma[k] == 0.0:
            worst = max(worst, abs(a_k) - half)
        else:
            worst = max(worst, abs(a_k - b[k] * gamma[k] - math.copysign(half, gamma[k])))
    return max(worst, 0.0)


def fit_residual_mtl(
    data: PairedDataset,
    bank: SourceBank,
    gamma: np.ndarray,
    arch: Architecture,
    cfg: TrainConfig,
) -> tuple[MlpParams, FitReport]:
    """Stage 2: fit a network to the residuals of the weighted source
    aggregate on the target data."""
    if data.n < 2:
        raise DomainError("residual fit needs at least 2 paired rows")
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (bank.k,):
        raise ShapeError(f"gamma must have length {bank.k}, got shape {gamma.shape}")
    preds = source_predictions(bank, data.x)
    targets = data.y - np.einsum("k,ikm->im", gamma, preds)
    v = rms_row_maxabs(data.x)
    p_total = arch.total_params(data.in_dim, data.out_dim)
    log_arg = float(data.n) * data.out_dim * p_total
    candidates = penalty_candidates(cfg.lambda_mode, v, arch.depth(), log_arg, data.n)
    return fit_with_selection(data.x, targets, arch, cfg, candidates)


def _annotated(step: int, name: str, exc: Exception) -> Exception:
    note = f"mtl step {step} ({name})"
    if exc.args and isinstance(exc.args[0], str):
        exc.args = (f"{note}: {exc.args[0]}",) + exc.args[1:]
    else:
        exc.args = (note,) + exc.args
    return exc


def fit_mtl(
    data: PairedDataset,
    bank: SourceBank,
    arch: Architecture,
    cfg: TrainConfig,
    lasso_lambda: float | None = None,
    lasso_constant: float | None = None,
) -> MtlModel:
    """Estimate noise scale, resolve the sparse-weights penalty, run the
    lasso, then fit the residual network.

    ``lasso_lambda`` pins the weights penalty exactly; otherwise it
    comes from the theory rate with ``lasso_constant`` (falling back to
    the train config's rate constant, or to a fixed penalty's value).
    """
    if data.n < 1:
        raise DomainError("paired dataset is empty")
    if data.in_dim != bank.in_dim or data.out_dim != bank.out_dim:
        raise ShapeError(
            f"bank maps {bank.in_dim}->{bank.out_dim} but data is "
            f"{data.in_dim}->{data.out_dim}"
        )
    notes: list[str] = []

    try:
        sigma = estimate_sigma(data, bank)
        if sigma.ridge_fallback:
            notes.append("sigma pilot regression used a ridge fallback (near-singular gram)")
        if lasso_lambda is not None:
            lam_w = float(lasso_lambda)
        elif isinstance(cfg.lambda_mode, FixedPenalty) and lasso_constant is None:
            lam_w = cfg.lambda_mode.value
        else:
            c = lasso_constant if lasso_constant is not None else (
                cfg.lambda_mode.c if isinstance(cfg.lambda_mode, TheoryRate) else 0.1
            )
            lam_w = lasso_penalty_rate(sigma.value, bank.k, data.n, c)
        lasso = fit_weights_lasso(data, bank, lam_w, tol=min(cfg.tol, 1e-10))
        if lasso.degenerate:
            notes.append(f"degenerate sources forced to zero weight: {lasso.degenerate}")
    except Exception as exc:
        raise _annotated(1, "sparse weights", exc)

    try:
        residual, rep_res = fit_residual_mtl(data, bank, lasso.gamma, arch, cfg)
    except Exception as exc:
        raise _annotated(2, "residual fit", exc)

    return MtlModel(
        gamma=lasso.gamma,
        residual=residual,
        bank_digest=bank.digest(),
        lambdas=MtlLambdas(weights=lam_w, residual=rep_res.lambda_used),
        sigma_hat=sigma.value,
        lasso=lasso,
        reports={"residual": rep_res},
        notes=notes,
    )


def predict_mtl(model: MtlModel, bank: SourceBank, x: np.ndarray) -> np.ndarray:
    """Residual prediction plus the weighted sum of source predictions,
    accumulated source by source in bank order."""
    if bank.digest() != model.bank_digest:
        raise IntegrityError(
            "source bank content digest does not match the one the model was fitted against"
        )
    out = forward_batch(model.residual, x)
    for k in range(bank.k):
        out = out + model.gamma[k] * forward_batch(bank.models[k], x)
    return out


def restricted_eigen_diag(bank: SourceBank, x: np.ndarray, support: list[int]) -> float:
    """Smallest eigenvalue of the source-prediction Gram matrix
    restricted to ``support``: a collinearity diagnostic (reported,
    never enforced)."""
    if not support:
        raise DomainError("support must be non-empty")
    preds = source_predictions(bank, x)
    gram = np.einsum("ikm,ilm->kl", preds, preds) / preds.shape[0]
    sub = gram[np.ix_(support, support)]
    return float(np.linalg.eigvalsh(sub)[0])
