"""Synthetic alignment worlds with known ground truth.

A world spec fixes the ground-truth map (a linear-Gaussian model with a
closed-form conditional inverse, or a random feasible network on a
bounded input cube), the noise scale, how unpaired responses are
produced (informative draws from the same model, or an adversarial
distribution carrying no signal), and optionally a multi-subject
structure for source banks. Every random draw comes from a named
substream of the world seed, so generation is bit-reproducible and the
train/test/unpaired streams are disjoint by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import PairedDataset, UnpairedResponses
from .errors import DomainError, UnsupportedScenarioError
from .mtl import SourceBank
from .nn import Activation, MlpParams, forward_batch, project_lq_ball
from .rng import stream
from .train import Architecture

__all__ = [
    "LinearGaussianTruth",
    "MlpTruth",
    "Informative",
    "Adversarial",
    "MultiSubjectSpec",
    "WorldSpec",
    "GeneratedWorld",
    "BankInfo",
    "MseEstimate",
    "random_linear_truth",
    "generate",
    "make_source_bank",
    "oracle_mse",
    "heldout_truth_mse",
    "inverse_oracle",
    "LinearMap",
    "NetMap",
    "CompositeMap",
]


@dataclass(eq=False)
class LinearGaussianTruth:
    """Ground truth y = a @ x with x ~ N(0, cov_x)."""

    a: np.ndarray
    cov_x: np.ndarray

    def __post_init__(self) -> None:
        self.a = np.ascontiguousarray(self.a, dtype=np.float64)
        self.cov_x = np.ascontiguousarray(self.cov_x, dtype=np.float64)
        if self.a.ndim != 2 or self.cov_x.ndim != 2:
            raise DomainError("truth map and input covariance must be matrices")
        d = self.a.shape[1]
        if self.cov_x.shape != (d, d):
            raise DomainError("input covariance must be d x d")
        try:
            np.linalg.cholesky(self.cov_x)
        except np.linalg.LinAlgError as exc:
            raise DomainError("input covariance must be positive definite") from exc


@dataclass(frozen=True)
class MlpTruth:
    """Ground truth drawn as a random feasible network."""

    arch: Architecture
    q: float = 2.0


@dataclass(frozen=True)
class Informative:
    """Unpaired responses drawn from the true model on fresh inputs."""


@dataclass(frozen=True)
class Adversarial:
    """Unpaired responses from an independent shifted Gaussian with a
    mismatched diagonal covariance: they carry no signal about the
    forward map."""

    shift: float = 3.0


@dataclass(frozen=True)
class MultiSubjectSpec:
    """Source-bank structure: K source nets, a sparse weight vector with
    s_star nonzeros composing the target, and the scale of the
    subject-specific residual net."""

    k: int
    s_star: int
    gamma_star: tuple[float, ...]
    residual_scale: float = 0.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise DomainError("need at least one source subject")
        if len(self.gamma_star) != self.k:
            raise DomainError(f"gamma_star must have length {self.k}")
        nonzero = sum(1 for g in self.gamma_star if g != 0.0)
        if nonzero != self.s_star:
            raise DomainError(
                f"gamma_star has {nonzero} nonzeros but s_star={self.s_star}"
            )
        if self.residual_scale < 0:
            raise DomainError("residual_scale must be >= 0")

    @property
    def support(self) -> list[int]:
        return [i for i, g in enumerate(self.gamma_star) if g != 0.0]


@dataclass(eq=False)
class WorldSpec:
    d: int
    m: int
    truth: LinearGaussianTruth | MlpTruth
    sigma: float
    unpaired: Informative | Adversarial = field(default_factory=Informative)
    subjects: MultiSubjectSpec | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d < 1 or self.m < 1:
            raise DomainError("dimensions must be >= 1")
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise DomainError("sigma must be a finite non-negative real")
        if isinstance(self.truth, LinearGaussianTruth):
            if self.truth.a.shape != (self.m, self.d):
                raise DomainError(
                    f"truth map shape {self.truth.a.shape} does not match (m={self.m}, d={self.d})"
                )
            if self.subjects is not None:
                raise DomainError("multi-subject worlds need a network truth kind")


class LinearMap:
    """Evaluable linear map y = x @ a.T."""

    def __init__(self, a: np.ndarray):
        self.a = np.ascontiguousarray(a, dtype=np.float64)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.a.T


class NetMap:
    """Evaluable network map."""

    def __init__(self, params: MlpParams):
        self.params = params

    def predict(self, x: np.ndarray) -> np.ndarray:
        return forward_batch(self.params, x)


class CompositeMap:
    """Weighted sum of source nets plus a scaled residual net."""

    def __init__(
        self,
        sources: list[MlpParams],
        weights: np.ndarray,
        residual: MlpParams,
        residual_scale: float,
    ):
        self.sources = sources
        self.weights = np.asarray(weights, dtype=np.float64)
        self.residual = residual
        self.residual_scale = float(residual_scale)

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = self.residual_scale * forward_batch(self.residual, x)
        for w, params in zip(self.weights, self.sources):
            if w != 0.0:
                out = out + w * forward_batch(params, x)
        return out


@dataclass
class BankInfo:
    gamma_star: np.ndarray
    support: list[int]
    residual_scale: float
    c_aux: float


@dataclass
class GeneratedWorld:
    spec: WorldSpec
    truth: LinearMap | NetMap | CompositeMap
    paired: PairedDataset
    unpaired: UnpairedResponses
    test: PairedDataset
    bank: SourceBank | None = None
    bank_info: BankInfo | None = None


@dataclass(frozen=True)
class MseEstimate:
    value: float
    stderr: float
    n_mc: int


def random_linear_truth(
    d: int, m: int, singular_values: tuple[float, ...], seed: int, label: str = "linear-truth"
) -> LinearGaussianTruth:
    """Low-rank map sum_i s_i u_i v_i^T with seeded orthonormal direction
    pairs and identity input covariance."""
    r = len(singular_values)
    if r < 1 or r > min(d, m):
        raise DomainError("rank must lie in [1, min(d, m)]")
    rng = stream(seed, label)
    u, _ = np.linalg.qr(rng.standard_normal((m, r)))
    v, _ = np.linalg.qr(rng.standard_normal((d, r)))
    a = (u * np.asarray(singular_values)) @ v.T
    return LinearGaussianTruth(a, np.eye(d))


def _random_feasible_net(
    dims: list[int], activation: Activation, q: float, rng
) -> MlpParams:
    """Random member of the unit lq-ball family, built so consecutive
    layers share a dominant direction and the map carries signal rather
    than collapsing to noise-level outputs."""
    dirs = []
    for p in dims:
        v = rng.standard_normal(p)
        dirs.append(v / np.linalg.norm(v))
    layers = []
    for i in range(len(dims) - 1):
        noise = rng.standard_normal((dims[i + 1], dims[i]))
        noise *= 0.3 / np.linalg.norm(noise)
        w = 1.25 * (np.outer(dirs[i + 1], dirs[i]) + noise)
        layers.append(project_lq_ball(w, q, 1.0))
    return MlpParams(layers, activation, q)


def _sample_inputs(spec: WorldSpec, n: int, rng) -> np.ndarray:
    if isinstance(spec.truth, LinearGaussianTruth):
        chol = np.linalg.cholesky(spec.truth.cov_x)
        return rng.standard_normal((n, spec.d)) @ chol.T
    return rng.uniform(-1.0, 1.0, size=(n, spec.d))


def make_source_bank(spec: WorldSpec) -> tuple[SourceBank, CompositeMap, BankInfo]:
    """Materialize the frozen source nets and the composed target truth
    for a multi-subject world.

    The realized residual energy E||delta * f_res(X)||^2 is estimated by
    Monte Carlo and recorded as the auxiliary-quality diagnostic.
    """
    sub = spec.subjects
    if sub is None:
        raise DomainError("world spec has no multi-subject structure")
    if not isinstance(spec.truth, MlpTruth):
        raise DomainError("multi-subject worlds use a network truth kind")
    dims = spec.truth.arch.dims(spec.d, spec.m)
    act, q = spec.truth.arch.activation, spec.truth.q
    sources = [
        _random_feasible_net(dims, act, q, stream(spec.seed, "bank", k))
        for k in range(sub.k)
    ]
    residual = _random_feasible_net(dims, act, q, stream(spec.seed, "bank-residual"))
    gamma_star = np.asarray(sub.gamma_star, dtype=np.float64)
    truth = CompositeMap(sources, gamma_star, residual, sub.residual_scale)

    mc = _sample_inputs(spec, 2000, stream(spec.seed, "c-aux-mc"))
    res_out = sub.residual_scale * forward_batch(residual, mc)
    c_aux = float(np.mean(np.sum(res_out * res_out, axis=1)))
    bank = SourceBank(sources)
    return bank, truth, BankInfo(gamma_star, sub.support, sub.residual_scale, c_aux)


def generate(spec: WorldSpec, n: int, n_unpaired: int, n_test: int) -> GeneratedWorld:
    """Draw a full world: paired rows, unpaired responses, a disjoint
    test set, and (for multi-subject specs) the source bank."""
    if n < 0 or n_unpaired < 0 or n_test < 0:
        raise DomainError("counts must be >= 0")

    bank = bank_info = None
    if spec.subjects is not None:
        bank, truth, bank_info = make_source_bank(spec)
    elif isinstance(spec.truth, LinearGaussianTruth):
        truth = LinearMap(spec.truth.a)
    else:
        dims = spec.truth.arch.dims(spec.d, spec.m)
        truth = NetMap(
            _random_feasible_net(
                dims, spec.truth.arch.activation, spec.truth.q, stream(spec.seed, "truth")
            )
        )

    def draw_pairs(count: int, x_label: str, noise_label: str) -> PairedDataset:
        x = _sample_inputs(spec, count, stream(spec.seed, x_label))
        noise = stream(spec.seed, noise_label).standard_normal((count, spec.m))
        return PairedDataset(x, truth.predict(x) + spec.sigma * noise)

    paired = draw_pairs(n, "paired-x", "paired-noise")
    test = draw_pairs(n_test, "test-x", "test-noise")

    if isinstance(spec.unpaired, Informative):
        fresh = draw_pairs(n_unpaired, "unpaired-x", "unpaired-noise")
        unpaired = UnpairedResponses(fresh.y)
    else:
        rng = stream(spec.seed, "adversarial")
        base = spec.sigma if spec.sigma > 0 else 1.0
        scales = base * np.linspace(0.5, 1.5, spec.m)
        center = spec.unpaired.shift * spec.sigma
        unpaired = UnpairedResponses(
            center + rng.standard_normal((n_unpaired, spec.m)) * scales
        )

    return GeneratedWorld(spec, truth, paired, unpaired, test, bank, bank_info)


def oracle_mse(predict_fn, world: GeneratedWorld, n_mc: int) -> MseEstimate:
    """Monte Carlo estimate of E||f(X) - truth(X)||^2 on fresh inputs,
    with its standard error."""
    if n_mc < 1:
        raise DomainError("n_mc must be >= 1")
    x = _sample_inputs(world.spec, n_mc, stream(world.spec.seed, "oracle-mse"))
    gap = predict_fn(x) - world.truth.predict(x)
    vals = np.sum(gap * gap, axis=1)
    se = float(np.std(vals, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf
    return MseEstimate(float(np.mean(vals)), se, n_mc)


def heldout_truth_mse(predict_fn, world: GeneratedWorld) -> float:
    """Mean squared gap to the noiseless truth on the world's test rows."""
    if world.test.n < 1:
        raise DomainError("world has no test rows")
    gap = predict_fn(world.test.x) - world.truth.predict(world.test.x)
    return float(np.mean(np.sum(gap * gap, axis=1)))


def inverse_oracle(world: GeneratedWorld) -> LinearMap:
    """Closed-form conditional mean map E(X | Y) for linear-Gaussian
    worlds: cov_xy @ inv(cov_yy) applied to y."""
    truth = world.spec.truth
    if not isinstance(truth, LinearGaussianTruth):
        raise UnsupportedScenarioError(
            "the conditional-mean inverse has a closed form only for linear-Gaussian worlds"
        )
    a, cov_x, sigma = truth.a, truth.cov_x, world.spec.sigma
    cov_xy = cov_x @ a.T
    cov_yy = a @ cov_x @ a.T + sigma**2 * np.eye(world.spec.m)
    return LinearMap(np.linalg.solve(cov_yy, cov_xy.T).T)
