"""Constrained MLP substrate: forward maps, entry-wise lq norms, ball
projection, the prox of the lq^q penalty, and exact gradients.

Models are plain stacks of dense weight matrices applied in order, with a
1-Lipschitz zero-fixing activation between consecutive matrices and no
activation after the last one. Entry-wise lq norms (q in [1, 2]) control
both sparsity and the Lipschitz constant: constraining every layer's lq
norm to at most 1 bounds each operator norm by 1.

All functions are pure; parameters are never mutated in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError, ShapeError
from .rng import stream

__all__ = [
    "Activation",
    "MlpParams",
    "forward",
    "forward_batch",
    "lq_norm",
    "spectral_norm",
    "project_lq_ball",
    "prox_lq",
    "loss_and_grad",
    "rms_row_maxabs",
    "params_equal",
]


_ACTIVATION_CODES = {"relu": 0, "leaky_relu": 1, "tanh": 2}


@dataclass(frozen=True)
class Activation:
    """Element-wise activation: 1-Lipschitz and fixing 0.

    ``leaky_relu`` keeps a ``slope`` in (0, 1) on the negative half-line;
    the derivative at exactly 0 is 0 for relu and ``slope`` for
    leaky_relu (any subgradient choice is valid; these are fixed for
    determinism).
    """

    kind: str
    slope: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in _ACTIVATION_CODES:
            raise DomainError(f"unknown activation kind: {self.kind!r}")
        if self.kind == "leaky_relu" and not (0.0 < self.slope < 1.0):
            raise DomainError(f"leaky_relu slope must lie in (0, 1), got {self.slope}")

    @classmethod
    def relu(cls) -> "Activation":
        return cls("relu")

    @classmethod
    def leaky_relu(cls, slope: float = 0.1) -> "Activation":
        return cls("leaky_relu", float(slope))

    @classmethod
    def tanh(cls) -> "Activation":
        return cls("tanh")

    @property
    def code(self) -> int:
        """Stable integer tag used by the model file format."""
        return _ACTIVATION_CODES[self.kind]

    @classmethod
    def from_code(cls, code: int, slope: float = 0.0) -> "Activation":
        for kind, c in _ACTIVATION_CODES.items():
            if c == code:
                return cls(kind, slope) if kind == "leaky_relu" else cls(kind)
        raise DomainError(f"unknown activation code: {code}")

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "leaky_relu":
            return np.where(z > 0.0, z, self.slope * z)
        return np.tanh(z)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return (z > 0.0).astype(np.float64)
        if self.kind == "leaky_relu":
            return np.where(z > 0.0, 1.0, self.slope)
        t = np.tanh(z)
        return 1.0 - t * t


def _as_weight(w: np.ndarray, index: int) -> np.ndarray:
    w = np.ascontiguousarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"layer {index} must be a 2-d matrix, got ndim={w.ndim}")
    if not np.all(np.isfinite(w)):
        raise NumericError(f"layer {index} contains non-finite entries")
    return w


@dataclass(eq=False)
class MlpParams:
    """Ordered weight matrices plus activation and norm exponent.

    ``layers[0]`` is applied to the input first; ``layers[-1]`` produces
    the output. Layer l has shape (width out, width in), so adjacent
    layers must agree on the shared width. ``depth`` counts the
    activation applications (number of layers minus one).
    """

    layers: list[np.ndarray]
    activation: Activation = field(default_factory=Activation.relu)
    q: float = 2.0

    def __post_init__(self) -> None:
        if not self.layers:
            raise ShapeError("a model needs at least one weight matrix")
        self.layers = [_as_weight(w, i) for i, w in enumerate(self.layers)]
        for i in range(len(self.layers) - 1):
            if self.layers[i + 1].shape[1] != self.layers[i].shape[0]:
                raise ShapeError(
                    f"layer {i + 1} expects {self.layers[i + 1].shape[1]} inputs "
                    f"but layer {i} emits {self.layers[i].shape[0]}"
                )
        if not (1.0 <= self.q <= 2.0):
            raise DomainError(f"q must lie in [1, 2], got {self.q}")
        self.q = float(self.q)

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    @property
    def in_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.layers]

    @property
    def total_params(self) -> int:
        return sum(w.size for w in self.layers)

    @property
    def max_width(self) -> int:
        widths = [w.shape[0] for w in self.layers[:-1]]
        return max(widths) if widths else self.out_dim

    def layer_norms(self) -> list[float]:
        return [lq_norm(w, self.q) for w in self.layers]

    def max_layer_norm(self) -> float:
        return max(self.layer_norms())

    def is_feasible(self, radius: float = 1.0, tol: float = 1e-9) -> bool:
        return self.max_layer_norm() <= radius + tol

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.layers], self.activation, self.q)


def params_equal(a: MlpParams, b: MlpParams) -> bool:
    """Bit-level equality of two parameter sets."""
    return (
        a.activation == b.activation
        and a.q == b.q
        and len(a.layers) == len(b.layers)
        and all(
            wa.shape == wb.shape and np.array_equal(wa, wb)
            for wa, wb in zip(a.layers, b.layers)
        )
    )


def _affine_rows(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    # einsum's sum-of-products loop reduces over the shared axis in a
    # fixed order per output element, so row i of the result is
    # bit-identical whether computed alone or inside a larger batch.
    return np.einsum("ij,kj->ik", h, w)


def forward_batch(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Apply the network to every row of ``x``; rows are independent
    and bit-stable with respect to the batch they appear in."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d batch, got ndim={x.ndim}")
    if x.shape[1] != params.in_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, model expects {params.in_dim}")
    h = x
    for w in params.layers[:-1]:
        h = params.activation.apply(_affine_rows(h, w))
    return _affine_rows(h, params.layers[-1])


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Apply the network to a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-d vector, got ndim={x.ndim}")
    return forward_batch(params, x[None, :])[0]


def lq_norm(w: np.ndarray, q: float) -> float:
    """Entry-wise lq norm (sum of |w|^q) ** (1/q) for q in [1, 2]."""
    if not (1.0 <= q <= 2.0):
        raise DomainError(f"q must lie in [1, 2], got {q}")
    w = np.asarray(w, dtype=np.float64)
    if q == 1.0:
        return float(np.sum(np.abs(w)))
    if q == 2.0:
        return float(np.sqrt(np.sum(w * w)))
    return float(np.sum(np.abs(w) ** q) ** (1.0 / q))


def spectral_norm(w: np.ndarray, iters: int = 100) -> float:
    """Power-iteration estimate of the largest singular value.

    The estimate is a Rayleigh quotient, hence never exceeds the true
    spectral norm; with enough iterations it converges to it. The start
    vector comes from a fixed named substream so results are
    reproducible.
    """
    if iters < 1:
        raise DomainError("iters must be >= 1")
    w = np.asarray(w, dtype=np.float64)
    if not np.any(w):
        return 0.0
    v = stream(0, "spectral-norm-start").standard_normal(w.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        u = w @ v
        v = w.T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
    return float(np.linalg.norm(w @ v))


def _prox_roots(a: np.ndarray, q: float, scale: float, newton_steps: int = 4) -> np.ndarray:
    """Solve x + scale*q*x^(q-1) = a element-wise for x >= 0, q in (1, 2).

    The left side is increasing and concave in x with value 0 at 0, so
    each equation has a unique root in (0, a]. Bisection brackets it to
    machine precision and a few clamped Newton steps polish the
    first-order condition.
    """
    a = np.asarray(a, dtype=np.float64)
    x_lo = np.zeros_like(a)
    x_hi = a.copy()
    sq = scale * q
    for _ in range(70):
        mid = 0.5 * (x_lo + x_hi)
        with np.errstate(invalid="ignore"):
            f = mid + sq * mid ** (q - 1.0) - a
        high = f > 0.0
        x_hi = np.where(high, mid, x_hi)
        x_lo = np.where(high, x_lo, mid)
    x = 0.5 * (x_lo + x_hi)
    positive = a > 0.0
    for _ in range(newton_steps):
        with np.errstate(invalid="ignore", divide="ignore"):
            xq1 = np.where(positive, x, 1.0) ** (q - 1.0)
            xq2 = np.where(positive, x, 1.0) ** (q - 2.0)
            f = x + sq * xq1 - a
            fp = 1.0 + sq * (q - 1.0) * xq2
            x_new = x - f / fp
        x = np.where(positive, np.clip(x_new, x_lo, x_hi), 0.0)
    return np.where(positive, x, 0.0)


def prox_lq(w: np.ndarray, q: float, scale: float) -> np.ndarray:
    """Entry-wise proximal operator of x -> scale * |x|^q.

    Soft threshold for q=1, linear shrinkage for q=2, and the scalar
    root of x + scale*q*x^(q-1) = |w| (sign restored) in between.
    """
    if not (1.0 <= q <= 2.0):
        raise DomainError(f"q must lie in [1, 2], got {q}")
    if scale < 0.0:
        raise DomainError(f"scale must be >= 0, got {scale}")
    w = np.asarray(w, dtype=np.float64)
    if scale == 0.0:
        return w.copy()
    if q == 1.0:
        return np.sign(w) * np.maximum(np.abs(w) - scale, 0.0)
    if q == 2.0:
        return w / (1.0 + 2.0 * scale)
    return np.sign(w) * _prox_roots(np.abs(w), q, scale)


def project_lq_ball(w: np.ndarray, q: float, radius: float) -> np.ndarray:
    """Euclidean projection of ``w`` onto {v : lq_norm(v) <= radius}.

    q=1 uses the sort-and-threshold rule, q=2 rescales radially, and
    q in (1, 2) solves the KKT system: an outer bisection on the dual
    multiplier around the entry-wise prox, run until the constraint
    residual is below 1e-10.
    """
    if radius <= 0.0:
        raise DomainError(f"radius must be > 0, got {radius}")
    if not (1.0 <= q <= 2.0):
        raise DomainError(f"q must lie in [1, 2], got {q}")
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NumericError("cannot project a matrix with non-finite entries")
    if lq_norm(w, q) <= radius:
        return w.copy()
    if q == 2.0:
        return w * (radius / lq_norm(w, 2.0))
    if q == 1.0:
        return _project_l1(w, radius)
    return _project_lq_dual(w, q, radius)


def _project_l1(w: np.ndarray, radius: float) -> np.ndarray:
    # Duchi et al. sort-and-threshold: find the shift tau such that the
    # soft-thresholded magnitudes sum to the radius.
    a = np.abs(w).ravel()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, a.size + 1)
    rho = int(np.max(np.nonzero(u * j > css - radius)[0]))
    tau = (css[rho] - radius) / (rho + 1)
    return (np.sign(w) * np.maximum(np.abs(w) - tau, 0.0)).reshape(w.shape)


def _project_lq_dual(w: np.ndarray, q: float, radius: float, tol: float = 1e-10) -> np.ndarray:
    a = np.abs(w)
    target = radius**q

    def constraint_gap(nu: float) -> tuple[float, np.ndarray]:
        x = _prox_roots(a, q, nu)
        return float(np.sum(x**q) - target), x

    nu_lo, nu_hi = 0.0, 1.0
    gap, x = constraint_gap(nu_hi)
    while gap > 0.0:
        nu_lo, nu_hi = nu_hi, 2.0 * nu_hi
        gap, x = constraint_gap(nu_hi)
    for _ in range(200):
        nu = 0.5 * (nu_lo + nu_hi)
        gap, x = constraint_gap(nu)
        if abs(gap) <= tol:
            break
        if gap > 0.0:
            nu_lo = nu
        else:
            nu_hi = nu
    return (np.sign(w) * x).reshape(w.shape)


def loss_and_grad(
    params: MlpParams, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Mean squared l2 loss (1/n) sum_i ||y_i - f(x_i)||^2 and its exact
    gradient with respect to every weight matrix.

    The penalty term is excluded here; callers handle it through the
    prox. Gradients follow the layer recursion in reverse, with the
    activation's fixed subgradient choice at kinks.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError("x and y must be 2-d batches")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"row mismatch: x has {x.shape[0]}, y has {y.shape[0]}")
    n = x.shape[0]
    if n < 1:
        raise DomainError("need at least one sample")
    if x.shape[1] != params.in_dim or y.shape[1] != params.out_dim:
        raise ShapeError("data dimensions do not match the model")

    act = params.activation
    hs = [x]
    zs = []
    h = x
    # same bit-stable affine as forward_batch, so a target produced by
    # forward_batch yields exactly zero loss and gradient
    for w in params.layers[:-1]:
        z = _affine_rows(h, w)
        zs.append(z)
        h = act.apply(z)
        hs.append(h)
    out = _affine_rows(h, params.layers[-1])
    if not np.all(np.isfinite(out)):
        raise NumericError("forward pass produced non-finite values")

    r = out - y
    loss = float(np.sum(r * r) / n)
    grads: list[np.ndarray] = [np.empty(0)] * len(params.layers)
    g = (2.0 / n) * r
    grads[-1] = g.T @ hs[-1]
    for l in range(params.depth - 1, -1, -1):
        g = (g @ params.layers[l + 1]) * act.derivative(zs[l])
        grads[l] = g.T @ hs[l]
    return loss, grads


def rms_row_maxabs(x: np.ndarray) -> float:
    """Root mean square of row-wise max-abs values: the input-scale
    factor appearing in the theory-driven penalty rates."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got ndim={x.ndim}")
    if x.shape[0] < 1:
        raise DomainError("need at least one row")
    if x.shape[1] == 0:
        return 0.0
    peaks = np.max(np.abs(x), axis=1)
    return float(math.sqrt(float(np.mean(peaks * peaks))))
