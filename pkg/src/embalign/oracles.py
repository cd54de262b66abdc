"""Independent reference computations for verification.

Everything here deliberately avoids the code paths it is used to check:
gradients come from central finite differences, l1 projections from an
exhaustive support search, lq projections from a general-purpose
constrained solver, and sparse weights from proximal gradient descent.
These back the verification benchmark suites and the test suite.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .nn import MlpParams, loss_and_grad

__all__ = [
    "central_difference_grad",
    "project_l1_bruteforce",
    "project_lq_slsqp",
    "prox_first_order_residual",
    "lasso_prox_gradient",
]


def central_difference_grad(
    params: MlpParams, x: np.ndarray, y: np.ndarray, h: float = 1e-5
) -> list[np.ndarray]:
    """Central finite differences of the mean squared loss, one weight
    entry at a time."""
    grads = []
    for li, w in enumerate(params.layers):
        g = np.zeros_like(w)
        for idx in np.ndindex(*w.shape):
            layers_plus = [m.copy() for m in params.layers]
            layers_minus = [m.copy() for m in params.layers]
            layers_plus[li][idx] += h
            layers_minus[li][idx] -= h
            lp, _ = loss_and_grad(MlpParams(layers_plus, params.activation, params.q), x, y)
            lm, _ = loss_and_grad(MlpParams(layers_minus, params.activation, params.q), x, y)
            g[idx] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def project_l1_bruteforce(w: np.ndarray, radius: float) -> np.ndarray:
    """Exact l1-ball projection by exhaustive search over supports.

    Feasible only for short vectors (2^len candidates). For each
    candidate support the KKT shift is computed directly and validated,
    so no sorting is involved.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    n = w.size
    if n > 20:
        raise DomainError("brute-force l1 projection is limited to short vectors")
    a = np.abs(w)
    if a.sum() <= radius:
        return w.copy()
    best = None
    best_dist = np.inf
    for mask in range(1, 1 << n):
        support = [i for i in range(n) if mask >> i & 1]
        tau = (sum(a[i] for i in support) - radius) / len(support)
        if tau < 0.0:
            continue
        x = np.zeros(n)
        ok = True
        for i in range(n):
            if mask >> i & 1:
                xi = a[i] - tau
                if xi < 0.0:
                    ok = False
                    break
                x[i] = xi
            elif a[i] > tau + 1e-12:
                ok = False
                break
        if not ok:
            continue
        dist = float(np.sum((x - a) ** 2))
        if dist < best_dist:
            best_dist = dist
            best = x
    assert best is not None, "no KKT-consistent support found"
    return np.sign(w) * best


def project_lq_slsqp(w: np.ndarray, q: float, radius: float) -> np.ndarray:
    """lq-ball projection via scipy's SLSQP on the smooth constraint
    sum |x|^q <= radius^q (differentiable for q > 1)."""
    from scipy.optimize import minimize

    if not (1.0 < q <= 2.0):
        raise DomainError("slsqp oracle needs q in (1, 2]")
    w = np.asarray(w, dtype=np.float64).ravel()
    nq = float(np.sum(np.abs(w) ** q)) ** (1.0 / q)
    if nq <= radius:
        return w.copy()
    x0 = w * (radius / nq) * 0.9

    def objective(x):
        d = x - w
        return 0.5 * float(d @ d), d

    def constraint(x):
        return radius**q - float(np.sum(np.abs(x) ** q))

    def constraint_jac(x):
        return -q * np.abs(x) ** (q - 1.0) * np.sign(x)

    res = minimize(
        objective,
        x0,
        jac=True,
        method="SLSQP",
        constraints=[{"type": "ineq", "fun": constraint, "jac": constraint_jac}],
        options={"maxiter": 500, "ftol": 1e-16},
    )
    return np.asarray(res.x, dtype=np.float64)


def prox_first_order_residual(w: np.ndarray, x: np.ndarray, q: float, scale: float) -> float:
    """Worst-case violation of the prox optimality conditions.

    For q > 1 every minimizer satisfies x + scale*q*|x|^(q-1)*sign(x) = w
    entry-wise; for q = 1, nonzero entries satisfy |w - x| = scale and
    zero entries need |w| <= scale.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    if q == 1.0:
        nz = x != 0.0
        res_nz = np.abs(np.abs(w[nz] - x[nz]) - scale)
        res_z = np.maximum(np.abs(w[~nz]) - scale, 0.0)
        parts = np.concatenate([res_nz, res_z])
        return float(parts.max()) if parts.size else 0.0
    res = x + scale * q * np.abs(x) ** (q - 1.0) * np.sign(x) - w
    return float(np.max(np.abs(res))) if res.size else 0.0


def lasso_prox_gradient(
    preds: np.ndarray,
    y: np.ndarray,
    lam: float,
    max_iters: int = 200_000,
    tol: float = 1e-14,
) -> np.ndarray:
    """Proximal gradient descent on the multi-response lasso objective
    (1/n) sum_i ||y_i - sum_k gamma_k preds[i,k]||^2 + lam * ||gamma||_1.

    ``preds`` is stacked (n, K, m). Converges linearly on this strongly
    convex problem; serves as the reference for coordinate descent.
    """
    preds = np.asarray(preds, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = preds.shape[0]
    gram = np.einsum("ikm,ilm->kl", preds, preds) / n
    cross = np.einsum("im,ikm->k", y, preds) / n
    lip = 2.0 * float(np.linalg.eigvalsh(gram)[-1])
    if lip == 0.0:
        return np.zeros(preds.shape[1])
    step = 1.0 / lip
    gamma = np.zeros(preds.shape[1])
    for _ in range(max_iters):
        grad = 2.0 * (gram @ gamma - cross)
        z = gamma - step * grad
        new = np.sign(z) * np.maximum(np.abs(z) - step * lam, 0.0)
        if np.max(np.abs(new - gamma)) <= tol:
            gamma = new
            break
        gamma = new
    return gamma
