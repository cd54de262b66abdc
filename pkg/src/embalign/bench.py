"""Named verification suites run over seeded replications.

Each suite draws an independent world per replication (seeds derived
from the master seed through the documented stream-splitting), runs the
methods under comparison, and emits one JSON-able record per
(replication, method). The summary aggregates medians and renders a
pass/fail verdict for the suite's built-in criterion.

The comparison suites are calibrated desk-scale worlds:

* ``safety-isl``: network-truth world with adversarial unpaired
  responses; the enhanced method must not lose more than 5% against the
  baseline in median.
* ``enhance-isl``: low-rank linear-Gaussian world with informative
  unpaired responses; the enhanced method must win in at least 90% of
  seeds with at least 5% median improvement, and medians must be
  non-increasing in the unpaired sample size.
* ``mtl-efficiency``: multi-subject world; transfer with half the
  paired rows must match the baseline on the full set.
* ``lasso-recovery``: sparse aggregation over 20 sources; exact support
  recovery in 90% of seeds with the KKT certificate everywhere.
* ``gradcheck`` / ``projection-oracle``: numeric verification of
  gradients, projections and proximal steps against independent
  oracles.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import PairedDataset, UnpairedResponses
from .diagnostics import run_diagnostics
from .errors import DomainError
from .isl import IslArchitectures, fit_isl
from .mtl import estimate_sigma, fit_mtl, fit_weights_lasso, lasso_penalty_rate, predict_mtl
from .nn import (
    Activation,
    MlpParams,
    forward_batch,
    loss_and_grad,
    lq_norm,
    project_lq_ball,
    prox_lq,
)
from .oracles import (
    central_difference_grad,
    project_l1_bruteforce,
    project_lq_slsqp,
    prox_first_order_residual,
)
from .rng import derive_key, stream
from .train import Architecture, TheoryRate, TrainConfig, fit_baseline
from .world import (
    Adversarial,
    MlpTruth,
    MultiSubjectSpec,
    WorldSpec,
    generate,
    heldout_truth_mse,
    random_linear_truth,
)

__all__ = ["SUITES", "SuiteResult", "run_suite", "run_replication", "bootstrap_median_se"]

_LEAKY = Activation.leaky_relu(0.9)

ISL_ARCHS = IslArchitectures(
    inverse=Architecture((64, 64, 32), _LEAKY),
    augmented=Architecture((64, 32), _LEAKY),
    residual=Architecture((64, 32), _LEAKY),
)
FIT_ARCH = Architecture((64, 32), _LEAKY)
TRUTH_ARCH = Architecture((24, 12), _LEAKY)

SAFETY_SIGMA = 0.3
ENHANCE_SIGMA = 0.4
ENHANCE_SINGULAR = (0.8,)
MTL_SIGMA = 0.2
MTL_GAMMA_STAR = (0.7, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
LASSO_GAMMA_STAR = (0.9, -0.7) + (0.0,) * 18
LASSO_CONSTANT = 5.0
GRAD_TOL = 1e-5
PROJ_TOL = 1e-6
PROX_TOL = 1e-8


def _fit_cfg(seed: int, epochs: int) -> TrainConfig:
    return TrainConfig(
        q=2.0,
        lambda_mode=TheoryRate(0.003),
        epochs=epochs,
        batch_size=128,
        learning_rate=0.3,
        lr_decay=0.98,
        seed=seed,
        val_fraction=0.2,
        patience=5,
    )


def _safety_isl(rep_seed: int, index: int) -> list[dict]:
    spec = WorldSpec(
        32, 16, MlpTruth(TRUTH_ARCH), sigma=SAFETY_SIGMA,
        unpaired=Adversarial(3.0), seed=derive_key(rep_seed, "world"),
    )
    world = generate(spec, 1000, 10_000, 400)
    cfg = _fit_cfg(derive_key(rep_seed, "fit"), epochs=45)
    base = fit_baseline(world.paired, ISL_ARCHS.augmented, cfg)
    isl = fit_isl(world.paired, world.unpaired, ISL_ARCHS, cfg)
    common = {"suite": "safety-isl", "seed": index}
    return [
        {**common, "method": "baseline", "test_mse": heldout_truth_mse(base.predict, world)},
        {**common, "method": "isl", "test_mse": heldout_truth_mse(isl.predict, world),
         "n_unpaired": world.unpaired.n,
         "diagnostics": run_diagnostics(world, isl, n_mc=1000).to_dict()},
    ]


def _enhance_isl(rep_seed: int, index: int) -> list[dict]:
    truth = random_linear_truth(32, 16, ENHANCE_SINGULAR, seed=derive_key(rep_seed, "world"))
    spec = WorldSpec(32, 16, truth, sigma=ENHANCE_SIGMA, seed=derive_key(rep_seed, "world"))
    world = generate(spec, 500, 5000, 400)
    cfg = _fit_cfg(derive_key(rep_seed, "fit"), epochs=60)
    base = fit_baseline(world.paired, ISL_ARCHS.augmented, cfg)
    common = {"suite": "enhance-isl", "seed": index}
    records = [
        {**common, "method": "baseline", "test_mse": heldout_truth_mse(base.predict, world)}
    ]
    for label, count in (("isl-n0", 0), ("isl-n1x", 500), ("isl-n10x", 5000)):
        sub = UnpairedResponses(world.unpaired.y[:count])
        model = fit_isl(world.paired, sub, ISL_ARCHS, cfg)
        rec = {
            **common, "method": label, "n_unpaired": count,
            "test_mse": heldout_truth_mse(model.predict, world),
            "augmented_test_mse": heldout_truth_mse(
                lambda x: forward_batch(model.augmented, x), world
            ),
        }
        if label == "isl-n10x":
            rec["diagnostics"] = run_diagnostics(world, model, n_mc=1000).to_dict()
        records.append(rec)
    return records


def _mtl_efficiency(rep_seed: int, index: int) -> list[dict]:
    sub = MultiSubjectSpec(8, 2, MTL_GAMMA_STAR, residual_scale=0.05)
    spec = WorldSpec(
        32, 16, MlpTruth(TRUTH_ARCH), sigma=MTL_SIGMA, subjects=sub,
        seed=derive_key(rep_seed, "world"),
    )
    world = generate(spec, 1000, 0, 400)
    half = PairedDataset(world.paired.x[:500], world.paired.y[:500])
    cfg = _fit_cfg(derive_key(rep_seed, "fit"), epochs=45)
    base = fit_baseline(world.paired, FIT_ARCH, cfg)
    mtl = fit_mtl(half, world.bank, FIT_ARCH, cfg, lasso_constant=1.0)
    common = {"suite": "mtl-efficiency", "seed": index}
    return [
        {**common, "method": "baseline-n1000", "test_mse": heldout_truth_mse(base.predict, world),
         "n_paired": 1000},
        {**common, "method": "mtl-n500", "n_paired": 500,
         "test_mse": heldout_truth_mse(lambda x: predict_mtl(mtl, world.bank, x), world),
         "gamma_nonzeros": int(np.count_nonzero(mtl.gamma)), "sigma_hat": mtl.sigma_hat,
         "diagnostics": run_diagnostics(world, n_mc=1000).to_dict()},
    ]


def _lasso_recovery(rep_seed: int, index: int) -> list[dict]:
    sub = MultiSubjectSpec(20, 2, LASSO_GAMMA_STAR, residual_scale=0.0)
    spec = WorldSpec(
        16, 32, MlpTruth(TRUTH_ARCH), sigma=MTL_SIGMA, subjects=sub,
        seed=derive_key(rep_seed, "world"),
    )
    world = generate(spec, 2000, 0, 100)
    sigma = estimate_sigma(world.paired, world.bank)
    lam = lasso_penalty_rate(sigma.value, 20, 2000, LASSO_CONSTANT)
    result = fit_weights_lasso(world.paired, world.bank, lam)
    support = sorted(int(i) for i in np.nonzero(result.gamma)[0])
    return [{
        "suite": "lasso-recovery", "seed": index, "method": "lasso",
        "lambda": lam, "sigma_hat": sigma.value, "support": support,
        "support_exact": support == [0, 1],
        "kkt_violation": result.kkt_violation,
        "kkt_ok": result.kkt_violation <= 1e-10,
    }]


_GRAD_ACTIVATIONS = (Activation.tanh(), Activation.leaky_relu(0.3), Activation.relu())


def gradcheck_case(seed: int) -> tuple[MlpParams, np.ndarray, np.ndarray]:
    """One random small network (<= 200 parameters) with a data batch
    whose pre-activations stay clear of the activation kinks, so central
    differences are valid."""
    activation = _GRAD_ACTIVATIONS[seed % len(_GRAD_ACTIVATIONS)]
    for attempt in range(200):
        rng = stream(seed, "gradcheck", attempt)
        d = int(rng.integers(2, 6))
        h = int(rng.integers(2, 7))
        m = int(rng.integers(1, 5))
        depth = int(rng.integers(1, 3))
        dims = [d] + [h] * depth + [m]
        if sum(dims[i + 1] * dims[i] for i in range(len(dims) - 1)) > 200:
            continue
        layers = [
            0.7 * rng.standard_normal((dims[i + 1], dims[i])) for i in range(len(dims) - 1)
        ]
        net = MlpParams(layers, activation)
        x = rng.standard_normal((8, d)) * 1.5
        y = rng.standard_normal((8, m))
        if activation.kind == "tanh" or _kink_margin(net, x) > 1e-3:
            return net, x, y
    raise DomainError(f"could not build a kink-safe gradcheck case for seed {seed}")


def _kink_margin(net: MlpParams, x: np.ndarray) -> float:
    act, h, margin = net.activation, x, math.inf
    for w in net.layers[:-1]:
        z = h @ w.T
        margin = min(margin, float(np.min(np.abs(z))))
        h = act.apply(z)
    return margin


def _gradcheck(rep_seed: int, index: int) -> list[dict]:
    net, x, y = gradcheck_case(rep_seed)
    _, grads = loss_and_grad(net, x, y)
    fd = central_difference_grad(net, x, y, h=1e-5)
    worst = 0.0
    for g, gf in zip(grads, fd):
        denom = max(float(np.max(np.abs(gf))), 1e-8)
        worst = max(worst, float(np.max(np.abs(g - gf))) / denom)
    return [{
        "suite": "gradcheck", "seed": index, "method": "analytic-vs-central-diff",
        "activation": net.activation.kind, "n_params": net.total_params,
        "max_rel_err": worst, "ok": worst <= GRAD_TOL,
    }]


def _projection_oracle(rep_seed: int, index: int) -> list[dict]:
    rng = stream(rep_seed, "projection")
    worst_proj = 0.0
    for q in (1.0, 1.5, 2.0):
        n = int(rng.integers(2, 9))
        w = rng.standard_normal(n) * 2.0
        radius = float(rng.uniform(0.3, 1.5))
        ours = project_lq_ball(w[None, :], q, radius).ravel()
        if q == 1.0:
            oracle = project_l1_bruteforce(w, radius)
        else:
            oracle = project_lq_slsqp(w, q, radius)
        worst_proj = max(worst_proj, float(np.linalg.norm(ours - oracle)))
    worst_prox = 0.0
    for q in (1.0, 1.5, 2.0):
        w = rng.standard_normal(6) * 2.0
        scale = float(rng.uniform(0.0, 2.0))
        x = prox_lq(w, q, scale)
        worst_prox = max(worst_prox, prox_first_order_residual(w, x, q, scale))
        assert lq_norm(project_lq_ball(w[None, :], q, 1.0), q) <= 1.0 + 1e-9
    return [{
        "suite": "projection-oracle", "seed": index, "method": "kkt-vs-bruteforce",
        "max_projection_distance": worst_proj, "max_prox_residual": worst_prox,
        "ok": worst_proj <= PROJ_TOL and worst_prox <= PROX_TOL,
    }]


SUITES = {
    "safety-isl": _safety_isl,
    "enhance-isl": _enhance_isl,
    "mtl-efficiency": _mtl_efficiency,
    "lasso-recovery": _lasso_recovery,
    "gradcheck": _gradcheck,
    "projection-oracle": _projection_oracle,
}

DEFAULT_SEEDS = {"gradcheck": 50, "projection-oracle": 50}


@dataclass
class SuiteResult:
    suite: str
    records: list[dict]
    summary: dict


def run_replication(suite: str, master_seed: int, index: int) -> list[dict]:
    """Run one replication; its seed mixes the replication index into
    the master seed."""
    if suite not in SUITES:
        raise DomainError(f"unknown suite {suite!r}; available: {sorted(SUITES)}")
    rep_seed = derive_key(master_seed, suite, index)
    return SUITES[suite](rep_seed, index)


def bootstrap_median_se(values: np.ndarray, reps: int = 500, seed: int = 0) -> float:
    """Standard error of the median by seeded resampling."""
    values = np.asarray(values, dtype=np.float64)
    rng = stream(seed, "median-bootstrap")
    medians = [
        float(np.median(values[rng.integers(0, values.size, values.size)]))
        for _ in range(reps)
    ]
    return float(np.std(medians, ddof=1))


def _median_by_method(records: list[dict]) -> dict[str, float]:
    methods: dict[str, list[float]] = {}
    for rec in records:
        if "test_mse" in rec:
            methods.setdefault(rec["method"], []).append(rec["test_mse"])
    return {m: float(np.median(v)) for m, v in methods.items()}


def _summarize(suite: str, records: list[dict], elapsed: float) -> dict:
    summary: dict = {"suite": suite, "replications": 0, "elapsed_seconds": elapsed}
    seeds = {rec["seed"] for rec in records}
    summary["replications"] = len(seeds)
    medians = _median_by_method(records)
    if medians:
        summary["median_test_mse"] = medians

    if suite == "safety-isl":
        ratio = medians["isl"] / medians["baseline"]
        summary["criterion"] = "median isl test mse <= 1.05 * median baseline test mse"
        summary["median_ratio"] = ratio
        summary["verdict"] = "pass" if ratio <= 1.05 else "fail"
    elif suite == "enhance-isl":
        base = {r["seed"]: r["test_mse"] for r in records if r["method"] == "baseline"}
        enhanced = {r["seed"]: r["test_mse"] for r in records if r["method"] == "isl-n10x"}
        wins = float(np.mean([enhanced[s] < base[s] for s in base]))
        improvement = 1.0 - medians["isl-n10x"] / medians["baseline"]
        summary["criterion"] = (
            "isl with 10x unpaired beats baseline in >= 90% of seeds with >= 5% "
            "median improvement; medians non-increasing in unpaired size"
        )
        summary["win_fraction"] = wins
        summary["median_improvement"] = improvement
        summary["verdict"] = "pass" if wins >= 0.9 and improvement >= 0.05 else "fail"
        ladder = []
        for method in ("isl-n0", "isl-n1x", "isl-n10x"):
            vals = np.array([r["test_mse"] for r in records if r["method"] == method])
            ladder.append((method, float(np.median(vals)), bootstrap_median_se(vals)))
        monotone = all(
            ladder[i + 1][1] <= ladder[i][1] + ladder[i][2] for i in range(len(ladder) - 1)
        )
        summary["unpaired_ladder"] = [
            {"method": m, "median": med, "median_se": se} for m, med, se in ladder
        ]
        summary["monotone_verdict"] = "pass" if monotone else "fail"
    elif suite == "mtl-efficiency":
        ratio = medians["mtl-n500"] / medians["baseline-n1000"]
        summary["criterion"] = (
            "median mtl test mse at n=500 <= median baseline test mse at n=1000"
        )
        summary["median_ratio"] = ratio
        summary["verdict"] = "pass" if ratio <= 1.0 else "fail"
    elif suite == "lasso-recovery":
        exact = float(np.mean([r["support_exact"] for r in records]))
        kkt = all(r["kkt_ok"] for r in records)
        summary["criterion"] = (
            "exact support recovery in >= 90% of seeds and KKT certificate in all"
        )
        summary["exact_recovery_fraction"] = exact
        summary["kkt_all_ok"] = kkt
        summary["verdict"] = "pass" if exact >= 0.9 and kkt else "fail"
    elif suite == "gradcheck":
        worst = max(r["max_rel_err"] for r in records)
        summary["criterion"] = f"max relative gradient error <= {GRAD_TOL}"
        summary["max_rel_err"] = worst
        summary["verdict"] = "pass" if worst <= GRAD_TOL else "fail"
    elif suite == "projection-oracle":
        worst_proj = max(r["max_projection_distance"] for r in records)
        worst_prox = max(r["max_prox_residual"] for r in records)
        summary["criterion"] = (
            f"projection within {PROJ_TOL} of oracle; prox first-order residual <= {PROX_TOL}"
        )
        summary["max_projection_distance"] = worst_proj
        summary["max_prox_residual"] = worst_prox
        summary["verdict"] = "pass" if worst_proj <= PROJ_TOL and worst_prox <= PROX_TOL else "fail"
    return summary


def run_suite(
    suite: str, seeds: int | None = None, jobs: int = 1, master_seed: int = 0
) -> SuiteResult:
    """Run ``seeds`` replications (possibly across worker processes) and
    summarize. Records are ordered by replication seed regardless of
    completion order."""
    if suite not in SUITES:
        raise DomainError(f"unknown suite {suite!r}; available: {sorted(SUITES)}")
    if seeds is None:
        seeds = DEFAULT_SEEDS.get(suite, 20)
    if seeds < 1:
        raise DomainError("need at least one replication")
    start = time.perf_counter()
    records: list[dict] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = pool.map(
                run_replication, [suite] * seeds, [master_seed] * seeds, range(seeds)
            )
            for chunk in chunks:
                records.extend(chunk)
    else:
        for index in range(seeds):
            records.extend(run_replication(suite, master_seed, index))
    elapsed = time.perf_counter() - start
    return SuiteResult(suite, records, _summarize(suite, records, elapsed))
