"""Strict JSON run configuration.

Every object is validated against an explicit key set; an unknown key
aborts parsing and names the offending key. Configs drive the CLI: the
method to fit, architectures, trainer settings, a world spec for
synthetic runs, and input/output paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .isl import IslArchitectures
from .nn import Activation
from .train import Architecture, FixedPenalty, TheoryRate, TrainConfig
from .world import (
    Adversarial,
    Informative,
    LinearGaussianTruth,
    MlpTruth,
    MultiSubjectSpec,
    WorldSpec,
    random_linear_truth,
)

__all__ = [
    "RunConfig",
    "load_run_config",
    "parse_run_config",
    "parse_world",
    "world_to_dict",
    "parse_train",
    "parse_architecture",
]

METHODS = ("baseline", "isl", "mtl")


@dataclass
class RunConfig:
    method: str = "baseline"
    seed: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    arch: Architecture = field(default_factory=lambda: Architecture((512, 256)))
    isl_archs: IslArchitectures = field(default_factory=IslArchitectures)
    lasso_lambda: float | None = None
    lasso_constant: float | None = None
    world: WorldSpec | None = None
    paths: dict[str, str] = field(default_factory=dict)


def _require_keys(obj, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key {key!r}")
    for key in required:
        if key not in obj:
            raise ConfigError(f"{where}: missing required key {key!r}")


def _number(obj, key: str, where: str, default=None):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}: missing required key {key!r}")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
    return value


def parse_activation(value, where: str) -> Activation:
    if isinstance(value, str):
        if value == "relu":
            return Activation.relu()
        if value == "tanh":
            return Activation.tanh()
        raise ConfigError(f"{where}: unknown activation {value!r}")
    _require_keys(value, {"kind", "slope"}, {"kind"}, where)
    kind = value["kind"]
    if kind == "leaky_relu":
        return Activation.leaky_relu(_number(value, "slope", where, default=0.1))
    if kind in ("relu", "tanh"):
        return parse_activation(kind, where)
    raise ConfigError(f"{where}: unknown activation kind {kind!r}")


def _activation_to_json(act: Activation):
    if act.kind == "leaky_relu":
        return {"kind": "leaky_relu", "slope": act.slope}
    return act.kind


def parse_architecture(obj, where: str) -> Architecture:
    _require_keys(obj, {"hidden", "activation"}, {"hidden"}, where)
    hidden = obj["hidden"]
    if not isinstance(hidden, list) or not all(isinstance(h, int) for h in hidden):
        raise ConfigError(f"{where}.hidden: expected a list of integers")
    act = parse_activation(obj.get("activation", "relu"), f"{where}.activation")
    return Architecture(tuple(hidden), act)


def _arch_to_json(arch: Architecture) -> dict:
    return {"hidden": list(arch.hidden), "activation": _activation_to_json(arch.activation)}


def parse_train(obj, where: str = "train") -> TrainConfig:
    allowed = {
        "q", "lambda", "epochs", "batch_size", "learning_rate", "lr_decay",
        "seed", "val_fraction", "patience", "constraint_radius", "tol",
        "enforce_constraint",
    }
    _require_keys(obj, allowed, set(), where)
    defaults = TrainConfig()
    mode = defaults.lambda_mode
    if "lambda" in obj:
        lam = obj["lambda"]
        _require_keys(lam, {"mode", "c", "grid", "value"}, {"mode"}, f"{where}.lambda")
        if lam["mode"] == "theory":
            grid = lam.get("grid")
            if grid is not None:
                if not isinstance(grid, list) or not grid:
                    raise ConfigError(f"{where}.lambda.grid: expected a non-empty list")
                grid = tuple(float(g) for g in grid)
            mode = TheoryRate(float(_number(lam, "c", f"{where}.lambda", default=0.1)), grid)
        elif lam["mode"] == "fixed":
            mode = FixedPenalty(float(_number(lam, "value", f"{where}.lambda")))
        else:
            raise ConfigError(f"{where}.lambda.mode: expected 'theory' or 'fixed'")
    enforce = obj.get("enforce_constraint", defaults.enforce_constraint)
    if not isinstance(enforce, bool):
        raise ConfigError(f"{where}.enforce_constraint: expected a boolean")
    return TrainConfig(
        q=float(_number(obj, "q", where, defaults.q)),
        lambda_mode=mode,
        epochs=int(_number(obj, "epochs", where, defaults.epochs)),
        batch_size=int(_number(obj, "batch_size", where, defaults.batch_size)),
        learning_rate=float(_number(obj, "learning_rate", where, defaults.learning_rate)),
        lr_decay=float(_number(obj, "lr_decay", where, defaults.lr_decay)),
        seed=int(_number(obj, "seed", where, defaults.seed)),
        val_fraction=float(_number(obj, "val_fraction", where, defaults.val_fraction)),
        patience=int(_number(obj, "patience", where, defaults.patience)),
        constraint_radius=float(_number(obj, "constraint_radius", where, defaults.constraint_radius)),
        tol=float(_number(obj, "tol", where, defaults.tol)),
        enforce_constraint=enforce,
    )


def _matrix(value, where: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError(f"{where}: expected a matrix (list of equal-length rows)")
    return arr


def parse_world(obj, where: str = "world") -> WorldSpec:
    _require_keys(
        obj, {"d", "m", "sigma", "seed", "truth", "unpaired", "subjects"},
        {"d", "m", "sigma", "truth"}, where,
    )
    d = int(_number(obj, "d", where))
    m = int(_number(obj, "m", where))
    sigma = float(_number(obj, "sigma", where))
    seed = int(_number(obj, "seed", where, default=0))

    t = obj["truth"]
    _require_keys(
        t, {"kind", "a", "cov_x", "singular_values", "hidden", "activation", "q"},
        {"kind"}, f"{where}.truth",
    )
    if t["kind"] == "linear_gaussian":
        if t.get("a") is not None:
            a = _matrix(t["a"], f"{where}.truth.a")
            cov = (
                _matrix(t["cov_x"], f"{where}.truth.cov_x")
                if t.get("cov_x") is not None
                else np.eye(d)
            )
            truth = LinearGaussianTruth(a, cov)
        else:
            sv = t.get("singular_values")
            if not isinstance(sv, list) or not sv:
                raise ConfigError(
                    f"{where}.truth: linear_gaussian needs 'a' or 'singular_values'"
                )
            truth = random_linear_truth(d, m, tuple(float(s) for s in sv), seed)
    elif t["kind"] == "mlp":
        hidden = t.get("hidden", [])
        if not isinstance(hidden, list) or not all(isinstance(h, int) for h in hidden):
            raise ConfigError(f"{where}.truth.hidden: expected a list of integers")
        act = parse_activation(t.get("activation", "relu"), f"{where}.truth.activation")
        truth = MlpTruth(Architecture(tuple(hidden), act), float(t.get("q", 2.0)))
    else:
        raise ConfigError(f"{where}.truth.kind: expected 'linear_gaussian' or 'mlp'")

    unpaired = Informative()
    if "unpaired" in obj:
        u = obj["unpaired"]
        _require_keys(u, {"kind", "shift"}, {"kind"}, f"{where}.unpaired")
        if u["kind"] == "adversarial":
            unpaired = Adversarial(float(_number(u, "shift", f"{where}.unpaired", default=3.0)))
        elif u["kind"] != "informative":
            raise ConfigError(f"{where}.unpaired.kind: expected 'informative' or 'adversarial'")

    subjects = None
    if obj.get("subjects") is not None:
        s = obj["subjects"]
        _require_keys(
            s, {"k", "s_star", "gamma_star", "residual_scale"},
            {"k", "s_star", "gamma_star"}, f"{where}.subjects",
        )
        gamma = s["gamma_star"]
        if not isinstance(gamma, list):
            raise ConfigError(f"{where}.subjects.gamma_star: expected a list")
        subjects = MultiSubjectSpec(
            k=int(_number(s, "k", f"{where}.subjects")),
            s_star=int(_number(s, "s_star", f"{where}.subjects")),
            gamma_star=tuple(float(g) for g in gamma),
            residual_scale=float(_number(s, "residual_scale", f"{where}.subjects", default=0.0)),
        )

    return WorldSpec(d, m, truth, sigma, unpaired, subjects, seed)


def world_to_dict(spec: WorldSpec) -> dict:
    if isinstance(spec.truth, LinearGaussianTruth):
        truth = {
            "kind": "linear_gaussian",
            "a": spec.truth.a.tolist(),
            "cov_x": spec.truth.cov_x.tolist(),
        }
    else:
        truth = {
            "kind": "mlp",
            "hidden": list(spec.truth.arch.hidden),
            "activation": _activation_to_json(spec.truth.arch.activation),
            "q": spec.truth.q,
        }
    unpaired = (
        {"kind": "informative"}
        if isinstance(spec.unpaired, Informative)
        else {"kind": "adversarial", "shift": spec.unpaired.shift}
    )
    subjects = None
    if spec.subjects is not None:
        subjects = {
            "k": spec.subjects.k,
            "s_star": spec.subjects.s_star,
            "gamma_star": list(spec.subjects.gamma_star),
            "residual_scale": spec.subjects.residual_scale,
        }
    return {
        "d": spec.d,
        "m": spec.m,
        "sigma": spec.sigma,
        "seed": spec.seed,
        "truth": truth,
        "unpaired": unpaired,
        "subjects": subjects,
    }


def parse_run_config(obj) -> RunConfig:
    _require_keys(
        obj,
        {"method", "seed", "train", "arch", "isl_archs", "mtl", "world", "paths"},
        set(),
        "config",
    )
    cfg = RunConfig()
    method = obj.get("method", "baseline")
    if method not in METHODS:
        raise ConfigError(f"config.method: expected one of {METHODS}, got {method!r}")
    cfg.method = method
    if "seed" in obj:
        cfg.seed = int(_number(obj, "seed", "config"))
    if "train" in obj:
        cfg.train = parse_train(obj["train"])
    if "arch" in obj:
        cfg.arch = parse_architecture(obj["arch"], "arch")
    if "isl_archs" in obj:
        a = obj["isl_archs"]
        _require_keys(a, {"inverse", "augmented", "residual"},
                      {"inverse", "augmented", "residual"}, "isl_archs")
        cfg.isl_archs = IslArchitectures(
            inverse=parse_architecture(a["inverse"], "isl_archs.inverse"),
            augmented=parse_architecture(a["augmented"], "isl_archs.augmented"),
            residual=parse_architecture(a["residual"], "isl_archs.residual"),
        )
    elif "arch" in obj:
        cfg.isl_archs = IslArchitectures.uniform(cfg.arch)
    if "mtl" in obj:
        t = obj["mtl"]
        _require_keys(t, {"lasso_lambda", "lasso_constant"}, set(), "mtl")
        if t.get("lasso_lambda") is not None:
            cfg.lasso_lambda = float(_number(t, "lasso_lambda", "mtl"))
        if t.get("lasso_constant") is not None:
            cfg.lasso_constant = float(_number(t, "lasso_constant", "mtl"))
    if "world" in obj and obj["world"] is not None:
        cfg.world = parse_world(obj["world"])
    if "paths" in obj:
        paths = obj["paths"]
        allowed = {"x", "y", "unpaired_y", "bank_dir", "out_dir",
                   "model", "pred", "truth", "labels", "centroids"}
        _require_keys(paths, allowed, set(), "paths")
        for key, value in paths.items():
            if not isinstance(value, str):
                raise ConfigError(f"paths.{key}: expected a string")
        cfg.paths = dict(paths)
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(obj)
