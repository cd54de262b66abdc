"""Command-line harness.

Subcommands: ``fit`` (train a model from embedding files), ``predict``
(map an embedding file through a fitted model), ``eval`` (score
predictions against truth), ``gen-world`` (materialize a synthetic
world), ``bench`` (run a named verification suite over seeded
replications), and ``import-csv`` (convert delimited text to the
embedding format).

Exit codes: 0 success, 1 usage/config error, 2 data-format error,
3 numeric failure. Errors are written to stderr as one JSON line;
stdout carries only results. Seed precedence: an explicit ``seed`` in
the config file wins over the ``ALIGN_SEED`` environment variable,
which wins over ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_run_config, world_to_dict
from .data import PairedDataset, UnpairedResponses
from .errors import ConfigError, DataFormatError, EmbalignError, NumericError
from .formats import read_embeddings, read_model, write_embeddings, write_model
from .isl import fit_isl
from .metrics import evaluate
from .mtl import MtlLambdas, MtlModel, SourceBank, fit_mtl, predict_mtl
from .nn import forward_batch
from .train import fit_baseline
from .bench import DEFAULT_SEEDS, SUITES, run_suite
from .world import generate

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors map to exit 1, not argparse's 2
        raise ConfigError(message)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _print_result(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _resolve_seed(config_seed: int | None, flag_seed: int | None) -> int:
    if config_seed is not None:
        return config_seed
    env = os.environ.get("ALIGN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"ALIGN_SEED must be an integer, got {env!r}") from exc
    return flag_seed if flag_seed is not None else 0


def _out_dir(cfg_paths: dict, flag_out: str | None, command: str) -> Path:
    out = cfg_paths.get("out_dir") or flag_out
    if not out:
        raise ConfigError(f"{command}: provide --out or paths.out_dir in the config")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_paired(cfg: RunConfig) -> PairedDataset:
    for key in ("x", "y"):
        if key not in cfg.paths:
            raise ConfigError(f"fit: paths.{key} is required")
    return PairedDataset(read_embeddings(cfg.paths["x"]), read_embeddings(cfg.paths["y"]))


def _load_bank(bank_dir: str) -> tuple[SourceBank, list[str]]:
    files = sorted(Path(bank_dir).glob("*.mdl"))
    if not files:
        raise ConfigError(f"no .mdl files found in bank directory {bank_dir}")
    return SourceBank([read_model(f) for f in files], [f.name for f in files]), [
        str(f) for f in files
    ]


def _cmd_fit(args) -> int:
    cfg = load_run_config(args.config)
    seed = _resolve_seed(cfg.seed, args.seed)
    train = replace(cfg.train, seed=seed)
    out = _out_dir(cfg.paths, args.out, "fit")
    data = _load_paired(cfg)
    manifest: dict = {"method": cfg.method, "seed": seed, "files": {}, "notes": []}
    reports: dict = {}

    if cfg.method == "baseline":
        model = fit_baseline(data, cfg.arch, train)
        write_model(out / "model.mdl", model.params)
        manifest["files"]["model"] = "model.mdl"
        reports["baseline"] = model.report.to_dict()
        traces = {"baseline": model.report.objective_trace}
    elif cfg.method == "isl":
        if "unpaired_y" in cfg.paths:
            unpaired = UnpairedResponses(read_embeddings(cfg.paths["unpaired_y"]))
        else:
            unpaired = UnpairedResponses.empty(data.out_dim)
        model = fit_isl(data, unpaired, cfg.isl_archs, train)
        if model.n_unpaired == 0:
            manifest["notes"].append(
                "no unpaired responses: the augmented stage reduces to the baseline "
                "objective (the ISL(0) configuration)"
            )
        for name in ("inverse", "augmented", "residual"):
            write_model(out / f"{name}.mdl", getattr(model, name))
            manifest["files"][name] = f"{name}.mdl"
            reports[name] = model.reports[name].to_dict()
        manifest["lambdas"] = {
            "inverse": model.lambdas.inverse,
            "augmented": model.lambdas.augmented,
            "residual": model.lambdas.residual,
        }
        manifest["counts"] = {"paired": model.n_paired, "unpaired": model.n_unpaired}
        traces = {k: model.reports[k].objective_trace for k in model.reports}
    else:
        if "bank_dir" not in cfg.paths:
            raise ConfigError("fit: paths.bank_dir is required for the mtl method")
        bank, _ = _load_bank(cfg.paths["bank_dir"])
        model = fit_mtl(
            data, bank, cfg.arch, train,
            lasso_lambda=cfg.lasso_lambda, lasso_constant=cfg.lasso_constant,
        )
        write_model(out / "residual.mdl", model.residual)
        manifest["files"]["residual"] = "residual.mdl"
        manifest["bank"] = {
            "dir": cfg.paths["bank_dir"],
            "digest": f"{model.bank_digest:016x}",
            "labels": bank.labels,
        }
        manifest["gamma"] = model.gamma.tolist()
        manifest["lambdas"] = {
            "weights": model.lambdas.weights, "residual": model.lambdas.residual,
        }
        manifest["sigma_hat"] = model.sigma_hat
        manifest["notes"].extend(model.notes)
        reports["residual"] = model.reports["residual"].to_dict()
        traces = {"residual": model.reports["residual"].objective_trace}

    _dump_json(out / "manifest.json", manifest)
    _dump_json(out / "report.json", reports)
    if not args.no_figures:
        _trace_figure(traces, out / "training.png")
    _print_result({"status": "ok", "out_dir": str(out), "method": cfg.method, "seed": seed})
    return 0


def _trace_figure(traces: dict[str, list[float]], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for name, trace in traces.items():
        ax.plot(range(1, len(trace) + 1), trace, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("penalized training objective")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _cmd_predict(args) -> int:
    x = read_embeddings(args.x)
    model_path = Path(args.model)
    if model_path.suffix == ".json":
        manifest = json.loads(model_path.read_text())
        base = model_path.parent
        method = manifest.get("method")
        if method == "baseline":
            pred = forward_batch(read_model(base / manifest["files"]["model"]), x)
        elif method == "isl":
            aug = read_model(base / manifest["files"]["augmented"])
            res = read_model(base / manifest["files"]["residual"])
            pred = forward_batch(aug, x) + forward_batch(res, x)
        elif method == "mtl":
            bank_dir = args.bank_dir or manifest["bank"]["dir"]
            bank, _ = _load_bank(bank_dir)
            model = MtlModel(
                gamma=np.asarray(manifest["gamma"], dtype=np.float64),
                residual=read_model(base / manifest["files"]["residual"]),
                bank_digest=int(manifest["bank"]["digest"], 16),
                lambdas=MtlLambdas(**manifest["lambdas"]),
                sigma_hat=manifest["sigma_hat"],
            )
            pred = predict_mtl(model, bank, x)
        else:
            raise ConfigError(f"{args.model}: unknown manifest method {method!r}")
    else:
        pred = forward_batch(read_model(model_path), x)
    write_embeddings(args.out, pred)
    _print_result({"status": "ok", "rows": int(pred.shape[0]), "out": args.out})
    return 0


def _read_labels(path: str) -> np.ndarray:
    try:
        labels = np.loadtxt(path, dtype=np.int64, ndmin=1)
    except ValueError as exc:
        raise DataFormatError(f"{path}: labels must be one integer per line ({exc})") from exc
    return labels


def _cmd_eval(args) -> int:
    pred = read_embeddings(args.pred)
    truth = read_embeddings(args.truth)
    labels = _read_labels(args.labels) if args.labels else None
    centroids = read_embeddings(args.centroids) if args.centroids else None
    seed = _resolve_seed(None, args.seed)
    report = evaluate(
        pred, truth, labels, centroids,
        bootstrap_reps=args.bootstrap, seed=seed,
    )
    payload = report.to_dict()
    if args.distractors is not None:
        if labels is None or centroids is None:
            raise ConfigError("eval: --distractors needs --labels and --centroids")
        from .metrics import topk_accuracy_distractors

        payload["topk_accuracy_distractors"] = {
            "n_distractors": args.distractors,
            "seed": seed,
            "accuracy": {
                str(k): topk_accuracy_distractors(
                    pred, labels, centroids, k, args.distractors, seed
                )
                for k in (1, 3)
                if k <= args.distractors + 1
            },
        }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(out, payload)
    if not args.no_figures:
        from .plots import eval_figure

        eval_figure(report, out.with_suffix(".png"))
    _print_result(payload)
    return 0


def _cmd_gen_world(args) -> int:
    cfg = load_run_config(args.config)
    if cfg.world is None:
        raise ConfigError("gen-world: the config has no world section")
    seed = _resolve_seed(cfg.seed, args.seed)
    spec = cfg.world
    if "seed" not in json.loads(Path(args.config).read_text()).get("world", {}):
        spec = replace(spec, seed=seed)
    out = _out_dir(cfg.paths, args.out, "gen-world")
    world = generate(spec, args.n, args.n_unpaired, args.n_test)

    files = {}
    for name, values in (
        ("paired_x", world.paired.x), ("paired_y", world.paired.y),
        ("unpaired_y", world.unpaired.y),
        ("test_x", world.test.x), ("test_y", world.test.y),
    ):
        write_embeddings(out / f"{name}.emb", values)
        files[name] = f"{name}.emb"
    manifest = {
        "world": world_to_dict(spec),
        "counts": {"paired": args.n, "unpaired": args.n_unpaired, "test": args.n_test},
        "files": files,
    }
    if world.bank is not None:
        bank_dir = out / "bank"
        bank_dir.mkdir(exist_ok=True)
        for label, model in zip(world.bank.labels, world.bank.models):
            write_model(bank_dir / f"{label}.mdl", model)
        manifest["bank"] = {
            "dir": "bank",
            "labels": world.bank.labels,
            "digest": f"{world.bank.digest():016x}",
            "gamma_star": world.bank_info.gamma_star.tolist(),
            "support": world.bank_info.support,
            "residual_scale": world.bank_info.residual_scale,
            "c_aux": world.bank_info.c_aux,
        }
    _dump_json(out / "manifest.json", manifest)
    _print_result({"status": "ok", "out_dir": str(out), "seed": spec.seed})
    return 0


def _cmd_bench(args) -> int:
    seed = _resolve_seed(None, args.seed)
    result = run_suite(args.suite, seeds=args.seeds, jobs=args.jobs, master_seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(rec, sort_keys=True) for rec in result.records]
    (out / f"{args.suite}_records.jsonl").write_text("\n".join(lines) + "\n")
    _dump_json(out / f"{args.suite}_summary.json", result.summary)
    if not args.no_figures:
        from .plots import suite_figure

        suite_figure(args.suite, result.records, result.summary, out / f"{args.suite}.png")
    _print_result(result.summary)
    return 0


def _cmd_import_csv(args) -> int:
    try:
        values = np.loadtxt(
            args.input, delimiter=args.delimiter, skiprows=1 if args.skip_header else 0,
            ndmin=2,
        )
    except ValueError as exc:
        raise DataFormatError(f"{args.input}: could not parse delimited text ({exc})") from exc
    write_embeddings(args.out, values)
    _print_result({"status": "ok", "rows": int(values.shape[0]), "cols": int(values.shape[1])})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="embalign", description=__doc__)
    parser.add_argument("--version", action="version", version=f"embalign {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="train a model from embedding files")
    fit.add_argument("--config", required=True)
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--out", default=None)
    fit.add_argument("--no-figures", action="store_true")
    fit.set_defaults(func=_cmd_fit)

    predict = sub.add_parser("predict", help="run a fitted model over an embedding file")
    predict.add_argument("--model", required=True, help=".mdl file or a fit manifest.json")
    predict.add_argument("--x", required=True)
    predict.add_argument("--out", required=True)
    predict.add_argument("--bank-dir", default=None)
    predict.set_defaults(func=_cmd_predict)

    ev = sub.add_parser("eval", help="score predictions against truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--labels", default=None)
    ev.add_argument("--centroids", default=None)
    ev.add_argument("--bootstrap", type=int, default=0)
    ev.add_argument("--distractors", type=int, default=None,
                    help="rank each row against its class plus this many sampled distractors")
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--out", required=True)
    ev.add_argument("--no-figures", action="store_true")
    ev.set_defaults(func=_cmd_eval)

    gen = sub.add_parser("gen-world", help="materialize a synthetic world")
    gen.add_argument("--config", required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--n-unpaired", type=int, default=0)
    gen.add_argument("--n-test", type=int, default=0)
    gen.add_argument("--out", default=None)
    gen.set_defaults(func=_cmd_gen_world)

    bench = sub.add_parser("bench", help="run a verification suite")
    bench.add_argument("--suite", required=True, choices=sorted(SUITES))
    bench.add_argument("--seeds", type=int, default=None,
                       help=f"replications (default 20; {DEFAULT_SEEDS})")
    bench.add_argument("--jobs", type=int, default=1)
    bench.add_argument("--seed", type=int, default=None, help="master seed")
    bench.add_argument("--out", required=True)
    bench.add_argument("--no-figures", action="store_true")
    bench.set_defaults(func=_cmd_bench)

    imp = sub.add_parser("import-csv", help="convert delimited text to an embedding file")
    imp.add_argument("--in", dest="input", required=True)
    imp.add_argument("--out", required=True)
    imp.add_argument("--delimiter", default=",")
    imp.add_argument("--skip-header", action="store_true")
    imp.set_defaults(func=_cmd_import_csv)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, argparse.ArgumentError) as exc:
        _emit_error("config", exc)
        return 1
    except DataFormatError as exc:
        _emit_error("data-format", exc)
        return 2
    except NumericError as exc:
        _emit_error("numeric", exc)
        return 3
    except EmbalignError as exc:
        _emit_error("config", exc)
        return 1
    except OSError as exc:
        _emit_error("io", exc)
        return 2


def _emit_error(kind: str, exc: Exception) -> None:
    sys.stderr.write(
        json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}) + "\n"
    )


if __name__ == "__main__":
    sys.exit(main())
