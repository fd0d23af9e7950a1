"""Command line front end: simulate, fit, select-lambda, benchmark.

Each command reads a flat key = value config file, optionally overridden
by --seed / --lambda / --out, validates every path up front, and writes
its artifacts into the output directory with fixed names.  All file
output is deterministic per (config, seed); wall-clock timings only ever
go to stdout so reruns produce byte-identical files.

Exit codes: 0 success, 2 schema or config error, 3 numerical failure,
4 fit finished without meeting the convergence tolerance.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .errors import (
    ConfigError,
    DivisionGuardError,
    GradientUnavailableError,
    IntegrationDivergedError,
    InvalidGridError,
    InvalidParameterError,
    NoFeasibleStartError,
    OutOfSpanError,
    SchemaError,
    SingularOperatorError,
    UnderdeterminedSmootherError,
)
from .models import (
    EXPONENTIAL_TRUE_PARAMS,
    EXPONENTIAL_TRUE_X0,
    LV_TRUE_PARAMS,
    LV_TRUE_X0,
    TF_DEFAULT_TIMES,
    get_model,
    model_names,
    tf_truth,
)
from .optimizer import OptimizerConfig
from .pipeline import LAMBDA_GRID_DEFAULT, FitConfig, fit_model, lambda_path
from .simulate import add_noise, integrate_rk4, mix_seed, mle_fit

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3
EXIT_NONCONVERGED = 4

NUMERICAL_ERRORS = (
    SingularOperatorError,
    NoFeasibleStartError,
    IntegrationDivergedError,
    DivisionGuardError,
    UnderdeterminedSmootherError,
    OutOfSpanError,
    GradientUnavailableError,
    np.linalg.LinAlgError,
    FloatingPointError,
)

# Generating systems for the named benchmark scenarios.
SCENARIOS = {
    "exponential": {
        "params": tuple(EXPONENTIAL_TRUE_PARAMS),
        "x0": tuple(EXPONENTIAL_TRUE_X0),
        "t_start": 0.0,
        "t_end": 2.0,
        "n": 10,
        "sigma": 0.25,
    },
    "lotka-volterra": {
        "params": tuple(LV_TRUE_PARAMS),
        "x0": tuple(LV_TRUE_X0),
        "t_start": 0.0,
        "t_end": 30.0,
        "n": 35,
        "sigma": 0.1,
    },
}


def _parse_mu(text: str):
    if text == "gcv":
        return "gcv"
    return io.PARSERS["float"](text)


def _parse_model(text: str) -> str:
    names = tuple(model_names())
    if text not in names:
        raise ConfigError(f"expected one of {names}, got {text!r}")
    return text


SIMULATE_SCHEMA = {
    "model": (_parse_model, io.REQUIRED),
    "params": ("floats", None),
    "x0": ("floats", None),
    "t_start": ("float", None),
    "t_end": ("float", None),
    "n": ("int", None),
    "sigma": ("float", 0.0),
    "seed": ("int", 0),
    "replicate": ("int", 0),
    "substeps": ("int", 20),
    "genes": ("int", None),
    "name": ("str", "data"),
    "out": ("str", "."),
}

FIT_SCHEMA = {
    "data": ("str", io.REQUIRED),
    "model": (_parse_model, io.REQUIRED),
    "lambda": ("float", None),
    "lambda_grid": ("floats", tuple(LAMBDA_GRID_DEFAULT)),
    "sigma2": ("floats", None),
    "mu": (_parse_mu, "gcv"),
    "degree": ("int", 3),
    "stencil": (io.parse_choice("central", "halved"), "central"),
    "n_starts": ("int", 10),
    "max_iters": ("int", 500),
    "box": ("floats", None),
    "covariance": ("bool", True),
    "clamp": ("bool", None),
    "seed": ("int", 0),
    "out": ("str", "."),
}

SELECT_SCHEMA = {k: v for k, v in FIT_SCHEMA.items() if k != "lambda"}

BENCHMARK_SCHEMA = {
    "model": (io.parse_choice("exponential", "lotka-volterra"), io.REQUIRED),
    "params": ("floats", None),
    "x0": ("floats", None),
    "t_start": ("float", None),
    "t_end": ("float", None),
    "n": ("int", None),
    "sigma": ("float", None),
    "replicates": ("int", 100),
    "lambda": ("float", 100.0),
    "sigma2": ("float", None),
    "stencil": (io.parse_choice("central", "halved"), "central"),
    "n_starts": ("int", 10),
    "max_iters": ("int", 500),
    "mle_substeps": ("int", 10),
    "mle_n_starts": ("int", 10),
    "substeps": ("int", 20),
    "threads": ("int", None),
    "seed": ("int", 0),
    "out": ("str", "."),
}


def _prepare_out(cfg, config_dir: Path) -> Path:
    out = Path(cfg["out"])
    if not out.is_absolute():
        out = config_dir / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_data_path(cfg, config_dir: Path) -> Path:
    data = Path(cfg["data"])
    if not data.is_absolute():
        data = config_dir / data
    return data


def _scenario_value(cfg, key, model_name):
    if cfg[key] is not None:
        return cfg[key]
    scenario = SCENARIOS.get(model_name)
    if scenario is None or key not in scenario:
        raise ConfigError(f"key {key!r} is required for model {model_name!r}")
    return scenario[key]


def worker_count(requested: int | None) -> int:
    """Requested workers capped by ODEKERNEL_THREADS; default 1."""
    cap = os.environ.get("ODEKERNEL_THREADS")
    try:
        limit = int(cap) if cap else None
    except ValueError:
        raise ConfigError(f"ODEKERNEL_THREADS must be an integer, got {cap!r}")
    count = 1 if requested is None else max(1, requested)
    if limit is not None:
        count = max(1, min(count, limit))
    return count


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg, config_dir: Path) -> int:
    out = _prepare_out(cfg, config_dir)
    name = cfg["name"]
    model_name = cfg["model"]
    seed = cfg["seed"]
    if model_name == "tf-network":
        for key in ("params", "x0", "t_start", "t_end", "n"):
            if cfg[key] is not None:
                raise ConfigError(
                    f"key {key!r} not accepted for tf-network: the generating "
                    "system is drawn from the seed"
                )
        genes = cfg["genes"] if cfg["genes"] is not None else 17
        times = np.asarray(TF_DEFAULT_TIMES)
        gene_params, _, x0, fieldfn = tf_truth(genes, seed)
        truth = integrate_rk4(fieldfn, None, x0, times, cfg["substeps"])
        param_names = [
            f"{kind}_g{g + 1:02d}"
            for g in range(genes)
            for kind in ("theta", "beta1", "beta2", "beta3")
        ]
        param_values = list(gene_params.reshape(-1))
    else:
        if cfg["genes"] is not None:
            raise ConfigError("key 'genes' only applies to tf-network")
        model = get_model(model_name)
        params = np.asarray(_scenario_value(cfg, "params", model_name), dtype=float)
        x0 = np.asarray(_scenario_value(cfg, "x0", model_name), dtype=float)
        t_start = _scenario_value(cfg, "t_start", model_name)
        t_end = _scenario_value(cfg, "t_end", model_name)
        n = _scenario_value(cfg, "n", model_name)
        if params.size != model.n_params:
            raise ConfigError(
                f"model {model_name!r} takes {model.n_params} parameters, "
                f"got {params.size}"
            )
        if x0.size != model.m:
            raise ConfigError(
                f"model {model_name!r} has {model.m} states, got {x0.size} x0 values"
            )
        times = np.linspace(t_start, t_end, n)
        truth = integrate_rk4(model, params, x0, times, cfg["substeps"])
        param_names = list(model.param_names)
        param_values = list(params)
    obs = add_noise(times, truth, cfg["sigma"], mix_seed(seed, cfg["replicate"]))
    io.write_dataset(out / f"{name}.csv", times, obs.y)
    io.write_dataset(out / f"{name}.truth.csv", times, truth)
    x0_names = [f"x0_{j + 1}" for j in range(truth.shape[0])]
    io.write_params(
        out / f"{name}.params.csv",
        param_names + x0_names,
        param_values + list(np.atleast_1d(x0)),
    )
    print(f"wrote {name}.csv, {name}.truth.csv, {name}.params.csv to {out}")
    print(f"model={model_name} n={times.size} sigma={io.fmt(cfg['sigma'])} seed={seed}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit and select-lambda


def _build_fit_model(cfg, obs):
    model_name = cfg["model"]
    if model_name == "tf-network":
        # Latent activity is a concentration; flooring it at zero prunes
        # the mirrored and sign-flipped optima, so it is on unless asked.
        clamp = True if cfg["clamp"] is None else cfg["clamp"]
        t_min = float(obs.times[0])
        t_max = float(obs.times[-1])
        return get_model(
            model_name,
            genes=obs.m,
            t_min=t_min,
            t_max=t_max,
            clamp_nonnegative=clamp,
        )
    if cfg["clamp"] is not None:
        raise ConfigError("key 'clamp' only applies to tf-network")
    model = get_model(model_name)
    if model.m != obs.m:
        raise SchemaError(
            f"model {model_name!r} has {model.m} states but the data has {obs.m}"
        )
    return model


def _fit_config(cfg, model, lam) -> FitConfig:
    box = None
    if cfg["box"] is not None:
        if len(cfg["box"]) != 2:
            raise ConfigError("key 'box': expected 'lo,hi'")
        lo, hi = cfg["box"]
        if not lo < hi:
            raise ConfigError("key 'box': need lo < hi")
        box = ((lo, hi),) * model.n_params
    optimizer = OptimizerConfig(
        n_starts=cfg["n_starts"],
        max_iters=cfg["max_iters"],
        seed=cfg["seed"],
        box=box,
    )
    sigma2 = cfg["sigma2"]
    if sigma2 is not None and len(sigma2) == 1:
        sigma2 = sigma2[0]
    return FitConfig(
        lam=lam,
        lambda_grid=tuple(cfg["lambda_grid"]),
        sigma2=sigma2,
        mu=cfg["mu"],
        degree=cfg["degree"],
        stencil=cfg["stencil"],
        optimizer=optimizer,
        covariance=cfg["covariance"],
    )


def cmd_fit(cfg, config_dir: Path) -> int:
    out = _prepare_out(cfg, config_dir)
    obs = io.read_dataset(_resolve_data_path(cfg, config_dir))
    model = _build_fit_model(cfg, obs)
    fitcfg = _fit_config(cfg, model, cfg["lambda"])
    result = fit_model(obs, model, fitcfg)
    report = io.fit_report_text(result, obs.n)
    (out / "report.txt").write_text(report, encoding="utf-8")
    io.write_estimates(out / "estimates.csv", result)
    io.write_fitted_states(out / "fitted_states.csv", obs.times, result.states)
    if model.latent is not None:
        dense = np.linspace(float(obs.times[0]), float(obs.times[-1]), 200)
        eta = model.latent.normalized(result.estimates, dense)
        io.write_latent(out / "latent.csv", dense, eta)
    sys.stdout.write(report)
    print(f"artifacts written to {out}")
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def cmd_select_lambda(cfg, config_dir: Path) -> int:
    out = _prepare_out(cfg, config_dir)
    obs = io.read_dataset(_resolve_data_path(cfg, config_dir))
    model = _build_fit_model(cfg, obs)
    if not cfg["lambda_grid"]:
        raise ConfigError("key 'lambda_grid': grid must be non-empty")
    if any(lam <= 0 for lam in cfg["lambda_grid"]):
        raise ConfigError("key 'lambda_grid': all values must be > 0")
    fitcfg = _fit_config(cfg, model, None)
    rows, winner = lambda_path(obs, model, fitcfg)
    io.write_lambda_path(out / "lambda_path.csv", rows)
    selected = rows[winner]
    (out / "selected_lambda.txt").write_text(
        f"{io.fmt(selected.lam)}\n", encoding="utf-8"
    )
    print("lambda        objective     df_total      aic")
    for i, row in enumerate(rows):
        marker = " <- selected" if i == winner else ""
        print(
            f"{row.lam:<13g} {row.objective:<13.6g} "
            f"{row.df_total:<13.6g} {row.aic:.6g}{marker}"
        )
    print(f"artifacts written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark


def _benchmark_replicate(payload: dict, replicate: int):
    """One replicate: simulate, fit both ways, time both. Pickle-friendly."""
    model = get_model(payload["model"])
    times = np.linspace(payload["t_start"], payload["t_end"], payload["n"])
    truth = integrate_rk4(
        model, payload["params"], payload["x0"], times, payload["substeps"]
    )
    obs = add_noise(
        times, truth, payload["sigma"], mix_seed(payload["seed"], replicate)
    )
    fitcfg = FitConfig(
        lam=payload["lambda"],
        sigma2=payload["sigma2"],
        stencil=payload["stencil"],
        optimizer=OptimizerConfig(
            n_starts=payload["n_starts"], max_iters=payload["max_iters"]
        ),
        covariance=False,
    )
    start = time.perf_counter()
    rkhs = fit_model(obs, model, fitcfg)
    rkhs_time = time.perf_counter() - start
    start = time.perf_counter()
    mle = mle_fit(
        obs,
        model,
        sigma2=payload["sigma2"],
        config=OptimizerConfig(n_starts=payload["mle_n_starts"]),
        substeps=payload["mle_substeps"],
    )
    mle_time = time.perf_counter() - start
    return (
        replicate,
        np.asarray(rkhs.estimates, dtype=float),
        rkhs_time,
        np.asarray(mle.params, dtype=float),
        mle_time,
    )


def _summarize_benchmark(out, param_names, truth, results, timings) -> None:
    rows = []
    per_method = {"rkhs": [], "mle": []}
    for rep in sorted(results):
        for method in ("rkhs", "mle"):
            est = results[rep][method]
            sq = (est - truth) ** 2
            per_method[method].append(sq)
            for i, name in enumerate(param_names):
                rows.append((rep, method, name, est[i], sq[i]))
    io.write_benchmark_replicates(out / "benchmark_replicates.csv", rows)
    table = []
    for method in ("rkhs", "mle"):
        sq = np.asarray(per_method[method])
        sd = sq.std(axis=0, ddof=1) if sq.shape[0] > 1 else np.zeros(sq.shape[1])
        table.append((method, sq.mean(axis=0), sd))
    io.write_benchmark_mse(out / "benchmark_mse.csv", param_names, table)
    print(f"{len(results)} replicates summarized")
    header = "method " + " ".join(f"mse_{n}" for n in param_names)
    print(header)
    for method, mse, _ in table:
        print(method + "  " + "  ".join(f"{v:.3g}" for v in mse))
    rkhs_med = float(np.median(timings["rkhs"]))
    mle_med = float(np.median(timings["mle"]))
    print(f"median seconds per fit: rkhs {rkhs_med:.4g}, mle {mle_med:.4g}")
    if rkhs_med > 0:
        print(f"speedup (mle / rkhs median): {mle_med / rkhs_med:.3g}x")


def cmd_benchmark(cfg, config_dir: Path) -> int:
    out = _prepare_out(cfg, config_dir)
    model_name = cfg["model"]
    if cfg["replicates"] < 1:
        raise ConfigError("key 'replicates': need at least 1")
    params = np.asarray(_scenario_value(cfg, "params", model_name), dtype=float)
    x0 = np.asarray(_scenario_value(cfg, "x0", model_name), dtype=float)
    sigma = float(_scenario_value(cfg, "sigma", model_name))
    sigma2 = cfg["sigma2"]
    if sigma2 is None:
        sigma2 = sigma * sigma if sigma > 0 else 1.0
    model = get_model(model_name)
    if params.size != model.n_params or x0.size != model.m:
        raise ConfigError(f"params/x0 sizes do not match model {model_name!r}")
    payload = {
        "model": model_name,
        "params": tuple(params),
        "x0": tuple(x0),
        "t_start": float(_scenario_value(cfg, "t_start", model_name)),
        "t_end": float(_scenario_value(cfg, "t_end", model_name)),
        "n": int(_scenario_value(cfg, "n", model_name)),
        "sigma": sigma,
        "sigma2": float(sigma2),
        "lambda": cfg["lambda"],
        "stencil": cfg["stencil"],
        "n_starts": cfg["n_starts"],
        "max_iters": cfg["max_iters"],
        "mle_substeps": cfg["mle_substeps"],
        "mle_n_starts": cfg["mle_n_starts"],
        "substeps": cfg["substeps"],
        "seed": cfg["seed"],
    }
    truth = params
    names = list(model.param_names)
    results = {}
    timings = {"rkhs": [], "mle": []}
    workers = worker_count(cfg["threads"])
    reps = range(cfg["replicates"])
    try:
        if workers > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_benchmark_replicate, payload, r) for r in reps]
                for future in futures:
                    rep, rk_est, rk_t, ml_est, ml_t = future.result()
                    results[rep] = {"rkhs": rk_est, "mle": ml_est}
                    timings["rkhs"].append(rk_t)
                    timings["mle"].append(ml_t)
        else:
            for r in reps:
                rep, rk_est, rk_t, ml_est, ml_t = _benchmark_replicate(payload, r)
                results[rep] = {"rkhs": rk_est, "mle": ml_est}
                timings["rkhs"].append(rk_t)
                timings["mle"].append(ml_t)
    except KeyboardInterrupt:
        if results:
            print(f"interrupted; flushing {len(results)} completed replicates")
            _summarize_benchmark(out, names, truth, results, timings)
        return 130
    _summarize_benchmark(out, names, truth, results, timings)
    print(f"artifacts written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {
    "simulate": (cmd_simulate, SIMULATE_SCHEMA),
    "fit": (cmd_fit, FIT_SCHEMA),
    "select-lambda": (cmd_select_lambda, SELECT_SCHEMA),
    "benchmark": (cmd_benchmark, BENCHMARK_SCHEMA),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odekernel",
        description="Gradient-matching ODE parameter estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", required=True, help="flat key = value file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        if command in ("fit", "benchmark"):
            p.add_argument(
                "--lambda",
                dest="lam",
                type=float,
                default=None,
                help="override the regularization weight",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler, schema = COMMANDS[args.command]
    try:
        raw = io.read_config(args.config)
        if args.seed is not None:
            raw["seed"] = repr(args.seed)
        if args.out is not None:
            raw["out"] = args.out
        if getattr(args, "lam", None) is not None:
            raw["lambda"] = repr(args.lam)
        cfg = io.coerce_config(raw, schema, context=args.command)
        config_dir = Path(args.config).resolve().parent
        return handler(cfg, config_dir)
    except (ConfigError, SchemaError, InvalidGridError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
