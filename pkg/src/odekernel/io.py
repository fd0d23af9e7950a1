"""File formats for the command line tools: datasets, configs, reports.

Every artifact the CLI reads or writes is produced here so the layouts
stay in one place (FORMATS.md documents them).  Floats are serialized
with repr, the shortest form that round-trips, so identical inputs yield
byte-identical files.
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .data import ObservationSet, observations
from .errors import ConfigError, SchemaError


def fmt(value) -> str:
    return repr(float(value))


# ---------------------------------------------------------------------------
# dataset CSV


def dataset_header(m: int, p: int = 0) -> list[str]:
    cols = ["time"] + [f"state_{j + 1}" for j in range(m)]
    cols += [f"input_{k + 1}" for k in range(p)]
    return cols


def write_dataset(path, times, y, inputs=None) -> None:
    """CSV with header time,state_1,..,state_m[,input_1,..]; one row per time."""
    times = np.asarray(times, dtype=float)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    u = None if inputs is None else np.atleast_2d(np.asarray(inputs, dtype=float))
    p = 0 if u is None else u.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset_header(y.shape[0], p))
        for i in range(times.size):
            row = [fmt(times[i])] + [fmt(v) for v in y[:, i]]
            if u is not None:
                row += [fmt(v) for v in u[:, i]]
            writer.writerow(row)


def _parse_header(header: list[str], path) -> tuple[int, int]:
    if not header or header[0] != "time":
        raise SchemaError(f"{path}: first column must be 'time'")
    m = 0
    k = 1
    while k < len(header) and header[k] == f"state_{m + 1}":
        m += 1
        k += 1
    if m == 0:
        raise SchemaError(f"{path}: no state_1 column after 'time'")
    p = 0
    while k < len(header) and header[k] == f"input_{p + 1}":
        p += 1
        k += 1
    if k != len(header):
        raise SchemaError(f"{path}: unexpected column {header[k]!r}")
    return m, p


def read_dataset(path) -> ObservationSet:
    """Parse and validate a dataset CSV; schema violations raise SchemaError."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError(f"{path}: no such file")
    except UnicodeDecodeError:
        raise SchemaError(f"{path}: not valid UTF-8")
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    m, p = _parse_header(rows[0], path)
    width = 1 + m + p
    data = np.empty((len(rows) - 1, width))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise SchemaError(
                f"{path}: row {r} has {len(row)} fields, header has {width}"
            )
        for c, cell in enumerate(row):
            if cell.strip() == "":
                raise SchemaError(f"{path}: row {r} has a missing value")
            try:
                v = float(cell)
            except ValueError:
                raise SchemaError(f"{path}: row {r} field {c + 1} is not a number")
            if not np.isfinite(v):
                raise SchemaError(f"{path}: row {r} contains a non-finite value")
            data[r - 2, c] = v
    if data.shape[0] < 3:
        raise SchemaError(f"{path}: need at least 3 observation rows")
    times = data[:, 0]
    if not np.all(np.diff(times) > 0):
        raise SchemaError(f"{path}: time column must be strictly increasing")
    y = data[:, 1 : 1 + m].T
    u = data[:, 1 + m :].T if p else None
    return observations(times, y, u)


def write_params(path, names, values) -> None:
    """Generating parameters as name,value rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "value"])
        for name, value in zip(names, values):
            writer.writerow([name, fmt(value)])


# ---------------------------------------------------------------------------
# flat key = value config files

_KEY_RE = re.compile(r"^[a-z][a-z0-9_]*$")


def read_config(path) -> dict:
    """Flat key = value file; '#' lines are comments; duplicates rejected."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file")
    except UnicodeDecodeError:
        raise ConfigError(f"{path}: not valid UTF-8")
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not _KEY_RE.match(key):
            raise ConfigError(f"{path}:{lineno}: bad key {key!r}")
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def _parse_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}")
    if not np.isfinite(v):
        raise ConfigError(f"expected a finite number, got {text!r}")
    return v


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}")


def _parse_floats(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",") if p.strip() != ""]
    if not parts:
        raise ConfigError("expected a comma-separated list of numbers")
    return tuple(_parse_float(p) for p in parts)


def _parse_str(text: str) -> str:
    return text


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected true/false, got {text!r}")


def parse_choice(*options):
    def parse(text: str):
        if text not in options:
            raise ConfigError(f"expected one of {options}, got {text!r}")
        return text

    return parse


PARSERS = {
    "float": _parse_float,
    "int": _parse_int,
    "floats": _parse_floats,
    "str": _parse_str,
    "bool": _parse_bool,
}


REQUIRED = object()


def coerce_config(raw: dict, schema: dict, context: str = "config") -> dict:
    """Apply a {key: (parser, default)} schema; unknown keys are an error.

    A default of REQUIRED marks the key mandatory.  Parsers are either
    names from PARSERS or callables.
    """
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{context}: unknown keys: {', '.join(unknown)}")
    out = {}
    for key, (parser, default) in schema.items():
        if key not in raw:
            if default is REQUIRED:
                raise ConfigError(f"{context}: missing required key {key!r}")
            out[key] = default
            continue
        fn = PARSERS[parser] if isinstance(parser, str) else parser
        try:
            out[key] = fn(raw[key])
        except ConfigError as exc:
            raise ConfigError(f"{context}: key {key!r}: {exc}")
    return out


# ---------------------------------------------------------------------------
# fit artifacts


def write_estimates(path, result) -> None:
    """name,estimate,stderr,ci95_lower,ci95_upper; blanks when unavailable."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "estimate", "stderr", "ci95_lower", "ci95_upper"])
        for i, name in enumerate(result.param_names):
            est = fmt(result.estimates[i])
            if result.wald is not None and result.wald[i].available:
                w = result.wald[i]
                writer.writerow([name, est, fmt(w.stderr), fmt(w.lower), fmt(w.upper)])
            else:
                writer.writerow([name, est, "", "", ""])


def write_fitted_states(path, times, states) -> None:
    write_dataset(path, times, states)


def write_latent(path, times, eta) -> None:
    times = np.asarray(times, dtype=float)
    eta = np.asarray(eta, dtype=float)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", "eta_hat"])
        for i in range(times.size):
            writer.writerow([fmt(times[i]), fmt(eta[i])])


def write_lambda_path(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda", "objective", "df_total", "aic"])
        for row in rows:
            writer.writerow(
                [fmt(row.lam), fmt(row.objective), fmt(row.df_total), fmt(row.aic)]
            )


def fit_report_text(result, n_obs: int) -> str:
    """Human-readable fit summary; field order is part of the format."""
    lines = [
        f"model: {result.model_name}",
        f"observations: {n_obs}",
        f"states: {len(result.df)}",
        f"lambda: {fmt(result.lam)}",
        f"objective: {fmt(result.objective)}",
        f"aic: {fmt(result.aic)}",
        f"df_per_equation: {' '.join(fmt(v) for v in result.df)}",
        f"df_total: {fmt(float(np.sum(result.df)))}",
        f"sigma2: {' '.join(fmt(v) for v in result.sigma2)}",
        f"converged: {'yes' if result.converged else 'no'}",
        f"function_evaluations: {result.optimization.n_evals}",
        f"optimizer_mode: {result.optimization.mode}",
        "",
        "parameter estimates (95% Wald intervals):",
    ]
    for i, name in enumerate(result.param_names):
        est = fmt(result.estimates[i])
        if result.wald is not None and result.wald[i].available:
            w = result.wald[i]
            lines.append(
                f"  {name} = {est}  stderr {fmt(w.stderr)}"
                f"  [{fmt(w.lower)}, {fmt(w.upper)}]"
            )
        else:
            lines.append(f"  {name} = {est}  (interval unavailable)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# benchmark artifacts


def write_benchmark_replicates(path, rows) -> None:
    """Long-format per-replicate results: replicate,method,name,estimate,sq_error."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["replicate", "method", "name", "estimate", "sq_error"])
        for rep, method, name, estimate, sq in rows:
            writer.writerow([rep, method, name, fmt(estimate), fmt(sq)])


def write_benchmark_mse(path, param_names, table) -> None:
    """Wide per-method table: method, then mse_<name>,sd_<name> per parameter."""
    header = ["method"]
    for name in param_names:
        header += [f"mse_{name}", f"sd_{name}"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for method, mse, sd in table:
            row = [method]
            for i in range(len(param_names)):
                row += [fmt(mse[i]), fmt(sd[i])]
            writer.writerow(row)
