"""Accuracy and speed comparison on the Lotka-Volterra system.

Runs the benchmark command once per noise level and prints a combined
per-parameter MSE table for the gradient-matching estimator and the
solver-in-the-loop MLE, plus the median wall-clock speedup.  Artifacts
for each noise level land in <out>/sigma_<value>/.
"""

import argparse
import csv
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from odekernel import cli

PARAM_NAMES = ("theta1", "beta1", "theta2", "beta2")


def run_level(out_dir: Path, sigma: float, ns) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = out_dir / "bench.cfg"
    lines = [
        "model = lotka-volterra",
        f"sigma = {sigma}",
        f"replicates = {ns.replicates}",
        f"lambda = {ns.lam}",
        f"seed = {ns.seed}",
        f"mle_substeps = {ns.mle_substeps}",
        f"threads = {ns.jobs}",
        "out = .",
    ]
    cfg.write_text("\n".join(lines) + "\n", encoding="utf-8")
    code = cli.main(["benchmark", "--config", str(cfg)])
    if code != 0:
        raise SystemExit(code)
    table = {}
    with open(out_dir / "benchmark_mse.csv", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            table[row["method"]] = {
                name: float(row[f"mse_{name}"]) for name in PARAM_NAMES
            }
    return table


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--sigmas", type=float, nargs="+", default=[0.1, 0.25], help="noise levels"
    )
    parser.add_argument("--replicates", type=int, default=100)
    parser.add_argument("--lam", type=float, default=100.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--mle-substeps", type=int, default=10)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("benchmark_runs"))
    ns = parser.parse_args(argv)

    results = {}
    for sigma in ns.sigmas:
        print(f"--- sigma = {sigma} ({ns.replicates} replicates) ---")
        results[sigma] = run_level(ns.out / f"sigma_{sigma}", sigma, ns)
        print()

    width = 12
    header = "sigma  method " + "".join(f"{name:>{width}}" for name in PARAM_NAMES)
    print(header)
    for sigma, table in results.items():
        for method in ("rkhs", "mle"):
            cells = "".join(
                f"{table[method][name]:>{width}.5f}" for name in PARAM_NAMES
            )
            print(f"{sigma:<6g} {method:<6}{cells}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
