"""Multistart nonlinear conjugate gradient with numerical derivatives.

The minimizer is Polak-Ribiere+ (beta clipped at zero) with an Armijo
backtracking line search and a periodic steepest-descent restart.  All
derivatives are finite differences: objectives here are cheap linear-solve
pipelines, not analytic formulas.  Objective values of +inf act as soft
rejections; the line search simply backtracks away from them.

Everything is deterministic given the config seed: starts are drawn from
one PCG64 stream and runs are pure numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GradientUnavailableError, NoFeasibleStartError


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 500
    grad_step: float = 1e-6
    grad_tol: float = 1e-6
    f_tol: float = 1e-10
    armijo_c1: float = 1e-4
    max_backtracks: int = 40
    max_expansions: int = 10
    restart_every: int = 0  # 0 means max(10, dim)
    n_starts: int = 10
    box: tuple | None = None  # per-parameter (lo, hi); None means [0, 1]
    seed: int = 0


@dataclass(frozen=True)
class StartRecord:
    """One start's outcome.

    converged distinguishes runs that stopped on their own (gradient
    below tolerance, relative progress stalled, or no descent step left)
    from runs cut off by the iteration budget or stuck at an infeasible
    point; reason carries which of those happened.
    """

    x0: np.ndarray
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    grad_norm: float
    trace: tuple  # accepted objective values, x0's first
    reason: str = "budget"  # gradient|stall|linesearch|wall|infeasible|budget


@dataclass(frozen=True)
class OptimizationReport:
    x: np.ndarray
    value: float
    converged: bool
    best_start: int
    starts: tuple
    n_evals: int
    mode: str = "joint"
    blocks: tuple | None = None

    @property
    def start_values(self) -> np.ndarray:
        return np.array([s.value for s in self.starts])


class _CountedObjective:
    def __init__(self, f):
        self.f = f
        self.n_evals = 0

    def __call__(self, x):
        self.n_evals += 1
        return float(self.f(x))


def numerical_gradient(f, x, step: float = 1e-6, f0: float | None = None) -> np.ndarray:
    """Central differences with one-sided fallback at +inf walls.

    Needs a finite f(x); a coordinate whose both sided values are +inf
    raises GradientUnavailableError for that coordinate.
    """
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))
        xp = x.copy()
        xp[k] += h
        xm = x.copy()
        xm[k] -= h
        fp = f(xp)
        fm = f(xm)
        if np.isfinite(fp) and np.isfinite(fm):
            g[k] = (fp - fm) / (2.0 * h)
        elif np.isfinite(fp) or np.isfinite(fm):
            if f0 is None:
                f0 = f(x)
            if not np.isfinite(f0):
                raise GradientUnavailableError(
                    "gradient requested at an infeasible point", coordinate=k
                )
            g[k] = (fp - f0) / h if np.isfinite(fp) else (f0 - fm) / h
        else:
            raise GradientUnavailableError(
                f"objective is +inf on both sides of coordinate {k}", coordinate=k
            )
    return g


def fd_hessian(f, x, step: float = 1e-4, grad_step: float = 1e-6) -> np.ndarray:
    """Symmetrized central differences of the numerical gradient."""
    x = np.asarray(x, dtype=float)
    k = x.size
    H = np.empty((k, k))
    for i in range(k):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        gp = numerical_gradient(f, xp, step=grad_step)
        gm = numerical_gradient(f, xm, step=grad_step)
        H[:, i] = (gp - gm) / (2.0 * h)
    return 0.5 * (H + H.T)


def _line_search(f, x, fx, slope, d, cfg, alpha0=1.0):
    """Armijo backtracking with quadratic interpolation, then doubling.

    Infinite trial values fall back to plain halving.  Returns
    (alpha, f_new) or None if no acceptable step exists.
    """
    alpha = alpha0
    f_new = None
    first = True
    for _ in range(cfg.max_backtracks + 1):
        candidate = f(x + alpha * d)
        if candidate <= fx + cfg.armijo_c1 * alpha * slope:
            f_new = candidate
            break
        if np.isfinite(candidate):
            denom = 2.0 * (candidate - fx - slope * alpha)
            trial = -slope * alpha * alpha / denom if denom > 0 else 0.5 * alpha
            alpha = min(max(trial, 0.1 * alpha), 0.5 * alpha)
        else:
            alpha *= 0.5
        first = False
    if f_new is None:
        return None
    if first:
        for _ in range(cfg.max_expansions):
            trial = 2.0 * alpha
            candidate = f(x + trial * d)
            if candidate <= fx + cfg.armijo_c1 * trial * slope and candidate < f_new:
                alpha, f_new = trial, candidate
            else:
                break
    return alpha, f_new


def _cg_single(f, x0, cfg: OptimizerConfig) -> StartRecord:
    x = np.asarray(x0, dtype=float).copy()
    fx = f(x)
    trace = [fx]
    if not np.isfinite(fx):
        return StartRecord(
            x0=np.array(x0, dtype=float),
            x=x,
            value=np.inf,
            iterations=0,
            converged=False,
            grad_norm=np.inf,
            trace=tuple(trace),
            reason="infeasible",
        )
    restart = cfg.restart_every if cfg.restart_every > 0 else max(10, x.size)
    try:
        g = numerical_gradient(f, x, step=cfg.grad_step, f0=fx)
    except GradientUnavailableError:
        return StartRecord(
            x0=np.array(x0, dtype=float),
            x=x,
            value=fx,
            iterations=0,
            converged=False,
            grad_norm=np.inf,
            trace=tuple(trace),
            reason="infeasible",
        )
    d = -g
    iterations = 0
    stall = 0
    rescues = 0
    prev_decrease = None
    reason = "budget"
    for it in range(1, cfg.max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.grad_tol:
            reason = "gradient"
            break
        slope = float(g @ d)
        if slope >= 0.0:
            d = -g
            slope = -(gnorm**2)
        if prev_decrease is not None and prev_decrease > 0 and slope < 0:
            alpha0 = min(max(2.02 * prev_decrease / (-slope), 1e-8), 4.0)
        else:
            alpha0 = 1.0
        step = _line_search(f, x, fx, slope, d, cfg, alpha0=alpha0)
        if step is None and not np.array_equal(d, -g):
            d = -g
            slope = -(gnorm**2)
            step = _line_search(f, x, fx, slope, d, cfg)
        if step is None:
            reason = "linesearch"
            break
        alpha, f_new = step
        x_new = x + alpha * d
        try:
            g_new = numerical_gradient(f, x_new, step=cfg.grad_step, f0=f_new)
        except GradientUnavailableError:
            x, fx = x_new, f_new
            trace.append(fx)
            iterations = it
            reason = "wall"
            break
        beta = 0.0
        if it % restart != 0:
            denom = float(g @ g)
            if denom > 0:
                beta = max(0.0, float(g_new @ (g_new - g)) / denom)
        d = -g_new + beta * d
        decrease = fx - f_new
        prev_decrease = decrease
        x, fx, g = x_new, f_new, g_new
        trace.append(fx)
        iterations = it
        if decrease <= cfg.f_tol * max(1.0, abs(fx)):
            stall += 1
            if stall >= 2:
                # one fresh steepest-descent push before declaring a stall
                if rescues < 2:
                    rescues += 1
                    stall = 0
                    d = -g
                    prev_decrease = None
                else:
                    reason = "stall"
                    break
        else:
            stall = 0
    gnorm = float(np.linalg.norm(g))
    return StartRecord(
        x0=np.array(x0, dtype=float),
        x=x,
        value=float(fx),
        iterations=iterations,
        converged=reason in ("gradient", "stall", "linesearch"),
        grad_norm=gnorm,
        trace=tuple(trace),
        reason=reason,
    )


def _resolve_box(box, n_params):
    if box is None:
        box = ((0.0, 1.0),) * n_params
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    if len(box) == 1 and n_params > 1:
        box = box * n_params
    if len(box) != n_params:
        raise ValueError(f"box has {len(box)} entries for {n_params} parameters")
    return box


def sample_starts(n_starts: int, n_params: int, box, seed: int) -> np.ndarray:
    """Deterministic uniform starts in the per-parameter box."""
    box = _resolve_box(box, n_params)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    rng = np.random.default_rng(seed)
    return lo + rng.uniform(size=(n_starts, n_params)) * (hi - lo)


def minimize(f, n_params: int, config: OptimizerConfig | None = None, starts=None) -> OptimizationReport:
    """Multistart CG descent; the report keeps every start's record.

    starts overrides the sampled set entirely when given.  Raises
    NoFeasibleStartError when every start evaluates to +inf.
    """
    cfg = config or OptimizerConfig()
    counted = _CountedObjective(f)
    if starts is None:
        starts = sample_starts(cfg.n_starts, n_params, cfg.box, cfg.seed)
    else:
        starts = np.atleast_2d(np.asarray(starts, dtype=float))
    records = [_cg_single(counted, s, cfg) for s in starts]
    if all(not np.isfinite(r.value) for r in records):
        raise NoFeasibleStartError("every start evaluated to +inf")
    best = int(np.argmin([r.value for r in records]))
    return OptimizationReport(
        x=records[best].x.copy(),
        value=records[best].value,
        converged=records[best].converged,
        best_start=best,
        starts=tuple(records),
        n_evals=counted.n_evals,
    )


def detect_blocks(dependencies, n_params: int):
    """Connected components of the parameter/equation coupling graph.

    dependencies[j] is the set of parameter indices equation j reads.
    Returns a list of (params, equations) tuples, both sorted.
    """
    parent = list(range(n_params))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for deps in dependencies:
        deps = sorted(deps)
        for other in deps[1:]:
            union(deps[0], other)
    groups: dict[int, list[int]] = {}
    for p in range(n_params):
        groups.setdefault(find(p), []).append(p)
    blocks = []
    for root, params in sorted(groups.items(), key=lambda kv: min(kv[1])):
        eqs = [j for j, deps in enumerate(dependencies) if deps and find(min(deps)) == root]
        blocks.append((tuple(sorted(params)), tuple(sorted(eqs))))
    return blocks


def block_separated_fit(
    objective_factory,
    dependencies,
    n_params: int,
    config: OptimizerConfig | None = None,
    starts=None,
) -> OptimizationReport:
    """Fit each decoupled parameter block independently.

    objective_factory(equations) must return an objective over the full
    parameter vector that only reads the listed equations.  When the
    coupling graph is a single component this falls back to one joint
    minimize call.
    """
    cfg = config or OptimizerConfig()
    blocks = detect_blocks(dependencies, n_params)
    all_equations = tuple(range(len(dependencies)))
    if len(blocks) <= 1:
        report = minimize(objective_factory(all_equations), n_params, cfg, starts=starts)
        return replace(report, mode="joint", blocks=None)

    box = _resolve_box(cfg.box, n_params)
    full = np.array([0.5 * (lo + hi) for lo, hi in box])
    starts = None if starts is None else np.atleast_2d(np.asarray(starts, dtype=float))
    total_value = 0.0
    total_evals = 0
    converged = True
    merged_starts = []
    for b_idx, (params, eqs) in enumerate(blocks):
        params = np.asarray(params, dtype=int)
        block_obj_full = objective_factory(eqs)

        def sub_objective(sub, _full=full.copy(), _params=params, _obj=block_obj_full):
            point = _full.copy()
            point[_params] = sub
            return _obj(point)

        sub_cfg = replace(cfg, box=tuple(box[p] for p in params))
        sub_starts = None if starts is None else starts[:, params]
        report = minimize(sub_objective, params.size, sub_cfg, starts=sub_starts)
        full[params] = report.x
        total_value += report.value
        total_evals += report.n_evals
        converged = converged and report.converged
        merged_starts.extend(report.starts)
    return OptimizationReport(
        x=full,
        value=total_value,
        converged=converged,
        best_start=0,
        starts=tuple(merged_starts),
        n_evals=total_evals,
        mode="blocks",
        blocks=tuple(blocks),
    )
