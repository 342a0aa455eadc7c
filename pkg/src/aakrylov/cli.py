"""Command-line front end.

Subcommands: solve, fp, gmres-compare, bounds, poly-verify, lk-verify,
scaling-check, nrbe, monte-carlo, sweep-theta, sweep-grid, dual-guess,
sweep-lambda.

Conventions: diagnostics go to standard error, data to files (or standard
output for path "-"); floating values print with 17 significant digits so
they round-trip exactly. Exit codes: 0 success, 1 usage error, 2 numerical
failure (singular input, violated identity, non-finite arithmetic).
"""

from __future__ import annotations

import argparse
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import analysis, experiments
from .errors import ProblemFormatError, SingularMatrixError, StallError, VerificationError
from .gmres import gmres
from .problems import LinearProblem, default_x0, resolve_problem
from .solver import AAConfig, fp_solve, solve, solve_general


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(message)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    return f"{v:.17g}"


def _parse_vec(text: str, name: str = "vector") -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split(",")])
    except ValueError as exc:
        raise UsageError(f"cannot parse {name} '{text}': {exc}") from exc


def _parse_guesses(text: str) -> list[np.ndarray]:
    return [_parse_vec(part, "guess") for part in text.split(";")]


@contextmanager
def _open_out(path: str):
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _config_from(ns, m: int) -> AAConfig:
    kwargs = dict(m=m, max_iter=ns.max_iter, tol_rel=ns.tol)
    strategy = getattr(ns, "ls", "qr")
    if strategy == "regularized":
        kwargs.update(
            ls_strategy="regularized",
            reg_lambda=getattr(ns, "reg_lambda", None),
            reg_eps=getattr(ns, "reg_eps", None),
        )
    else:
        kwargs.update(ls_strategy=strategy)
    try:
        return AAConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _get_x0(ns, problem) -> np.ndarray:
    if getattr(ns, "x0", None):
        return _parse_vec(ns.x0, "x0")
    if ns.problem.startswith("builtin:"):
        x0 = default_x0(ns.problem[len("builtin:") :])
        if x0 is not None:
            return x0
    raise UsageError("no --x0 given and the problem has no default initial guess")


def write_trace_csv(out, trace, problem=None) -> int:
    """Emit the fixed trace schema; returns the number of bound violations.

    Header: k,r_norm,y_k,phi_k,sigma_k,beta_1,...,beta_m,B,lower,upper,actual
    with empty fields where a quantity is undefined. The bound columns fill
    only for window-one runs on linear problems.
    """
    m = trace.config.m
    header = ["k", "r_norm", "y_k", "phi_k", "sigma_k"]
    header += [f"beta_{i}" for i in range(1, m + 1)]
    header += ["B", "lower", "upper", "actual"]
    bound_map = {}
    violations = 0
    if m == 1 and isinstance(problem, LinearProblem):
        for rec in analysis.bounds_check(trace, problem.M):
            bound_map[rec.k] = rec
            violations += int(rec.violation)
    lines = [",".join(header)]
    for rec in trace.records:
        cells = [_fmt(rec.k), _fmt(rec.r_norm), _fmt(rec.y), _fmt(rec.phi), _fmt(rec.sigma)]
        for i in range(m):
            cells.append(_fmt(rec.beta[i]) if i < rec.beta.size else "")
        br = bound_map.get(rec.k)
        if br is None:
            cells += ["", "", "", ""]
        else:
            cells += [_fmt(br.B), _fmt(br.lower), _fmt(br.upper), _fmt(br.actual)]
        lines.append(",".join(cells))
    out.write("\n".join(lines) + "\n")
    return violations


def write_sweep_csv(out, result) -> None:
    lines = [",".join(result.columns)]
    for row in result.rows:
        lines.append(",".join(_fmt(v) for v in row))
    out.write("\n".join(lines) + "\n")


def write_hist_csv(out, histogram) -> None:
    lines = ["bin_lo,bin_hi,count"]
    edges = np.linspace(0.0, 1.0, len(histogram) + 1)
    for i, count in enumerate(histogram):
        lines.append(f"{_fmt(edges[i])},{_fmt(edges[i + 1])},{int(count)}")
    out.write("\n".join(lines) + "\n")


def _print_stats(result) -> None:
    for key in sorted(result.stats):
        print(f"{key} = {result.stats[key]!r}", file=sys.stderr)


def _cmd_solve(ns) -> int:
    problem = resolve_problem(ns.problem)
    config = _config_from(ns, ns.m)
    if ns.guesses:
        trace = solve_general(problem, _parse_guesses(ns.guesses), config)
    else:
        trace = solve(problem, _get_x0(ns, problem), config)
    with _open_out(ns.trace) as fh:
        write_trace_csv(fh, trace, problem)
    print(f"reason = {trace.reason}, k_final = {trace.k_final}, "
          f"final residual = {trace.records[-1].r_norm:.3e}", file=sys.stderr)
    return 0


def _cmd_fp(ns) -> int:
    problem = resolve_problem(ns.problem)
    trace = fp_solve(problem, _get_x0(ns, problem), max_iter=ns.max_iter, tol_rel=ns.tol)
    with _open_out(ns.trace) as fh:
        write_trace_csv(fh, trace, problem)
    print(f"reason = {trace.reason}, k_final = {trace.k_final}", file=sys.stderr)
    return 0


def _cmd_gmres_compare(ns) -> int:
    problem = resolve_problem(ns.problem)
    if not isinstance(problem, LinearProblem):
        raise UsageError("gmres-compare needs a linear problem")
    x0 = _get_x0(ns, problem)
    config = _config_from(ns, ns.m)
    trace = solve(problem, x0, config)
    gm = gmres(problem.A, problem.b, x0, max_iter=ns.max_iter)
    r0 = trace.records[0].r_norm
    bad = 0
    lines = ["k,r_gmres,r_aa"]
    for rec in trace.records:
        g = gm.norm_at(rec.k)
        lines.append(f"{rec.k},{_fmt(g)},{_fmt(rec.r_norm)}")
        if g > rec.r_norm + 1e-10 * r0:
            bad += 1
    with _open_out(ns.out) as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"dominance violations: {bad}", file=sys.stderr)
    return 2 if bad else 0


def _cmd_bounds(ns) -> int:
    problem = resolve_problem(ns.problem)
    if not isinstance(problem, LinearProblem):
        raise UsageError("bounds needs a linear problem")
    config = AAConfig(m=1, max_iter=ns.iters, tol_rel=1e-300)
    trace = solve(problem, _get_x0(ns, problem), config)
    with _open_out(ns.out) as fh:
        violations = write_trace_csv(fh, trace, problem)
    print(f"bound violations: {violations} over {trace.k_final} iterations", file=sys.stderr)
    return 2 if violations else 0


def _cmd_poly_verify(ns) -> int:
    problem = resolve_problem(ns.problem)
    if not isinstance(problem, LinearProblem):
        raise UsageError("poly-verify needs a linear problem")
    config = _config_from(ns, ns.m)
    trace = solve(problem, _get_x0(ns, problem), config)
    deviation = analysis.verify_polynomial_trace(trace, problem)
    polys = analysis.polynomials_from_trace(trace)
    for k, p in enumerate(polys):
        if k >= 1:
            analysis.check_update_polynomial(p)
            analysis.memory_effect_factor(p, config.m, k)
    if ns.out:
        lines = ["k,j,coeff"]
        for k, p in enumerate(polys):
            for j, c in enumerate(p.coeffs):
                lines.append(f"{k},{j},{_fmt(c)}")
        with _open_out(ns.out) as fh:
            fh.write("\n".join(lines) + "\n")
    print(f"max polynomial deviation = {deviation:.3e} over {trace.k_final} steps")
    if deviation > 1e-8:
        print("deviation exceeds the 1e-8 contract", file=sys.stderr)
        return 2
    return 0


def _cmd_lk_verify(ns) -> int:
    problem = resolve_problem(ns.problem)
    if not isinstance(problem, LinearProblem):
        raise UsageError("lk-verify needs a linear problem")
    x0 = _get_x0(ns, problem)
    r0 = problem.residual(x0)
    updates = analysis.lk_recursion(problem.M, r0, ns.steps)
    print(f"verified {len(updates)} propagator matrices "
          f"(rank <= 2 and residual match hold)")
    return 0


def _cmd_scaling_check(ns) -> int:
    problem = resolve_problem(ns.problem)
    if not isinstance(problem, LinearProblem):
        raise UsageError("scaling-check needs a linear problem")
    res = analysis.scaling_invariance_check(problem, _get_x0(ns, problem), ns.alpha, ns.steps)
    print(f"beta deviation = {res.beta_dev:.3e}")
    print(f"polynomial coefficient deviation = {res.poly_coeff_dev:.3e}")
    print(f"rho deviation = {res.rho_dev:.3e}")
    if res.beta_dev > 1e-9 or res.poly_coeff_dev > 1e-9:
        print("scaling invariance violated beyond 1e-9", file=sys.stderr)
        return 2
    return 0


def _cmd_nrbe(ns) -> int:
    problem = resolve_problem(ns.problem)
    if not isinstance(problem, LinearProblem):
        raise UsageError("nrbe needs a linear problem")
    result = experiments.run_nrbe_trace(problem, _get_x0(ns, problem), max_iter=ns.max_iter)
    with _open_out(ns.out) as fh:
        write_sweep_csv(fh, result)
    _print_stats(result)
    return 0


def _cmd_monte_carlo(ns) -> int:
    problem = resolve_problem(ns.problem)
    box = tuple(float(v) for v in ns.box.split(","))
    if len(box) != 2 or not box[0] < box[1]:
        raise UsageError("--box must be 'lo,hi' with lo < hi")
    result = experiments.run_monte_carlo(
        problem, trials=ns.trials, seed=ns.seed, box=box, m=ns.m,
        max_iter=ns.max_iter, jobs=ns.jobs,
    )
    with _open_out(ns.out) as fh:
        write_sweep_csv(fh, result)
    if ns.hist:
        with _open_out(ns.hist) as fh:
            write_hist_csv(fh, result.histogram)
    _print_stats(result)
    return 0


def _cmd_sweep_theta(ns) -> int:
    problem = resolve_problem(ns.problem)
    result = experiments.run_theta_sweep(problem, ns.n, m=ns.m, max_iter=ns.max_iter)
    with _open_out(ns.out) as fh:
        write_sweep_csv(fh, result)
    if ns.hist:
        with _open_out(ns.hist) as fh:
            write_hist_csv(fh, result.histogram)
    _print_stats(result)
    return 0


def _cmd_sweep_grid(ns) -> int:
    problem = resolve_problem(ns.problem)
    vals = [float(v) for v in ns.bounds.split(",")]
    if len(vals) != 4:
        raise UsageError("--bounds must be 'xlo,xhi,ylo,yhi'")
    result = experiments.run_grid_sweep(
        problem, ns.nx, ns.ny, bounds=((vals[0], vals[1]), (vals[2], vals[3])),
        m=ns.m, max_iter=ns.max_iter,
    )
    with _open_out(ns.out) as fh:
        write_sweep_csv(fh, result)
    _print_stats(result)
    return 0


def _cmd_dual_guess(ns) -> int:
    problem = resolve_problem(ns.problem)
    result = experiments.run_dual_guess_search(
        problem, n_theta1=ns.n_theta1, n_theta2=ns.n_theta2, n_alpha=ns.n_alpha,
        alpha_max=ns.alpha_max, max_iter=ns.max_iter, jobs=ns.jobs,
    )
    with _open_out(ns.out) as fh:
        write_sweep_csv(fh, result)
    if ns.hist:
        with _open_out(ns.hist) as fh:
            write_hist_csv(fh, result.histogram)
    _print_stats(result)
    return 0


def _cmd_sweep_lambda(ns) -> int:
    problem = resolve_problem(ns.problem)
    if not isinstance(problem, LinearProblem):
        raise UsageError("sweep-lambda needs a linear problem")
    lambdas = [float(v) for v in ns.lambdas.split(",")]
    result = experiments.run_lambda_sweep(
        problem, lambdas, _get_x0(ns, problem), relative=ns.relative, max_iter=ns.max_iter,
    )
    with _open_out(ns.out) as fh:
        write_sweep_csv(fh, result)
    if ns.curves:
        lines = ["lambda,k,error"]
        for lam in lambdas:
            for k, err in result.curves[lam]:
                lines.append(f"{_fmt(lam)},{int(k)},{_fmt(err)}")
        with _open_out(ns.curves) as fh:
            fh.write("\n".join(lines) + "\n")
    _print_stats(result)
    return 0


def _add_common(sub, x0=True, m=True, tol=True):
    sub.add_argument("--problem", required=True, help="'builtin:NAME' or a JSON file path")
    if x0:
        sub.add_argument("--x0", help="comma-separated initial guess")
    if m:
        sub.add_argument("--m", type=int, default=1, help="window size (default 1)")
    sub.add_argument("--max-iter", type=int, default=1000, dest="max_iter")
    if tol:
        sub.add_argument("--tol", type=float, default=1e-14, help="relative residual tolerance")


def build_parser() -> _Parser:
    parser = _Parser(prog="aakrylov", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command")

    p = subs.add_parser("solve", parents=[], help="accelerated fixed-point run, trace to CSV")
    _add_common(p)
    p.add_argument("--ls", choices=("qr", "pseudo_inverse", "regularized"), default="qr")
    p.add_argument("--reg-lambda", type=float, default=None, dest="reg_lambda")
    p.add_argument("--reg-eps", type=float, default=None, dest="reg_eps")
    p.add_argument("--guesses", help="semicolon-separated m+1 initial guesses (full-window start)")
    p.add_argument("--trace", required=True, help="output CSV path ('-' for stdout)")
    p.set_defaults(func=_cmd_solve)

    p = subs.add_parser("fp", help="plain fixed-point run, trace to CSV")
    _add_common(p, m=False)
    p.add_argument("--trace", required=True)
    p.set_defaults(func=_cmd_fp)

    p = subs.add_parser("gmres-compare", help="per-step residuals of GMRES vs the accelerated run")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gmres_compare)

    p = subs.add_parser("bounds", help="per-step reduction bounds along a window-one run")
    _add_common(p, m=False, tol=False)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bounds)

    p = subs.add_parser("poly-verify", help="reconstruct residual polynomials and check them")
    _add_common(p)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--out", help="optional coefficient CSV (k,j,coeff)")
    p.set_defaults(func=_cmd_poly_verify, max_iter=30)

    p = subs.add_parser("lk-verify", help="rank-two propagator recursion check (window one)")
    _add_common(p, m=False, tol=False)
    p.add_argument("--steps", type=int, default=20)
    p.set_defaults(func=_cmd_lk_verify)

    p = subs.add_parser("scaling-check", help="initial-guess scaling invariance deviations")
    _add_common(p, m=False, tol=False)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--steps", type=int, default=30)
    p.set_defaults(func=_cmd_scaling_check)

    p = subs.add_parser("nrbe", help="backward errors along a window-one run")
    _add_common(p, m=False, tol=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_nrbe)

    p = subs.add_parser("monte-carlo", help="random initial guesses, convergence factors to CSV")
    _add_common(p, x0=False, tol=False)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--box", default="-1,1", help="'lo,hi' box for both components")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--hist", help="optional histogram CSV (100 bins on [0,1])")
    p.set_defaults(func=_cmd_monte_carlo, max_iter=150)

    p = subs.add_parser("sweep-theta", help="initial guesses on the unit circle")
    _add_common(p, x0=False, tol=False)
    p.add_argument("--n", type=int, required=True, help="number of equally spaced angles")
    p.add_argument("--out", required=True)
    p.add_argument("--hist", help="optional histogram CSV")
    p.set_defaults(func=_cmd_sweep_theta, max_iter=150)

    p = subs.add_parser("sweep-grid", help="initial guesses on a regular 2-D grid")
    _add_common(p, x0=False, tol=False)
    p.add_argument("--nx", type=int, required=True)
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--bounds", default="-1,1,-1,1", help="'xlo,xhi,ylo,yhi'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep_grid, max_iter=150)

    p = subs.add_parser("dual-guess", help="grid search over paired initial guesses (window one)")
    _add_common(p, x0=False, m=False, tol=False)
    p.add_argument("--n-theta1", type=int, default=50, dest="n_theta1")
    p.add_argument("--n-theta2", type=int, default=50, dest="n_theta2")
    p.add_argument("--n-alpha", type=int, default=50, dest="n_alpha")
    p.add_argument("--alpha-max", type=float, default=10.0, dest="alpha_max")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--hist", help="optional histogram CSV")
    p.set_defaults(func=_cmd_dual_guess, max_iter=150)

    p = subs.add_parser("sweep-lambda", help="regularized weight solves over a parameter list")
    _add_common(p, m=False, tol=False)
    p.add_argument("--lambdas", required=True, help="comma-separated positive parameters")
    p.add_argument("--relative", action="store_true",
                   help="scale each parameter by max(diag(R_k'R_k)) per step")
    p.add_argument("--out", required=True)
    p.add_argument("--curves", help="optional long-format error-curve CSV")
    p.set_defaults(func=_cmd_sweep_lambda, max_iter=500)

    return parser


def dispatch(argv) -> int:
    """Route a command line; returns the process exit code."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version paths inside argparse
        code = exc.code
        return 0 if code in (0, None) else int(code)
    if not hasattr(ns, "func"):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return int(ns.func(ns) or 0)
    except (UsageError, ProblemFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SingularMatrixError, StallError, VerificationError, FloatingPointError,
            np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> None:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
