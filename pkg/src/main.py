#!/usr/bin/env python3

import os
import sys
import json
import logging
import argparse
from dataclasses import dataclass, asdict
from typing import List, Optional

import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .data import InstanceSpec, generate, load_csv, save_csv
from .errors import DegenerateInstance, DegenerateIterate, L1PcaError, NotEnoughData, TooLarge
from .optimality import check_partial_max
from .oracle import brute_force_fmax, gamma_threshold, tau1_from_u, tau_star
from .polar_core import PdRegistry, sigma_plus_min, spectral_norm
from .solvers import Algorithm, InitScheme, SolverConfig, StopReason, init_u, nga_step, run
from .trace import ConvergenceTrace, emit_csv, estimate_rho, save_json

logger = logging.getLogger(__name__)
console = Console()
err_console = Console(stderr=True)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MAX_ITER = 2
EXIT_DEGENERATE = 3
EXIT_VERIFY_FAIL = 4

PASS, FAIL, SKIPPED = "PASS", "FAIL", "SKIPPED(hypothesis-unmet)"


def setup_logging(verbose: bool = False) -> None:
    """Route log records through rich on stderr; DEBUG shows every iteration."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


def resolve_seed(seed: int) -> int:
    """L1PCA_SEED in the environment overrides --seed."""
    env_seed = os.environ.get("L1PCA_SEED")
    if env_seed is None:
        return seed
    try:
        return int(env_seed)
    except ValueError:
        raise L1PcaError(f"L1PCA_SEED must be an integer, got {env_seed!r}")


def load_instance(args) -> np.ndarray:
    x = load_csv(args.instance, header=args.header)
    logger.debug("Loaded %s: d=%d, n=%d", args.instance, *x.shape)
    return x


def make_u0(args, x: np.ndarray) -> np.ndarray:
    return init_u(x.shape[0], args.k, seed=resolve_seed(args.seed), scheme=InitScheme(args.init), x=x)


def make_config(args, x: np.ndarray, algorithm: Algorithm, **overrides) -> SolverConfig:
    params = {"tau": args.tau, "beta": args.beta, "gamma": args.gamma, "max_iter": args.max_iter}
    if algorithm == Algorithm.NGA:
        params.update(tau=0.0, beta=0.0, gamma=0.0)
    elif algorithm == Algorithm.SPNGA:
        params.update(beta=0.0, gamma=0.0)
    elif algorithm == Algorithm.SPAME:
        params.update(beta=0.0)
    params.update(overrides)
    return SolverConfig.default_for(algorithm, x, **params)


def oracle_fmax(x: np.ndarray, k: int, limit: int) -> Optional[float]:
    """Exact F_max when enumeration fits under ``limit``, else None."""
    try:
        return brute_force_fmax(x, k, limit=limit).f_max
    except TooLarge as e:
        logger.warning("Skipping the oracle: %s", e)
        return None


def summary_line(label: str, trace: ConvergenceTrace) -> str:
    term = trace.terminal
    return (f"{label}: F={trace.records[-1].f_value!r} stop={term.stop_reason.value} "
            f"freeze(S={term.s_freeze_step}, U={term.u_freeze_step}, F={term.obj_freeze_step}) "
            f"FOC={'yes' if term.foc_certified else 'no'}")


def summary_table(title: str, traces: List[tuple]) -> Table:
    table = Table(title=title)
    for column in ("run", "stop", "iters", "F(U)", "obj freeze", "S freeze", "bound", "FOC"):
        table.add_column(column)
    for label, trace in traces:
        term = trace.terminal
        bound = "-" if term.theoretical_bound is None else str(term.statement_bound or term.theoretical_bound)
        table.add_row(
            label, term.stop_reason.value, str(trace.iterations),
            repr(trace.records[-1].f_value),
            str(term.obj_freeze_step), str(term.s_freeze_step), bound,
            "yes" if term.foc_certified else "no",
        )
    return table


def cmd_generate(args) -> int:
    spec = InstanceSpec(
        d=args.d, n=args.n, outlier_fraction=args.outlier_fraction, outlier_scale=args.outlier_scale,
        noise_std=args.noise_std, latent_rank=args.latent_rank, seed=resolve_seed(args.seed),
        centered=args.centered,
    )
    x = generate(spec)
    save_csv(x, args.output)
    console.print(f"Wrote {spec.n} samples of dimension {spec.d} to {args.output}")
    return EXIT_OK


def cmd_solve(args) -> int:
    x = load_instance(args)
    algorithm = Algorithm(args.algo)
    cfg = make_config(args, x, algorithm, relaxed=args.relaxed)
    u0 = make_u0(args, x)
    f_max = oracle_fmax(x, args.k, args.oracle_limit) if args.with_oracle else None

    try:
        trace = run(x, cfg, u0, f_max=f_max)
    except DegenerateIterate as e:
        err_console.print(f"Error: {e} (k={e.k})")
        if args.json and e.trace is not None and e.trace.records:
            save_json(e.trace, args.json)
        return EXIT_DEGENERATE

    console.print(summary_line(algorithm.value, trace))
    if args.verbose:
        console.print(summary_table(f"{algorithm.value} on {args.instance}", [(algorithm.value, trace)]))
        console.print(f"U =\n{trace.terminal_u}")
    if args.json:
        save_json(trace, args.json)
        console.print(f"Trace saved to: {args.json}")
    if args.csv:
        emit_csv(trace, args.csv)
        console.print(f"Iteration table saved to: {args.csv}")
    return EXIT_MAX_ITER if trace.terminal.stop_reason == StopReason.MAX_ITER else EXIT_OK


def cmd_oracle(args) -> int:
    x = load_instance(args)
    result = brute_force_fmax(x, args.k, limit=args.limit, workers=args.workers)
    payload = {
        "f_max": result.f_max,
        "s_star": result.s_star.tolist(),
        "u_star": np.asarray(result.u_star).tolist(),
        "enumerated": result.enumerated,
    }
    if args.tau_star:
        payload["tau_star"] = tau_star(x, args.k)

    table = Table(title=f"Oracle for {args.instance} (K={args.k})")
    table.add_column("quantity")
    table.add_column("value")
    table.add_row("F_max", repr(result.f_max))
    table.add_row("sign matrices scored", str(result.enumerated))
    if "tau_star" in payload:
        table.add_row("tau*", repr(payload["tau_star"]))
    console.print(table)
    console.print(f"S* =\n{result.s_star}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
    return EXIT_OK


@dataclass
class VerifyRow:
    name: str
    status: str
    detail: str = ""


def _first_rank_drop(trace: ConvergenceTrace, k: int) -> Optional[int]:
    for rec in trace.records:
        if rec.rank_xs != k:
            return rec.k
    return None


def _nga_freeze_after(x: np.ndarray, u: np.ndarray, max_steps: int) -> Optional[int]:
    """Extra NGA steps until the U-iterate repeats bit for bit, or None."""
    registry = PdRegistry()
    for step in range(1, max_steps + 1):
        u_next, _ = nga_step(x, u, registry)
        if np.array_equal(u_next, u):
            return step
        u = u_next
    return None


def verify_nga(x: np.ndarray, trace: ConvergenceTrace, k: int, max_iter: int) -> List[VerifyRow]:
    rows = []
    term = trace.terminal
    drop = _first_rank_drop(trace, k)
    if k > 1 and drop is not None:
        rows.append(VerifyRow("nga-iterate-freeze", SKIPPED, f"rank(X S^k) < K at k={drop}"))
    else:
        extra = _nga_freeze_after(x, np.asarray(trace.terminal_u), max_iter)
        ok = extra is not None and term.foc_certified
        rows.append(VerifyRow("nga-iterate-freeze", PASS if ok else FAIL,
                              f"U repeats after {extra} more step(s); FOC={term.foc_certified}"))

    if term.theoretical_bound is None:
        rows.append(VerifyRow("nga-objective-freeze-bound", SKIPPED, "no F_max or tau0"))
    else:
        ok = term.bound_satisfied and term.foc_certified
        rows.append(VerifyRow("nga-objective-freeze-bound", PASS if ok else FAIL,
                              f"froze at {term.obj_freeze_step} <= {term.theoretical_bound}"))

    if term.obj_freeze_step is None:
        rows.append(VerifyRow("nga-no-repeat", FAIL, "objective never froze"))
    else:
        visited = trace.u_iterates[:term.obj_freeze_step + 1]
        repeats = [(i, j) for i in range(len(visited)) for j in range(i + 1, len(visited))
                   if np.linalg.norm(visited[i] - visited[j]) <= 1e-12]
        rows.append(VerifyRow("nga-no-repeat", FAIL if repeats else PASS,
                              f"{len(visited)} iterates, repeats={repeats[:3]}"))

    try:
        rho = estimate_rho(trace)
        rows.append(VerifyRow("nga-linear-rate", PASS if 0 < rho < 1 else FAIL, f"rho={rho:.6g}"))
    except NotEnoughData as e:
        rows.append(VerifyRow("nga-linear-rate", SKIPPED, str(e)))
    return rows


def _tau1(x: np.ndarray, u: np.ndarray) -> Optional[float]:
    try:
        return tau1_from_u(x, u)
    except DegenerateInstance:
        return None


def verify_spnga(x: np.ndarray, trace: ConvergenceTrace, tau: float) -> List[VerifyRow]:
    term = trace.terminal
    if term.stop_reason != StopReason.S_FROZEN:
        return [VerifyRow("spnga-iterate-freeze-bound", FAIL, f"stopped on {term.stop_reason.value}")]

    short = []
    for _, rec, s_prev, s in zip(trace.records, trace.records[1:], trace.s_iterates, trace.s_iterates[1:]):
        jump = float(np.sum((s.astype(np.int64) - s_prev) ** 2))
        if rec.bilinear - rec.cross < 0.5 * tau * jump - 1e-9:
            short.append(rec.k)
    ok = not short and (term.bound_satisfied is not False)
    detail = f"S froze at {term.s_freeze_step}, bound {term.theoretical_bound}"
    if short:
        detail += f"; ascent below tau/2 at k={short[:3]}"

    tau1 = _tau1(x, trace.terminal_u)
    if tau1 is not None and tau < tau1:
        partial = check_partial_max(x, trace.terminal_u, trace.certificate_s)
        ok = ok and term.foc_certified and partial
        detail += f"; tau < tau1={tau1:.4g}, FOC={term.foc_certified}"
    else:
        detail += "; tau >= tau1, FOC not implied"
    return [VerifyRow("spnga-iterate-freeze-bound", PASS if ok else FAIL, detail)]


def verify_pame(x: np.ndarray, trace: ConvergenceTrace, cfg: SolverConfig) -> List[VerifyRow]:
    threshold = gamma_threshold(x, cfg.tau, cfg.beta)
    if not cfg.gamma < threshold:
        return [VerifyRow("pame-sign-freeze", SKIPPED, f"gamma={cfg.gamma} >= {threshold:.4g}")]
    term = trace.terminal
    if term.stop_reason == StopReason.MAX_ITER:
        return [VerifyRow("pame-sign-freeze", FAIL, "sign matrix never froze")]

    detail = f"S froze at {term.s_freeze_step}"
    ok = True
    k = trace.shape[2]
    w = x @ trace.certificate_s
    smin = sigma_plus_min(w)
    tau1 = _tau1(x, trace.terminal_u)
    if (trace.records[-1].rank_xs == k and smin is not None and cfg.beta < smin
            and tau1 is not None and cfg.tau < tau1):
        residual = trace.records[-1].limit_residual
        ok = residual is not None and residual < 1e-6 and term.foc_certified
        detail += f"; limit residual {residual}, FOC={term.foc_certified}"
    else:
        detail += "; limit conditions unmet"
    return [VerifyRow("pame-sign-freeze", PASS if ok else FAIL, detail)]


def verify_spame(x: np.ndarray, trace: ConvergenceTrace, cfg: SolverConfig) -> List[VerifyRow]:
    term = trace.terminal
    k = trace.shape[2]
    drop = _first_rank_drop(trace, k)
    if k > 1 and drop is not None:
        return [VerifyRow("spame-iterate-freeze-bound", SKIPPED, f"rank(X S^k) < K at k={drop}")]
    norm = spectral_norm(x)
    ceiling = min(1.0, term.lambda_min * cfg.tau / norm ** 2)
    if not cfg.gamma < ceiling:
        return [VerifyRow("spame-iterate-freeze-bound", SKIPPED, f"gamma={cfg.gamma} >= {ceiling:.4g}")]
    if term.stop_reason != StopReason.S_FROZEN:
        return [VerifyRow("spame-iterate-freeze-bound", FAIL, f"stopped on {term.stop_reason.value}")]

    ok = term.bound_satisfied is not False
    detail = (f"S froze at {term.s_freeze_step}; bounds {term.theoretical_bound} (tight) "
              f"/ {term.statement_bound}")
    tau1 = _tau1(x, trace.terminal_u)
    if tau1 is not None and cfg.tau < tau1:
        ok = ok and term.foc_certified
        detail += f"; FOC={term.foc_certified}"
    return [VerifyRow("spame-iterate-freeze-bound", PASS if ok else FAIL, detail)]


def _same_prefix(a: ConvergenceTrace, b: ConvergenceTrace) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a.u_iterates, b.u_iterates))


def verify_reductions(x: np.ndarray, u0: np.ndarray, args) -> List[VerifyRow]:
    rows = []
    nga = run(x, make_config(args, x, Algorithm.NGA), u0)
    pame0 = run(x, make_config(args, x, Algorithm.PAME, tau=0.0, beta=0.0, gamma=0.0, relaxed=True), u0)
    ok = _same_prefix(nga, pame0)
    rows.append(VerifyRow("pame-reduces-to-nga", PASS if ok else FAIL,
                          f"{min(len(nga.u_iterates), len(pame0.u_iterates))} iterates compared"))

    spnga = run(x, make_config(args, x, Algorithm.SPNGA), u0)
    spame0 = run(x, make_config(args, x, Algorithm.SPAME, gamma=0.0), u0)
    ok = _same_prefix(spnga, spame0)
    rows.append(VerifyRow("spame-reduces-to-spnga", PASS if ok else FAIL,
                          f"{min(len(spnga.u_iterates), len(spame0.u_iterates))} iterates compared"))
    return rows


def cmd_verify(args) -> int:
    x = load_instance(args)
    u0 = make_u0(args, x)
    f_max = oracle_fmax(x, args.k, args.oracle_limit)
    selected = list(Algorithm) if args.algo == "all" else [Algorithm(args.algo)]

    rows: List[VerifyRow] = []
    for algorithm in selected:
        cfg = make_config(args, x, algorithm)
        try:
            trace = run(x, cfg, u0, f_max=f_max)
        except DegenerateIterate as e:
            rows.append(VerifyRow(f"{algorithm.value}-run", FAIL, f"degenerate iterate at k={e.k}"))
            continue
        if algorithm == Algorithm.NGA:
            rows.extend(verify_nga(x, trace, args.k, cfg.max_iter))
        elif algorithm == Algorithm.SPNGA:
            rows.extend(verify_spnga(x, trace, cfg.tau))
        elif algorithm == Algorithm.PAME:
            rows.extend(verify_pame(x, trace, cfg))
        else:
            rows.extend(verify_spame(x, trace, cfg))
    if args.algo == "all":
        rows.extend(verify_reductions(x, u0, args))

    table = Table(title=f"Freeze checks on {args.instance} (K={args.k})")
    table.add_column("check")
    table.add_column("status")
    table.add_column("detail")
    for row in rows:
        table.add_row(row.name, row.status, row.detail)
    console.print(table)
    if args.json:
        with open(args.json, "w") as f:
            json.dump([asdict(row) for row in rows], f, indent=2, sort_keys=True)
    return EXIT_VERIFY_FAIL if any(row.status == FAIL for row in rows) else EXIT_OK


def cmd_compare(args) -> int:
    x = load_instance(args)
    u0 = make_u0(args, x)
    f_max = oracle_fmax(x, args.k, args.oracle_limit) if args.with_oracle else None

    runs = [(algorithm.value, make_config(args, x, algorithm)) for algorithm in Algorithm]
    runs.append(("pame(0,0,0)", make_config(args, x, Algorithm.PAME, tau=0.0, beta=0.0,
                                            gamma=0.0, relaxed=True)))
    runs.append(("spame(gamma=0)", make_config(args, x, Algorithm.SPAME, gamma=0.0)))

    traces = []
    for label, cfg in runs:
        try:
            traces.append((label, run(x, cfg, u0, f_max=f_max)))
        except DegenerateIterate as e:
            err_console.print(f"Error: {label} hit a degenerate iterate at k={e.k}")
            return EXIT_DEGENERATE

    title = f"Solvers on {args.instance} (K={args.k})"
    if f_max is not None:
        title += f", F_max={f_max!r}"
    console.print(summary_table(title, traces))
    if args.json:
        payload = {label: {"terminal": asdict(t.terminal), "iterations": t.iterations}
                   for label, t in traces}
        with open(args.json, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True, default=str)
    return EXIT_OK


def _add_instance_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("instance", help="CSV file with one sample per row")
    parser.add_argument("--header", action="store_true", help="Skip the first line of the CSV")
    parser.add_argument("--k", type=int, default=1, help="Number of components")


def _add_solver_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tau", type=float, default=0.1, help="Proximal weight on the sign step")
    parser.add_argument("--beta", type=float, default=0.1, help="Proximal weight on the U step (PAMe)")
    parser.add_argument("--gamma", type=float, default=0.0, help="Extrapolation weight in [0, 1)")
    parser.add_argument("--max-iter", type=int, default=None,
                        help="Step cap (default derived from the data and tau)")
    parser.add_argument("--init", choices=[s.value for s in InitScheme], default=InitScheme.SVD_WARM_START.value,
                        help="Starting point")
    parser.add_argument("--seed", type=int, default=0, help="Seed for random starts (L1PCA_SEED overrides)")
    parser.add_argument("--oracle-limit", type=int, default=2 ** 20,
                        help="Largest number of sign matrices the oracle may enumerate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Finite-step L1-norm PCA solvers and their freeze checks")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log every iteration and print full result tables")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="Write a synthetic instance")
    gen.add_argument("--d", type=int, required=True, help="Sample dimension")
    gen.add_argument("--n", type=int, required=True, help="Number of samples")
    gen.add_argument("--outlier-fraction", type=float, default=0.0)
    gen.add_argument("--outlier-scale", type=float, default=10.0)
    gen.add_argument("--noise-std", type=float, default=0.0)
    gen.add_argument("--latent-rank", type=int, default=1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--centered", action="store_true")
    gen.add_argument("--output", required=True, help="CSV file to write")
    gen.set_defaults(func=cmd_generate)

    solve = sub.add_parser("solve", help="Run one solver")
    _add_instance_args(solve)
    _add_solver_args(solve)
    solve.add_argument("--algo", choices=[a.value for a in Algorithm], default=Algorithm.NGA.value)
    solve.add_argument("--relaxed", action="store_true", help="Allow tau = 0 and beta = 0")
    solve.add_argument("--with-oracle", action="store_true", help="Evaluate the freeze bound")
    solve.add_argument("--json", help="Write the full trace as JSON")
    solve.add_argument("--csv", help="Write the iteration table as CSV")
    solve.set_defaults(func=cmd_solve)

    orc = sub.add_parser("oracle", help="Exact maximum by enumeration")
    _add_instance_args(orc)
    orc.add_argument("--limit", type=int, default=2 ** 24)
    orc.add_argument("--workers", type=int, default=1)
    orc.add_argument("--tau-star", action="store_true", help="Also compute tau*")
    orc.add_argument("--json", help="Write the result as JSON")
    orc.set_defaults(func=cmd_oracle)

    ver = sub.add_parser("verify", help="Check the freeze guarantees on an instance")
    _add_instance_args(ver)
    _add_solver_args(ver)
    ver.add_argument("--algo", choices=["all"] + [a.value for a in Algorithm], default="all")
    ver.add_argument("--json", help="Write the verdicts as JSON")
    ver.set_defaults(func=cmd_verify)

    cmp_ = sub.add_parser("compare", help="Run every solver from one starting point")
    _add_instance_args(cmp_)
    _add_solver_args(cmp_)
    cmp_.add_argument("--with-oracle", action="store_true", help="Evaluate the freeze bounds")
    cmp_.add_argument("--json", help="Write the comparison as JSON")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        code = args.func(args)
    except OSError as e:
        err_console.print(f"Error: {e}")
        code = EXIT_USAGE
    except DegenerateIterate as e:
        err_console.print(f"Error: {e}")
        code = EXIT_DEGENERATE
    except L1PcaError as e:
        err_console.print(f"Error: {e}")
        code = EXIT_USAGE
    sys.exit(code)


if __name__ == "__main__":
    main()
