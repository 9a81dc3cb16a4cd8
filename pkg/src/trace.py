import csv
import json
import logging
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import NotEnoughData, ParseError
from .oracle import BoundKind, step_bound

logger = logging.getLogger(__name__)

TRACE_SCHEMA = "l1pca-trace/1"
CSV_COLUMNS = ["k", "F", "bilinear", "s_changed", "u_delta"]
PAME_U_FREEZE_TOL = 1e-12


class Algorithm(str, Enum):
    NGA = "nga"
    SPNGA = "spnga"
    PAME = "pame"
    SPAME = "spame"


class StopReason(str, Enum):
    S_FROZEN = "s_frozen"
    U_FROZEN = "u_frozen"
    OBJECTIVE_FROZEN = "objective_frozen"
    MAX_ITER = "max_iter"


@dataclass
class IterationRecord:
    """One row of a convergence trace.

    ``bilinear`` is F(U^k, S^k); ``cross`` is F(U^k, S^{k-1}) and is None at
    k = 0. ``rank_xs`` and ``lambda_min_h`` describe the polar input X S
    whose U-factor drives iteration k.
    """

    k: int
    f_value: float
    bilinear: float
    cross: Optional[float]
    s_changed: bool
    u_delta: float
    rank_xs: int
    lambda_min_h: float
    limit_residual: Optional[float] = None


@dataclass
class TerminalBlock:
    stop_reason: StopReason
    s_freeze_step: Optional[int]
    u_freeze_step: Optional[int]
    obj_freeze_step: Optional[int]
    foc_certified: bool
    rank_hypothesis_held: bool
    lambda_min: float
    f_max: Optional[float] = None
    tau0: Optional[float] = None
    theoretical_bound: Optional[int] = None
    statement_bound: Optional[int] = None
    observed_step: Optional[int] = None
    bound_satisfied: Optional[bool] = None


@dataclass
class ConvergenceTrace:
    """Everything a solver run produced, in iteration order.

    ``u_iterates[k]`` and ``s_iterates[k]`` are U^k and S^k. ``output_u`` is
    set when the reported solution differs from the last U-iterate (PAMe
    reports PD(X S*) once its sign matrix has frozen). ``certificate_s`` is
    the sign matrix W = X S used to certify the reported solution.
    """

    algorithm: Algorithm
    config: Dict[str, Any]
    shape: Tuple[int, int, int]
    records: List[IterationRecord] = field(default_factory=list)
    u_iterates: List[np.ndarray] = field(default_factory=list)
    s_iterates: List[np.ndarray] = field(default_factory=list)
    terminal: Optional[TerminalBlock] = None
    output_u: Optional[np.ndarray] = None
    certificate_s: Optional[np.ndarray] = None

    @property
    def terminal_u(self) -> np.ndarray:
        if self.output_u is not None:
            return self.output_u
        return self.u_iterates[-1]

    @property
    def iterations(self) -> int:
        return len(self.records) - 1 if self.records else 0


def freeze_steps(records: List[IterationRecord], stop_reason: StopReason,
                 u_tol: float = 0.0) -> Tuple[Optional[int], Optional[int], Optional[int]]:
    """
    Recover the S-, U- and objective-freeze steps from a finished run.

    The S-freeze step is the last k whose S^k differs from S^{k-1}, so that
    S^k = S^{k+1} = ... for the rest of the trace; the U-freeze step is the
    same with ||U^k - U^{k-1}||_F > u_tol. The objective-freeze step is the
    first k from which the bilinear objective keeps its final value. A run
    stopped by MAX_ITER has no freeze steps; a run stopped on the objective
    alone reports only the objective step.

    Returns:
        Tuple (s_freeze_step, u_freeze_step, obj_freeze_step)
    """
    if not records or stop_reason == StopReason.MAX_ITER:
        return None, None, None

    final = records[-1].bilinear
    obj_step = records[-1].k
    for rec in reversed(records):
        if rec.bilinear != final:
            break
        obj_step = rec.k

    if stop_reason == StopReason.OBJECTIVE_FROZEN:
        return None, None, obj_step

    s_step = 0
    u_step = 0
    for rec in records[1:]:
        if rec.s_changed:
            s_step = rec.k
        if rec.u_delta > u_tol:
            u_step = rec.k
    return s_step, u_step, obj_step


def bound_report(trace: ConvergenceTrace) -> Dict[str, Optional[int]]:
    """
    Recompute the theoretical freeze bound and the observed step for a trace.

    Uses only the records, the stored configuration, and the f_max / tau0
    values saved in the terminal block.

    Returns:
        Dict with keys ``theoretical``, ``statement``, ``observed``
    """
    report: Dict[str, Optional[int]] = {"theoretical": None, "statement": None, "observed": None}
    term = trace.terminal
    if term is None:
        return report
    u_tol = PAME_U_FREEZE_TOL if trace.algorithm == Algorithm.PAME else 0.0
    s_step, _, obj_step = freeze_steps(trace.records, term.stop_reason, u_tol)
    tau = trace.config.get("tau", 0.0)
    gamma = trace.config.get("gamma", 0.0)

    if trace.algorithm == Algorithm.NGA:
        report["observed"] = obj_step
        if term.f_max is not None and term.tau0:
            report["theoretical"] = step_bound(BoundKind.NGA_OBJECTIVE, term.f_max, tau0=term.tau0)
    elif trace.algorithm == Algorithm.SPNGA:
        report["observed"] = s_step
        if term.f_max is not None and tau > 0:
            report["theoretical"] = step_bound(BoundKind.SPNGA_ITERATES, term.f_max, tau=tau)
    elif trace.algorithm == Algorithm.SPAME:
        report["observed"] = s_step
        if term.f_max is not None and tau > 0:
            report["theoretical"] = step_bound(BoundKind.SPAME_ITERATES, term.f_max, tau=tau, gamma=gamma)
            report["statement"] = step_bound(BoundKind.SPAME_STATEMENT, term.f_max, tau=tau, gamma=gamma)
    else:
        report["observed"] = s_step
    return report


def bound_satisfied(report: Dict[str, Optional[int]]) -> Optional[bool]:
    """Whether the observed step respects the governing bound, None if unknown."""
    limit = report["statement"] if report["statement"] is not None else report["theoretical"]
    if limit is None or report["observed"] is None:
        return None
    return report["observed"] <= limit


def estimate_rho(trace: ConvergenceTrace) -> float:
    """
    Empirical linear rate of the bilinear objective before it freezes.

    rho = max over k < k* - 1 of (F* - F^{k+1}) / (F* - F^k), where k* is
    the objective-freeze step and F* the frozen value.

    Raises:
        NotEnoughData: If the run did not freeze or froze at step 0 or 1
    """
    if trace.terminal is None or trace.terminal.obj_freeze_step is None:
        raise NotEnoughData("trace has no objective-freeze step")
    k_star = trace.terminal.obj_freeze_step
    if k_star < 2:
        raise NotEnoughData(f"objective froze at step {k_star}; at least 2 steps are needed")

    f_star = trace.records[-1].bilinear
    gaps = [f_star - trace.records[k].bilinear for k in range(k_star)]
    return max(gaps[k + 1] / gaps[k] for k in range(k_star - 1))


def _array_or_none(value) -> Optional[list]:
    return None if value is None else np.asarray(value).tolist()


def to_dict(trace: ConvergenceTrace) -> Dict[str, Any]:
    """Plain-data form of a trace with the bound verdict recomputed from its records."""
    terminal = None
    if trace.terminal is not None:
        report = bound_report(trace)
        if (report["observed"] != trace.terminal.observed_step
                or report["theoretical"] != trace.terminal.theoretical_bound):
            logger.warning("Recomputed bound %s disagrees with the live run (%s, %s)",
                           report, trace.terminal.observed_step, trace.terminal.theoretical_bound)
        terminal = asdict(trace.terminal)
        terminal["stop_reason"] = trace.terminal.stop_reason.value

    d, n, k = trace.shape
    return {
        "schema": TRACE_SCHEMA,
        "algorithm": trace.algorithm.value,
        "shape": {"d": d, "n": n, "k": k},
        "config": dict(trace.config),
        "records": [asdict(rec) for rec in trace.records],
        "terminal": terminal,
        "iterates": {
            "u": [u.tolist() for u in trace.u_iterates],
            "s": [s.tolist() for s in trace.s_iterates],
        },
        "output_u": _array_or_none(trace.output_u),
        "certificate_s": _array_or_none(trace.certificate_s),
    }


def serialize(trace: ConvergenceTrace) -> str:
    """Deterministic JSON text for a trace (sorted keys, no timestamps)."""
    return json.dumps(to_dict(trace), indent=2, sort_keys=True)


def _matrix(rows, d: int, k: int, dtype) -> np.ndarray:
    arr = np.array(rows, dtype=dtype)
    return arr.reshape(d, k)


def parse(text: str) -> ConvergenceTrace:
    """
    Rebuild a trace from its JSON text.

    Raises:
        ParseError: If the text is not JSON or carries another schema
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"trace is not valid JSON: {e.msg}", row=e.lineno, column=e.colno) from e
    if not isinstance(data, dict) or data.get("schema") != TRACE_SCHEMA:
        raise ParseError(f"expected schema {TRACE_SCHEMA!r}")

    try:
        d, n, k = data["shape"]["d"], data["shape"]["n"], data["shape"]["k"]
        records = [IterationRecord(**rec) for rec in data["records"]]
        terminal = None
        if data["terminal"] is not None:
            fields = dict(data["terminal"])
            fields["stop_reason"] = StopReason(fields["stop_reason"])
            terminal = TerminalBlock(**fields)
        output_u = data.get("output_u")
        certificate_s = data.get("certificate_s")
        return ConvergenceTrace(
            algorithm=Algorithm(data["algorithm"]),
            config=data["config"],
            shape=(d, n, k),
            records=records,
            u_iterates=[_matrix(u, d, k, np.float64) for u in data["iterates"]["u"]],
            s_iterates=[_matrix(s, n, k, np.int8) for s in data["iterates"]["s"]],
            terminal=terminal,
            output_u=None if output_u is None else _matrix(output_u, d, k, np.float64),
            certificate_s=None if certificate_s is None else _matrix(certificate_s, n, k, np.int8),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed trace: {e}") from e


def save_json(trace: ConvergenceTrace, path: str) -> None:
    Path(path).write_text(serialize(trace) + "\n")


def load_json(path: str) -> ConvergenceTrace:
    trace_path = Path(path)
    if not trace_path.exists():
        raise FileNotFoundError(f"Trace file not found: {path}")
    return parse(trace_path.read_text())


def emit_csv(trace: ConvergenceTrace, path: str) -> None:
    """Write one line per iteration with columns k, F, bilinear, s_changed, u_delta."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for rec in trace.records:
            writer.writerow([rec.k, repr(rec.f_value), repr(rec.bilinear),
                             int(rec.s_changed), repr(rec.u_delta)])
