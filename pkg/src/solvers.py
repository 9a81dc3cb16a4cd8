import math
import logging
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .errors import DegenerateInstance, DegenerateIterate, InvalidInput, ShapeError
from .oracle import tau0_from_trace
from .optimality import check_foc, subgrad_member
from .polar_core import (
    PdRegistry, as_dense, as_sign_matrix, as_stiefel, compact_svd, complete_columns,
    polar_decompose, sgn_matrix,
)
from .trace import (
    PAME_U_FREEZE_TOL, Algorithm, ConvergenceTrace, IterationRecord, StopReason,
    TerminalBlock, bound_report, bound_satisfied, freeze_steps,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Algorithm", "StopReason", "InitScheme", "SolverConfig", "SolverState",
    "objective_F", "objective_bilinear", "nga_step", "spnga_step", "pame_step",
    "spame_step", "condgrad_step", "pame_output", "init_u", "initial_state", "run",
]


class InitScheme(str, Enum):
    RANDOM_STIEFEL = "random"
    FIRST_COLUMNS = "first"
    SVD_WARM_START = "svd"


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters of one solver run.

    Args:
        algorithm: Which update rule to iterate
        tau: Proximal weight on the sign step (S-PNGA, PAMe, S-PAMe)
        beta: Proximal weight on the U step (PAMe only)
        gamma: Extrapolation weight in [0, 1) (PAMe, S-PAMe)
        max_iter: Hard cap on the number of steps
        freeze_window: Consecutive unchanged sign steps that end a run;
            defaults to 3 for S-PAMe and 1 otherwise
        relaxed: Allow tau = 0 and beta = 0 so the reduced forms
            (PAMe with tau = beta = gamma = 0 is NGA) can be run
        foc_tol: Tolerance for the terminal optimality certificate
    """

    algorithm: Algorithm
    tau: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    max_iter: int = 1000
    freeze_window: Optional[int] = None
    relaxed: bool = False
    foc_tol: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.freeze_window is None:
            object.__setattr__(self, "freeze_window", 3 if self.algorithm == Algorithm.SPAME else 1)

        for name in ("tau", "beta", "gamma"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InvalidInput(f"{name} must be a finite nonnegative number, got {value}")
        if self.gamma >= 1:
            raise InvalidInput(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.max_iter < 1:
            raise InvalidInput(f"max_iter must be positive, got {self.max_iter}")
        if self.freeze_window < 1:
            raise InvalidInput(f"freeze_window must be positive, got {self.freeze_window}")

        if self.algorithm == Algorithm.SPAME and self.beta != 0:
            raise InvalidInput("S-PAMe has no proximal term on U; beta must be 0")
        if not self.relaxed:
            if self.algorithm != Algorithm.NGA and self.tau <= 0:
                raise InvalidInput(f"{self.algorithm.value} requires tau > 0")
            if self.algorithm == Algorithm.PAME and self.beta <= 0:
                raise InvalidInput("pame requires beta > 0")

    @classmethod
    def default_for(cls, algorithm, x, tau: Optional[float] = None, beta: Optional[float] = None,
                    gamma: float = 0.0, **kwargs) -> "SolverConfig":
        """
        Configuration with the usual defaults for ``algorithm`` on data ``x``.

        max_iter defaults to 10 * ceil(4 F_hat / (tau (1 - gamma))) with
        F_hat = sum of the l1 norms of the samples, an upper bound on the
        objective; tau = 1 stands in when tau is 0.
        """
        algorithm = Algorithm(algorithm)
        x = as_dense(x, "X")
        if tau is None:
            tau = 0.0 if algorithm == Algorithm.NGA else 0.1
        if beta is None:
            beta = 0.1 if algorithm == Algorithm.PAME else 0.0
        if "max_iter" not in kwargs or kwargs["max_iter"] is None:
            f_hat = float(np.abs(x).sum())
            t = tau if tau > 0 else 1.0
            g = gamma if 0 <= gamma < 1 else 0.0
            kwargs["max_iter"] = max(1, 10 * math.ceil(4.0 * f_hat / (t * (1.0 - g))))
        return cls(algorithm=algorithm, tau=tau, beta=beta, gamma=gamma, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["algorithm"] = self.algorithm.value
        return data


@dataclass(frozen=True)
class SolverState:
    """Iterate k of a solver: U^k, S^k, U^{k-1} and the extrapolated point E^k."""

    k: int
    u: np.ndarray
    s: np.ndarray
    u_prev: np.ndarray
    e: np.ndarray


def _check_shapes(x, u, s=None) -> None:
    if np.ndim(x) != 2 or np.ndim(u) != 2:
        raise ShapeError(f"X and U must be 2-D, got {np.ndim(x)}-D and {np.ndim(u)}-D")
    if u.shape[0] != x.shape[0]:
        raise ShapeError(f"U has {u.shape[0]} rows but X has {x.shape[0]}")
    if s is not None and np.shape(s) != (x.shape[1], u.shape[1]):
        raise ShapeError(f"S must be {x.shape[1]} x {u.shape[1]}, got {np.shape(s)}")


def objective_F(x, u) -> float:
    """F(U) = ||X^T U||_1."""
    x, u = np.asarray(x), np.asarray(u)
    _check_shapes(x, u)
    return float(np.abs(x.T @ u).sum())


def objective_bilinear(x, u, s) -> float:
    """F(U, S) = <X^T U, S>."""
    x, u = np.asarray(x), np.asarray(u)
    _check_shapes(x, u, s)
    return float(np.sum((x.T @ u) * s))


def _polar_input(x: np.ndarray, s: np.ndarray, k: int) -> np.ndarray:
    w = x @ s
    if not np.any(w):
        raise DegenerateIterate("X S is zero; the polar step is undefined", k=k)
    return w


def nga_step(x, u, registry: PdRegistry) -> Tuple[np.ndarray, np.ndarray]:
    """
    One normalized generalized-gradient step U+ = PD(X sgn(X^T U)).

    Returns:
        Tuple (U+, S) with S = sgn(X^T U)

    Raises:
        DegenerateIterate: If X S = 0
    """
    s = sgn_matrix(x.T @ u)
    w = _polar_input(x, s, 0)
    return registry.factors(w, s).u, s


def condgrad_step(x, u, s, registry: PdRegistry, zero_tol: Optional[float] = None) -> np.ndarray:
    """
    Conditional-gradient step U+ = PD(X S) for a caller-chosen subgradient pattern S.

    Raises:
        InvalidInput: If S is not a subgradient pattern at U
    """
    s = as_sign_matrix(s)
    if not subgrad_member(x, u, s, zero_tol):
        raise InvalidInput("S is not a subgradient sign pattern of ||X^T U||_1 at U")
    w = _polar_input(x, s, 0)
    return registry.factors(w, s).u


def spnga_step(x, state: SolverState, tau: float, registry: PdRegistry) -> SolverState:
    """U^{k+1} = PD(X S^k), then S^{k+1} = sgn(tau S^k + X^T U^{k+1})."""
    w = _polar_input(x, state.s, state.k + 1)
    u_next = registry.factors(w, state.s).u
    v = x.T @ u_next
    s_next = sgn_matrix(v if tau == 0 else tau * state.s + v)
    return SolverState(k=state.k + 1, u=u_next, s=s_next, u_prev=state.u, e=u_next)


def _extrapolate(u_next: np.ndarray, u: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 0:
        return u_next
    return u_next - gamma * (u - u_next)


def _sign_step(x: np.ndarray, state: SolverState, tau: float) -> np.ndarray:
    v = x.T @ state.e
    return sgn_matrix(v if tau == 0 else tau * state.s + v)


def pame_step(x, state: SolverState, cfg: SolverConfig) -> SolverState:
    """
    One proximal alternating step with extrapolation.

    S^{k+1} = sgn(tau S^k + X^T E^k), U^{k+1} = PD(beta U^k + X S^{k+1})
    computed fresh (no registry), E^{k+1} = U^{k+1} - gamma (U^k - U^{k+1}).
    With tau = beta = gamma = 0 this is exactly an NGA step.
    """
    s_next = _sign_step(x, state, cfg.tau)
    xs = x @ s_next
    b = xs if cfg.beta == 0 else cfg.beta * state.u + xs
    if not np.any(b):
        raise DegenerateIterate("beta U + X S is zero; the polar step is undefined", k=state.k + 1)
    u_next = polar_decompose(b).u
    return SolverState(k=state.k + 1, u=u_next, s=s_next, u_prev=state.u,
                       e=_extrapolate(u_next, state.u, cfg.gamma))


def spame_step(x, state: SolverState, cfg: SolverConfig, registry: PdRegistry) -> SolverState:
    """PAMe with beta = 0 and the U-factor taken through ``registry``."""
    s_next = _sign_step(x, state, cfg.tau)
    w = _polar_input(x, s_next, state.k + 1)
    u_next = registry.factors(w, s_next).u
    return SolverState(k=state.k + 1, u=u_next, s=s_next, u_prev=state.u,
                       e=_extrapolate(u_next, state.u, cfg.gamma))


def pame_output(x, s, registry: Optional[PdRegistry] = None) -> np.ndarray:
    """PD(X S) for a frozen sign matrix S, the point PAMe's U-iterates approach."""
    registry = PdRegistry() if registry is None else registry
    s = as_sign_matrix(s)
    return registry.factors(_polar_input(x, s, 0), s).u


def init_u(d: int, k: int, seed: int = 0, scheme: InitScheme = InitScheme.RANDOM_STIEFEL,
           x=None) -> np.ndarray:
    """
    Starting point on the Stiefel manifold.

    Args:
        d: Ambient dimension
        k: Number of components
        seed: Seed for the random scheme
        scheme: RANDOM_STIEFEL (U-factor of a Gaussian matrix), FIRST_COLUMNS
            (first K columns of the identity) or SVD_WARM_START (top-K left
            singular vectors of X)
        x: Data, required by SVD_WARM_START

    Returns:
        d x K orthonormal matrix
    """
    scheme = InitScheme(scheme)
    if not 1 <= k <= d:
        raise ShapeError(f"K must satisfy 1 <= K <= d, got K={k}, d={d}")

    if scheme == InitScheme.RANDOM_STIEFEL:
        rng = np.random.default_rng(seed)
        return np.array(polar_decompose(rng.standard_normal((d, k))).u)
    if scheme == InitScheme.FIRST_COLUMNS:
        return np.eye(d, k)

    if x is None:
        raise InvalidInput("svd warm start needs the data matrix")
    x = as_dense(x, "X")
    if x.shape[0] != d:
        raise ShapeError(f"X has {x.shape[0]} rows, expected {d}")
    n = x.shape[1]
    if d >= n:
        left = compact_svd(x)[0]
    else:
        left = compact_svd(x.T)[2]
    u = np.zeros((d, k))
    cols = min(k, left.shape[1])
    u[:, :cols] = left[:, :cols]
    if cols < k:
        complete_columns(u, cols)
    return u


def initial_state(x, u0) -> SolverState:
    """State at k = 0: S^0 = sgn(X^T U^0) and E^0 = U^{-1} = U^0."""
    u0 = np.asarray(u0, dtype=np.float64)
    return SolverState(k=0, u=u0, s=sgn_matrix(x.T @ u0), u_prev=u0, e=u0)


def _advance(x: np.ndarray, state: SolverState, cfg: SolverConfig, registry: PdRegistry) -> SolverState:
    if cfg.algorithm == Algorithm.NGA:
        u_next, _ = nga_step(x, state.u, registry)
        return SolverState(k=state.k + 1, u=u_next, s=sgn_matrix(x.T @ u_next),
                           u_prev=state.u, e=u_next)
    if cfg.algorithm == Algorithm.SPNGA:
        return spnga_step(x, state, cfg.tau, registry)
    if cfg.algorithm == Algorithm.PAME:
        return pame_step(x, state, cfg)
    return spame_step(x, state, cfg, registry)


def _record(x: np.ndarray, state: SolverState, prev: Optional[SolverState], factors,
            limit_residual: Optional[float] = None) -> IterationRecord:
    return IterationRecord(
        k=state.k,
        f_value=objective_F(x, state.u),
        bilinear=objective_bilinear(x, state.u, state.s),
        cross=None if prev is None else objective_bilinear(x, state.u, prev.s),
        s_changed=False if prev is None else not np.array_equal(state.s, prev.s),
        u_delta=0.0 if prev is None else float(np.linalg.norm(state.u - prev.u)),
        rank_xs=factors.rank,
        lambda_min_h=factors.lambda_min,
        limit_residual=limit_residual,
    )


def _stop_reason(cfg: SolverConfig, rec: IterationRecord, unchanged: int) -> Optional[StopReason]:
    if cfg.algorithm == Algorithm.NGA:
        if rec.bilinear == rec.cross:
            return StopReason.OBJECTIVE_FROZEN if rec.s_changed else StopReason.S_FROZEN
        return None
    if unchanged < cfg.freeze_window:
        return None
    if cfg.algorithm == Algorithm.PAME:
        return StopReason.U_FROZEN if rec.u_delta <= PAME_U_FREEZE_TOL else None
    return StopReason.S_FROZEN


def run(x, cfg: SolverConfig, u0, f_max: Optional[float] = None) -> ConvergenceTrace:
    """
    Iterate ``cfg.algorithm`` from ``u0`` until its iterates freeze or max_iter is hit.

    NGA stops as soon as F(U^k, S^k) = F(U^k, S^{k-1}); the other methods
    stop once S has been unchanged for ``freeze_window`` consecutive steps
    (PAMe additionally waits for ||U^k - U^{k-1}||_F <= 1e-12). The trace
    carries per-iteration records, the iterates, the freeze steps and an
    optimality certificate for the reported solution. When ``f_max`` is
    given the theoretical freeze bound is evaluated as well.

    Args:
        x: d x n data
        cfg: Solver configuration
        u0: d x K orthonormal starting point
        f_max: Global maximum of F, e.g. from the oracle

    Returns:
        ConvergenceTrace

    Raises:
        DegenerateIterate: If F(U^0) = 0 or a polar input vanishes; the
            exception carries the partial trace
    """
    x = as_dense(x, "X")
    u0 = as_stiefel(u0)
    d, n = x.shape
    if u0.shape[0] != d:
        raise ShapeError(f"U0 has {u0.shape[0]} rows but X has {d}")
    k = u0.shape[1]

    trace = ConvergenceTrace(algorithm=cfg.algorithm, config=cfg.to_dict(), shape=(d, n, k))
    if objective_F(x, u0) == 0.0:
        raise DegenerateIterate("F(U0) = 0: every sample is orthogonal to U0", k=0, trace=trace)

    registry = PdRegistry()
    state = initial_state(x, u0)
    trace.u_iterates.append(state.u)
    trace.s_iterates.append(state.s)
    trace.records.append(_record(x, state, None, registry.factors(_polar_input(x, state.s, 0), state.s)))

    stop = StopReason.MAX_ITER
    unchanged = 0
    prev = state
    uses_new_sign = cfg.algorithm in (Algorithm.PAME, Algorithm.SPAME)
    for _ in range(cfg.max_iter):
        try:
            nxt = _advance(x, state, cfg, registry)
            s_used = nxt.s if uses_new_sign else state.s
            factors = registry.factors(_polar_input(x, s_used, nxt.k), s_used)
        except DegenerateIterate as e:
            e.k = state.k + 1
            e.trace = trace
            logger.error("Degenerate iterate at k=%d", e.k)
            raise

        limit_residual = None
        if cfg.algorithm == Algorithm.PAME and np.array_equal(nxt.s, state.s):
            limit_residual = float(np.linalg.norm(nxt.u - factors.u))
        rec = _record(x, nxt, state, factors, limit_residual)
        trace.records.append(rec)
        trace.u_iterates.append(nxt.u)
        trace.s_iterates.append(nxt.s)
        logger.debug("k=%d F=%r bilinear=%r s_changed=%s u_delta=%.3e rank=%d",
                     rec.k, rec.f_value, rec.bilinear, rec.s_changed, rec.u_delta, rec.rank_xs)

        unchanged = 0 if rec.s_changed else unchanged + 1
        prev, state = state, nxt
        reason = _stop_reason(cfg, rec, unchanged)
        if reason is not None:
            stop = reason
            break

    if cfg.algorithm == Algorithm.PAME:
        trace.certificate_s = state.s
        if stop != StopReason.MAX_ITER:
            trace.output_u = pame_output(x, state.s, registry)
    elif uses_new_sign:
        trace.certificate_s = state.s
    else:
        trace.certificate_s = prev.s

    foc = check_foc(x, trace.terminal_u, trace.certificate_s, tol=cfg.foc_tol)
    u_tol = PAME_U_FREEZE_TOL if cfg.algorithm == Algorithm.PAME else 0.0
    s_step, u_step, obj_step = freeze_steps(trace.records, stop, u_tol)
    later = trace.records[1:] or trace.records
    trace.terminal = TerminalBlock(
        stop_reason=stop,
        s_freeze_step=s_step,
        u_freeze_step=u_step,
        obj_freeze_step=obj_step,
        foc_certified=foc.is_foc,
        rank_hypothesis_held=all(rec.rank_xs == k for rec in trace.records),
        lambda_min=min(rec.lambda_min_h for rec in later),
        f_max=f_max,
    )

    if f_max is not None:
        if cfg.algorithm == Algorithm.NGA:
            try:
                trace.terminal.tau0 = tau0_from_trace(x, trace)
            except DegenerateInstance:
                trace.terminal.tau0 = None
        report = bound_report(trace)
        trace.terminal.theoretical_bound = report["theoretical"]
        trace.terminal.statement_bound = report["statement"]
        trace.terminal.observed_step = report["observed"]
        trace.terminal.bound_satisfied = bound_satisfied(report)
        if (report["statement"] is not None and report["observed"] is not None
                and report["theoretical"] < report["observed"] <= report["statement"]):
            logger.warning("S-PAMe froze at step %d, beyond %d but within %d",
                           report["observed"], report["theoretical"], report["statement"])

    if stop == StopReason.MAX_ITER:
        logger.warning("%s hit max_iter=%d without freezing", cfg.algorithm.value, cfg.max_iter)
    else:
        logger.info("%s stopped at k=%d: %s (F=%r, FOC=%s)", cfg.algorithm.value, state.k,
                    stop.value, trace.records[-1].f_value, foc.is_foc)
    return trace
