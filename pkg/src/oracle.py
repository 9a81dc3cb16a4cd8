import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInstance, InvalidInput, ShapeError, TooLarge
from .polar_core import RANK_RTOL, as_dense, as_stiefel, compact_svd, polar_decompose, spectral_norm

logger = logging.getLogger(__name__)

DEFAULT_FMAX_LIMIT = 2 ** 24
DEFAULT_TAU_STAR_LIMIT = 3 ** 15
TAU_ZERO_RTOL = 1e-12
CHUNK = 1 << 14


class BoundKind(str, Enum):
    NGA_OBJECTIVE = "nga_objective"
    SPNGA_ITERATES = "spnga_iterates"
    SPAME_ITERATES = "spame_iterates"
    SPAME_STATEMENT = "spame_statement"


@dataclass
class OracleResult:
    """Exact maximum of the L1 objective found by enumeration.

    Attributes:
        f_max: max over S in {-1,+1}^{n x K} of ||X S||_*
        s_star: Lexicographically smallest maximizing sign matrix
        u_star: PD(X s_star), a global maximizer of F over the Stiefel manifold
        enumerated: Number of sign matrices scored
    """

    f_max: float
    s_star: np.ndarray
    u_star: np.ndarray
    enumerated: int


def _check_k(x: np.ndarray, k: int) -> None:
    if not 1 <= k <= x.shape[0]:
        raise ShapeError(f"K must satisfy 1 <= K <= d={x.shape[0]}, got {k}")


def default_zero_tol(x: np.ndarray) -> float:
    """Entries |x_i^T u_j| at or below this count as zero when measuring tau."""
    norms = np.linalg.norm(x, axis=0)
    return TAU_ZERO_RTOL * float(norms.max()) if norms.size else 0.0


def _decode_binary(indices: np.ndarray, nk: int) -> np.ndarray:
    """Sign patterns with a leading -1 followed by the bits of ``indices``, MSB first."""
    shifts = np.arange(nk - 2, -1, -1, dtype=np.int64)
    bits = (indices[:, None] >> shifts) & 1
    lead = -np.ones((indices.size, 1), dtype=np.int8)
    return np.hstack([lead, (2 * bits - 1).astype(np.int8)])


def _decode_ternary(indices: np.ndarray, nk: int) -> np.ndarray:
    """Patterns over {-1, 0, +1} in lexicographic order, most significant entry first."""
    powers = 3 ** np.arange(nk - 1, -1, -1, dtype=np.int64)
    digits = (indices[:, None] // powers) % 3
    return (digits - 1).astype(np.int8)


def _nuclear_scores(w: np.ndarray) -> np.ndarray:
    if w.shape[-1] == 1:
        return np.linalg.norm(w[..., 0], axis=-1)
    return np.linalg.svd(w, compute_uv=False).sum(axis=-1)


def brute_force_fmax(x, k: int, limit: int = DEFAULT_FMAX_LIMIT, workers: int = 1) -> OracleResult:
    """
    Global maximum of ||X^T U||_1 by enumerating sign matrices.

    max_U ||X^T U||_1 = max over S in {-1,+1}^{n x K} of ||X S||_*. Since S
    and -S score the same, only patterns whose first entry is -1 are scored;
    these are exactly the lexicographically smaller member of each pair.
    Scores within 1e-12 relative of the maximum count as ties and the
    lexicographically smallest tied pattern wins.

    Args:
        x: d x n data matrix
        k: Number of components
        limit: Refuse to run when 2^(n K) exceeds this
        workers: Threads used to score chunks

    Returns:
        OracleResult

    Raises:
        TooLarge: If 2^(n K) > limit
    """
    x = as_dense(x, "X")
    _check_k(x, k)
    n = x.shape[1]
    nk = n * k
    if nk == 0:
        raise ShapeError("X has no samples")
    total = 2 ** nk
    if total > limit:
        raise TooLarge(f"2^{nk} = {total} sign matrices exceed the limit {limit}")

    half = total // 2
    scores = np.empty(half)

    def score_chunk(start: int) -> None:
        idx = np.arange(start, min(start + CHUNK, half), dtype=np.int64)
        s = _decode_binary(idx, nk).reshape(idx.size, n, k)
        scores[start:start + idx.size] = _nuclear_scores(x @ s)

    starts = range(0, half, CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(score_chunk, starts))
    else:
        for start in starts:
            score_chunk(start)

    best = float(scores.max())
    tie_tol = 1e-12 * max(1.0, best)
    winner = int(np.flatnonzero(scores >= best - tie_tol)[0])
    s_star = _decode_binary(np.array([winner], dtype=np.int64), nk).reshape(n, k)

    w = x @ s_star
    f_max = float(compact_svd(w)[1].sum())
    u_star = polar_decompose(w).u
    logger.debug("Oracle scored %d sign matrices; F_max = %r", half, f_max)
    return OracleResult(f_max=f_max, s_star=s_star, u_star=u_star, enumerated=half)


def _min_nonzero_projection(x: np.ndarray, us: Sequence[np.ndarray], zero_tol: float) -> Optional[float]:
    best = None
    for u in us:
        v = np.abs(x.T @ u)
        v = v[v > zero_tol]
        if v.size:
            m = float(v.min())
            best = m if best is None else min(best, m)
    return best


def tau0_from_trace(x, trace, zero_tol: Optional[float] = None) -> float:
    """
    Smallest nonzero |x_i^T u_j| over the iterates a run produced.

    ``trace`` is a ConvergenceTrace or a plain sequence of U matrices. For a
    trace the starting point is excluded when later iterates exist, since
    every later iterate is a U-factor of some X S; a plain sequence is used
    as given, so adding matrices never raises the result.

    Raises:
        DegenerateInstance: If every projection is zero
    """
    x = as_dense(x, "X")
    if hasattr(trace, "u_iterates"):
        visited = list(trace.u_iterates)
        if len(visited) > 1:
            visited = visited[1:]
    else:
        visited = list(trace)
    tol = default_zero_tol(x) if zero_tol is None else zero_tol
    tau0 = _min_nonzero_projection(x, visited, tol)
    if tau0 is None:
        raise DegenerateInstance("no nonzero projection along the trace")
    return tau0


def tau1_from_u(x, u, zero_tol: Optional[float] = None) -> float:
    """Smallest nonzero |x_i^T u_j| at a single point U."""
    x = as_dense(x, "X")
    u = as_stiefel(u)
    tol = default_zero_tol(x) if zero_tol is None else zero_tol
    tau1 = _min_nonzero_projection(x, [u], tol)
    if tau1 is None:
        raise DegenerateInstance("X^T U is identically zero")
    return tau1


def tau_star(x, k: int, limit: int = DEFAULT_TAU_STAR_LIMIT, zero_tol: Optional[float] = None) -> float:
    """
    Smallest nonzero |x_i^T u_j| over U = PD(X S) for every S in {-1,0,+1}^{n x K}.

    Full-rank X S are handled in batches; rank-deficient ones go through
    polar_decompose so the canonical completion matches the solvers.

    Raises:
        TooLarge: If 3^(n K) > limit
        DegenerateInstance: If X is zero
    """
    x = as_dense(x, "X")
    _check_k(x, k)
    n = x.shape[1]
    nk = n * k
    total = 3 ** nk
    if total > limit:
        raise TooLarge(f"3^{nk} = {total} sign matrices exceed the limit {limit}")
    tol = default_zero_tol(x) if zero_tol is None else zero_tol

    best = None
    for start in range(0, total, CHUNK):
        idx = np.arange(start, min(start + CHUNK, total), dtype=np.int64)
        s = _decode_ternary(idx, nk).reshape(idx.size, n, k).astype(np.float64)
        w = x @ s
        w = w[np.any(w != 0.0, axis=(1, 2))]
        if w.shape[0] == 0:
            continue
        left, sigma, right = np.linalg.svd(w, full_matrices=False)
        u = left @ right
        deficient = np.flatnonzero(sigma[:, -1] <= RANK_RTOL * sigma[:, 0])
        for i in deficient:
            u[i] = polar_decompose(w[i]).u
        v = np.abs(x.T @ u)
        v = v[v > tol]
        if v.size:
            m = float(v.min())
            best = m if best is None else min(best, m)
    if best is None:
        raise DegenerateInstance("X is zero; tau* is undefined")
    return best


def step_bound(kind: BoundKind, f_max: float, tau: Optional[float] = None,
               tau0: Optional[float] = None, gamma: float = 0.0) -> int:
    """
    Worst-case number of steps before a solver freezes.

    NGA_OBJECTIVE    ceil(F_max / tau0)
    SPNGA_ITERATES   ceil(2 F_max / tau)
    SPAME_ITERATES   ceil(4 F_max / (tau (1 - gamma)))
    SPAME_STATEMENT  ceil(8 F_max / (tau (1 - gamma)))
    """
    if f_max < 0:
        raise InvalidInput(f"f_max must be nonnegative, got {f_max}")
    if kind == BoundKind.NGA_OBJECTIVE:
        if tau0 is None or tau0 <= 0:
            raise InvalidInput("NGA bound needs tau0 > 0")
        return math.ceil(f_max / tau0)
    if tau is None or tau <= 0:
        raise InvalidInput(f"{kind.value} bound needs tau > 0")
    if kind == BoundKind.SPNGA_ITERATES:
        return math.ceil(2.0 * f_max / tau)
    if not 0 <= gamma < 1:
        raise InvalidInput(f"gamma must lie in [0, 1), got {gamma}")
    factor = 4.0 if kind == BoundKind.SPAME_ITERATES else 8.0
    return math.ceil(factor * f_max / (tau * (1.0 - gamma)))


def gamma_threshold(x, tau: float, beta_or_lambda: float) -> float:
    """Extrapolation ceiling min(1, b tau / ||X||_2^2) below which sign freezing is guaranteed."""
    x = as_dense(x, "X")
    if tau <= 0:
        raise InvalidInput(f"tau must be positive, got {tau}")
    if beta_or_lambda < 0:
        raise InvalidInput(f"beta/lambda must be nonnegative, got {beta_or_lambda}")
    norm = spectral_norm(x)
    if norm == 0.0:
        return 1.0
    return min(1.0, beta_or_lambda * tau / norm ** 2)
