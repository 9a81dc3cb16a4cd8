import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import InvalidInput, ShapeError
from .polar_core import as_dense, as_sign_matrix, as_stiefel, nuclear_norm, polar_decompose

logger = logging.getLogger(__name__)

DEFAULT_FOC_TOL = 1e-8
SUBGRAD_ZERO_RTOL = 1e-9


@dataclass
class OptimalityReport:
    """Verdicts and residuals for a candidate pair (U, S).

    ``foc_residual`` is ||X S - U H||_F with H the symmetric part of U^T X S,
    which is also the best multiplier for the KKT system, so the two
    residuals coincide; the verdicts differ only in whether H must be
    positive semidefinite. ``u_pd_distance`` is ||U - PD(X S)||_F when X S
    has full column rank, else None.
    """

    foc_residual: float
    kkt_residual: float
    h_min_eig: float
    is_subgrad_member: bool
    is_foc: bool
    is_kkt: bool
    is_partial_max: bool
    tol: float
    u_pd_distance: Optional[float] = None


def default_tol(x: np.ndarray) -> float:
    return DEFAULT_FOC_TOL * max(1.0, float(np.linalg.norm(x)))


def default_zero_tol(x: np.ndarray) -> float:
    norms = np.linalg.norm(x, axis=0)
    return SUBGRAD_ZERO_RTOL * float(norms.max()) if norms.size else 0.0


def _validate(x, u, s) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = as_dense(x, "X")
    u = as_stiefel(u)
    s = as_sign_matrix(s)
    d, n = x.shape
    if u.shape[0] != d:
        raise ShapeError(f"U has {u.shape[0]} rows but X has {d}")
    if s.shape != (n, u.shape[1]):
        raise ShapeError(f"S must be {n} x {u.shape[1]}, got {s.shape}")
    return x, u, s


def subgrad_member(x, u, s, zero_tol: Optional[float] = None) -> bool:
    """
    Whether S is a subgradient sign pattern of ||V||_1 at V = X^T U.

    Entries with |V_ij| > zero_tol must carry sgn(V_ij); the rest may be
    anything in {-1, 0, +1}.
    """
    x, u, s = _validate(x, u, s)
    tol = default_zero_tol(x) if zero_tol is None else zero_tol
    v = x.T @ u
    mask = np.abs(v) > tol
    return bool(np.all(s[mask] == np.sign(v[mask])))


def _multiplier(x: np.ndarray, u: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    w = x @ s
    h = u.T @ w
    h = 0.5 * (h + h.T)
    return w, h, float(np.linalg.norm(w - u @ h))


def _report(x, u, s, tol: Optional[float], zero_tol: Optional[float]) -> OptimalityReport:
    x, u, s = _validate(x, u, s)
    tol = default_tol(x) if tol is None else tol
    member = subgrad_member(x, u, s, zero_tol)
    w, h, residual = _multiplier(x, u, s)
    h_min = float(np.linalg.eigvalsh(h).min())

    u_pd_distance = None
    if np.any(w != 0.0):
        factors = polar_decompose(w)
        if factors.full_rank:
            u_pd_distance = float(np.linalg.norm(u - factors.u))

    is_kkt = member and residual <= tol
    is_foc = is_kkt and h_min >= -tol
    return OptimalityReport(
        foc_residual=residual,
        kkt_residual=residual,
        h_min_eig=h_min,
        is_subgrad_member=member,
        is_foc=is_foc,
        is_kkt=is_kkt,
        is_partial_max=check_partial_max(x, u, s, tol, zero_tol),
        tol=tol,
        u_pd_distance=u_pd_distance,
    )


def check_foc(x, u, s, tol: Optional[float] = None, zero_tol: Optional[float] = None) -> OptimalityReport:
    """
    First-order condition: X S = U H with H symmetric PSD and S a subgradient pattern at U.

    Args:
        x: d x n data
        u: d x K orthonormal candidate
        s: n x K sign matrix
        tol: Residual tolerance, default 1e-8 * max(1, ||X||_F)
        zero_tol: Threshold below which X^T U entries count as zero

    Returns:
        OptimalityReport
    """
    return _report(x, u, s, tol, zero_tol)


def check_kkt(x, u, s, tol: Optional[float] = None, zero_tol: Optional[float] = None) -> OptimalityReport:
    """KKT condition: X S = U Lambda with Lambda symmetric; ``is_kkt`` carries the verdict."""
    return _report(x, u, s, tol, zero_tol)


def check_partial_max(x, u, s, tol: Optional[float] = None, zero_tol: Optional[float] = None) -> bool:
    """S maximizes <X^T U, .> over {-1,0,+1}^{n x K} and U maximizes <X S, .> over the Stiefel manifold."""
    x, u, s = _validate(x, u, s)
    tol = default_tol(x) if tol is None else tol
    if not subgrad_member(x, u, s, zero_tol):
        return False
    w = x @ s
    return float(np.sum(w * u)) >= nuclear_norm(w) - tol


def polar_ascent_gap(c, z) -> Tuple[float, float]:
    """
    Quadratic growth of the linear objective around its polar maximizer.

    With U, H the polar factors of C returns
    (<U, C> - <Z, C>, lambda_min(H) / 2 * ||U - Z||_F^2); the first is never
    smaller than the second for orthonormal Z.
    """
    c = as_dense(c, "C")
    z = as_stiefel(z)
    if z.shape != c.shape:
        raise ShapeError(f"Z has shape {z.shape} but C has shape {c.shape}")
    factors = polar_decompose(c)
    lhs = float(np.sum(factors.u * c) - np.sum(z * c))
    rhs = 0.5 * factors.lambda_min * float(np.linalg.norm(factors.u - z)) ** 2
    return lhs, rhs


def condgrad_ascent_gap(x, u, u_next, s) -> Tuple[float, float]:
    """
    Linearized and actual ascent of one conditional-gradient step.

    Returns (<X S, U_next - U>, F(U_next) - F(U)); for S a subgradient
    pattern at U the first is a lower bound for the second.
    """
    x, u, s = _validate(x, u, s)
    u_next = as_stiefel(u_next)
    if u_next.shape != u.shape:
        raise ShapeError("U and U_next must share a shape")
    linear = float(np.sum((x @ s) * (u_next - u)))
    actual = float(np.abs(x.T @ u_next).sum() - np.abs(x.T @ u).sum())
    return linear, actual


def foc_variational_gap(x, u, s, samples: int = 64, seed: int = 0) -> float:
    """
    Smallest <X S, U - Z> over random orthonormal Z and Z = PD(X S).

    Nonnegative (up to round-off) whenever (U, S) satisfies the first-order
    condition.
    """
    x, u, s = _validate(x, u, s)
    if samples < 0:
        raise InvalidInput("samples must be nonnegative")
    w = x @ s
    base = float(np.sum(w * u))
    rng = np.random.default_rng(seed)
    candidates = [polar_decompose(rng.standard_normal(u.shape)).u for _ in range(samples)]
    if np.any(w != 0.0):
        candidates.append(polar_decompose(w).u)
    if not candidates:
        return 0.0
    return min(base - float(np.sum(w * z)) for z in candidates)
