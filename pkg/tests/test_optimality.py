import pytest
import numpy as np
from hypothesis import given, settings, strategies as st

from src.errors import ShapeError
from src.optimality import (
    check_foc, check_kkt, check_partial_max, condgrad_ascent_gap, foc_variational_gap,
    polar_ascent_gap, subgrad_member,
)
from src.polar_core import PdRegistry, polar_decompose, sgn_matrix
from src.solvers import Algorithm, SolverConfig, StopReason, init_u, nga_step, run


def test_subgrad_member_free_on_zero_entries():
    """Where x_i^T u_j = 0 any sign is allowed."""
    x = np.eye(2)
    u = np.array([[1.0], [0.0]])
    for s0 in (-1, 0, 1):
        assert subgrad_member(x, u, np.array([[1], [s0]]))
    assert not subgrad_member(x, u, np.array([[-1], [0]]))


def test_foc_at_polar_fixed_point(golden_x):
    """U = PD(X S) with S = sgn(X^T U) satisfies the first-order condition."""
    s = np.array([[1], [1], [-1], [1]], dtype=np.int8)
    u = polar_decompose(golden_x @ s).u
    report = check_foc(golden_x, u, s)
    assert report.is_foc and report.is_kkt and report.is_partial_max
    assert report.is_subgrad_member
    assert report.foc_residual <= report.tol
    assert report.u_pd_distance == pytest.approx(0.0, abs=1e-12)


def test_kkt_without_foc():
    """A symmetric but indefinite multiplier satisfies KKT and fails FOC.

    With X = U = I the sign pattern is free off the diagonal, so X S = S can
    be any symmetric sign matrix with a positive diagonal.
    """
    x = np.eye(3)
    u = np.eye(3)
    s = np.array([[1, 1, -1], [1, 1, 1], [-1, 1, 1]], dtype=np.int8)
    report = check_kkt(x, u, s)
    assert report.is_kkt
    assert not report.is_foc
    assert report.h_min_eig < 0
    assert not check_partial_max(x, u, s)


def test_check_foc_rejects_shape(golden_x):
    with pytest.raises(ShapeError):
        check_foc(golden_x, np.eye(2, 1), np.ones((3, 1)))


def test_non_foc_point(golden_x):
    u = np.array([[0.0], [1.0]])
    report = check_foc(golden_x, u, sgn_matrix(golden_x.T @ u))
    assert not report.is_foc


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_polar_ascent_gap(seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((5, 2))
    z = polar_decompose(rng.standard_normal((5, 2))).u
    lhs, rhs = polar_ascent_gap(c, z)
    assert lhs >= rhs - 1e-10


def test_polar_ascent_gap_at_maximizer(rng):
    c = rng.standard_normal((4, 2))
    lhs, rhs = polar_ascent_gap(c, polar_decompose(c).u)
    assert lhs == pytest.approx(0.0, abs=1e-12)
    assert rhs == pytest.approx(0.0, abs=1e-12)


def test_condgrad_ascent_gap(gaussian_instance):
    u = init_u(4, 2, seed=6)
    u_next, s = nga_step(gaussian_instance, u, PdRegistry())
    linear, actual = condgrad_ascent_gap(gaussian_instance, u, u_next, s)
    assert linear >= -1e-12
    assert actual >= linear - 1e-10


def test_foc_variational_gap_nonnegative(golden_x):
    s = np.array([[1], [1], [-1], [1]], dtype=np.int8)
    u = polar_decompose(golden_x @ s).u
    assert foc_variational_gap(golden_x, u, s, samples=32) >= -1e-10
    assert foc_variational_gap(golden_x, -u, -s, samples=32) >= -1e-10


@pytest.mark.parametrize("seed", range(6))
def test_foc_matches_nga_fixed_point(seed):
    """FOC holds exactly where one more NGA step leaves U in place."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 7))
    trace = run(x, SolverConfig(Algorithm.NGA, max_iter=500), init_u(4, 2, seed=seed))
    if trace.terminal.stop_reason != StopReason.S_FROZEN:
        pytest.skip("run ended on an objective tie")
    u = trace.terminal_u
    u_next, _ = nga_step(x, u, PdRegistry())
    assert np.array_equal(u_next, u)
    assert check_foc(x, u, sgn_matrix(x.T @ u)).is_foc

    start = init_u(4, 2, seed=seed + 100)
    moved, _ = nga_step(x, start, PdRegistry())
    assert not check_foc(x, start, sgn_matrix(x.T @ start)).is_foc
    assert np.linalg.norm(moved - start) > 1e-8


@pytest.mark.parametrize("seed", range(6))
def test_foc_invariant_under_column_sign_flip(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 6))
    flip = np.diag([1.0, -1.0])
    trace = run(x, SolverConfig(Algorithm.NGA, max_iter=500), init_u(3, 2, seed=seed))
    stationary = trace.terminal_u
    for u, expected in ((stationary, True), (init_u(3, 2, seed=seed + 50), False)):
        s = sgn_matrix(x.T @ u)
        flipped = check_foc(x, u @ flip, (s @ flip).astype(np.int8))
        assert check_foc(x, u, s).is_foc == flipped.is_foc
        if trace.terminal.stop_reason == StopReason.S_FROZEN:
            assert flipped.is_foc == expected


@pytest.mark.integration
def test_polar_ascent_gap_sweep():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        m = int(rng.integers(1, 7))
        k = int(rng.integers(1, m + 1))
        c = rng.standard_normal((m, k)) * rng.uniform(0.1, 10.0)
        z = polar_decompose(rng.standard_normal((m, k))).u
        lhs, rhs = polar_ascent_gap(c, z)
        assert lhs >= rhs - 1e-10 * max(1.0, float(np.abs(c).sum()))
