import math

import pytest
import numpy as np
from hypothesis import given, settings, strategies as st

from src.errors import DegenerateIterate, InvalidInput, ShapeError
from src.polar_core import PdRegistry
from src.solvers import (
    Algorithm, InitScheme, SolverConfig, StopReason, condgrad_step, init_u, initial_state,
    nga_step, objective_F, objective_bilinear, pame_output, pame_step, run, spame_step, spnga_step,
)


def test_objectives(golden_x):
    u = np.array([[1.0], [0.0]])
    assert objective_F(golden_x, u) == pytest.approx(10.0)
    s = np.array([[1], [1], [-1], [1]], dtype=np.int8)
    assert objective_bilinear(golden_x, u, s) == pytest.approx(10.0)
    assert objective_bilinear(golden_x, u, -s) == pytest.approx(-10.0)


def test_nga_step_identity_data():
    """X = I with U = e1: S = [1, 0]^T and the iterate is already fixed."""
    x = np.eye(2)
    u = np.array([[1.0], [0.0]])
    u_next, s = nga_step(x, u, PdRegistry())
    assert s.tolist() == [[1], [0]]
    assert np.array_equal(u_next, u)


def test_nga_step_degenerate():
    """Every sample orthogonal to U means X S = 0."""
    x = np.array([[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(DegenerateIterate):
        nga_step(x, np.array([[0.0], [1.0]]), PdRegistry())


def test_run_degenerate_start_carries_trace():
    x = np.array([[1.0, 1.0], [0.0, 0.0]])
    cfg = SolverConfig(Algorithm.NGA)
    with pytest.raises(DegenerateIterate) as excinfo:
        run(x, cfg, np.array([[0.0], [1.0]]))
    assert excinfo.value.k == 0
    assert excinfo.value.trace is not None


def test_condgrad_step_matches_nga(gaussian_instance):
    u = init_u(4, 2, seed=3)
    expected, s = nga_step(gaussian_instance, u, PdRegistry())
    assert np.array_equal(condgrad_step(gaussian_instance, u, s, PdRegistry()), expected)


def test_condgrad_step_rejects_non_subgradient(gaussian_instance):
    u = init_u(4, 2, seed=3)
    _, s = nga_step(gaussian_instance, u, PdRegistry())
    with pytest.raises(InvalidInput):
        condgrad_step(gaussian_instance, u, -s, PdRegistry())


@pytest.mark.parametrize("kwargs", [
    {"algorithm": Algorithm.SPNGA, "tau": 0.0},
    {"algorithm": Algorithm.PAME, "tau": 0.1, "beta": 0.0},
    {"algorithm": Algorithm.PAME, "tau": 0.1, "beta": 0.1, "gamma": 1.0},
    {"algorithm": Algorithm.SPAME, "tau": 0.1, "beta": 0.5},
    {"algorithm": Algorithm.NGA, "tau": -1.0},
    {"algorithm": Algorithm.NGA, "max_iter": 0},
])
def test_solver_config_rejects(kwargs):
    with pytest.raises(InvalidInput):
        SolverConfig(**kwargs)


def test_solver_config_defaults():
    assert SolverConfig(Algorithm.SPAME, tau=0.1).freeze_window == 3
    assert SolverConfig(Algorithm.SPNGA, tau=0.1).freeze_window == 1
    relaxed = SolverConfig(Algorithm.PAME, relaxed=True)
    assert relaxed.tau == 0.0 and relaxed.beta == 0.0
    assert SolverConfig("pame", tau=1.0, beta=1.0).algorithm == Algorithm.PAME


def test_default_for_max_iter(golden_x):
    """F_hat = 15 for the golden instance, so 10 * ceil(4 * 15 / 0.5) = 1200."""
    cfg = SolverConfig.default_for(Algorithm.SPNGA, golden_x, tau=0.5)
    assert cfg.max_iter == 1200
    nga = SolverConfig.default_for(Algorithm.NGA, golden_x)
    assert nga.max_iter == 10 * 60


def test_init_u_schemes():
    assert np.array_equal(init_u(3, 2, scheme=InitScheme.FIRST_COLUMNS), np.eye(3, 2))
    u = init_u(5, 3, seed=11)
    assert np.linalg.norm(u.T @ u - np.eye(3)) <= 1e-12
    assert np.array_equal(u, init_u(5, 3, seed=11))
    assert not np.array_equal(u, init_u(5, 3, seed=12))


def test_init_u_svd_warm_start():
    x = np.diag([5.0, 1.0])
    u = init_u(2, 1, scheme=InitScheme.SVD_WARM_START, x=x)
    assert np.allclose(u, [[1.0], [0.0]])


def test_init_u_svd_warm_start_wide(golden_x):
    u = init_u(2, 2, scheme="svd", x=golden_x)
    assert np.linalg.norm(u.T @ u - np.eye(2)) <= 1e-12


def test_init_u_errors():
    with pytest.raises(ShapeError):
        init_u(2, 3)
    with pytest.raises(InvalidInput):
        init_u(2, 1, scheme=InitScheme.SVD_WARM_START)


def test_pame_step_reduces_to_nga_step(gaussian_instance):
    """tau = beta = gamma = 0 makes one PAMe step an NGA step, bit for bit."""
    cfg = SolverConfig(Algorithm.PAME, relaxed=True)
    state = initial_state(gaussian_instance, init_u(4, 2, seed=5))
    for _ in range(5):
        expected, _ = nga_step(gaussian_instance, state.u, PdRegistry())
        state = pame_step(gaussian_instance, state, cfg)
        assert np.array_equal(state.u, expected)


def test_spame_step_gamma_zero_tracks_spnga(gaussian_instance):
    """With gamma = 0 the S-PAMe U-iterates coincide with S-PNGA's."""
    u0 = init_u(4, 2, seed=9)
    cfg = SolverConfig(Algorithm.SPAME, tau=0.2)
    a = initial_state(gaussian_instance, u0)
    b = initial_state(gaussian_instance, u0)
    reg_a, reg_b = PdRegistry(), PdRegistry()
    for _ in range(6):
        a = spnga_step(gaussian_instance, a, 0.2, reg_a)
        b = spame_step(gaussian_instance, b, cfg, reg_b)
        assert np.array_equal(a.u, b.u)


def test_run_nga_golden(golden_x):
    u0 = init_u(2, 1, scheme="svd", x=golden_x)
    trace = run(golden_x, SolverConfig(Algorithm.NGA, max_iter=100), u0, f_max=math.sqrt(104.0))
    term = trace.terminal
    assert term.stop_reason in (StopReason.S_FROZEN, StopReason.OBJECTIVE_FROZEN)
    assert term.foc_certified
    assert trace.records[-1].f_value <= math.sqrt(104.0) + 1e-9
    assert term.bound_satisfied
    values = [rec.f_value for rec in trace.records]
    assert all(b >= a - 1e-10 for a, b in zip(values, values[1:]))


def test_run_nga_iterates_freeze(small_instance):
    """After the stop one more NGA step returns the same bits."""
    u0 = init_u(5, 2, seed=1)
    trace = run(small_instance, SolverConfig(Algorithm.NGA, max_iter=500), u0)
    if trace.terminal.stop_reason == StopReason.S_FROZEN:
        u_next, _ = nga_step(small_instance, trace.terminal_u, PdRegistry())
        assert np.array_equal(u_next, trace.terminal_u)
    assert trace.terminal.foc_certified


def test_run_is_deterministic(small_instance):
    u0 = init_u(5, 2, seed=4)
    cfg = SolverConfig(Algorithm.SPAME, tau=0.1, gamma=0.2, max_iter=500)
    first = run(small_instance, cfg, u0)
    second = run(small_instance, cfg, u0)
    assert len(first.u_iterates) == len(second.u_iterates)
    for a, b in zip(first.u_iterates, second.u_iterates):
        assert np.array_equal(a, b)


def test_run_spnga_bilinear_monotone(small_instance):
    u0 = init_u(5, 2, seed=2)
    trace = run(small_instance, SolverConfig(Algorithm.SPNGA, tau=0.05, max_iter=500), u0)
    values = [rec.bilinear for rec in trace.records]
    assert all(b >= a - 1e-10 for a, b in zip(values, values[1:]))
    assert trace.terminal.stop_reason == StopReason.S_FROZEN


def test_run_pame_golden(golden_x):
    u0 = init_u(2, 1, scheme="svd", x=golden_x)
    cfg = SolverConfig(Algorithm.PAME, tau=0.05, beta=0.05, max_iter=2000)
    trace = run(golden_x, cfg, u0)
    assert trace.terminal.stop_reason == StopReason.U_FROZEN
    assert trace.output_u is not None
    assert np.allclose(trace.output_u, trace.u_iterates[-1], atol=1e-10)
    assert trace.records[-1].limit_residual < 1e-6
    assert np.array_equal(trace.output_u, pame_output(golden_x, trace.certificate_s))


def test_run_spame_stops_on_sign_freeze(golden_x):
    u0 = init_u(2, 1, scheme="svd", x=golden_x)
    trace = run(golden_x, SolverConfig(Algorithm.SPAME, tau=0.05, max_iter=500), u0,
                f_max=math.sqrt(104.0))
    term = trace.terminal
    assert term.stop_reason == StopReason.S_FROZEN
    assert [rec.s_changed for rec in trace.records[-3:]] == [False, False, False]
    assert term.statement_bound >= term.theoretical_bound
    assert term.bound_satisfied


def test_run_max_iter(small_instance):
    trace = run(small_instance, SolverConfig(Algorithm.PAME, tau=0.1, beta=0.1, max_iter=1),
                init_u(5, 2, seed=3))
    if trace.terminal.stop_reason == StopReason.MAX_ITER:
        assert trace.terminal.s_freeze_step is None
        assert trace.iterations == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_nga_objective_nondecreasing(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 7))
    trace = run(x, SolverConfig(Algorithm.NGA, max_iter=300), init_u(3, 2, seed=seed))
    values = [rec.f_value for rec in trace.records]
    assert all(b >= a - 1e-10 for a, b in zip(values, values[1:]))


def test_objectives_reject_mismatched_shapes(golden_x):
    with pytest.raises(ShapeError):
        objective_F(np.ones((3, 2)), np.ones((2, 1)))
    with pytest.raises(ShapeError):
        objective_bilinear(golden_x, np.eye(2, 1), np.ones((3, 1)))
    with pytest.raises(ShapeError):
        objective_F(np.ones(3), np.ones((3, 1)))


def test_pame_step_single_component_halves_angle():
    """With beta = 1 and ||X s*|| = 1 each U step bisects U^k and X s*."""
    x = np.array([[1.0], [0.0]])
    theta = 1.2
    u0 = np.array([[math.cos(theta)], [math.sin(theta)]])
    cfg = SolverConfig(Algorithm.PAME, tau=0.1, beta=1.0)
    state = initial_state(x, u0)
    for step in range(1, 7):
        state = pame_step(x, state, cfg)
        assert state.s.tolist() == [[1]]
        angle = math.atan2(state.u[1, 0], state.u[0, 0])
        assert angle == pytest.approx(theta / 2 ** step, abs=1e-12)


def test_spnga_step_large_tau_keeps_signs(gaussian_instance):
    """Once tau exceeds every |x_i^T u| the sign matrix can no longer move."""
    x = gaussian_instance
    tau = float(np.linalg.norm(x, axis=0).max()) * 10.0
    state = initial_state(x, init_u(4, 2, seed=8))
    s0 = state.s.copy()
    assert np.all(s0 != 0)
    registry = PdRegistry()
    for _ in range(5):
        state = spnga_step(x, state, tau, registry)
        assert np.array_equal(state.s, s0)


@pytest.mark.parametrize("seed", range(8))
def test_spnga_sign_step_ascent(seed):
    """Each changing sign step gains at least tau / 2 ||S^{k+1} - S^k||^2."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 9))
    tau = 0.1
    trace = run(x, SolverConfig(Algorithm.SPNGA, tau=tau, max_iter=2000), init_u(4, 2, seed=seed))
    for rec, before, after in zip(trace.records[1:], trace.s_iterates, trace.s_iterates[1:]):
        jump = float(np.sum((after.astype(np.int64) - before.astype(np.int64)) ** 2))
        assert rec.bilinear - rec.cross >= 0.5 * tau * jump - 1e-9
    assert trace.terminal.stop_reason == StopReason.S_FROZEN


@pytest.mark.parametrize("seed", range(8))
def test_nga_never_revisits_an_iterate(seed):
    """Before the objective freezes no U^k repeats."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 8))
    trace = run(x, SolverConfig(Algorithm.NGA, max_iter=500), init_u(3, 2, seed=seed))
    visited = trace.u_iterates[:trace.terminal.obj_freeze_step + 1]
    for i, a in enumerate(visited):
        for b in visited[i + 1:]:
            assert np.linalg.norm(a - b) > 1e-12
