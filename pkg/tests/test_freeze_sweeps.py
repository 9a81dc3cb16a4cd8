import pytest
import numpy as np

from src.data import InstanceSpec, generate
from src.oracle import brute_force_fmax, gamma_threshold, tau0_from_trace, tau_star
from src.polar_core import spectral_norm
from src.solvers import Algorithm, InitScheme, SolverConfig, init_u, run
from src.trace import StopReason, estimate_rho

pytestmark = pytest.mark.integration

CASES = [
    (d, n, k, seed)
    for d, n in [(3, 6), (4, 8)]
    for k in (1, 2)
    for seed in range(25)
]


def _instance(d, n, seed):
    spec = InstanceSpec(d=d, n=n, outlier_fraction=0.25, noise_std=0.2,
                        latent_rank=min(2, d), seed=seed)
    return generate(spec)


@pytest.fixture(scope="module")
def oracle_cache():
    return {}


def _f_max(cache, x, k, key):
    if key not in cache:
        cache[key] = brute_force_fmax(x, k).f_max
    return cache[key]


@pytest.mark.parametrize("d,n,k,seed", CASES)
def test_nga_freezes_within_bound(oracle_cache, d, n, k, seed):
    x = _instance(d, n, seed)
    f_max = _f_max(oracle_cache, x, k, (d, n, k, seed))
    trace = run(x, SolverConfig.default_for(Algorithm.NGA, x), init_u(d, k, seed=seed), f_max=f_max)

    term = trace.terminal
    assert term.stop_reason != StopReason.MAX_ITER
    assert term.bound_satisfied is not False
    values = [rec.f_value for rec in trace.records]
    for before, after in zip(values, values[1:]):
        assert after >= before - 1e-12 * max(1.0, f_max)
    assert values[-1] <= f_max + 1e-9


@pytest.mark.parametrize("tau", [0.05, 0.1, 0.5])
@pytest.mark.parametrize("d,n,k,seed", CASES)
def test_spnga_freezes_within_bound(oracle_cache, d, n, k, seed, tau):
    x = _instance(d, n, seed)
    f_max = _f_max(oracle_cache, x, k, (d, n, k, seed))
    cfg = SolverConfig.default_for(Algorithm.SPNGA, x, tau=tau)
    trace = run(x, cfg, init_u(d, k, seed=seed), f_max=f_max)

    assert trace.terminal.stop_reason == StopReason.S_FROZEN
    assert trace.terminal.bound_satisfied is not False


@pytest.mark.parametrize("d,n,k,seed", CASES)
def test_spame_freezes_within_bound(oracle_cache, d, n, k, seed):
    x = _instance(d, n, seed)
    f_max = _f_max(oracle_cache, x, k, (d, n, k, seed))
    cfg = SolverConfig.default_for(Algorithm.SPAME, x, tau=0.05)
    trace = run(x, cfg, init_u(d, k, seed=seed), f_max=f_max)

    assert trace.terminal.stop_reason == StopReason.S_FROZEN
    if trace.terminal.rank_hypothesis_held:
        assert trace.terminal.bound_satisfied is not False


@pytest.mark.parametrize("d,n,k,seed", CASES)
def test_pame_sign_freeze(d, n, k, seed):
    x = _instance(d, n, seed)
    cfg = SolverConfig.default_for(Algorithm.PAME, x, tau=0.1, beta=0.1, gamma=0.0)
    trace = run(x, cfg, init_u(d, k, scheme=InitScheme.SVD_WARM_START, x=x))

    assert trace.terminal.stop_reason == StopReason.U_FROZEN
    assert trace.terminal.s_freeze_step is not None
    assert trace.output_u is not None


@pytest.mark.parametrize("d,n,k,seed", CASES)
def test_reductions_are_exact(d, n, k, seed):
    x = _instance(d, n, seed)
    u0 = init_u(d, k, seed=seed)

    nga = run(x, SolverConfig.default_for(Algorithm.NGA, x), u0)
    pame = run(x, SolverConfig.default_for(Algorithm.PAME, x, tau=0.0, beta=0.0, gamma=0.0,
                                           relaxed=True), u0)
    for a, b in zip(nga.u_iterates, pame.u_iterates):
        assert np.array_equal(a, b)

    spnga = run(x, SolverConfig.default_for(Algorithm.SPNGA, x, tau=0.05), u0)
    spame = run(x, SolverConfig.default_for(Algorithm.SPAME, x, tau=0.05, gamma=0.0), u0)
    for a, b in zip(spnga.u_iterates, spame.u_iterates):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_tau_star_bounds_tau0(seed):
    x = _instance(3, 6, seed)
    trace = run(x, SolverConfig.default_for(Algorithm.NGA, x), init_u(3, 2, seed=seed))
    if len(trace.u_iterates) < 2:
        pytest.skip("NGA froze before leaving U0")
    t0 = tau0_from_trace(x, trace)
    assert tau_star(x, 2) <= t0 * (1 + 1e-9)


@pytest.mark.parametrize("d,n,k,seed", CASES)
def test_pame_with_extrapolation_freezes(d, n, k, seed):
    x = _instance(d, n, seed)
    gamma = 0.5 * gamma_threshold(x, 0.5, 0.5)
    cfg = SolverConfig.default_for(Algorithm.PAME, x, tau=0.5, beta=0.5, gamma=gamma)
    trace = run(x, cfg, init_u(d, k, scheme=InitScheme.SVD_WARM_START, x=x))

    assert trace.terminal.stop_reason == StopReason.U_FROZEN
    assert trace.output_u is not None


@pytest.mark.parametrize("d,n,k,seed", CASES)
def test_spame_with_extrapolation_freezes(oracle_cache, d, n, k, seed):
    x = _instance(d, n, seed)
    f_max = _f_max(oracle_cache, x, k, (d, n, k, seed))
    gamma = 0.01
    cfg = SolverConfig.default_for(Algorithm.SPAME, x, tau=1.0, gamma=gamma)
    trace = run(x, cfg, init_u(d, k, seed=seed), f_max=f_max)

    term = trace.terminal
    assert term.stop_reason == StopReason.S_FROZEN
    ceiling = min(1.0, term.lambda_min * 1.0 / spectral_norm(x) ** 2)
    if term.rank_hypothesis_held and gamma < ceiling:
        assert term.bound_satisfied is not False


@pytest.mark.parametrize("d,n,k,seed", CASES)
def test_nga_rate_estimate_below_one(d, n, k, seed):
    x = _instance(d, n, seed)
    trace = run(x, SolverConfig.default_for(Algorithm.NGA, x), init_u(d, k, seed=seed))
    if trace.terminal.obj_freeze_step is None or trace.terminal.obj_freeze_step < 2:
        pytest.skip("objective froze within two steps")
    assert 0.0 < estimate_rho(trace) < 1.0


@pytest.mark.parametrize("seed", range(200))
def test_monotone_objectives(seed):
    """NGA never lowers F and S-PNGA never lowers F(U^k, S^k)."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 21))
    n = int(rng.integers(3, 13))
    k = int(rng.integers(1, min(3, d) + 1))
    x = rng.standard_normal((d, n))
    u0 = init_u(d, k, seed=seed)

    nga = run(x, SolverConfig.default_for(Algorithm.NGA, x), u0)
    values = [rec.f_value for rec in nga.records]
    for before, after in zip(values, values[1:]):
        assert after >= before - 1e-10 * max(1.0, before)

    spnga = run(x, SolverConfig.default_for(Algorithm.SPNGA, x, tau=0.1), u0)
    values = [rec.bilinear for rec in spnga.records]
    for before, after in zip(values, values[1:]):
        assert after >= before - 1e-10 * max(1.0, abs(before))
