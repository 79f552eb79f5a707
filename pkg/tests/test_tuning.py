import jax
import jax.numpy as jnp
import numpy as np
import pytest

import autostep as A
from autostep.errors import ConfigurationError
from autostep.kernel import ChainTrace, IterationRecord
from autostep.tuning import RoundStats, lower_median

RWMH = A.InvolutionFamily("rwmh", A.make_gaussian())


def fake_trace(mu, positions):
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    n = len(mu)
    zeros = np.zeros(n)
    rec = IterationRecord(
        accepted=np.ones(n, bool), accept_prob=zeros, ell_abs=zeros, energy_jump=zeros,
        j_forward=np.asarray(mu, np.int64), j_reverse=np.asarray(mu, np.int64),
        cost_ell=np.ones(n, np.int64), cost_grad=np.zeros(n, np.int64), capped=np.zeros(n, bool),
        ell_evals_forward=np.ones(n, np.int64),
    )
    return ChainTrace(positions, rec)


def test_schedule():
    s = A.RoundSchedule(4)
    assert [s.iterations(r) for r in range(1, 5)] == [2, 4, 8, 16]
    assert s.total_iterations == 30
    with pytest.raises(ConfigurationError):
        A.RoundSchedule(0)


def test_mixing_examples():
    m_hat = jnp.array([3.0])
    seen = {}
    for i in range(200):
        key = jax.random.PRNGKey(i)
        k_pick, k_u = jax.random.split(key)
        pick = int(jax.random.randint(k_pick, (), 0, 3))
        seen[pick] = float(A.mix_preconditioner(m_hat, key).sqrt_diag[0])
        if pick == 2:
            xi = float(jax.random.uniform(k_u))
            assert seen[2] == pytest.approx(xi * 3.0 + 1.0 - xi)
    assert seen[0] == 1.0  # xi = 0: identity
    assert seen[1] == 3.0  # xi = 1: M_hat itself
    assert 0.5 * 3.0 + 0.5 == 2.0


def test_lower_median():
    assert lower_median([-2, -2, -1, 0]) == -2
    assert lower_median([3]) == 3
    assert lower_median([1, 2]) == 1


def test_end_of_round_update_examples():
    tuner = A.TunerState.initial(1, 2.0)
    same = A.end_of_round_update(tuner, fake_trace([0, 0, 0, 0], [0.0, 1.0, 2.0, 3.0]))
    assert same.theta0 == 2.0
    quarter = A.end_of_round_update(tuner, fake_trace([-2, -2, -1, 0], [0.0, 1.0, 2.0, 3.0]))
    assert quarter.theta0 == 0.5
    rng = np.random.default_rng(0)
    base = rng.normal(size=(1000, 2))
    base = (base - base.mean(0)) / base.std(0, ddof=1)
    sd = A.end_of_round_update(A.TunerState.initial(2), fake_trace(np.zeros(1000, int), base * [2.0, 0.5]))
    np.testing.assert_allclose(sd.m_hat_sqrt_diag, [0.5, 2.0])


def test_stuck_coordinate_is_floored_and_reported():
    tuner = A.end_of_round_update(A.TunerState.initial(2), fake_trace([0, 0, 0], [[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]))
    assert tuner.stuck_coords == 1
    assert tuner.m_hat_sqrt_diag[1] == pytest.approx(1e5)


def test_round_stats_histogram_median_agrees_with_sort():
    rng = np.random.default_rng(4)
    for n in [1, 2, 7, 50]:
        mu = rng.integers(-10, 10, size=n)
        stats = RoundStats.from_trace(fake_trace(mu, rng.normal(size=n)))
        assert stats.lower_median() == lower_median(mu)


def test_single_round():
    run = A.run_tuned(jax.random.PRNGKey(0), [0.3], A.RoundSchedule(1), A.KernelConfig(RWMH))
    assert len(run.history) == 1
    assert run.history[0].iterations == 2 and run.history[0].theta0 == 1.0
    np.testing.assert_array_equal(run.history[0].m_hat_sqrt_diag, [1.0])
    assert len(run.trace) == 2


def test_history_shape_and_dyadic_theta0():
    run = A.run_tuned(jax.random.PRNGKey(2), [0.3], A.RoundSchedule(8), A.KernelConfig(RWMH, 3.0))
    assert [h.iterations for h in run.history] == [2**r for r in range(1, 9)]
    for h in run.history:
        exponent = np.log2(h.theta0 / 3.0)
        assert exponent == round(exponent)
    assert len(run.trace) == 256


def test_tuning_reduces_cost_from_tiny_theta0():
    run = A.run_tuned(jax.random.PRNGKey(5), [0.3], A.RoundSchedule(10), A.KernelConfig(RWMH, 1e-7))
    assert run.history[-1].cost_ell_per_iter < run.history[0].cost_ell_per_iter
    assert 0.1 <= run.tuner.theta0 <= 10.0


def test_stats_round_matches_trace_statistics():
    # the compiled statistics-only round and the traced final round share the key scheme
    cfg = A.KernelConfig(RWMH, 1.0)
    two = A.run_tuned(jax.random.PRNGKey(8), [0.3], A.RoundSchedule(2), cfg)
    x0 = A.init_state(RWMH.target, [0.3])
    mass = A.MassMatrix(jnp.ones(1))
    _, first = A.run_chain(jax.random.PRNGKey(8), x0, 2, cfg, mass, mix_mass=True)
    expected = A.end_of_round_update(A.TunerState.initial(1), first)
    assert two.history[1].theta0 == expected.theta0
    np.testing.assert_allclose(two.history[1].m_hat_sqrt_diag, expected.m_hat_sqrt_diag, rtol=1e-12)
