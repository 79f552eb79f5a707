import jax
import jax.numpy as jnp
import numpy as np
import pytest

import autostep as A
from autostep.errors import ConfigurationError
from autostep.involutions import MassMatrix, apply_leapfrog, apply_rwmh, log_momentum, sample_momentum
from autostep.targets import TargetModel


def flat_target(dim):
    return TargetModel(
        name="flat",
        dim=dim,
        log_density=lambda x: jnp.zeros(()),
        grad_log_density=lambda x: jnp.zeros_like(x),
    )


def test_momentum_reproducible_and_covariance():
    key = jax.random.PRNGKey(0)
    ident = MassMatrix.identity(3)
    np.testing.assert_array_equal(sample_momentum(key, ident), sample_momentum(key, ident))
    np.testing.assert_array_equal(sample_momentum(key, ident), jax.random.normal(key, (3,)))
    mass = MassMatrix.from_sqrt_diag([2.0, 3.0])
    zs = jax.vmap(lambda k: sample_momentum(k, mass))(jax.random.split(key, 100_000))
    np.testing.assert_allclose(np.var(np.asarray(zs), axis=0), [4.0, 9.0], rtol=0.05)
    assert float(log_momentum(jnp.zeros(2), mass)) == 0.0


def test_mass_validation():
    with pytest.raises(ConfigurationError):
        MassMatrix.from_sqrt_diag([1.0, 0.0])
    with pytest.raises(ConfigurationError):
        MassMatrix.from_sqrt_diag([1.0, np.inf])


def test_rwmh_examples():
    p = apply_rwmh(jnp.array([0.0]), jnp.array([1.0]), 2.0, MassMatrix.identity(1))
    np.testing.assert_array_equal(p.x, [2.0])
    np.testing.assert_array_equal(p.z, [-1.0])
    back = apply_rwmh(p.x, p.z, 2.0, MassMatrix.identity(1))
    np.testing.assert_array_equal(back.x, [0.0])
    np.testing.assert_array_equal(back.z, [1.0])
    q = apply_rwmh(jnp.array([0.0]), jnp.array([2.0]), 1.0, MassMatrix.from_sqrt_diag([2.0]))
    assert float(q.x[0]) == 0.5


def test_leapfrog_examples():
    gauss = A.make_gaussian()
    p = apply_leapfrog(jnp.array([0.0]), jnp.array([1.0]), 1.0, MassMatrix.identity(1), gauss)
    np.testing.assert_allclose(p.x, [1.0])
    np.testing.assert_allclose(p.z, [-0.5])
    back = apply_leapfrog(p.x, p.z, 1.0, MassMatrix.identity(1), gauss)
    np.testing.assert_allclose(back.x, [0.0], atol=1e-10)
    np.testing.assert_allclose(back.z, [1.0], atol=1e-10)
    flat = flat_target(2)
    f = apply_leapfrog(jnp.array([1.0, 2.0]), jnp.zeros(2), 0.7, MassMatrix.identity(2), flat, n_steps=3)
    np.testing.assert_array_equal(f.x, [1.0, 2.0])
    np.testing.assert_array_equal(f.z, [0.0, 0.0])


def test_log_ratio_examples():
    gauss = A.make_gaussian()
    assert float(A.log_ratio([0.0], [1.0], 2.0, A.InvolutionFamily("rwmh", gauss))) == pytest.approx(-2.0)
    assert float(A.log_ratio([0.0], [1.0], 1.0, A.InvolutionFamily("mala", gauss))) == pytest.approx(-0.125)


@pytest.mark.parametrize("kind,steps", [("rwmh", 1), ("mala", 1), ("hmc", 4)])
@pytest.mark.parametrize("name", ["gaussian", "funnel2", "kilpisjarvi"])
def test_small_theta_limit(kind, steps, name):
    target = A.get_target(name)
    family = A.InvolutionFamily(kind, target, steps)
    x = np.asarray(target.sample_exact(jax.random.PRNGKey(1), 1))[0] if target.exact_sampler else np.array([9.3, 0.0, 0.0])
    z = np.ones(target.dim)
    assert abs(float(A.log_ratio(x, z, 1e-12, family))) < 1e-6


def _jacobian(f, v, h=1e-6):
    v = np.asarray(v, dtype=float)
    cols = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        cols.append((f(v + e) - f(v - e)) / (2 * h))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize("kind,steps", [("rwmh", 1), ("mala", 1), ("hmc", 3)])
def test_volume_preservation(kind, steps):
    target = A.make_gaussian(2, 2.0)
    family = A.InvolutionFamily(kind, target, steps)
    mass = MassMatrix.from_sqrt_diag([1.5, 0.7])

    def f(v):
        p = family(jnp.asarray(v[:2]), jnp.asarray(v[2:]), 0.4, mass)
        return np.concatenate([np.asarray(p.x), np.asarray(p.z)])

    jac = _jacobian(f, np.array([0.3, -1.2, 0.8, 0.1]))
    assert abs(np.linalg.det(jac)) == pytest.approx(1.0, abs=1e-6)


def test_family_validation():
    gauss = A.make_gaussian()
    with pytest.raises(ConfigurationError):
        A.InvolutionFamily("slice", gauss)
    with pytest.raises(ConfigurationError):
        A.InvolutionFamily("mala", gauss, 3)
    no_grad = TargetModel(name="nograd", dim=1, log_density=lambda x: -jnp.sum(x * x))
    with pytest.raises(ConfigurationError):
        A.InvolutionFamily("hmc", no_grad, 2)
    assert A.InvolutionFamily("rwmh", no_grad).grads_per_eval() == 0


def test_nonfinite_proposal_gives_minus_infinity():
    family = A.InvolutionFamily("rwmh", A.get_target("kilpisjarvi"))
    ell = A.log_ratio([9.3, 0.0, 0.0], [0.0, 0.0, -1.0], 1e6, family)
    assert float(ell) == -np.inf
