import io
import math

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from scipy import stats

import autostep as A
from autostep.errors import ConfigurationError
from autostep.targets import (
    KILPISJARVI_PRIOR,
    ReferenceDistribution,
    kilpisjarvi_log_prior,
    make_funnel,
    make_kilpisjarvi,
    make_mrna,
    mrna_mean,
    read_xy_csv,
)


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h * max(1.0, abs(x[i]))
        g[i] = (float(f(jnp.asarray(x + e))) - float(f(jnp.asarray(x - e)))) / (2 * e[i])
    return g


def random_points(target, key, n):
    if target.exact_sampler is not None:
        return np.asarray(target.sample_exact(key, n))
    return np.asarray(jax.random.normal(key, (n, target.dim)))


@pytest.mark.parametrize("name", ["gaussian", "laplace", "cauchy", "funnel2", "kilpisjarvi", "mrna"])
def test_gradient_matches_finite_differences(name):
    target = A.get_target(name)
    xs = random_points(target, jax.random.PRNGKey(3), 5)
    if name == "laplace":
        xs = xs[np.abs(xs[:, 0]) > 1e-3]
    for x in xs:
        g = np.asarray(target.grad_log_density(jnp.asarray(x)))
        fd = central_diff(target.log_density, x)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6 * max(1.0, np.max(np.abs(fd))))


def test_funnel100_gradient_spot_check():
    target = A.get_target("funnel100")
    x = np.asarray(target.sample_exact(jax.random.PRNGKey(0), 1))[0]
    g = np.asarray(target.grad_log_density(jnp.asarray(x)))
    fd = central_diff(target.log_density, x)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6 * np.max(np.abs(fd)))


def test_gaussian_examples():
    t = A.make_gaussian(1, 1.0)
    assert float(t.log_gamma(jnp.array([0.0]))) == 0.0
    assert float(t.log_gamma(jnp.array([2.0]))) == pytest.approx(-2.0)
    t2 = A.make_gaussian(2, 1.0)
    np.testing.assert_allclose(t2.grad_log_gamma(jnp.array([1.0, -1.0])), [-1.0, 1.0])


def test_gaussian_rejects_bad_variance():
    with pytest.raises(ConfigurationError):
        A.make_gaussian(1, 0.0)


def test_laplace_and_cauchy_examples():
    assert float(A.make_cauchy1d().log_gamma(jnp.array([0.0]))) == 0.0
    assert float(A.make_laplace1d().log_gamma(jnp.array([-3.0]))) == pytest.approx(-3.0)
    assert float(A.make_cauchy1d().log_gamma(jnp.array([1.0]))) == pytest.approx(-math.log(2.0))


def test_funnel_origin_and_configurations():
    for d, tau in [(2, 0.6), (5, 1.0), (100, 6.0)]:
        assert float(make_funnel(d, tau).log_gamma(jnp.zeros(d))) == 0.0
    assert A.get_target("funnel2").dim == 2
    assert A.get_target("funnel100").dim == 100
    with pytest.raises(ConfigurationError):
        make_funnel(1, 1.0)


def test_funnel_exact_sampler_matches_analytic_marginals():
    target = A.get_target("funnel2")
    xs = np.asarray(target.sample_exact(jax.random.PRNGKey(11), 20000))
    for i in range(2):
        p = stats.kstest(xs[:, i], target.marginal_cdfs[i]).pvalue
        assert p > 1e-3


def test_log_gamma_never_nan():
    t = A.get_target("kilpisjarvi")
    assert float(t.log_gamma(jnp.array([jnp.nan, 0.0, 0.0]))) == -math.inf
    # log sigma -> -inf drives the density to zero
    assert float(t.log_gamma(jnp.array([9.313, 0.0, -1e6]))) == -math.inf


def test_counters_increase_by_one_per_call():
    t = A.make_gaussian(2).with_fresh_counters()
    x = jnp.array([0.3, -0.2])
    before = t.counters.snapshot()
    t.log_gamma(x)
    t.log_gamma(x)
    t.grad_log_gamma(x)
    assert t.counters.snapshot() == (before[0] + 2, before[1] + 1)


def test_kilpisjarvi_prior_value():
    p = KILPISJARVI_PRIOR
    params = jnp.array([9.313, 0.0, 0.0])
    expected = (
        stats.norm.logpdf(9.313, p["mu_alpha"], p["sigma_alpha"])
        + stats.norm.logpdf(0.0, p["mu_beta"], p["sigma_beta"])
        + stats.halfnorm.logpdf(1.0)
        + 0.0  # log-Jacobian of sigma = exp(0)
    )
    assert float(kilpisjarvi_log_prior(params)) == pytest.approx(expected, rel=1e-12)


def test_kilpisjarvi_empty_data_is_an_error():
    with pytest.raises(ConfigurationError):
        make_kilpisjarvi(np.zeros(0), np.zeros(0))


def test_kilpisjarvi_single_observation_likelihood():
    x, y = np.array([2000.0]), np.array([10.0])
    target = make_kilpisjarvi(x, y)
    params = jnp.array([9.0, 0.0005, math.log(1.3)])
    lik = stats.norm.logpdf(10.0, 9.0 + 0.0005 * 2000.0, 1.3)
    assert float(target.log_gamma(params)) == pytest.approx(lik + float(kilpisjarvi_log_prior(params)), rel=1e-10)


def test_mrna_mean_examples():
    t = np.array([0.5, 1.0, 3.0])
    mu = np.asarray(mrna_mean(t, 1.0, 2.0, 0.3, 0.7))
    assert mu[0] == 0.0 and mu[1] == 0.0 and mu[2] > 0.0
    beta = 0.4
    exact = np.asarray(mrna_mean(t, 1.0, 2.0, beta, beta))
    near = np.asarray(mrna_mean(t, 1.0, 2.0, beta, beta * (1 + 1e-9)))
    np.testing.assert_allclose(near, exact, rtol=1e-6)
    # general branch against the closed form away from the singular point
    dt, k0, b, d = 2.0, 2.0, 0.3, 0.7
    closed = k0 / (d - b) * (np.exp(-b * dt) - np.exp(-d * dt))
    assert float(mrna_mean(np.array([3.0]), 1.0, k0, b, d)[0]) == pytest.approx(closed, rel=1e-12)


def test_mrna_support_is_bounded_via_logit():
    target = A.get_target("mrna")
    u = jnp.zeros(5)
    assert np.isfinite(float(target.log_gamma(u)))
    bounds = np.asarray(A.targets.mrna_to_log10(np.zeros(5)))
    lo = np.array([b[0] for b in A.targets.MRNA_LOG10_BOUNDS])
    hi = np.array([b[1] for b in A.targets.MRNA_LOG10_BOUNDS])
    np.testing.assert_allclose(bounds, (lo + hi) / 2)


def test_registry_and_unknown_name():
    assert set(A.target_names()) == {"gaussian", "laplace", "cauchy", "funnel2", "funnel100", "kilpisjarvi", "mrna"}
    with pytest.raises(ConfigurationError, match="available"):
        A.get_target("banana")


def test_dataset_csv_schema():
    x, y = read_xy_csv(io.StringIO("t,y\n0.5,1.0\n1.0,2.0\n"))
    np.testing.assert_array_equal(x, [0.5, 1.0])
    with pytest.raises(ConfigurationError):
        read_xy_csv(io.StringIO("t,y\n"))
    with pytest.raises(ConfigurationError):
        make_mrna(np.zeros(0), np.zeros(0))


def test_reference_from_csv_with_comment_header(tmp_path):
    path = tmp_path / "ref.csv"
    path.write_text("# produced elsewhere\nx1,x2\n0.0,1.0\n1.0,2.0\n2.0,3.0\n")
    ref = ReferenceDistribution.from_csv(path)
    assert ref.dim == 2
    np.testing.assert_allclose(ref.cdf(1)(np.array([0.5, 2.0, 9.0])), [0.0, 2 / 3, 1.0])
