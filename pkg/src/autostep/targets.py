"""Target distributions: the unnormalized log density, its gradient and benchmarks.

Every target works on an unconstrained position vector of length ``dim``.  The
pure ``log_density``/``grad_log_density`` callables are traced into compiled
chains; :meth:`TargetModel.log_gamma` and :meth:`TargetModel.grad_log_gamma` wrap
them with NaN handling and evaluation counting.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy import integrate, special, stats

from autostep.errors import ConfigurationError

Array = jax.Array

LN10 = float(np.log(10.0))
LOG_2PI = float(np.log(2.0 * np.pi))

KILPISJARVI_PRIOR = {"mu_alpha": 9.313, "sigma_alpha": 100.0, "mu_beta": 0.0, "sigma_beta": 0.0333}

# (lower, upper) bounds of the log10-uniform priors: t0, k0, beta, delta, sigma.
MRNA_LOG10_BOUNDS = ((-2.0, 1.0), (-5.0, 5.0), (-5.0, 5.0), (-5.0, 5.0), (-2.0, 2.0))


@dataclass
class EvalCounters:
    log_gamma: int = 0
    grad: int = 0

    def snapshot(self) -> tuple[int, int]:
        return self.log_gamma, self.grad


def _is_traced(x) -> bool:
    return isinstance(x, jax.core.Tracer)


@dataclass(eq=False)
class TargetModel:
    """Unnormalized target with optional gradient, exact sampler and marginal CDFs.

    Instances hash by identity so they can be passed as static arguments to
    ``jax.jit``. Counters only register concrete (eager) evaluations; inside a
    compiled chain the cost of each iteration is reported by the kernel instead.
    """

    name: str
    dim: int
    log_density: Callable[[Array], Array]
    grad_log_density: Optional[Callable[[Array], Array]] = None
    exact_sampler: Optional[Callable[[Array, int], Array]] = None
    marginal_cdfs: Optional[tuple[Callable[[np.ndarray], np.ndarray], ...]] = None
    counters: EvalCounters = field(default_factory=EvalCounters)

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")

    @property
    def has_gradient(self) -> bool:
        return self.grad_log_density is not None

    def log_gamma(self, x: Array) -> Array:
        if not _is_traced(x):
            self.counters.log_gamma += 1
        value = self.log_density(x)
        return jnp.where(jnp.isnan(value), -jnp.inf, value)

    def grad_log_gamma(self, x: Array) -> Array:
        if self.grad_log_density is None:
            raise ConfigurationError(f"target {self.name!r} has no gradient")
        if not _is_traced(x):
            self.counters.grad += 1
        return self.grad_log_density(x)

    def sample_exact(self, key: Array, n: int) -> Array:
        if self.exact_sampler is None:
            raise ConfigurationError(f"target {self.name!r} has no exact sampler")
        return self.exact_sampler(key, n)

    def reference(self) -> "ReferenceDistribution":
        if self.marginal_cdfs is None:
            raise ConfigurationError(
                f"target {self.name!r} has no analytic marginals; supply a reference sample file"
            )
        return ReferenceDistribution.analytic(self.marginal_cdfs)

    def with_fresh_counters(self) -> "TargetModel":
        """Shallow copy that owns a new counter cell (one per chain)."""
        return replace(self, counters=EvalCounters())


@dataclass
class ReferenceDistribution:
    """Per-coordinate reference CDFs, analytic or from a large set of draws."""

    kind: str
    cdf_per_dim: Optional[tuple[Callable[[np.ndarray], np.ndarray], ...]] = None
    sample: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("analytic-cdf", "reference-sample"):
            raise ConfigurationError(f"unknown reference kind {self.kind!r}")
        if self.kind == "analytic-cdf" and not self.cdf_per_dim:
            raise ConfigurationError("analytic reference needs at least one CDF")
        if self.kind == "reference-sample":
            if self.sample is None:
                raise ConfigurationError("reference-sample kind needs a sample")
            sample = np.asarray(self.sample, dtype=float)
            if sample.ndim == 1:
                sample = sample[:, None]
            self.sample = np.sort(sample, axis=0)

    @classmethod
    def analytic(cls, cdfs: Sequence[Callable]) -> "ReferenceDistribution":
        return cls(kind="analytic-cdf", cdf_per_dim=tuple(cdfs))

    @classmethod
    def from_draws(cls, draws) -> "ReferenceDistribution":
        return cls(kind="reference-sample", sample=np.asarray(draws, dtype=float))

    @classmethod
    def from_csv(cls, path: str | Path) -> "ReferenceDistribution":
        """Load draws from a CSV with one header row and one column per coordinate."""
        with open(path, newline="") as handle:
            _, data = read_table(handle)
        if data.shape[0] == 0:
            raise ConfigurationError(f"reference file {path} has no draws")
        return cls.from_draws(data)

    @property
    def dim(self) -> int:
        if self.kind == "analytic-cdf":
            return len(self.cdf_per_dim)
        return self.sample.shape[1]

    def cdf(self, index: int) -> Callable[[np.ndarray], np.ndarray]:
        if index >= self.dim:
            raise ConfigurationError(f"reference has no coordinate {index}")
        if self.kind == "analytic-cdf":
            return self.cdf_per_dim[index]
        column = self.sample[:, index]
        n = column.size

        def empirical_cdf(x):
            return np.searchsorted(column, np.asarray(x), side="right") / n

        return empirical_cdf


# ----------------------------------------------------------------------------
# Synthetic one-dimensional and Gaussian targets
# ----------------------------------------------------------------------------


def make_gaussian(dim: int = 1, variance: float = 1.0) -> TargetModel:
    """Isotropic centred Gaussian, ``log_gamma(x) = -|x|^2 / (2 variance)``."""
    if dim < 1:
        raise ConfigurationError("gaussian dim must be >= 1")
    if not variance > 0:
        raise ConfigurationError(f"variance must be positive, got {variance}")
    sd = float(np.sqrt(variance))

    def log_density(x):
        return -0.5 * jnp.sum(x * x) / variance

    def grad(x):
        return -x / variance

    def sampler(key, n):
        return sd * jax.random.normal(key, (n, dim))

    cdf = lambda v: stats.norm.cdf(v, scale=sd)  # noqa: E731
    return TargetModel(
        name="gaussian",
        dim=dim,
        log_density=log_density,
        grad_log_density=grad,
        exact_sampler=sampler,
        marginal_cdfs=(cdf,) * dim,
    )


def make_laplace1d() -> TargetModel:
    """Laplace(0, 1). The gradient at exactly 0 is taken to be 0."""

    def log_density(x):
        return -jnp.sum(jnp.abs(x))

    def grad(x):
        return -jnp.sign(x)

    def sampler(key, n):
        return jax.random.laplace(key, (n, 1))

    return TargetModel(
        name="laplace",
        dim=1,
        log_density=log_density,
        grad_log_density=grad,
        exact_sampler=sampler,
        marginal_cdfs=(stats.laplace.cdf,),
    )


def make_cauchy1d() -> TargetModel:
    def log_density(x):
        return -jnp.sum(jnp.log1p(x * x))

    def grad(x):
        return -2.0 * x / (1.0 + x * x)

    def sampler(key, n):
        return jax.random.cauchy(key, (n, 1))

    return TargetModel(
        name="cauchy",
        dim=1,
        log_density=log_density,
        grad_log_density=grad,
        exact_sampler=sampler,
        marginal_cdfs=(stats.cauchy.cdf,),
    )


# ----------------------------------------------------------------------------
# Neal's funnel
# ----------------------------------------------------------------------------


def _funnel_slab_cdf(tau: float) -> Callable[[np.ndarray], np.ndarray]:
    """Marginal CDF of x_i (i >= 2), i.e. E[Phi(v exp(-x1/tau))] with x1 ~ N(0, 9).

    The slab scale exp(x1/tau) spans many orders of magnitude, so the expectation
    (a trapezoid rule over x1 in [-36, 36]) is tabulated for v > 0 on a grid in
    log v and extended to v < 0 by symmetry.
    """
    x1 = np.linspace(-36.0, 36.0, 6001)
    w = stats.norm.pdf(x1, scale=3.0)
    w /= integrate.trapezoid(w, x1)
    log_v = np.linspace(-80.0, 80.0, 16001)
    log_scale = -x1 / tau
    table = np.empty_like(log_v)
    for start in range(0, log_v.size, 1000):
        block = np.exp(np.clip(log_v[start : start + 1000, None] + log_scale[None, :], -700.0, 700.0))
        table[start : start + 1000] = integrate.trapezoid(special.ndtr(block) * w, x1, axis=1)
    table = np.clip(table, 0.5, 1.0)

    def cdf(values):
        v = np.asarray(values, dtype=float)
        with np.errstate(divide="ignore"):
            upper = np.interp(np.log(np.abs(v)), log_v, table, left=0.5, right=1.0)
        return np.where(v >= 0, upper, 1.0 - upper)

    return cdf


def make_funnel(dim: int, tau: float) -> TargetModel:
    """Neal's funnel: x1 ~ N(0, 9), x_i | x1 ~ N(0, exp(x1/tau)^2) for i >= 2."""
    if dim < 2:
        raise ConfigurationError(f"funnel needs dim >= 2, got {dim}")
    if not tau > 0:
        raise ConfigurationError(f"funnel tau must be positive, got {tau}")
    n_slab = dim - 1

    def log_density(x):
        x1, rest = x[0], x[1:]
        sq = jnp.sum(rest * rest)
        # 0 * inf must not turn a finite density into NaN
        quad = jnp.where(sq > 0, 0.5 * sq * jnp.exp(-2.0 * x1 / tau), 0.0)
        return -x1 * x1 / 18.0 - quad - n_slab * x1 / tau

    def grad(x):
        x1, rest = x[0], x[1:]
        inv_var = jnp.exp(-2.0 * x1 / tau)
        g1 = -x1 / 9.0 + jnp.sum(rest * rest) * inv_var / tau - n_slab / tau
        return jnp.concatenate([g1[None], -rest * inv_var])

    def sampler(key, n):
        k1, k2 = jax.random.split(key)
        x1 = 3.0 * jax.random.normal(k1, (n, 1))
        rest = jnp.exp(x1 / tau) * jax.random.normal(k2, (n, n_slab))
        return jnp.concatenate([x1, rest], axis=1)

    slab = _funnel_slab_cdf(tau)
    first = lambda v: stats.norm.cdf(v, scale=3.0)  # noqa: E731
    return TargetModel(
        name=f"funnel{dim}",
        dim=dim,
        log_density=log_density,
        grad_log_density=grad,
        exact_sampler=sampler,
        marginal_cdfs=(first,) + (slab,) * n_slab,
    )


# ----------------------------------------------------------------------------
# Posterior models with data
# ----------------------------------------------------------------------------


def _as_data(a, b, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ConfigurationError(f"{what}: data vectors differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        raise ConfigurationError(f"{what}: data vectors are empty")
    return a, b


def kilpisjarvi_log_prior(params: Array) -> Array:
    """Prior part of the kilpisjarvi model on (alpha, beta, log sigma), Jacobian included."""
    p = KILPISJARVI_PRIOR
    alpha, beta, log_sigma = params[0], params[1], params[2]
    sigma = jnp.exp(log_sigma)
    lp_alpha = -0.5 * ((alpha - p["mu_alpha"]) / p["sigma_alpha"]) ** 2 - jnp.log(p["sigma_alpha"]) - 0.5 * LOG_2PI
    lp_beta = -0.5 * ((beta - p["mu_beta"]) / p["sigma_beta"]) ** 2 - jnp.log(p["sigma_beta"]) - 0.5 * LOG_2PI
    # half-normal N(0, 1) truncated to (0, inf)
    lp_sigma = -0.5 * sigma * sigma - 0.5 * LOG_2PI + jnp.log(2.0)
    return lp_alpha + lp_beta + lp_sigma + log_sigma


def make_kilpisjarvi(x_data, y_data) -> TargetModel:
    """Linear regression y ~ N(alpha + beta x, sigma^2), sampled on (alpha, beta, log sigma)."""
    x_np, y_np = _as_data(x_data, y_data, "kilpisjarvi")
    xs, ys = jnp.asarray(x_np), jnp.asarray(y_np)
    n_obs = x_np.size
    p = KILPISJARVI_PRIOR

    def log_density(params):
        alpha, beta, log_sigma = params[0], params[1], params[2]
        sigma = jnp.exp(log_sigma)
        resid = ys - alpha - beta * xs
        loglik = -0.5 * jnp.sum(resid * resid) / (sigma * sigma) - n_obs * (log_sigma + 0.5 * LOG_2PI)
        return kilpisjarvi_log_prior(params) + loglik

    def grad(params):
        alpha, beta, log_sigma = params[0], params[1], params[2]
        sigma2 = jnp.exp(2.0 * log_sigma)
        resid = ys - alpha - beta * xs
        g_alpha = -(alpha - p["mu_alpha"]) / p["sigma_alpha"] ** 2 + jnp.sum(resid) / sigma2
        g_beta = -(beta - p["mu_beta"]) / p["sigma_beta"] ** 2 + jnp.sum(resid * xs) / sigma2
        g_log_sigma = -sigma2 + 1.0 - n_obs + jnp.sum(resid * resid) / sigma2
        return jnp.stack([g_alpha, g_beta, g_log_sigma])

    return TargetModel(name="kilpisjarvi", dim=3, log_density=log_density, grad_log_density=grad)


def mrna_mean(t, t0, k0, beta, delta):
    """Mean expression k0 (exp(-beta dt) - exp(-delta dt)) / (delta - beta), 0 for dt <= 0.

    The delta == beta case is the continuous limit k0 dt exp(-beta dt).
    """
    g, _, _, _ = _mrna_profile(t - t0, beta, delta)
    return k0 * g


def _mrna_profile(dt, beta, delta):
    """g(dt) = (e^{-beta dt} - e^{-delta dt}) / (delta - beta) and its partials.

    Returns (g, dg/d dt, dg/d beta, dg/d delta), all zero where dt <= 0. A series
    in x = (delta - beta) dt replaces the divided differences for |x| < 0.1.
    """
    active = dt > 0
    dt = jnp.where(active, dt, 1.0)
    h = delta - beta
    x = h * dt
    a = jnp.exp(-beta * dt)
    b = jnp.exp(-delta * dt)
    small = jnp.abs(x) < 0.1
    h_safe = jnp.where(small, 1.0, h)

    g_exact = (a - b) / h_safe
    dg_dbeta_exact = (-dt * a * h_safe + (a - b)) / (h_safe * h_safe)
    dg_ddelta_exact = (dt * b * h_safe - (a - b)) / (h_safe * h_safe)

    # phi(x) = (1 - e^{-x}) / x and its derivative, 12-term Taylor series
    s0 = jnp.zeros_like(x)
    s1 = jnp.zeros_like(x)
    fact = 1.0
    for n in range(12):
        fact *= n + 1  # (n + 1)!
        s0 = s0 + (-x) ** n / fact
        if n >= 1:
            s1 = s1 + n * (-1.0) ** n * x ** (n - 1) / fact
    g_series = a * dt * s0
    dg_ddelta_series = a * dt * dt * s1
    dg_dbeta_series = -a * dt * dt * (s0 + s1)

    g = jnp.where(small, g_series, g_exact)
    dg_dbeta = jnp.where(small, dg_dbeta_series, dg_dbeta_exact)
    dg_ddelta = jnp.where(small, dg_ddelta_series, dg_ddelta_exact)
    dg_ddt = b - beta * g

    zero = jnp.zeros_like(g)
    return (
        jnp.where(active, g, zero),
        jnp.where(active, dg_ddt, zero),
        jnp.where(active, dg_dbeta, zero),
        jnp.where(active, dg_ddelta, zero),
    )


def make_mrna(t_data, y_data) -> TargetModel:
    """mRNA transfection model on logit-transformed log10 parameters.

    Position u in R^5 maps to log10 values p = lo + (hi - lo) sigmoid(u) for
    (t0, k0, beta, delta, sigma); the uniform prior times the Jacobian of that map
    is sigmoid(u) (1 - sigmoid(u)) per coordinate.
    """
    t_np, y_np = _as_data(t_data, y_data, "mrna")
    ts, ys = jnp.asarray(t_np), jnp.asarray(y_np)
    n_obs = t_np.size
    lo = jnp.asarray([b[0] for b in MRNA_LOG10_BOUNDS])
    width = jnp.asarray([b[1] - b[0] for b in MRNA_LOG10_BOUNDS])

    def unpack(u):
        s = jax.nn.sigmoid(u)
        values = 10.0 ** (lo + width * s)
        return s, values

    def log_density(u):
        s, (t0, k0, beta, delta, sigma) = unpack(u)
        g, _, _, _ = _mrna_profile(ts - t0, beta, delta)
        resid = ys - k0 * g
        loglik = -0.5 * jnp.sum(resid * resid) / (sigma * sigma) - n_obs * (jnp.log(sigma) + 0.5 * LOG_2PI)
        log_prior = jnp.sum(-jax.nn.softplus(-u) - jax.nn.softplus(u))
        return loglik + log_prior

    def grad(u):
        s, (t0, k0, beta, delta, sigma) = unpack(u)
        g, dg_ddt, dg_dbeta, dg_ddelta = _mrna_profile(ts - t0, beta, delta)
        resid = ys - k0 * g
        w = resid / (sigma * sigma)  # d loglik / d mu_i
        d_t0 = jnp.sum(w * k0 * dg_ddt) * -1.0
        d_k0 = jnp.sum(w * g)
        d_beta = jnp.sum(w * k0 * dg_dbeta)
        d_delta = jnp.sum(w * k0 * dg_ddelta)
        d_logsigma = -n_obs + jnp.sum(resid * resid) / (sigma * sigma)
        # d value / d p = ln10 * value for the first four, sigma handled via log sigma
        d_p = LN10 * jnp.stack([d_t0 * t0, d_k0 * k0, d_beta * beta, d_delta * delta, d_logsigma])
        return d_p * width * s * (1.0 - s) + (1.0 - 2.0 * s)

    return TargetModel(name="mrna", dim=5, log_density=log_density, grad_log_density=grad)


def mrna_to_log10(u) -> np.ndarray:
    """Map unconstrained mRNA coordinates back to log10 (t0, k0, beta, delta, sigma)."""
    u = np.asarray(u, dtype=float)
    lo = np.array([b[0] for b in MRNA_LOG10_BOUNDS])
    width = np.array([b[1] - b[0] for b in MRNA_LOG10_BOUNDS])
    return lo + width * special.expit(u)


# ----------------------------------------------------------------------------
# Datasets and registry
# ----------------------------------------------------------------------------


def load_dataset(name: str) -> tuple[np.ndarray, np.ndarray]:
    """Read a bundled two-column CSV (header row, then predictor and response)."""
    text = resources.files("autostep").joinpath("data", f"{name}.csv").read_text()
    return read_xy_csv(io.StringIO(text))


def read_table(handle) -> tuple[list[str], np.ndarray]:
    """Numeric CSV with one header row; lines starting with '#' are skipped."""
    rows = [r for r in csv.reader(handle) if r and not r[0].startswith("#")]
    if not rows:
        raise ConfigurationError("CSV has no header row")
    header = [h.strip() for h in rows[0]]
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigurationError(f"non-numeric CSV entry: {exc}") from None
    return header, body.reshape(len(rows) - 1, len(header))


def read_xy_csv(handle) -> tuple[np.ndarray, np.ndarray]:
    _, body = read_table(handle)
    if body.shape[0] == 0 or body.shape[1] < 2:
        raise ConfigurationError("dataset needs a header row, two columns and at least one data row")
    return body[:, 0], body[:, 1]


def _registry() -> dict[str, Callable[[], TargetModel]]:
    return {
        "gaussian": lambda: make_gaussian(1, 1.0),
        "laplace": make_laplace1d,
        "cauchy": make_cauchy1d,
        "funnel2": lambda: make_funnel(2, 0.6),
        "funnel100": lambda: make_funnel(100, 6.0),
        "kilpisjarvi": lambda: make_kilpisjarvi(*load_dataset("kilpisjarvi")),
        "mrna": lambda: make_mrna(*load_dataset("mrna")),
    }


def target_names() -> list[str]:
    return list(_registry())


def get_target(name: str) -> TargetModel:
    registry = _registry()
    if name not in registry:
        raise ConfigurationError(f"unknown target {name!r}; available: {', '.join(registry)}")
    return registry[name]()
