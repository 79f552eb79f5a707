"""Step-size-parametrized involutions f_theta on (position, momentum) pairs.

All three families use momentum z ~ N(0, M) with a diagonal mass matrix M and are
volume preserving, so the log acceptance ratio carries no Jacobian term:

    ell(x, z, theta) = [log gamma(x') + log m(z')] - [log gamma(x) + log m(z)].

For random walk Metropolis the momentum terms cancel exactly (z' = -z) and are
skipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from autostep.errors import ConfigurationError
from autostep.targets import TargetModel

Array = jax.Array

FAMILY_KINDS = ("rwmh", "mala", "hmc")


class MassMatrix(NamedTuple):
    """Diagonal mass matrix stored through the diagonal of M^{1/2}."""

    sqrt_diag: Array

    @classmethod
    def identity(cls, dim: int) -> "MassMatrix":
        return cls(jnp.ones(dim))

    @classmethod
    def from_sqrt_diag(cls, values) -> "MassMatrix":
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)) or not np.all(arr > 0):
            raise ConfigurationError("mass sqrt-diagonal must be a finite positive vector")
        return cls(jnp.asarray(arr))

    @property
    def diag(self) -> Array:
        return self.sqrt_diag * self.sqrt_diag

    @property
    def inv_diag(self) -> Array:
        return 1.0 / (self.sqrt_diag * self.sqrt_diag)


class PhasePoint(NamedTuple):
    x: Array
    z: Array
    finite: Array


def sample_momentum(key: Array, mass: MassMatrix) -> Array:
    """z = M^{1/2} eps with eps standard normal."""
    return mass.sqrt_diag * jax.random.normal(key, mass.sqrt_diag.shape)


def log_momentum(z: Array, mass: MassMatrix) -> Array:
    """log m(z) up to the normalizing constant: -z^T M^{-1} z / 2."""
    w = z / mass.sqrt_diag
    return -0.5 * jnp.sum(w * w)


def _all_finite(*arrays) -> Array:
    return jnp.all(jnp.stack([jnp.all(jnp.isfinite(a)) for a in arrays]))


def apply_rwmh(x: Array, z: Array, theta, mass: MassMatrix) -> PhasePoint:
    """(x, z) -> (x + theta M^{-1} z, -z)."""
    x_new = x + theta * z * mass.inv_diag
    return PhasePoint(x_new, -z, _all_finite(x_new))


def apply_leapfrog(
    x: Array,
    z: Array,
    theta,
    mass: MassMatrix,
    target: TargetModel,
    n_steps: int = 1,
    grad_x: Optional[Array] = None,
) -> PhasePoint:
    """``n_steps`` leapfrog steps followed by a momentum flip.

    Half kicks use the raw gradient and drifts use M^{-1}; the interior half kicks
    are fused into full kicks. Gradient cost is ``n_steps + 1``, or ``n_steps`` if
    the gradient at ``x`` is passed in.
    """
    if n_steps < 1:
        raise ConfigurationError("leapfrog needs n_steps >= 1")
    half = 0.5 * theta
    g = target.grad_log_gamma(x) if grad_x is None else grad_x
    z = z + half * g
    x = x + theta * z * mass.inv_diag
    g = target.grad_log_gamma(x)

    def full_step(_, carry):
        x, z, g = carry
        z = z + theta * g
        x = x + theta * z * mass.inv_diag
        return x, z, target.grad_log_gamma(x)

    if isinstance(x, jax.core.Tracer):
        x, z, g = jax.lax.fori_loop(0, n_steps - 1, full_step, (x, z, g))
    else:
        for i in range(n_steps - 1):
            x, z, g = full_step(i, (x, z, g))
    z = z + half * g
    return PhasePoint(x, -z, _all_finite(x, z, g))


class StartPoint(NamedTuple):
    """Quantities at the current (x, z) that do not depend on theta."""

    x: Array
    z: Array
    log_gamma: Array
    log_m: Array
    grad: Optional[Array]


@dataclass(frozen=True, eq=False)
class InvolutionFamily:
    """One of the involution families: ``rwmh``, ``mala`` or ``hmc`` with ``n_steps`` leapfrogs.

    Hashes by identity, so it can be a static argument of compiled kernels.
    """

    kind: str
    target: TargetModel
    n_steps: int = 1

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ConfigurationError(f"unknown involution family {self.kind!r}; choose from {FAMILY_KINDS}")
        if self.kind == "mala" and self.n_steps != 1:
            raise ConfigurationError("mala is a single leapfrog step; use hmc for n_steps > 1")
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be >= 1")
        if self.kind != "rwmh" and not self.target.has_gradient:
            raise ConfigurationError(f"{self.kind} needs a target gradient ({self.target.name!r} has none)")

    @property
    def uses_gradient(self) -> bool:
        return self.kind != "rwmh"

    @property
    def dim(self) -> int:
        return self.target.dim

    def grads_per_eval(self) -> int:
        """Gradient evaluations per ell evaluation once the start gradient is cached."""
        return self.n_steps if self.uses_gradient else 0

    def __call__(self, x: Array, z: Array, theta, mass: MassMatrix) -> PhasePoint:
        if self.kind == "rwmh":
            return apply_rwmh(x, z, theta, mass)
        return apply_leapfrog(x, z, theta, mass, self.target, self.n_steps)

    def start(self, x: Array, z: Array, mass: MassMatrix, log_gamma_x=None) -> StartPoint:
        lg = self.target.log_gamma(x) if log_gamma_x is None else log_gamma_x
        if self.kind == "rwmh":
            return StartPoint(x, z, lg, jnp.zeros(()), None)
        return StartPoint(x, z, lg, log_momentum(z, mass), self.target.grad_log_gamma(x))

    def evaluate(self, start: StartPoint, theta, mass: MassMatrix) -> tuple[Array, PhasePoint, Array]:
        """ell at ``theta`` from a prepared start point, with the proposal and its log density."""
        if self.kind == "rwmh":
            prop = apply_rwmh(start.x, start.z, theta, mass)
            lg_new = self.target.log_gamma(prop.x)
            ell = lg_new - start.log_gamma
        else:
            prop = apply_leapfrog(start.x, start.z, theta, mass, self.target, self.n_steps, start.grad)
            lg_new = self.target.log_gamma(prop.x)
            ell = lg_new + log_momentum(prop.z, mass) - start.log_gamma - start.log_m
        ell = jnp.where(prop.finite & ~jnp.isnan(ell), ell, -jnp.inf)
        lg_new = jnp.where(prop.finite, lg_new, -jnp.inf)
        return ell, prop, lg_new


def log_ratio(x: Array, z: Array, theta, family: InvolutionFamily, mass: Optional[MassMatrix] = None) -> Array:
    """Log acceptance ratio ell(x, z, theta); -inf when the proposal has zero density."""
    x = jnp.asarray(x, dtype=float)
    z = jnp.asarray(z, dtype=float)
    if mass is None:
        mass = MassMatrix.identity(x.shape[0])
    start = family.start(x, z, mass)
    ell, _, _ = family.evaluate(start, theta, mass)
    return ell
