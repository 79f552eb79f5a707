"""Independent reference implementations used by the tests."""

from __future__ import annotations

import math

import jax
import jax.numpy as jnp
import numpy as np

import autostep as A
from autostep.involutions import MassMatrix

_GRID_FNS = {}


def ell_grid(family, x, z, theta0, mass: MassMatrix, j_cap: int) -> np.ndarray:
    """ell(x, z, theta0 2^j) for j = -j_cap..j_cap, each evaluated from scratch."""
    fn = _GRID_FNS.get(family)
    if fn is None:

        def one(x, z, theta, sqrt_diag):
            return A.log_ratio(x, z, theta, family, MassMatrix(sqrt_diag))

        fn = jax.jit(jax.vmap(one, in_axes=(None, None, 0, None)))
        _GRID_FNS[family] = fn
    js = np.arange(-j_cap, j_cap + 1)
    thetas = np.ldexp(float(theta0), js)
    return np.asarray(fn(jnp.asarray(x, float), jnp.asarray(z, float), jnp.asarray(thetas), mass.sqrt_diag))


def brute_force_mu(ells: np.ndarray, a: float, b: float, criterion: str, j_cap: int):
    """The piecewise exponent definition, by scanning j outward from 0.

    Returns (j, capped, ell_evals) where ell_evals counts the evaluations a
    doubling/halving search makes (the initial one plus one per step).
    """
    la, lb = math.log(a), math.log(b)

    def mag(e):
        return math.inf if not math.isfinite(e) else abs(e)

    if criterion == "symmetric":
        small = lambda e: mag(e) < abs(lb)  # noqa: E731
        large = lambda e: mag(e) > abs(la)  # noqa: E731
    else:
        small = lambda e: e > lb  # noqa: E731
        large = lambda e: e < la  # noqa: E731
    at = lambda j: float(ells[j + j_cap])  # noqa: E731
    e0 = at(0)
    if small(e0):
        for j in range(1, j_cap + 1):
            if not small(at(j)):
                return j - 1, False, j + 1
        return j_cap, True, j_cap + 1
    if large(e0):
        for j in range(1, j_cap + 1):
            if not large(at(-j)):
                return -j, False, j + 1
        return -j_cap, True, j_cap + 1
    return 0, False, 1


def random_selector_cases(seed: int, n: int):
    """Yield (family, x, z, (a, b), theta0, mass, criterion) over several targets and families."""
    rng = np.random.default_rng(seed)
    targets = [
        A.make_gaussian(3, 2.0),
        A.make_laplace1d(),
        A.make_cauchy1d(),
        A.get_target("funnel2"),
        A.get_target("kilpisjarvi"),
    ]
    families = [A.InvolutionFamily(k, t, s) for t in targets for k, s in (("rwmh", 1), ("mala", 1), ("hmc", 3))]
    for _ in range(n):
        family = families[rng.integers(len(families))]
        target = family.target
        d = target.dim
        if target.name == "kilpisjarvi":
            x = np.array([9.3, 0.0, 0.0]) + rng.normal(size=3) * np.array([0.5, 0.01, 0.5])
        else:
            x = rng.normal(size=d) * 10.0 ** rng.uniform(-3, 1)
        z = rng.normal(size=d)
        a, b = np.sort(rng.uniform(size=2))
        theta0 = 10.0 ** rng.uniform(-6, 6)
        mass = MassMatrix(jnp.asarray(10.0 ** rng.uniform(-0.5, 0.5, size=d)))
        criterion = ("symmetric", "asymmetric")[rng.integers(2)]
        yield family, x, z, (a, b), theta0, mass, criterion


def selector_mismatches(seed: int, n: int, j_cap: int = 60) -> list:
    bad = []
    for family, x, z, (a, b), theta0, mass, criterion in random_selector_cases(seed, n):
        cfg = A.KernelConfig(family, theta0, criterion, j_cap)
        res = A.select_step_size(x, z, (a, b), cfg, mass)
        ells = ell_grid(family, x, z, theta0, mass, j_cap)
        j, capped, evals = brute_force_mu(ells, a, b, criterion, j_cap)
        if (int(res.j), bool(res.capped), int(res.ell_evals)) != (j, capped, evals):
            bad.append((family.kind, family.target.name, criterion, int(res.j), j))
    return bad
