"""AutoStep transition kernel, its step size selector, and the fixed-step baseline.

One AutoStep iteration from x:

1. draw momentum z ~ N(0, M) and thresholds (a, b) uniform on {0 < a < b < 1};
2. pick an exponent j by doubling/halving theta0 until |ell| lands roughly in
   (|log b|, |log a|), and propose (x', z') = f_theta(x, z) with theta = theta0 2^j;
3. rerun the selector from (x', z') with the same (a, b); the proposal can only be
   accepted if it picks the same j (the step size distribution is a point mass,
   so the reverse/forward density ratio is the indicator of that event);
4. accept with probability min(1, exp(ell)) times that indicator.

The selector's final ell is reused for the accept step, so an iteration costs
exactly the ell evaluations of the two selector runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import NamedTuple, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from autostep.errors import ConfigurationError
from autostep.involutions import InvolutionFamily, MassMatrix, PhasePoint, StartPoint, sample_momentum
from autostep.targets import TargetModel

Array = jax.Array

CRITERIA = ("symmetric", "asymmetric")
DEFAULT_J_CAP = 60


class ThresholdPair(NamedTuple):
    a: Array
    b: Array


class SelectorResult(NamedTuple):
    j: Array
    theta: Array
    ell_evals: Array
    capped: Array
    ell: Array
    proposal: PhasePoint
    log_gamma_proposal: Array


class ChainState(NamedTuple):
    x: Array
    log_gamma: Array


class IterationRecord(NamedTuple):
    accepted: Array
    accept_prob: Array
    ell_abs: Array
    energy_jump: Array
    j_forward: Array
    j_reverse: Array
    cost_ell: Array
    cost_grad: Array
    capped: Array
    ell_evals_forward: Array  # the forward selector's share of cost_ell


class ChainTrace(NamedTuple):
    positions: np.ndarray
    records: IterationRecord

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class KernelConfig:
    family: InvolutionFamily
    theta0: float = 1.0
    criterion: str = "symmetric"
    j_cap: int = DEFAULT_J_CAP

    def __post_init__(self):
        if not (np.isfinite(self.theta0) and self.theta0 > 0):
            raise ConfigurationError(f"theta0 must be positive and finite, got {self.theta0}")
        if self.criterion not in CRITERIA:
            raise ConfigurationError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.j_cap < 1:
            raise ConfigurationError("j_cap must be >= 1")

    @property
    def target(self) -> TargetModel:
        return self.family.target


def init_state(target: TargetModel, x) -> ChainState:
    x = jnp.asarray(x, dtype=float).reshape(target.dim)
    lg = target.log_gamma(x)
    if not np.isfinite(float(lg)):
        raise ConfigurationError("initial state has zero target density")
    return ChainState(x, lg)


def sample_thresholds(key: Array) -> ThresholdPair:
    """(a, b) uniform on the triangle 0 < a < b < 1: sort two uniforms, redraw on ties or zeros."""

    def draw(k):
        return jax.random.uniform(k, (2,))

    def bad(carry):
        u, _ = carry
        return (u[0] == u[1]) | (jnp.min(u) == 0.0)

    def redraw(carry):
        _, k = carry
        k, sub = jax.random.split(k)
        return draw(sub), k

    key, sub = jax.random.split(key)
    u, _ = jax.lax.while_loop(bad, redraw, (draw(sub), key))
    return ThresholdPair(jnp.min(u), jnp.max(u))


def _predicates(criterion: str, pair: ThresholdPair):
    """(too_small, too_large): does ell call for doubling / halving theta."""
    log_a, log_b = jnp.log(pair.a), jnp.log(pair.b)
    if criterion == "symmetric":
        # -inf ell (zero-density proposal) has |ell| = inf and forces halving
        return (lambda ell: jnp.abs(ell) < -log_b), (lambda ell: jnp.abs(ell) > -log_a)
    # one-sided band a <= exp(ell) <= b
    return (lambda ell: ell > log_b), (lambda ell: ell < log_a)


def _select(family: InvolutionFamily, criterion: str, j_cap: int, start: StartPoint, pair, theta0, mass):
    too_small, too_large = _predicates(criterion, pair)
    ell0, prop0, lg0 = family.evaluate(start, theta0, mass)
    v = too_small(ell0).astype(jnp.int64) - too_large(ell0).astype(jnp.int64)

    init = {
        "j": jnp.zeros((), jnp.int64),
        "cur": (ell0, prop0, lg0),
        "prev": (ell0, prop0, lg0),
        "evals": jnp.ones((), jnp.int64),
        "done": v == 0,
        "capped": jnp.zeros((), bool),
    }

    def body(c):
        j = c["j"] + v
        ell, prop, lg = family.evaluate(start, jnp.ldexp(theta0, j), mass)
        exited = jnp.where(v == 1, ~too_small(ell), ~too_large(ell))
        capped = ~exited & (jnp.abs(j) >= j_cap)
        return {
            "j": j,
            "cur": (ell, prop, lg),
            "prev": c["cur"],
            "evals": c["evals"] + 1,
            "done": exited | capped,
            "capped": capped,
        }

    c = jax.lax.while_loop(lambda c: ~c["done"], body, init)
    # a doubling run that stopped on its own steps back once
    step_back = (v == 1) & ~c["capped"]
    j = jnp.where(step_back, c["j"] - 1, c["j"])
    chosen = jax.tree_util.tree_map(lambda p, q: jnp.where(step_back, p, q), c["prev"], c["cur"])
    ell, prop, lg = chosen
    return SelectorResult(j, jnp.ldexp(theta0, j), c["evals"], c["capped"], ell, prop, lg)


@partial(jax.jit, static_argnames=("family", "criterion", "j_cap"))
def _select_jit(x, z, pair, theta0, mass, family, criterion, j_cap):
    start = family.start(x, z, mass)
    return _select(family, criterion, j_cap, start, pair, theta0, mass)


def select_step_size(x, z, pair: ThresholdPair, config: KernelConfig, mass: Optional[MassMatrix] = None) -> SelectorResult:
    """Doubling/halving step size selector; returns the exponent j with theta = theta0 2^j."""
    x = jnp.asarray(x, dtype=float)
    z = jnp.asarray(z, dtype=float)
    if mass is None:
        mass = MassMatrix.identity(x.shape[0])
    pair = ThresholdPair(jnp.asarray(pair[0], dtype=float), jnp.asarray(pair[1], dtype=float))
    return _select_jit(
        x, z, pair, jnp.asarray(config.theta0, dtype=float), mass,
        family=config.family, criterion=config.criterion, j_cap=config.j_cap,
    )


def _transition(key, state: ChainState, theta0, mass, family: InvolutionFamily, criterion, j_cap, adaptive):
    k_z, k_ab, k_u = jax.random.split(key, 3)
    z = sample_momentum(k_z, mass)
    pair = sample_thresholds(k_ab)
    start = family.start(state.x, z, mass, state.log_gamma)
    start_grads = 1 if family.uses_gradient else 0

    if adaptive:
        fwd = _select(family, criterion, j_cap, start, pair, theta0, mass)

        def reverse(_):
            back = family.start(fwd.proposal.x, fwd.proposal.z, mass, fwd.log_gamma_proposal)
            rev = _select(family, criterion, j_cap, back, pair, theta0, mass)
            return rev.j, rev.ell_evals, rev.capped, jnp.asarray(start_grads, jnp.int64)

        def skip(_):
            # zero-density proposal: rejected whatever the reverse run would pick
            zero = jnp.zeros((), jnp.int64)
            return fwd.j, zero, jnp.zeros((), bool), zero

        j_rev, rev_evals, rev_capped, rev_start_grads = jax.lax.cond(jnp.isfinite(fwd.ell), reverse, skip, None)
        j_fwd, ell, prop, lg_prop = fwd.j, fwd.ell, fwd.proposal, fwd.log_gamma_proposal
        fwd_evals = fwd.ell_evals
        cost_ell = fwd.ell_evals + rev_evals
        cost_grad = start_grads + rev_start_grads + family.grads_per_eval() * cost_ell
        capped = fwd.capped | rev_capped
    else:
        ell, prop, lg_prop = family.evaluate(start, theta0, mass)
        j_fwd = j_rev = jnp.zeros((), jnp.int64)
        cost_ell = fwd_evals = jnp.ones((), jnp.int64)
        cost_grad = jnp.asarray(start_grads + family.grads_per_eval(), jnp.int64)
        capped = jnp.zeros((), bool)

    accept_prob = jnp.where(j_rev == j_fwd, jnp.exp(jnp.minimum(ell, 0.0)), 0.0)
    accepted = jax.random.uniform(k_u) < accept_prob
    new_state = ChainState(
        jnp.where(accepted, prop.x, state.x),
        jnp.where(accepted, lg_prop, state.log_gamma),
    )
    ell_abs = jnp.abs(ell)
    record = IterationRecord(
        accepted=accepted,
        accept_prob=accept_prob,
        ell_abs=ell_abs,
        energy_jump=jnp.where(accepted, ell_abs, 0.0),
        j_forward=j_fwd,
        j_reverse=j_rev,
        cost_ell=cost_ell,
        cost_grad=cost_grad,
        capped=capped,
        ell_evals_forward=fwd_evals,
    )
    return new_state, record


_STATIC = ("family", "criterion", "j_cap", "adaptive")
_transition_jit = jax.jit(_transition, static_argnames=_STATIC)


@partial(jax.jit, static_argnames=_STATIC)
def _transition_batch(keys, states, theta0, mass, family, criterion, j_cap, adaptive):
    def one(key, state):
        return _transition(key, state, theta0, mass, family, criterion, j_cap, adaptive)

    return jax.vmap(one)(keys, states)


def _as_state(target: TargetModel, state) -> ChainState:
    return state if isinstance(state, ChainState) else init_state(target, state)


def autostep_transition(key, state, config: KernelConfig, mass: Optional[MassMatrix] = None):
    """One AutoStep iteration. ``state`` is a :class:`ChainState` or a position vector."""
    state = _as_state(config.target, state)
    if mass is None:
        mass = MassMatrix.identity(config.target.dim)
    return _transition_jit(
        key, state, jnp.asarray(config.theta0, dtype=float), mass,
        family=config.family, criterion=config.criterion, j_cap=config.j_cap, adaptive=True,
    )


def fixed_step_transition(key, state, theta, family: InvolutionFamily, mass: Optional[MassMatrix] = None):
    """Standard involutive Metropolis-Hastings step at fixed ``theta``.

    Consumes the random stream exactly like :func:`autostep_transition`, so the two
    agree whenever the selector would return j = 0 in both directions.
    """
    if not theta > 0:
        raise ConfigurationError("theta must be positive")
    state = _as_state(family.target, state)
    if mass is None:
        mass = MassMatrix.identity(family.target.dim)
    return _transition_jit(
        key, state, jnp.asarray(theta, dtype=float), mass,
        family=family, criterion="symmetric", j_cap=DEFAULT_J_CAP, adaptive=False,
    )


def transition_batch(keys, states: ChainState, config: KernelConfig, mass: Optional[MassMatrix] = None, adaptive: bool = True):
    """Apply one transition to many independent chains (leading axis of ``keys`` and ``states``)."""
    if mass is None:
        mass = MassMatrix.identity(config.target.dim)
    return _transition_batch(
        keys, states, jnp.asarray(config.theta0, dtype=float), mass,
        family=config.family, criterion=config.criterion, j_cap=config.j_cap, adaptive=adaptive,
    )


def init_states(target: TargetModel, xs) -> ChainState:
    xs = jnp.asarray(xs, dtype=float).reshape(-1, target.dim)
    return ChainState(xs, jax.vmap(target.log_gamma)(xs))


def mixed_mass(key, m_hat_sqrt_diag: Array) -> MassMatrix:
    """M^{1/2} = xi M_hat^{1/2} + (1 - xi) with xi ~ 1/3 delta_0 + 1/3 delta_1 + 1/3 Unif(0, 1)."""
    k_pick, k_u = jax.random.split(key)
    pick = jax.random.randint(k_pick, (), 0, 3)
    xi = jnp.where(pick == 0, 0.0, jnp.where(pick == 1, 1.0, jax.random.uniform(k_u)))
    return MassMatrix(xi * m_hat_sqrt_diag + (1.0 - xi))


def chain_step(key, state, theta0, mass_sqrt_diag, family, criterion, j_cap, adaptive, mix_mass):
    """Step used by all chain drivers: optional preconditioner mixing, then a transition."""
    k_mix, k_step = jax.random.split(key)
    mass = mixed_mass(k_mix, mass_sqrt_diag) if mix_mass else MassMatrix(mass_sqrt_diag)
    return _transition(k_step, state, theta0, mass, family, criterion, j_cap, adaptive)


@partial(jax.jit, static_argnames=("n_iter", "family", "criterion", "j_cap", "adaptive", "mix_mass"))
def _run_chain_jit(key, state, first_step, theta0, mass_sqrt_diag, n_iter, family, criterion, j_cap, adaptive, mix_mass):
    def step(state, t):
        k = jax.random.fold_in(key, first_step + t)
        state, rec = chain_step(k, state, theta0, mass_sqrt_diag, family, criterion, j_cap, adaptive, mix_mass)
        return state, (state.x, rec)

    return jax.lax.scan(step, state, jnp.arange(n_iter))


def run_chain(
    key,
    x0,
    n_iter: int,
    config: KernelConfig,
    mass: Optional[MassMatrix] = None,
    adaptive: bool = True,
    first_step: int = 0,
    mix_mass: bool = False,
):
    """Run ``n_iter`` iterations; iteration t uses the key ``fold_in(key, first_step + t)``.

    Returns the final :class:`ChainState` and a :class:`ChainTrace` of numpy arrays
    (positions after each iteration plus per-iteration records). With
    ``mix_mass`` the given mass is treated as M_hat and mixed with the identity
    on every iteration.
    """
    if n_iter < 0:
        raise ConfigurationError("n_iter must be non-negative")
    state = _as_state(config.target, x0)
    dim = config.target.dim
    if mass is None:
        mass = MassMatrix.identity(dim)
    if n_iter == 0:
        empty = IterationRecord(*(np.zeros(0, dtype=d) for d in _RECORD_DTYPES))
        return state, ChainTrace(np.zeros((0, dim)), empty)
    state, (xs, recs) = _run_chain_jit(
        key, state, jnp.asarray(first_step, jnp.int64), jnp.asarray(config.theta0, dtype=float), mass.sqrt_diag,
        n_iter=n_iter, family=config.family, criterion=config.criterion, j_cap=config.j_cap,
        adaptive=adaptive, mix_mass=mix_mass,
    )
    xs, recs = jax.device_get((xs, recs))
    return state, ChainTrace(np.asarray(xs), IterationRecord(*(np.asarray(r) for r in recs)))


_RECORD_DTYPES = (bool, float, float, float, np.int64, np.int64, np.int64, np.int64, bool, np.int64)


@dataclass(frozen=True)
class ProfileRow:
    norm: float
    criterion: str
    replicates: int
    acceptance_rate: float
    mean_accept_prob: float


def acceptance_probability_profile(
    key,
    norms: Sequence[float],
    config: KernelConfig,
    replicates: int,
    criteria: Sequence[str] = CRITERIA,
) -> list[ProfileRow]:
    """One-step acceptance of AutoStep started from exact draws rescaled to each norm.

    For each norm, ``replicates`` exact target draws are rescaled to that
    Euclidean norm and moved by one transition; rows report the mean acceptance
    indicator and mean acceptance probability per (norm, criterion).
    """
    target = config.target
    if replicates <= 0 or len(norms) == 0:
        return []
    rows = []
    for i, norm in enumerate(norms):
        k_draw, k_step = jax.random.split(jax.random.fold_in(key, i))
        draws = target.sample_exact(k_draw, replicates)
        lengths = jnp.linalg.norm(draws, axis=1, keepdims=True)
        xs = jnp.where(lengths > 0, draws / jnp.where(lengths > 0, lengths, 1.0), 1.0 / np.sqrt(target.dim)) * norm
        states = init_states(target, xs)
        keys = jax.random.split(k_step, replicates)
        for criterion in criteria:
            cfg = KernelConfig(config.family, config.theta0, criterion, config.j_cap)
            _, rec = transition_batch(keys, states, cfg)
            rows.append(
                ProfileRow(
                    norm=float(norm),
                    criterion=criterion,
                    replicates=replicates,
                    acceptance_rate=float(np.mean(np.asarray(rec.accepted, dtype=float))),
                    mean_accept_prob=float(np.mean(np.asarray(rec.accept_prob))),
                )
            )
    return rows
