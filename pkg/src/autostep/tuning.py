"""Round-based tuning of the initial step size theta0 and a diagonal preconditioner.

Round r runs 2^r iterations with theta0 and M_hat frozen; every iteration mixes
M_hat with the identity at random. After the round, theta0 is multiplied by 2
raised to the lower median of that round's selected exponents, and M_hat becomes
the inverse of the per-coordinate sample variances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from autostep.errors import ConfigurationError
from autostep.involutions import MassMatrix
from autostep.kernel import ChainState, ChainTrace, KernelConfig, chain_step, init_state, mixed_mass, run_chain

VARIANCE_FLOOR = 1e-10


@dataclass(frozen=True)
class RoundSchedule:
    rounds: int

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigurationError("need at least one tuning round")

    def iterations(self, r: int) -> int:
        return 2**r

    @property
    def total_iterations(self) -> int:
        return 2 ** (self.rounds + 1) - 2


@dataclass
class TunerState:
    theta0: float
    m_hat_sqrt_diag: np.ndarray
    mu_log: list[int] = field(default_factory=list)
    stuck_coords: int = 0

    @classmethod
    def initial(cls, dim: int, theta0: float = 1.0) -> "TunerState":
        return cls(theta0=float(theta0), m_hat_sqrt_diag=np.ones(dim))


class RoundStats(NamedTuple):
    """What the end-of-round update needs: exponent counts and coordinate variances.

    ``mu_counts[k]`` counts iterations whose forward exponent was ``k - j_cap``.
    """

    mu_counts: np.ndarray
    variance: np.ndarray
    n: int

    @classmethod
    def from_trace(cls, trace: ChainTrace, j_cap: int = 60) -> "RoundStats":
        if len(trace) == 0:
            raise ConfigurationError("round trace is empty")
        mu = np.asarray(trace.records.j_forward, dtype=np.int64)
        counts = np.bincount(np.clip(mu, -j_cap, j_cap) + j_cap, minlength=2 * j_cap + 1)
        var = np.var(trace.positions, axis=0, ddof=1) if len(trace) > 1 else np.zeros(trace.positions.shape[1])
        return cls(counts, var, len(trace))

    @property
    def j_cap(self) -> int:
        return (self.mu_counts.size - 1) // 2

    def lower_median(self) -> int:
        rank = (self.n - 1) // 2  # 0-based rank of the lower median
        k = int(np.searchsorted(np.cumsum(self.mu_counts), rank + 1))
        return k - self.j_cap


def lower_median(values) -> int:
    values = np.sort(np.asarray(values, dtype=np.int64))
    return int(values[(values.size - 1) // 2])


def mix_preconditioner(m_hat_sqrt_diag, key) -> MassMatrix:
    """Draw xi from 1/3 delta_0 + 1/3 delta_1 + 1/3 Unif(0, 1); return xi M_hat^{1/2} + (1 - xi)."""
    return mixed_mass(key, jnp.asarray(m_hat_sqrt_diag, dtype=float))


def end_of_round_update(tuner: TunerState, round_trace) -> TunerState:
    """New tuner state from a finished round (a :class:`ChainTrace` or :class:`RoundStats`)."""
    stats = round_trace if isinstance(round_trace, RoundStats) else RoundStats.from_trace(round_trace)
    if stats.n == 0:
        raise ConfigurationError("round trace is empty")
    shift = stats.lower_median()
    var = np.asarray(stats.variance, dtype=float)
    stuck = int(np.sum(~(var > VARIANCE_FLOOR)))
    var = np.where(var > VARIANCE_FLOOR, var, VARIANCE_FLOOR)
    return TunerState(
        theta0=float(np.ldexp(tuner.theta0, shift)),
        m_hat_sqrt_diag=1.0 / np.sqrt(var),
        mu_log=[],
        stuck_coords=stuck,
    )


@partial(jax.jit, static_argnames=("family", "criterion", "j_cap"))
def _stats_round(key, state, first_step, n_iter, theta0, m_hat_sqrt, family, criterion, j_cap):
    dim = family.target.dim

    def body(t, carry):
        state, counts, mean, m2, totals = carry
        k = jax.random.fold_in(key, first_step + t)
        state, rec = chain_step(k, state, theta0, m_hat_sqrt, family, criterion, j_cap, True, True)
        counts = counts.at[jnp.clip(rec.j_forward, -j_cap, j_cap) + j_cap].add(1)
        # Welford update of per-coordinate mean and squared deviations
        n = (t + 1).astype(float)
        delta = state.x - mean
        mean = mean + delta / n
        m2 = m2 + delta * (state.x - mean)
        totals = totals + jnp.stack(
            [rec.accepted, rec.cost_ell, rec.cost_grad, rec.capped, rec.energy_jump]
        ).astype(float)
        return state, counts, mean, m2, totals

    init = (
        state,
        jnp.zeros(2 * j_cap + 1, jnp.int64),
        jnp.zeros(dim),
        jnp.zeros(dim),
        jnp.zeros(5),
    )
    return jax.lax.fori_loop(0, n_iter, body, init)


@dataclass
class RoundRecord:
    round: int
    iterations: int
    theta0: float
    m_hat_sqrt_diag: np.ndarray
    acceptance_rate: float
    cost_ell_per_iter: float
    cost_grad_per_iter: float
    cap_hits: int
    median_exponent: int
    stuck_coords: int

    def cost_per_iter(self, alpha: float = 1.0) -> float:
        return self.cost_ell_per_iter + alpha * self.cost_grad_per_iter


@dataclass
class TunedRun:
    trace: ChainTrace
    history: list[RoundRecord]
    tuner: TunerState
    final_state: ChainState


def run_tuned(
    key,
    x0,
    schedule: RoundSchedule,
    config: KernelConfig,
    initial_m_hat_sqrt_diag: Optional[np.ndarray] = None,
) -> TunedRun:
    """Round-based AutoStep; returns the last round's trace and the per-round history.

    ``config.theta0`` is the first round's theta0 (1 unless overridden). Iteration t
    of the whole run (counted across rounds) uses ``fold_in(key, t)``.
    """
    target = config.target
    state = init_state(target, x0)
    tuner = TunerState.initial(target.dim, config.theta0)
    if initial_m_hat_sqrt_diag is not None:
        tuner.m_hat_sqrt_diag = np.asarray(MassMatrix.from_sqrt_diag(initial_m_hat_sqrt_diag).sqrt_diag)
    history: list[RoundRecord] = []
    step = 0
    trace = None
    for r in range(1, schedule.rounds + 1):
        n = schedule.iterations(r)
        used_theta0, used_m_hat = tuner.theta0, tuner.m_hat_sqrt_diag.copy()
        if r < schedule.rounds:
            state, counts, _, m2, totals = _stats_round(
                key, state, jnp.asarray(step, jnp.int64), jnp.asarray(n, jnp.int64),
                jnp.asarray(used_theta0), jnp.asarray(used_m_hat),
                family=config.family, criterion=config.criterion, j_cap=config.j_cap,
            )
            counts, m2, totals = jax.device_get((counts, m2, totals))
            stats = RoundStats(np.asarray(counts), np.asarray(m2) / (n - 1), n)
            accepted, cost_ell, cost_grad, capped, _ = (float(v) for v in totals)
        else:
            round_cfg = KernelConfig(config.family, used_theta0, config.criterion, config.j_cap)
            state, trace = run_chain(
                key, state, n, round_cfg, MassMatrix(jnp.asarray(used_m_hat)), first_step=step, mix_mass=True
            )
            stats = RoundStats.from_trace(trace, config.j_cap)
            rec = trace.records
            accepted = float(rec.accepted.sum())
            cost_ell, cost_grad = float(rec.cost_ell.sum()), float(rec.cost_grad.sum())
            capped = float(rec.capped.sum())
        step += n
        median = stats.lower_median()
        tuner = end_of_round_update(tuner, stats)
        history.append(
            RoundRecord(
                round=r,
                iterations=n,
                theta0=used_theta0,
                m_hat_sqrt_diag=used_m_hat,
                acceptance_rate=accepted / n,
                cost_ell_per_iter=cost_ell / n,
                cost_grad_per_iter=cost_grad / n,
                cap_hits=int(capped),
                median_exponent=median,
                stuck_coords=tuner.stuck_coords,
            )
        )
    tuner.mu_log = [int(j) for j in trace.records.j_forward]
    return TunedRun(trace=trace, history=history, tuner=tuner, final_state=state)
