"""Kolmogorov-Smirnov effective sample size and cost summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from autostep.errors import DiagnosticError
from autostep.targets import ReferenceDistribution

# Mean of the Kolmogorov distribution: E[K] = log(2) sqrt(pi / 2).
KOLMOGOROV_MEAN = math.log(2.0) * math.sqrt(math.pi / 2.0)

# Gradient-to-density evaluation cost ratios measured for the bundled targets.
ALPHA = {
    "mrna": 5.767,
    "orbital": 5.389,
    "kilpisjarvi": 5.9561,
    "funnel2": 5.960,
    "funnel100": 72.551,
}


def ks_statistic(draws, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """sup_x |F_hat(x) - F(x)|, evaluated at the jump points of the empirical CDF."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise DiagnosticError("KS statistic of an empty sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


@dataclass(frozen=True)
class KsessConfig:
    num_batches: int = 40
    reference: Optional[ReferenceDistribution] = None

    def __post_init__(self):
        if self.num_batches < 1:
            raise DiagnosticError("num_batches must be >= 1")


class KsessReport(NamedTuple):
    value: float
    severe: bool  # True when the full-trace estimate was used
    batch_estimate: float
    full_estimate: float


def ksess_report(trace_1d, cdf: Callable[[np.ndarray], np.ndarray], num_batches: int = 40) -> KsessReport:
    """KS-based effective sample size of a scalar trace, with both estimates.

    Splits the trace into ``num_batches`` equal batches (dropping the remainder) and
    compares the batch KS statistics with E[K]. When the full-trace statistic is so
    large that its own estimate falls below T E[K]^2 / B, the full-trace estimate
    (E[K] / D)^2 is used instead.
    """
    x = np.asarray(trace_1d, dtype=float).ravel()
    t = x.size
    batch = t // num_batches
    if batch < 1:
        raise DiagnosticError(f"trace of length {t} is shorter than {num_batches} batches")
    batches = x[: batch * num_batches].reshape(num_batches, batch)
    d_batch = np.array([ks_statistic(b, cdf) for b in batches])
    scaled = math.sqrt(batch) * float(np.mean(d_batch))
    ksess_batch = t * (KOLMOGOROV_MEAN / scaled) ** 2 if scaled > 0 else math.inf
    d_full = ks_statistic(x, cdf)
    ksess_full = (KOLMOGOROV_MEAN / d_full) ** 2 if d_full > 0 else math.inf
    severe = ksess_full <= t * KOLMOGOROV_MEAN**2 / batch
    return KsessReport(float(ksess_full if severe else ksess_batch), bool(severe), float(ksess_batch), float(ksess_full))


def ksess(trace_1d, cdf: Callable[[np.ndarray], np.ndarray], num_batches: int = 40) -> float:
    """KSESS of a scalar trace; see :func:`ksess_report`."""
    return ksess_report(trace_1d, cdf, num_batches).value


def min_ksess(trace_matrix, config: KsessConfig) -> float:
    """Minimum KSESS over coordinates against ``config.reference``."""
    if config.reference is None:
        raise DiagnosticError("min_ksess needs a reference distribution")
    xs = np.asarray(trace_matrix, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.shape[1] != config.reference.dim:
        raise DiagnosticError(f"trace has {xs.shape[1]} coordinates, reference has {config.reference.dim}")
    return min(ksess(xs[:, i], config.reference.cdf(i), config.num_batches) for i in range(xs.shape[1]))


@dataclass(frozen=True)
class CostModel:
    """Cost of an iteration: n_ell + alpha n_grad."""

    alpha: float = 1.0

    @classmethod
    def for_target(cls, name: str, alpha: Optional[float] = None) -> "CostModel":
        if alpha is not None:
            return cls(float(alpha))
        return cls(ALPHA.get(name, 1.0))

    def cost(self, n_ell, n_grad):
        return n_ell + self.alpha * n_grad


@dataclass
class Summary:
    iterations: int
    acceptance_rate: float
    mean_energy_jump: float
    mean_ell_abs: float
    cost_ell_per_iter: float
    cost_grad_per_iter: float
    cost_per_iter: float
    mean_abs_j: float
    forward_ell_evals_per_iter: float
    cap_hits: int
    mean_jump_distance: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def summarize(records, cost_model: CostModel = CostModel(), positions=None, x0=None) -> Summary:
    """Per-iteration averages of a chain's records.

    ``positions`` (optionally preceded by ``x0``) gives the mean Euclidean jump
    distance between consecutive states; NaN when not available.
    """
    n = len(records.accepted)
    if n == 0:
        raise DiagnosticError("cannot summarize an empty trace")
    ell = float(np.mean(records.cost_ell))
    grad = float(np.mean(records.cost_grad))
    jump = math.nan
    if positions is not None:
        xs = np.asarray(positions, dtype=float)
        if x0 is not None:
            xs = np.vstack([np.atleast_2d(np.asarray(x0, dtype=float)), xs])
        if len(xs) > 1:
            jump = float(np.mean(np.linalg.norm(np.diff(xs, axis=0), axis=1)))
    finite_ell = np.asarray(records.ell_abs)[np.isfinite(records.ell_abs)]
    return Summary(
        iterations=n,
        acceptance_rate=float(np.mean(records.accepted)),
        mean_energy_jump=float(np.mean(records.energy_jump)),
        mean_ell_abs=float(np.mean(finite_ell)) if finite_ell.size else math.inf,
        cost_ell_per_iter=ell,
        cost_grad_per_iter=grad,
        cost_per_iter=float(cost_model.cost(ell, grad)),
        mean_abs_j=float(np.mean(np.abs(records.j_forward))),
        forward_ell_evals_per_iter=float(np.mean(records.ell_evals_forward)),
        cap_hits=int(np.sum(records.capped)),
        mean_jump_distance=jump,
    )
