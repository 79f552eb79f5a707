"""Experiment configuration, seeded execution of runs/sweeps/tuning, and CSV output.

Randomness: the master key is ``PRNGKey(seed)``; cell k of a command uses
``fold_in(master, k)``, split once into an initialization key and a chain key.
Iteration t of a chain then uses ``fold_in(chain_key, t)``. Results therefore
do not depend on how many worker threads run the cells.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from autostep import __version__
from autostep.diagnostics import CostModel, KsessConfig, ks_statistic, ksess, min_ksess, summarize
from autostep.errors import ConfigurationError
from autostep.involutions import InvolutionFamily
from autostep.kernel import CRITERIA, ChainTrace, KernelConfig, acceptance_probability_profile, run_chain
from autostep.targets import ReferenceDistribution, TargetModel, get_target, read_table
from autostep.tuning import RoundSchedule, run_tuned

DEFAULT_HMC_STEPS = 10
DEFAULT_NORMS = tuple(10.0**k for k in range(-5, 3))
SWEEP_THETA0 = tuple(10.0**k for k in range(-7, 8))

_SAMPLER_RE = re.compile(r"^(autostep|fixed)-(rwmh|mala|hmc)(?:\((\d+)\))?$")


@dataclass(frozen=True)
class SamplerSpec:
    adaptive: bool
    kind: str
    n_steps: int = 1

    @classmethod
    def parse(cls, name: str) -> "SamplerSpec":
        m = _SAMPLER_RE.match(name.strip())
        if m is None:
            raise ConfigurationError(
                f"unknown sampler {name!r}; choose from autostep-rwmh, autostep-mala, autostep-hmc(L), "
                "fixed-rwmh, fixed-mala, fixed-hmc(L)"
            )
        mode, kind, steps = m.groups()
        if steps is not None and kind != "hmc":
            raise ConfigurationError(f"{kind} takes no leapfrog count")
        n_steps = int(steps) if steps is not None else (DEFAULT_HMC_STEPS if kind == "hmc" else 1)
        if n_steps < 1:
            raise ConfigurationError("hmc needs at least one leapfrog step")
        return cls(mode == "autostep", kind, n_steps)

    @property
    def name(self) -> str:
        suffix = f"({self.n_steps})" if self.kind == "hmc" else ""
        return f"{'autostep' if self.adaptive else 'fixed'}-{self.kind}{suffix}"

    def counterpart(self) -> "SamplerSpec":
        """The same family with the other step-size mode."""
        return SamplerSpec(not self.adaptive, self.kind, self.n_steps)

    def family(self, target: TargetModel) -> InvolutionFamily:
        return InvolutionFamily(self.kind, target, self.n_steps)


@dataclass
class ExperimentConfig:
    target: str = "gaussian"
    sampler: str = "autostep-rwmh"
    criterion: str = "symmetric"
    theta0: tuple[float, ...] = (1.0,)
    iterations: int = 1000
    rounds: Optional[int] = None
    seed: int = 0
    out: str = "autostep-out"
    ref: Optional[str] = None
    alpha: Optional[str] = None
    replicates: int = 10000
    norms: tuple[float, ...] = DEFAULT_NORMS
    batches: int = 40
    init: str = "exact"
    jobs: int = 1
    trace: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        get_target(self.target)
        SamplerSpec.parse(self.sampler)
        if self.criterion not in CRITERIA:
            raise ConfigurationError(f"criterion must be one of {CRITERIA}")
        if not self.theta0:
            raise ConfigurationError("theta0 list is empty")
        if not all(math.isfinite(t) and t > 0 for t in self.theta0):
            raise ConfigurationError("theta0 values must be finite and positive")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be non-negative")
        if self.rounds is not None and self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.replicates < 0:
            raise ConfigurationError("replicates must be non-negative")
        if any(not (math.isfinite(n) and n >= 0) for n in self.norms):
            raise ConfigurationError("norms must be finite and non-negative")
        if self.batches < 1:
            raise ConfigurationError("batches must be >= 1")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        if self.alpha is not None and self.alpha != "measure":
            try:
                a = float(self.alpha)
            except ValueError:
                raise ConfigurationError("alpha must be a number or 'measure'") from None
            if not (math.isfinite(a) and a >= 0):
                raise ConfigurationError("alpha must be finite and non-negative")
        parse_init(self.init)
        return self

    def config_hash(self) -> str:
        """Digest of every field that influences results (not output path or worker count)."""
        payload = {k: v for k, v in asdict(self).items() if k not in ("out", "jobs")}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# Field name -> parser for the flat key=value config file.
def _float_list(text: str) -> tuple[float, ...]:
    items = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    try:
        return tuple(float(t) for t in items)
    except ValueError:
        raise ConfigurationError(f"not a list of numbers: {text!r}") from None


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(f"not an integer: {text!r}") from None


_PARSERS: dict[str, Callable[[str], Any]] = {
    "target": str,
    "sampler": str,
    "criterion": str,
    "theta0": _float_list,
    "iterations": _int,
    "iters": _int,
    "rounds": _int,
    "seed": _int,
    "out": str,
    "ref": str,
    "alpha": str,
    "replicates": _int,
    "norms": _float_list,
    "batches": _int,
    "init": str,
    "jobs": _int,
    "trace": str,
}


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _PARSERS:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        values["iterations" if key == "iters" else key] = _PARSERS[key](value)
    return values


def build_config(file_values: dict[str, Any], overrides: dict[str, Any]) -> ExperimentConfig:
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in merged.items() if k in known}).validate()


def parse_init(init: str):
    """'exact', 'zeros', or a number s meaning x0 ~ N(0, s^2 I)."""
    if init in ("exact", "zeros"):
        return init
    try:
        scale = float(init)
    except ValueError:
        raise ConfigurationError("init must be 'exact', 'zeros' or a positive scale") from None
    if not (math.isfinite(scale) and scale > 0):
        raise ConfigurationError("init scale must be positive")
    return scale


def initial_position(target: TargetModel, init: str, key) -> jnp.ndarray:
    mode = parse_init(init)
    if mode == "exact" and target.exact_sampler is not None:
        return target.sample_exact(key, 1)[0]
    if mode in ("exact", "zeros"):
        return jnp.zeros(target.dim)
    return mode * jax.random.normal(key, (target.dim,))


def cell_keys(seed: int, cell: int):
    master = jax.random.PRNGKey(np.uint64(seed))
    k_init, k_chain = jax.random.split(jax.random.fold_in(master, cell))
    return k_init, k_chain


def measure_alpha(target: TargetModel, x, repeats: int = 2000) -> float:
    """Median wall-clock ratio of a gradient evaluation to a density evaluation."""
    if not target.has_gradient:
        return 1.0
    x = jnp.asarray(x, dtype=float)
    f = jax.jit(target.log_density)
    g = jax.jit(target.grad_log_density)
    f(x).block_until_ready()
    g(x).block_until_ready()
    ratios = []
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeats):
            f(x).block_until_ready()
        t1 = time.perf_counter()
        for _ in range(repeats):
            g(x).block_until_ready()
        t2 = time.perf_counter()
        ratios.append((t2 - t1) / max(t1 - t0, 1e-12))
    return float(np.median(ratios))


def cost_model_for(cfg: ExperimentConfig, target: TargetModel, x0) -> CostModel:
    if cfg.alpha == "measure":
        return CostModel(measure_alpha(target, x0))
    return CostModel.for_target(cfg.target, None if cfg.alpha is None else float(cfg.alpha))


def reference_for(cfg: ExperimentConfig, target: TargetModel) -> Optional[ReferenceDistribution]:
    if cfg.ref is not None:
        ref = ReferenceDistribution.from_csv(cfg.ref)
        if ref.dim != target.dim:
            raise ConfigurationError(f"reference file has {ref.dim} columns, target has dimension {target.dim}")
        return ref
    if target.marginal_cdfs is not None:
        return target.reference()
    return None


# ----------------------------------------------------------------------------
# CSV output
# ----------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, command: str, cfg: ExperimentConfig, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        handle.write(f"# autostep {__version__} command={command} config={cfg.config_hash()} seed={cfg.seed}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def trace_header(dim: int) -> list[str]:
    return ["iter", *(f"x{i + 1}" for i in range(dim)), "accepted", "ell_abs", "energy_jump",
            "j_fwd", "j_rev", "cost_ell", "cost_grad"]


def trace_rows(trace: ChainTrace):
    r = trace.records
    for t in range(len(trace)):
        yield (t + 1, *trace.positions[t], bool(r.accepted[t]), float(r.ell_abs[t]), float(r.energy_jump[t]),
               int(r.j_forward[t]), int(r.j_reverse[t]), int(r.cost_ell[t]), int(r.cost_grad[t]))


SUMMARY_HEADER = [
    "sampler", "target", "criterion", "theta0", "seed", "iterations", "acceptance", "energy_jump",
    "mean_ell_abs", "cost_ell_per_iter", "cost_grad_per_iter", "alpha", "cost_per_iter",
    "mean_abs_j", "forward_ell_evals_per_iter", "cap_hits", "min_ksess", "ksess_per_cost",
]


@dataclass
class CellResult:
    sampler: SamplerSpec
    theta0: float
    trace: ChainTrace
    row: list
    extra: dict = field(default_factory=dict)


def summary_row(cfg, spec: SamplerSpec, theta0, trace: ChainTrace, cost_model: CostModel, reference, x0) -> list:
    n = len(trace)
    criterion = cfg.criterion if spec.adaptive else "none"
    if n == 0:
        nan = math.nan
        return [spec.name, cfg.target, criterion, theta0, cfg.seed, 0, nan, nan, nan, nan, nan,
                cost_model.alpha, nan, nan, nan, 0, nan, nan]
    s = summarize(trace.records, cost_model, trace.positions, x0)
    ks = math.nan
    if reference is not None and n >= cfg.batches:
        ks = min_ksess(trace.positions, KsessConfig(cfg.batches, reference))
    return [spec.name, cfg.target, criterion, theta0, cfg.seed, n, s.acceptance_rate, s.mean_energy_jump,
            s.mean_ell_abs, s.cost_ell_per_iter, s.cost_grad_per_iter, cost_model.alpha, s.cost_per_iter,
            s.mean_abs_j, s.forward_ell_evals_per_iter, s.cap_hits, ks, ks / (s.cost_per_iter * n)]


def _run_cells(jobs: int, fn, cells):
    if jobs == 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))  # map preserves cell order


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------


class _Setup:
    """Objects shared by all cells of a command so compiled kernels are reused."""

    def __init__(self, cfg: ExperimentConfig, specs: Sequence[SamplerSpec]):
        self.target = get_target(cfg.target)
        self.families = {s: s.family(self.target) for s in specs}
        self.reference = reference_for(cfg, self.target)
        k_init, _ = cell_keys(cfg.seed, 0)
        self.cost_model = cost_model_for(cfg, self.target, initial_position(self.target, cfg.init, k_init))


def _chain_cell(cfg: ExperimentConfig, setup: _Setup, cell: int, spec: SamplerSpec, theta0: float) -> CellResult:
    k_init, k_chain = cell_keys(cfg.seed, cell)
    x0 = initial_position(setup.target, cfg.init, k_init)
    kcfg = KernelConfig(setup.families[spec], theta0, cfg.criterion)
    _, trace = run_chain(k_chain, x0, cfg.iterations, kcfg, adaptive=spec.adaptive)
    row = summary_row(cfg, spec, theta0, trace, setup.cost_model, setup.reference, np.asarray(x0))
    return CellResult(spec, theta0, trace, row)


def cmd_sample(cfg: ExperimentConfig) -> CellResult:
    """One chain at ``theta0[0]``; writes trace.csv and summary.csv under ``cfg.out``."""
    spec = SamplerSpec.parse(cfg.sampler)
    setup = _Setup(cfg, [spec])
    result = _chain_cell(cfg, setup, 0, spec, cfg.theta0[0])
    out = Path(cfg.out)
    write_csv(out / "trace.csv", "sample", cfg, trace_header(setup.target.dim), trace_rows(result.trace))
    write_csv(out / "summary.csv", "sample", cfg, SUMMARY_HEADER, [result.row])
    return result


def cmd_sweep(cfg: ExperimentConfig) -> list[CellResult]:
    """AutoStep and fixed-step runs at every theta0; writes sweep.csv (one row per cell)."""
    spec = SamplerSpec.parse(cfg.sampler)
    specs = [spec, spec.counterpart()] if spec.adaptive else [spec.counterpart(), spec]
    setup = _Setup(cfg, specs)
    cells = [(i * len(specs) + k, s, th) for i, th in enumerate(cfg.theta0) for k, s in enumerate(specs)]
    results = _run_cells(cfg.jobs, lambda c: _chain_cell(cfg, setup, *c), cells)
    write_csv(Path(cfg.out) / "sweep.csv", "sweep", cfg, SUMMARY_HEADER, [r.row for r in results])
    return results


HISTORY_HEADER = ["cell", "theta0_init", "round", "iterations", "theta0", "acceptance", "cost_ell_per_iter",
                  "cost_grad_per_iter", "cost_per_iter", "median_exponent", "cap_hits", "stuck_coords"]


def cmd_tune(cfg: ExperimentConfig) -> list[CellResult]:
    """Round-based tuning from each initial theta0.

    Writes history.csv (one row per round and cell), summary.csv (final round of
    each cell, with the tuned theta0) and the final-round draws: trace.csv for a
    single cell, trace_cell<k>.csv otherwise.
    """
    spec = SamplerSpec.parse(cfg.sampler)
    if not spec.adaptive:
        raise ConfigurationError("tune needs an autostep sampler")
    rounds = cfg.rounds if cfg.rounds is not None else 10
    setup = _Setup(cfg, [spec])
    dim = setup.target.dim

    def run(cell):
        index, theta0 = cell
        k_init, k_chain = cell_keys(cfg.seed, index)
        x0 = initial_position(setup.target, cfg.init, k_init)
        kcfg = KernelConfig(setup.families[spec], theta0, cfg.criterion)
        tuned = run_tuned(k_chain, x0, RoundSchedule(rounds), kcfg)
        row = summary_row(cfg, spec, theta0, tuned.trace, setup.cost_model, setup.reference, None)
        return CellResult(spec, theta0, tuned.trace, row,
                          {"history": tuned.history, "theta0_final": tuned.tuner.theta0})

    results = _run_cells(cfg.jobs, run, list(enumerate(cfg.theta0)))
    out = Path(cfg.out)
    alpha = setup.cost_model.alpha
    history_rows = []
    for index, res in enumerate(results):
        for h in res.extra["history"]:
            history_rows.append([index, res.theta0, h.round, h.iterations, h.theta0, h.acceptance_rate,
                                 h.cost_ell_per_iter, h.cost_grad_per_iter, h.cost_per_iter(alpha),
                                 h.median_exponent, h.cap_hits, h.stuck_coords,
                                 *(h.m_hat_sqrt_diag**2)])
    write_csv(out / "history.csv", "tune", cfg, HISTORY_HEADER + [f"m_hat_{i + 1}" for i in range(dim)], history_rows)
    write_csv(out / "summary.csv", "tune", cfg, SUMMARY_HEADER + ["theta0_final"],
              [r.row + [r.extra["theta0_final"]] for r in results])
    for index, res in enumerate(results):
        name = "trace.csv" if len(results) == 1 else f"trace_cell{index}.csv"
        write_csv(out / name, "tune", cfg, trace_header(dim), trace_rows(res.trace))
    return results


PROFILE_HEADER = ["norm", "criterion", "replicates", "acceptance_rate", "mean_accept_prob"]


def cmd_acceptance_profile(cfg: ExperimentConfig) -> list:
    """One-step acceptance at positions of fixed norm, for both criteria; writes profile.csv."""
    spec = SamplerSpec.parse(cfg.sampler)
    target = get_target(cfg.target)
    if target.exact_sampler is None:
        raise ConfigurationError(f"target {cfg.target!r} has no exact sampler; acceptance profiles need one")
    kcfg = KernelConfig(spec.family(target), cfg.theta0[0], cfg.criterion)
    _, k_chain = cell_keys(cfg.seed, 0)
    rows = acceptance_probability_profile(k_chain, list(cfg.norms), kcfg, cfg.replicates)
    write_csv(Path(cfg.out) / "profile.csv", "acceptance-profile", cfg, PROFILE_HEADER,
              [[r.norm, r.criterion, r.replicates, r.acceptance_rate, r.mean_accept_prob] for r in rows])
    return rows


KSESS_HEADER = ["coordinate", "ksess", "ks_full", "ksess_per_cost"]


def cmd_ksess(cfg: ExperimentConfig) -> list:
    """KSESS of every coordinate of a trace file; writes ksess.csv.

    Position columns are ``x1..xd`` when present, otherwise every column. The
    reference is ``--ref`` if given, else the analytic marginals of ``--target``.
    When the trace has ``cost_ell``/``cost_grad`` columns, KSESS is also divided
    by the total cost.
    """
    if cfg.trace is None:
        raise ConfigurationError("ksess needs --trace")
    try:
        with open(cfg.trace, newline="") as handle:
            header, data = read_table(handle)
    except OSError as exc:
        raise ConfigurationError(f"cannot read trace file: {exc}") from None
    x_cols = [i for i, h in enumerate(header) if re.fullmatch(r"x\d+", h)] or list(range(len(header)))
    xs = data[:, x_cols]
    if cfg.ref is not None:
        reference = ReferenceDistribution.from_csv(cfg.ref)
    else:
        reference = get_target(cfg.target).reference()
    if reference.dim != xs.shape[1]:
        raise ConfigurationError(f"trace has {xs.shape[1]} coordinates, reference has {reference.dim}")
    total_cost = math.nan
    if "cost_ell" in header and "cost_grad" in header:
        model = CostModel.for_target(cfg.target, None if cfg.alpha in (None, "measure") else float(cfg.alpha))
        total_cost = float(model.cost(data[:, header.index("cost_ell")].sum(), data[:, header.index("cost_grad")].sum()))
    rows = []
    for i in range(xs.shape[1]):
        cdf = reference.cdf(i)
        k = ksess(xs[:, i], cdf, cfg.batches)
        rows.append([i + 1, k, ks_statistic(xs[:, i], cdf), k / total_cost])
    write_csv(Path(cfg.out) / "ksess.csv", "ksess", cfg, KSESS_HEADER, rows)
    return rows
