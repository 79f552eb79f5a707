"""AutoStep MCMC: involutive samplers with a per-iteration step size selector."""

import jax

# Involution round trips are checked to 1e-10 and step sizes span 2**+-60.
jax.config.update("jax_enable_x64", True)

from autostep.errors import ConfigurationError, DiagnosticError  # noqa: E402
from autostep.targets import (  # noqa: E402
    EvalCounters,
    ReferenceDistribution,
    TargetModel,
    get_target,
    make_cauchy1d,
    make_funnel,
    make_gaussian,
    make_kilpisjarvi,
    make_laplace1d,
    make_mrna,
    target_names,
)
from autostep.involutions import (  # noqa: E402
    InvolutionFamily,
    MassMatrix,
    PhasePoint,
    apply_leapfrog,
    apply_rwmh,
    log_momentum,
    log_ratio,
    sample_momentum,
)
from autostep.kernel import (  # noqa: E402
    ChainState,
    ChainTrace,
    IterationRecord,
    KernelConfig,
    SelectorResult,
    ThresholdPair,
    acceptance_probability_profile,
    autostep_transition,
    fixed_step_transition,
    init_state,
    run_chain,
    sample_thresholds,
    select_step_size,
)
from autostep.tuning import (  # noqa: E402
    RoundSchedule,
    TunerState,
    end_of_round_update,
    mix_preconditioner,
    run_tuned,
)
from autostep.diagnostics import (  # noqa: E402
    CostModel,
    KsessConfig,
    KsessReport,
    ks_statistic,
    ksess,
    ksess_report,
    min_ksess,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "ChainState",
    "ChainTrace",
    "ConfigurationError",
    "CostModel",
    "DiagnosticError",
    "EvalCounters",
    "InvolutionFamily",
    "IterationRecord",
    "KernelConfig",
    "KsessConfig",
    "KsessReport",
    "MassMatrix",
    "PhasePoint",
    "ReferenceDistribution",
    "RoundSchedule",
    "SelectorResult",
    "TargetModel",
    "ThresholdPair",
    "TunerState",
    "acceptance_probability_profile",
    "apply_leapfrog",
    "apply_rwmh",
    "autostep_transition",
    "end_of_round_update",
    "fixed_step_transition",
    "get_target",
    "init_state",
    "ks_statistic",
    "ksess",
    "ksess_report",
    "log_momentum",
    "log_ratio",
    "make_cauchy1d",
    "make_funnel",
    "make_gaussian",
    "make_kilpisjarvi",
    "make_laplace1d",
    "make_mrna",
    "min_ksess",
    "mix_preconditioner",
    "run_chain",
    "run_tuned",
    "sample_momentum",
    "sample_thresholds",
    "select_step_size",
    "summarize",
    "target_names",
]
