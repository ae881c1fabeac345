"""Bandit-driven datapoint sampling for stochastic gradient methods.

Samplers choose which datapoint feeds each stochastic gradient so that the
estimator's variance shrinks. The package ships uniform and importance
samplers, two multiplicative-weight bandit samplers backed by a sum tree,
SGD / proximal SGD / Prox-SVRG / SAGA optimisers, variance and regret metrics,
and a reproducible experiment CLI.
"""

from .data_io import (
    SyntheticConfig,
    generate_synthetic,
    parse_libsvm,
    scale_for_tau,
    trace_read,
    trace_write,
    write_libsvm,
)
from .errors import (
    ConfigurationError,
    ContractViolation,
    InfiniteVarianceError,
    LibsvmParseError,
    TraceSchemaError,
)
from .metrics import (
    BoundReport,
    VarianceReport,
    effective_variance,
    lemma1_check,
    optimal_static_p,
    optimal_stepwise_p,
    pseudo_variance,
    regret_bound_check,
)
from .model import (
    DataPoint,
    Dataset,
    Loss,
    ProblemSpec,
    Regularizer,
    SmoothnessProfile,
    full_cost,
    full_gradient,
    gradient_bound,
    prox,
    smoothness_profile,
    sub_cost,
    sub_gradient,
)
from .optimize import RunTrace, SamplerConfig, StepSchedule, run, weighted_average_iterate
from .sampling import (
    ImportanceSampler,
    Mabs2Sampler,
    MabsSampler,
    UniformSampler,
    WeightTree,
    mabs_T_condition,
)

__version__ = "0.1.0"
