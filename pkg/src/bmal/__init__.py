"""Batch-mode active learning for neural network regression.

Kernels derived from a trained fully-connected network, a kernel
transformation algebra, batch selection methods with incremental updates,
and a pool-based benchmark harness.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    GradFactors,
    ModelConfig,
    ModelParams,
    TrainConfig,
    TrainedModel,
    extract_grad_factors,
    extract_ll_features,
    forward,
    init_network,
    train,
)
from .kernels import (  # noqa: F401
    GroundSet,
    Kernel,
    KernelSpec,
    base_grad,
    base_last_layer,
    base_linear,
    base_nngp,
    build_kernel,
    effective_dim,
    parse_kernel_spec,
    transform_acs_grad,
    transform_acs_rf,
    transform_ensemble,
    transform_posterior,
    transform_rp,
    transform_scale,
)
from .selection import SelectionRequest, SelectionResult, select  # noqa: F401
from .bench import (  # noqa: F401
    BmalRunConfig,
    Dataset,
    RunResult,
    SplitConfig,
    aggregate_log_means,
    compute_metrics,
    emit_report,
    fetch_dataset,
    load_csv,
    preprocess,
    run_bmal,
    synthetic_friedman,
)
