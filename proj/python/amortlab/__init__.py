"""Amortized set-to-vector estimators, posterior flows and the experiment harness."""

from ._amortlab import (
    DimensionError,
    Estimator,
    FlowModel,
    NumericError,
    StageError,
    Task,
    TrainingError,
    ValidationError,
    bootstrap_stability,
    code_version,
    config_keys,
    cosine_similarity,
    derive_seed,
    emit_figure_data,
    energy_distance,
    exact_ring_posterior,
    figure_ids,
    gen_clustered_tasks,
    gen_ring_task,
    gen_robust_task,
    gen_sparse_task,
    mse_beta,
    ols_fit,
    ring_mcmc,
    run_experiment,
    sample_ring_posterior,
    simulate_linear_task,
)

__version__ = code_version().split()[-1]
