"""Latent-ODE modeling of dynamics observed through marked spatiotemporal events.

The pipeline: simulate a latent field and thin a state-dependent Poisson
process over it (`datagen`), encode a trajectory's context into a variational
posterior over the latent initial state, integrate neural dynamics on a sparse
time grid with an adaptive solver, interpolate, and decode field values,
intensities, and observations anywhere in space-time (`model`, `odeint`),
train by maximizing the ELBO (`training`), and forecast/benchmark (`evaluation`).
"""

__version__ = "0.1.0"

import torch as _torch

# Single-threaded tensor ops keep runs byte-reproducible; the CLI's --threads
# flag raises the cap explicitly when wanted.
_torch.set_num_threads(1)

from .datagen import (  # noqa: E402
    Dataset,
    GenerationConfig,
    IntensitySpec,
    Trajectory,
    generate_dataset,
    generate_trajectory,
    read_dataset,
    write_dataset,
)
from .errors import (  # noqa: E402
    BoundViolationError,
    ConfigurationError,
    ContractError,
    DatasetFormatError,
    DimensionError,
    DomainError,
    EvaluationError,
    EventFieldsError,
    StiffnessError,
)
from .estimator import EventFieldModel  # noqa: E402
from .evaluation import (  # noqa: E402
    EvalReport,
    bench_latent_eval,
    const_intensity_baseline,
    evaluate_split,
    eval_process_loglik,
    export_field,
    median_baseline,
    predict_observation,
    run_ablation,
)
from .fields import (  # noqa: E402
    FieldGrid,
    analytic_advection_field,
    field_interpolate,
    solve_burgers_1d,
)
from .model import (  # noqa: E402
    Checkpoint,
    ModelConfig,
    VariationalParams,
    decode_state,
    encode,
    intensity_head,
    latent_path,
    load_checkpoint,
    observation_loglik,
    sample_latent,
    save_checkpoint,
)
from .odeint import (  # noqa: E402
    LatentPath,
    SparseGrid,
    dopri5_solve,
    interpolate_latent,
    make_sparse_grid,
)
from .pointprocess import (  # noqa: E402
    EventSeq,
    SpaceTimeDomain,
    mc_intensity_integral,
    stpp_loglik,
    thinning_sample,
)
from .training import (  # noqa: E402
    ElboBreakdown,
    TrainConfig,
    adamw_step,
    compute_elbo,
    compute_elbo_batch,
    kl_diag_gaussian,
    train_loop,
)

__all__ = [
    "__version__",
    "BoundViolationError",
    "Checkpoint",
    "ConfigurationError",
    "ContractError",
    "Dataset",
    "DatasetFormatError",
    "DimensionError",
    "DomainError",
    "ElboBreakdown",
    "EvalReport",
    "EvaluationError",
    "EventFieldModel",
    "EventFieldsError",
    "EventSeq",
    "FieldGrid",
    "GenerationConfig",
    "IntensitySpec",
    "LatentPath",
    "ModelConfig",
    "SpaceTimeDomain",
    "SparseGrid",
    "StiffnessError",
    "TrainConfig",
    "Trajectory",
    "VariationalParams",
    "adamw_step",
    "analytic_advection_field",
    "bench_latent_eval",
    "compute_elbo",
    "compute_elbo_batch",
    "const_intensity_baseline",
    "decode_state",
    "dopri5_solve",
    "encode",
    "eval_process_loglik",
    "evaluate_split",
    "export_field",
    "field_interpolate",
    "generate_dataset",
    "generate_trajectory",
    "intensity_head",
    "interpolate_latent",
    "kl_diag_gaussian",
    "latent_path",
    "load_checkpoint",
    "make_sparse_grid",
    "mc_intensity_integral",
    "median_baseline",
    "observation_loglik",
    "predict_observation",
    "read_dataset",
    "run_ablation",
    "sample_latent",
    "save_checkpoint",
    "solve_burgers_1d",
    "stpp_loglik",
    "thinning_sample",
    "train_loop",
    "write_dataset",
]
