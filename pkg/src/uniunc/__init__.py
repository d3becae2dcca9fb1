"""uniunc: input-uncertainty propagation through small neural networks.

Feed an input mean with per-feature variance through a ReLU MLP and get a
decomposition of the predictive uncertainty into aleatoric, epistemic and
input-attributed parts, using either a first-order (Jacobian) propagation
or Monte Carlo input sampling, on top of any of the supported epistemic
estimators (MC-dropout, MC-dropconnect, deep ensembles, flipout).
"""

from .backend import available_backends, backend_name, set_backend
from .datasets import (
    LabeledDataset,
    load_dataset,
    regression_mean,
    save_dataset,
    toy_regression,
    two_moons,
    with_input_uncertainty,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    GridResult,
    GridSpec,
    grid_eval,
    run,
    summarize,
)
from .linalg import matmul, mean_and_variance, sandwich_diag, softmax
from .network import (
    EuMethod,
    JacobianResult,
    ModelSpec,
    PassRealization,
    backward,
    forward,
    init_model,
    init_parameters,
    jacobian,
    load_model,
    sample_realization,
    save_model,
)
from .rng import RngStream, derive_seed, gaussian
from .training import (
    AdamState,
    TrainConfig,
    adam_step,
    cross_entropy,
    gaussian_nll,
    init_adam_state,
    kl_gaussian,
    train,
)
from .uncertainty import (
    ClassProbabilities,
    InputWithUncertainty,
    RegressionPrediction,
    UncertaintyDecomposition,
    classify,
    combine_mc,
    combine_taylor,
    epistemic_passes,
    regress,
    sampling_softmax,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ClassProbabilities",
    "ConfigError",
    "EuMethod",
    "ExperimentConfig",
    "GridResult",
    "GridSpec",
    "InputWithUncertainty",
    "JacobianResult",
    "LabeledDataset",
    "ModelSpec",
    "PassRealization",
    "RegressionPrediction",
    "RngStream",
    "TrainConfig",
    "UncertaintyDecomposition",
    "adam_step",
    "available_backends",
    "backend_name",
    "backward",
    "classify",
    "combine_mc",
    "combine_taylor",
    "cross_entropy",
    "derive_seed",
    "epistemic_passes",
    "forward",
    "gaussian",
    "gaussian_nll",
    "grid_eval",
    "init_adam_state",
    "init_model",
    "init_parameters",
    "jacobian",
    "kl_gaussian",
    "load_dataset",
    "load_model",
    "matmul",
    "mean_and_variance",
    "regress",
    "regression_mean",
    "run",
    "sample_realization",
    "sampling_softmax",
    "sandwich_diag",
    "save_dataset",
    "save_model",
    "set_backend",
    "softmax",
    "summarize",
    "toy_regression",
    "train",
    "two_moons",
    "with_input_uncertainty",
]
