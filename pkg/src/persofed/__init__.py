"""Personalized federated learning with attack-equivalence tooling.

A deterministic simulator for collaborative training where each user keeps a
personal model coupled to a shared global model through a regularizer. The
package covers honest federated gradient descent, gradient-space attacks that
steer the global model to an arbitrary target, their reduction to fixed-model
and data-poisoning attacks, and empirical checks of the recovery and
gradient-growth properties that make those reductions tight.
"""

__version__ = "0.1.0"

from .core import DataPoint, Dataset, substream
from .losses import LossModel
from .regularizers import Regularizer
from .solvers import (
    ConvergenceError,
    DegenerateProblemError,
    GlobalSolution,
    SolverConfig,
    SolverError,
    global_minimize,
    local_argmin,
    minimized_loss_over_others,
    solo_fit,
)
from .federation import Experiment, ExperimentResult, RoundTrace, run_experiment
from .attacks import (
    AttackError,
    CounterGradientAttack,
    ModelAttack,
    SingleDatapointAttack,
    fabricate_poison_dataset,
    gradient_to_model,
    model_to_single_datapoint,
)
from .pac import GradientPacParams, check_gradient_pac_event, check_local_pac, fit_pac_constants

__all__ = [
    "__version__",
    "DataPoint",
    "Dataset",
    "substream",
    "LossModel",
    "Regularizer",
    "SolverConfig",
    "SolverError",
    "ConvergenceError",
    "DegenerateProblemError",
    "GlobalSolution",
    "global_minimize",
    "local_argmin",
    "minimized_loss_over_others",
    "solo_fit",
    "Experiment",
    "ExperimentResult",
    "RoundTrace",
    "run_experiment",
    "AttackError",
    "CounterGradientAttack",
    "ModelAttack",
    "SingleDatapointAttack",
    "gradient_to_model",
    "model_to_single_datapoint",
    "fabricate_poison_dataset",
    "GradientPacParams",
    "check_gradient_pac_event",
    "check_local_pac",
    "fit_pac_constants",
]
