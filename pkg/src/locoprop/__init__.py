"""Layerwise local-loss optimizers for feedforward networks."""

from .local_loss import (
    LocalProblem,
    TargetSet,
    Variant,
    compute_targets,
    local_gradient,
    local_objective,
    locoprop_train_step,
    run_local_iterations,
)
from .network import FinalLoss, Layer, LayerCache, backward, final_loss, forward
from .optimizers import OptimizerSpec, Rule, Schedule, optimizer_step, schedule_lr
from .transfer import TransferKind

__version__ = "0.1.0"
