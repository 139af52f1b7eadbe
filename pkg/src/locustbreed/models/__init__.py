"""Model families behind a shared predict-probability contract."""
from .base import ARCHITECTURES, BreedingModel, ConfigError, ModelConfig, make_batch
from .checkpoint import Checkpoint, CheckpointError
from .conv3d import Conv3DNet
from .convlstm import ConvLSTMNet
from .linear import LinearSVM, LogisticRegression, platt_fit, svm_train
from .plan_lb import PlanLB
from .prithvi_lb import PrithviLB

REGISTRY = {
    "logreg": LogisticRegression,
    "svm": LinearSVM,
    "plan_lb": PlanLB,
    "conv3d": Conv3DNet,
    "convlstm": ConvLSTMNet,
    "prithvi_lb": PrithviLB,
}


def build_model(config: ModelConfig) -> BreedingModel:
    return REGISTRY[config.architecture](config)


def model_from_checkpoint(ckpt: Checkpoint, config: ModelConfig | None = None) -> BreedingModel:
    """Rebuild a model and load the checkpoint's tensors.

    When ``config`` is given the model is built from it instead of the stored
    config, so a mismatching parameter shape surfaces as ``ShapeError`` naming
    the tensor.
    """
    model = build_model(config or ckpt.config)
    model.load_state_dict(ckpt.parameters)
    return model
