from .functional import (
    ACTIVATIONS,
    concat,
    dense_forward,
    dropout_forward,
    gru_step,
    mse_loss,
)
from .graph import LayerSpec, ModelGraph, backward
from .store import load_model, save_model
from .train import Adam, Sgd, TrainConfig, TrainReport, train

__all__ = [
    "ACTIVATIONS", "Adam", "LayerSpec", "ModelGraph", "Sgd", "TrainConfig", "TrainReport",
    "backward", "concat", "dense_forward", "dropout_forward", "gru_step", "load_model",
    "mse_loss", "save_model", "train",
]
