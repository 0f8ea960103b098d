"""Small from-scratch convolutional chip classifier (numpy, NHWC, float32)."""

from .layers import Conv2d, Dense, Flatten, Layer, MaxPool, ReLU, Softmax
from .network import (
    CLASS_NAMES,
    Network,
    backward,
    build_network,
    classify,
    default_layers,
    default_network,
    forward,
    loss_ce,
    predict_proba,
    prepare_input,
    same_architecture,
)
from .training import TrainConfig, TrainHistory, grad_check, train
from .weights import load_weights, save_weights

__all__ = [
    "CLASS_NAMES", "Conv2d", "Dense", "Flatten", "Layer", "MaxPool", "Network", "ReLU", "Softmax",
    "TrainConfig", "TrainHistory", "backward", "build_network", "classify", "default_layers",
    "default_network", "forward", "grad_check", "load_weights", "loss_ce", "predict_proba",
    "prepare_input", "same_architecture", "save_weights", "train",
]
