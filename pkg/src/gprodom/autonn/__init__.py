"""Small dense-tensor engine with reverse-mode autodiff and CNN layers."""

from . import functional
from .checkpoint import CheckpointError, load_module, load_tensors, save_module, save_tensors
from .layers import CBR, LBRD, BatchNorm, Conv2d, Dropout, Linear, Module, Parameter
from .optim import Optimizer, OptimizerConfig, optimizer_step
from .tensor import Tape, Tensor, backward, no_grad

__all__ = [
    "functional", "Tensor", "Tape", "backward", "no_grad",
    "Module", "Parameter", "Conv2d", "BatchNorm", "Linear", "Dropout", "CBR", "LBRD",
    "Optimizer", "OptimizerConfig", "optimizer_step",
    "save_tensors", "load_tensors", "save_module", "load_module", "CheckpointError",
]
