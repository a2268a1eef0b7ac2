"""TFDNet: time-frequency decomposed forecasting on a small numpy autodiff core."""

from .blocks import LinearBaseline, ModelConfig, TFDNet, model_forward
from .checkpoint import load_checkpoint, save_checkpoint
from .kernels import BACKEND
from .signal import StftConfig, TFMatrix, istft, stft
from .tensor import ComplexTensor, Tensor, backward, grad_check, no_grad
from .training import TrainConfig, evaluate, mixture_loss, train_loop

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ComplexTensor", "LinearBaseline", "ModelConfig", "StftConfig", "TFDNet",
    "TFMatrix", "Tensor", "TrainConfig", "backward", "evaluate", "grad_check", "istft",
    "load_checkpoint", "mixture_loss", "model_forward", "no_grad", "save_checkpoint", "stft",
    "train_loop",
]
