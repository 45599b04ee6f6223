"""Neural networks on a small reverse-mode autodiff core."""
from .autograd import Tensor, numerical_grad, value_and_grad
from .optim import FitReport, TrainConfig, train_loop

__all__ = ["Tensor", "numerical_grad", "value_and_grad", "FitReport", "TrainConfig", "train_loop"]
