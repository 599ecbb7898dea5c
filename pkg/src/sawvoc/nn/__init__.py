from .tensor import Tensor, no_grad
from .optim import ParameterStore, adam_step, lr_schedule

__all__ = ["Tensor", "no_grad", "ParameterStore", "adam_step", "lr_schedule"]
