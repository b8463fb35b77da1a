from . import ops
from .gradcheck import GradCheckReport, grad_check, relative_error
from .kernels import BACKEND
from .optim import SGD, Adagrad, Adam, make_optimizer
from .params import CheckpointMismatch, ParamStore, load_checkpoint, save_checkpoint
from .tensor import ShapeMismatch, Tensor, as_tensor

__all__ = [
    "BACKEND",
    "Adagrad",
    "Adam",
    "CheckpointMismatch",
    "GradCheckReport",
    "ParamStore",
    "SGD",
    "ShapeMismatch",
    "Tensor",
    "as_tensor",
    "grad_check",
    "load_checkpoint",
    "make_optimizer",
    "ops",
    "relative_error",
    "save_checkpoint",
]
