"""Deep fusion network for image completion, built on a small numpy autodiff engine."""

from .model import DFNet, DFNetConfig
from .tensor import ContractError, ShapeError, Tensor, no_grad

__all__ = ["ContractError", "DFNet", "DFNetConfig", "ShapeError", "Tensor", "no_grad"]
__version__ = "0.1.0"
