from .autograd import ContractViolation, Tensor
from .nltsc import NLTSC, NetConfig, ShapeError, build_fixed_hop_weights
from .optim import Adam, linear_decay

__all__ = ["Adam", "ContractViolation", "NLTSC", "NetConfig", "ShapeError", "Tensor",
           "build_fixed_hop_weights", "linear_decay"]
