from . import tensor as ops
from .gradcheck import check_gradients, relative_error
from .checkpoint import load_checkpoint, load_state_dict, save_checkpoint, state_dict
from .optim import AdamState, adam_step
from .tensor import (
    Graph,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    current_graph,
    no_grad,
    reset_graph,
)

__all__ = [
    "AdamState",
    "Graph",
    "ShapeError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "check_gradients",
    "current_graph",
    "load_checkpoint",
    "load_state_dict",
    "no_grad",
    "ops",
    "relative_error",
    "reset_graph",
    "save_checkpoint",
    "state_dict",
]
