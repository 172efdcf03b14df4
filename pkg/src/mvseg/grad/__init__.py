from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam
from .tensor import (
    Graph,
    Tensor,
    active_graph,
    as_tensor,
    default_dtype,
    pause,
    record,
    set_default_dtype,
)
from . import ops

__all__ = [
    "Adam",
    "Graph",
    "Tensor",
    "active_graph",
    "as_tensor",
    "default_dtype",
    "load_checkpoint",
    "ops",
    "pause",
    "record",
    "save_checkpoint",
    "set_default_dtype",
]
