"""Tensor arithmetic, reverse-mode differentiation, Adam and checkpoints."""
import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numeric_grad, relative_error
from .optim import Adam, NonFiniteGradientError
from .tensor import (
    GraphStateError,
    ShapeError,
    Tensor,
    add,
    backward,
    bce_with_logits,
    concat,
    cross_entropy,
    embedding,
    log_softmax,
    lrelu,
    lstm_cell,
    lstm_sequence,
    matmul,
    mul,
    reshape,
    sigmoid,
    slice_,
    softmax,
    squared_error,
    sum_,
    tanh,
)

INIT_SCALE = 0.08


def init_uniform(shapes, rng, scale=INIT_SCALE):
    """Draw every parameter uniformly from [-scale, scale], in sorted name order."""
    return {name: rng.uniform(-scale, scale, size=shapes[name]) for name in sorted(shapes)}


def leaves(params):
    """Wrap a parameter dict as gradient-requiring leaf tensors."""
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}


def constants(params):
    return {k: Tensor(v, name=k) for k, v in params.items()}


def collect_grads(leaf_map):
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaf_map.items()}
