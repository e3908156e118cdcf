from xdistill.tensor.core import (
    Tensor,
    backward,
    get_default_dtype,
    no_grad,
    precision,
    set_default_dtype,
    topological_order,
)
from xdistill.tensor.ops import (
    activation,
    concat,
    conv2d,
    conv2d_transpose,
    dense,
    flatten,
    log_softmax,
    maxpool2d,
    relu,
    softmax_temperature,
    tanh,
)
from xdistill.tensor.losses import cross_entropy_loss, kd_loss, l2_penalty, mae_loss
from xdistill.tensor.optim import Optimizer, OptimizerState, adam_step, sgd_momentum_step
from xdistill.tensor.xdt import decode_tensor, encode_tensor, load_tensor, save_tensor

__all__ = [
    "Tensor", "backward", "get_default_dtype", "no_grad", "precision", "set_default_dtype",
    "topological_order", "activation", "concat", "conv2d", "conv2d_transpose", "dense", "flatten",
    "log_softmax", "maxpool2d", "relu", "softmax_temperature", "tanh", "cross_entropy_loss",
    "kd_loss", "l2_penalty", "mae_loss", "Optimizer", "OptimizerState", "adam_step",
    "sgd_momentum_step", "decode_tensor", "encode_tensor", "load_tensor", "save_tensor",
]
