"""SGD-with-momentum and Adam.

The step functions operate on plain arrays in place so they can be checked
against hand-computed recurrences; :class:`Optimizer` binds them to model
parameters.
"""

from dataclasses import dataclass, field

import numpy as np

from xdistill.errors import DimensionError, ParameterError


@dataclass
class OptimizerState:
    kind: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    velocity: list = field(default_factory=list)
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"parameter {p.shape} vs gradient {g.shape}")


def sgd_momentum_step(params, grads, state):
    """``v <- mu * v + g; w <- w - lr * v`` applied in place."""
    _check_shapes(params, grads)
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, state.velocity):
        if v.shape != p.shape:
            raise DimensionError(f"velocity {v.shape} vs parameter {p.shape}")
        v *= state.momentum
        v += g
        p -= (state.lr * v).astype(p.dtype, copy=False)
    state.step += 1
    return params


def adam_step(params, grads, state):
    """Bias-corrected Adam update applied in place."""
    if not (0.0 < state.beta1 < 1.0 and 0.0 < state.beta2 < 1.0):
        raise ParameterError(f"Adam betas must lie in (0, 1), got {state.beta1}, {state.beta2}")
    _check_shapes(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= update.astype(p.dtype, copy=False)
    return params


class Optimizer:
    """Applies one of the step rules to a list of parameter tensors."""

    def __init__(self, params, kind="adam", lr=0.001, momentum=0.9, beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {kind!r}")
        self.params = [p for p in params if p.requires_grad]
        self.state = OptimizerState(kind=kind, lr=lr, momentum=momentum, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        arrays = [p.data for p in self.params]
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.state.kind == "sgd":
            sgd_momentum_step(arrays, grads, self.state)
        else:
            adam_step(arrays, grads, self.state)
