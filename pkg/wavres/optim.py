"""
Optimizer - loss, gradient clipping, learning-rate schedule and SGD
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, MutableMapping, Optional, Tuple, Union

import numpy as np

from .errors import DimensionError, ParameterError

Arrays = Union[np.ndarray, Mapping[str, np.ndarray]]

# admissible learning rates over a whole run
LR_MIN = 1e-5
LR_MAX = 0.01


@dataclass
class ConvergenceRecord:
    iteration: int
    lr: float
    train_loss: float
    val_psnr_db: float
    val_nrmse: float


@dataclass
class TrainState:
    iteration: int = 0
    total_iterations: int = 1
    lr: float = 0.01
    clip_threshold: float = 1e-3
    rng_seed: int = 0
    convergence_log: List[ConvergenceRecord] = field(default_factory=list)
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self) -> "TrainState":
        if self.clip_threshold <= 0:
            raise ParameterError(f"clip threshold must be positive, got {self.clip_threshold}")
        if not LR_MIN <= self.lr <= LR_MAX:
            raise ParameterError(f"learning rate {self.lr} outside [{LR_MIN}, {LR_MAX}]")
        if self.total_iterations < 1:
            raise ParameterError(f"total iterations must be >= 1, got {self.total_iterations}")
        if not 0 <= self.iteration <= self.total_iterations:
            raise ParameterError(f"iteration {self.iteration} outside 0..{self.total_iterations}")
        return self


def mse_loss(pred: np.ndarray, label: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient"""
    if pred.shape != label.shape:
        raise DimensionError(f"prediction {pred.shape} and label {label.shape} differ")
    diff = pred - label
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def clip_gradients(grads: Arrays, threshold: float) -> Arrays:
    """Element-wise clamp to [-threshold, threshold]"""
    if threshold <= 0:
        raise ParameterError(f"clip threshold must be positive, got {threshold}")
    if isinstance(grads, Mapping):
        return type(grads)((name, np.clip(g, -threshold, threshold)) for name, g in grads.items())
    return np.clip(grads, -threshold, threshold)


def lr_schedule(iteration: int, total: int, lr_start: float = 0.01, lr_end: float = 1e-5) -> float:
    """Geometric interpolation from lr_start (t = 0) to lr_end (t = total)"""
    if lr_start <= 0 or lr_end <= 0:
        raise ParameterError("learning rates must be positive")
    if total <= 0:
        return lr_start
    t = min(max(iteration, 0), total)
    return lr_start * (lr_end / lr_start) ** (t / total)


def sgd_step(params: MutableMapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float,
             clip_threshold: Optional[float] = None, momentum: float = 0.0,
             velocity: Optional[Dict[str, np.ndarray]] = None) -> MutableMapping[str, np.ndarray]:
    """p <- p - lr * clip(g), in place; heavy-ball momentum when momentum > 0

    With a clip threshold every applied step stays within lr * threshold per
    element, momentum included.
    """
    if lr < 0 or not math.isfinite(lr):
        raise ParameterError(f"bad learning rate {lr}")
    if momentum and velocity is None:
        raise ParameterError("momentum needs a velocity buffer")
    for name, grad in grads.items():
        if name not in params:
            raise DimensionError(f"gradient for unknown parameter '{name}'")
        param = params[name]
        if grad.shape != param.shape:
            raise DimensionError(f"{name}: gradient {grad.shape} vs parameter {param.shape}")
        if clip_threshold is not None:
            grad = np.clip(grad, -clip_threshold, clip_threshold)
        step = lr * grad
        if momentum:
            buffer = velocity.setdefault(name, np.zeros_like(param))
            buffer *= momentum
            buffer += step
            step = buffer
            if clip_threshold is not None:
                # the accumulated step obeys the same bound as a plain one
                step = np.clip(buffer, -lr * clip_threshold, lr * clip_threshold)
        np.subtract(param, step, out=param)
    return params
