"""
Optimizers and learning-rate scheduling
"""

import logging
from typing import Any, Dict, List, Sequence

import numpy as np

from .nn import Parameter

logger = logging.getLogger(__name__)


class Adam:
    def __init__(
        self,
        parameters: Sequence[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params: List[Parameter] = list(parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None or not p.requires_grad:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (p.grad**2)
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def snapshot(self) -> Dict[str, Any]:
        """Copy of parameter values and moment state, for undoing a step"""
        return {
            "params": [p.data.copy() for p in self.params],
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
            "t": self.t,
        }

    def restore(self, snapshot: Dict[str, Any]) -> None:
        for p, data in zip(self.params, snapshot["params"]):
            p.data = data.copy()
        self.m = [m.copy() for m in snapshot["m"]]
        self.v = [v.copy() for v in snapshot["v"]]
        self.t = snapshot["t"]


def clip_grad_norm(parameters: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most max_norm; returns the norm before clipping"""
    grads = [p.grad for p in parameters if p.grad is not None]
    if not grads:
        return 0.0
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in parameters:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class ReduceLROnPlateau:
    """Multiply the optimizer's lr by `factor` after `patience` epochs without improvement"""

    def __init__(
        self,
        optimizer: Adam,
        mode: str = "max",
        factor: float = 0.5,
        patience: int = 5,
        min_lr: float = 1e-6,
        threshold: float = 1e-4,
    ):
        if mode not in ("max", "min"):
            raise ValueError(f"mode must be 'max' or 'min', got {mode}")
        self.optimizer = optimizer
        self.mode = mode
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = -np.inf if mode == "max" else np.inf
        self.num_bad_epochs = 0

    def _improved(self, metric: float) -> bool:
        if self.mode == "max":
            return metric > self.best + self.threshold
        return metric < self.best - self.threshold

    def step(self, metric: float) -> bool:
        """Record one epoch's metric; returns True when the lr was reduced"""
        if self._improved(metric):
            self.best = metric
            self.num_bad_epochs = 0
            return False
        self.num_bad_epochs += 1
        if self.num_bad_epochs < self.patience:
            return False
        self.num_bad_epochs = 0
        old_lr = self.optimizer.lr
        new_lr = max(old_lr * self.factor, self.min_lr)
        if new_lr >= old_lr:
            logger.warning(f"learning rate already at floor {self.min_lr:g}")
            return False
        self.optimizer.lr = new_lr
        logger.debug(f"plateau: lr {old_lr:g} -> {new_lr:g}")
        return True
