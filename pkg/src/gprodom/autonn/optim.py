"""SGD and Adam over :class:`Parameter` lists; moment state lives on the optimizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layers import Parameter


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    momentum: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.eps <= 0 or self.weight_decay < 0 or self.momentum < 0:
            raise ValueError("eps must be positive; weight_decay and momentum non-negative")


class Optimizer:
    def __init__(self, params: Sequence[Parameter], cfg: OptimizerConfig):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p.data
            if cfg.kind == "sgd":
                if cfg.momentum:
                    self.m[i] = cfg.momentum * self.m[i] + g
                    g = self.m[i]
                p.data -= cfg.lr * g
            else:
                self.m[i] = cfg.beta1 * self.m[i] + (1 - cfg.beta1) * g
                self.v[i] = cfg.beta2 * self.v[i] + (1 - cfg.beta2) * g * g
                mhat = self.m[i] / (1 - cfg.beta1 ** self.t)
                vhat = self.v[i] / (1 - cfg.beta2 ** self.t)
                p.data -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)


def optimizer_step(opt: Optimizer) -> None:
    """Apply one update using the gradients currently stored on the parameters."""
    if all(p.grad is None for p in opt.params):
        raise ValueError("no gradients populated; call backward() first")
    opt.step()
