"""
In-place parameter updates for named numpy arrays
"""
import logging
from typing import Dict

import numpy as np

from models import OptimizerName, TrainConfig

logger = logging.getLogger(__name__)

# AdamW constants
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class SGD:
    """p <- p - lr * g"""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        for name, param in params.items():
            param -= self.learning_rate * grads[name]


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments"""

    def __init__(self, learning_rate: float, weight_decay: float = 0.0):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        self.t += 1
        for name, param in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(param))
            v = self.v.setdefault(name, np.zeros_like(param))
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1 - ADAM_BETA2) * g * g
            m_hat = m / (1 - ADAM_BETA1 ** self.t)
            v_hat = v / (1 - ADAM_BETA2 ** self.t)
            if self.weight_decay:
                param -= self.learning_rate * self.weight_decay * param
            param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def build_optimizer(cfg: TrainConfig):
    if OptimizerName(cfg.optimizer) is OptimizerName.ADAMW:
        return AdamW(cfg.learning_rate, cfg.weight_decay)
    return SGD(cfg.learning_rate)
