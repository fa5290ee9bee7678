"""Momentum SGD with inverse-time learning-rate decay, and the training config file."""

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from contextcnn.tensor import ContractError


def lr_at(eta, decay, i):
    """Learning rate after ``i`` iterations: ``eta / (1 + i * decay)``."""
    return eta / (1.0 + i * decay)


@dataclass
class SgdState:
    """Heavy-ball momentum state; ``iteration`` counts steps in the current phase."""

    lr: float = 1e-3
    decay: float = 1e-4
    momentum: float = 0.9
    iteration: int = 0
    velocity: dict = field(default_factory=dict)

    def current_lr(self):
        return lr_at(self.lr, self.decay, self.iteration)

    def switch_phase(self, lr, decay):
        """Start a new schedule phase: new (eta, d), iteration counter reset."""
        self.lr = lr
        self.decay = decay
        self.iteration = 0


def sgd_step(params, state):
    """``v <- mu*v - lr*g ; p <- p + v`` for every named parameter, then ``i += 1``.

    ``params`` maps names to tensors whose ``grad`` is populated.
    """
    lr = state.current_lr()
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
    for name, p in params.items():
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.momentum * v - np.asarray(lr, dtype=p.dtype) * p.grad
        state.velocity[name] = v.astype(p.dtype, copy=False)
        p.data = p.data + state.velocity[name]
    state.iteration += 1
    return lr


@dataclass
class TrainConfig:
    """Contents of the plain ``key=value`` training config file."""

    lr: float = 1e-3
    decay: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 16
    iterations: int = 625
    phase2_at: int = 0
    phase2_lr: float = 1e-4
    phase2_decay: float = 1e-3
    seed: int = 0
    variant: str = "base"
    num_boxes: int = 10
    proposal_mode: str = "oracle"

    @classmethod
    def parse(cls, text):
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in kinds:
                raise ValueError(f"config line {lineno}: unrecognized entry {raw!r}")
            values[key] = kinds[key](value.strip())
        return cls(**values)

    @classmethod
    def read(cls, path):
        return cls.parse(Path(path).read_text(encoding="ascii"))

    def dumps(self):
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))
