"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """Update ``params`` in place with one Adam step; returns the advanced state."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        if name not in state.m or name not in state.v:
            raise KeyError(f"optimizer state has no entry for parameter {name!r}")
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"optimizer state for {name!r} has shape {m.shape}, parameter has {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, named_params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params: dict[str, Tensor] = dict(named_params)
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.state = AdamState.zeros_like({k: p.data for k, p in self.params.items()})

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items() if p.grad is not None},
            self.state,
            self.lr,
            self.betas,
            self.eps,
        )
