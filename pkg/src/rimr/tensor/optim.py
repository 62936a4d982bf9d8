"""Adam with moment buffers stored on each Parameter."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import Parameter


def adam_step(params: Sequence[Parameter], lr: float, beta1: float, beta2: float, eps: float,
              step: int) -> None:
    """One bias-corrected Adam update; ``step`` counts from 1. Gradients are left in place."""
    for p in params:
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {p.name or '<unnamed>'!r} has no gradient")
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for p in params:
        g = p.grad.astype(p.data.dtype, copy=False)
        p.moment1 *= beta1
        p.moment1 += (1.0 - beta1) * g
        p.moment2 *= beta2
        p.moment2 += (1.0 - beta2) * np.square(g)
        # in place: the decoder weights are large enough for temporaries to dominate
        denom = np.divide(p.moment2, c2)
        np.sqrt(denom, out=denom)
        denom += eps
        np.divide(p.moment1, denom, out=denom)
        denom *= lr / c1
        p.data -= denom.astype(p.data.dtype, copy=False)


@dataclass
class Adam:
    params: Sequence[Parameter]
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0

    def step(self) -> None:
        self.step_count += 1
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self.step_count)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
