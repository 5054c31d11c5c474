"""Shared first-order fitting loop for the compact surrogate models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class FitDivergence(RuntimeError):
    def __init__(self, message: str, loss_trace: list[float]):
        tail = ", ".join(f"{v:.6g}" for v in loss_trace[-10:])
        super().__init__(f"{message}; recent losses: [{tail}]")
        self.loss_trace = loss_trace


@dataclass
class FitConfig:
    iterations: int = 2000
    learning_rate: float = 0.05
    early_stop_rel: float = 1e-6   # relative loss change threshold
    early_stop_window: int = 50    # iterations the threshold must hold for
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamTrace:
    losses: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def adam_minimize(loss_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
                  s0: np.ndarray, cfg: FitConfig) -> tuple[np.ndarray, AdamTrace]:
    """Adam on an unconstrained parameter vector; deterministic full-batch loop.

    Stops early once the relative loss change stays below early_stop_rel for a
    full window.  Raises FitDivergence on non-finite loss or gradient.
    """
    s = s0.astype(float).copy()
    m = np.zeros_like(s)
    v = np.zeros_like(s)
    trace = AdamTrace()
    stable = 0
    for k in range(1, cfg.iterations + 1):
        loss, grad = loss_and_grad(s)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            trace.losses.append(float(loss))
            raise FitDivergence(f"non-finite loss/gradient at iteration {k}", trace.losses)
        trace.losses.append(float(loss))
        if k > 1:
            prev = trace.losses[-2]
            rel = abs(prev - loss) / max(abs(prev), 1e-300)
            stable = stable + 1 if rel < cfg.early_stop_rel else 0
            if stable >= cfg.early_stop_window:
                trace.converged = True
                trace.iterations = k
                return s, trace
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
        mhat = m / (1 - cfg.beta1 ** k)
        vhat = v / (1 - cfg.beta2 ** k)
        s -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
    trace.iterations = cfg.iterations
    return s, trace
