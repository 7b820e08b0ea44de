"""Adam with linear warmup + inverse-sqrt decay, and a finite-difference check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import ParamStore, Tensor


@dataclass
class AdamState:
    """Optimizer state; moments are keyed by parameter name and start at zero."""

    base_lr: float = 1e-4
    warmup_steps: int = 4000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0  # 0 disables clipping
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")

    def lr_at(self, t: int) -> float:
        """Linear warmup to base_lr, then inverse-sqrt decay."""
        return (
            self.base_lr
            * min(t / self.warmup_steps, 1.0)
            * min(1.0, math.sqrt(self.warmup_steps / t))
        )


def adam_step(store: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update over every parameter; zeroes grads after."""
    for name, p in store.items():
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient at {name}")
    if state.grad_clip > 0.0:
        total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for _, p in store.items()))
        if total > state.grad_clip:
            factor = state.grad_clip / (total + 1e-12)
            for _, p in store.items():
                p.grad *= factor
    state.t += 1
    lr = state.lr_at(state.t)
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in store.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.value.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.value.data -= lr * update
        p.grad.fill(0.0)


def grad_check(
    loss_fn: Callable[[ParamStore], Tensor],
    store: ParamStore,
    h: float = 1e-4,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    `loss_fn` must be deterministic and the store built in float64. Every
    parameter entry is perturbed individually, so keep models tiny.
    """
    loss = loss_fn(store)
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite loss in grad_check")
    store.zero_grad()
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in store.items()}
    worst = 0.0
    for name, p in store.items():
        flat = p.value.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn(store).data)
            flat[i] = orig - h
            lm = float(loss_fn(store).data)
            flat[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (lp - lm) / (2.0 * h)
            a = float(aflat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    store.zero_grad()
    return worst
