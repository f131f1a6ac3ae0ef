"""Gradient-descent update rules: SGD, Adagrad, RMSProp, Adam, Adamax, Nadam.

Conventional defaults throughout: SGD lr 0.01; Adagrad lr 0.01; RMSProp
lr 0.001 with rho 0.9; Adam/Adamax/Nadam lr 0.001 with beta1 0.9,
beta2 0.999; epsilon 1e-8 everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArg, ShapeMismatch

__all__ = ["OPTIMIZER_KINDS", "OptimizerState", "make_optimizer", "optimizer_step"]

OPTIMIZER_KINDS = ("sgd", "adagrad", "rmsprop", "adam", "adamax", "nadam")

_DEFAULT_LR = {
    "sgd": 0.01,
    "adagrad": 0.01,
    "rmsprop": 0.001,
    "adam": 0.001,
    "adamax": 0.001,
    "nadam": 0.001,
}


@dataclass
class OptimizerState:
    """Update rule plus its per-parameter accumulators.

    Accumulators are created lazily on the first step, shaped like the
    parameter list they are applied to. ``step`` counts completed updates.
    """

    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    epsilon: float = 1e-8
    step: int = 0
    first_moments: list[np.ndarray] = field(default_factory=list)
    second_moments: list[np.ndarray] = field(default_factory=list)


def make_optimizer(kind: str, learning_rate: float | None = None, **hyper) -> OptimizerState:
    kind = kind.lower()
    if kind not in OPTIMIZER_KINDS:
        raise InvalidArg(f"unknown optimizer {kind!r}; expected one of {OPTIMIZER_KINDS}")
    lr = _DEFAULT_LR[kind] if learning_rate is None else learning_rate
    if not lr > 0:
        raise InvalidArg(f"learning rate must be positive, got {lr}")
    return OptimizerState(kind=kind, learning_rate=lr, **hyper)


def _ensure_slots(state: OptimizerState, params: list[np.ndarray]) -> None:
    if state.first_moments:
        if len(state.first_moments) != len(params):
            raise ShapeMismatch("optimizer state built for a different parameter list")
        return
    state.first_moments = [np.zeros_like(p) for p in params]
    state.second_moments = [np.zeros_like(p) for p in params]


def optimizer_step(
    state: OptimizerState,
    params: list[np.ndarray],
    grads: list[np.ndarray],
) -> list[np.ndarray]:
    """Apply one update in place; returns the parameter list for convenience."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters vs {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
    _ensure_slots(state, params)

    lr, eps = state.learning_rate, state.epsilon
    b1, b2, rho = state.beta1, state.beta2, state.rho
    t = state.step + 1

    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state.first_moments[i], state.second_moments[i]
        if state.kind == "sgd":
            p -= lr * g
        elif state.kind == "adagrad":
            v += g * g
            p -= lr * g / np.sqrt(v + eps)
        elif state.kind == "rmsprop":
            v *= rho
            v += (1.0 - rho) * g * g
            p -= lr * g / (np.sqrt(v) + eps)
        elif state.kind == "adam":
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        elif state.kind == "adamax":
            m *= b1
            m += (1.0 - b1) * g
            np.maximum(b2 * v, np.abs(g), out=v)
            p -= (lr / (1.0 - b1**t)) * m / (v + eps)
        elif state.kind == "nadam":
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** (t + 1))
            g_hat = g / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p -= lr * (b1 * m_hat + (1.0 - b1) * g_hat) / (np.sqrt(v_hat) + eps)

    state.step = t
    return params
