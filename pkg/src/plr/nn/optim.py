"""Optimizers (SGD, Adadelta) and reduce-on-plateau learning rate scheduling.

State is a plain dataclass so training loops can snapshot or inspect it; the
step functions mutate parameters in place and abort on non-finite gradients.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptState:
    kind: str                      # "sgd" | "adadelta"
    lr: float
    momentum: float = 0.0          # sgd only; defaults to none
    rho: float = 0.95              # adadelta decay
    eps: float = 1e-6              # adadelta conditioning
    accum: dict = field(default_factory=dict)
    # plateau scheduler state
    mode: str = "min"              # "min" for losses, "max" for accuracy
    patience: int = 10
    factor: float = 0.5
    min_lr: float = 1e-6
    best: float | None = None
    bad_epochs: int = 0


def make_optimizer(kind, lr, momentum=0.0, rho=0.95, eps=1e-6,
                   mode="min", patience=10, factor=0.5, min_lr=1e-6):
    if kind not in ("sgd", "adadelta"):
        raise ValueError(f"unknown optimizer {kind!r}")
    if mode not in ("min", "max"):
        raise ValueError(f"scheduler mode must be 'min' or 'max', got {mode!r}")
    return OptState(kind=kind, lr=float(lr), momentum=momentum, rho=rho, eps=eps,
                    mode=mode, patience=patience, factor=factor, min_lr=min_lr)


def _check_grads(grads):
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")


def sgd_step(state, params, grads):
    """p <- p - lr * g (plus classical momentum when configured)."""
    _check_grads(grads)
    for name, p in params.items():
        g = grads[name]
        if state.momentum:
            vel = state.accum.setdefault(name, {}).setdefault(
                "vel", np.zeros_like(p))
            vel *= state.momentum
            vel += g
            g = vel
        p -= (p.dtype.type(state.lr) * g).astype(p.dtype, copy=False)


def adadelta_step(state, params, grads):
    """Adadelta with running averages of g^2 and update^2.

    E[g2] <- rho E[g2] + (1-rho) g^2
    d = -sqrt(E[dx2] + eps) / sqrt(E[g2] + eps) * g
    p <- p + lr * d;  E[dx2] <- rho E[dx2] + (1-rho) d^2
    """
    _check_grads(grads)
    rho = state.rho
    eps = state.eps
    for name, p in params.items():
        g = grads[name].astype(np.float64)
        acc = state.accum.setdefault(name, {})
        g2 = acc.setdefault("g2", np.zeros(p.shape, dtype=np.float64))
        dx2 = acc.setdefault("dx2", np.zeros(p.shape, dtype=np.float64))
        g2 *= rho
        g2 += (1.0 - rho) * g * g
        delta = -np.sqrt(dx2 + eps) / np.sqrt(g2 + eps) * g
        p += (state.lr * delta).astype(p.dtype, copy=False)
        dx2 *= rho
        dx2 += (1.0 - rho) * delta * delta


def optimizer_step(state, params, grads):
    if state.kind == "sgd":
        sgd_step(state, params, grads)
    else:
        adadelta_step(state, params, grads)


def _improved(state, metric):
    if state.best is None:
        return True
    return metric < state.best if state.mode == "min" else metric > state.best


def plateau_scheduler_step(state, metric):
    """Track the monitored metric; shrink lr after a patience window.

    The rate drops by `factor` on the (patience+1)-th consecutive
    non-improving epoch and never falls below min_lr. Returns True when a
    reduction happened this call.
    """
    metric = float(metric)
    if _improved(state, metric):
        state.best = metric
        state.bad_epochs = 0
        return False
    state.bad_epochs += 1
    if state.bad_epochs >= state.patience:
        state.lr = max(state.lr * state.factor, state.min_lr)
        state.bad_epochs = 0
        return True
    return False
