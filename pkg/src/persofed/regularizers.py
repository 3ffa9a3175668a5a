"""Personalization regularizers R(rho, theta) tying local models to the global one.

Three kinds, all functions of delta = rho - theta:

- l2_squared:  lambda * ||delta||^2         grad_rho = 2 lambda delta
- l2:          lambda * ||delta||           grad_rho = lambda delta/||delta||
- smooth_l2:   lambda * sqrt(1 + ||delta||^2)
                                            grad_rho = lambda delta/sqrt(1+||delta||^2)

For l2 the gradient at the kink (rho == theta) is taken to be 0, a valid
subgradient. The set of gradients reachable over all theta ("plausible
reports") is all of R^d for l2_squared and the ball B(0, lambda) for the
other two kinds; plausibility checks use a relative tolerance so boundary
reports are accepted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

RegKind = Literal["l2_squared", "l2", "smooth_l2"]

_KINDS = ("l2_squared", "l2", "smooth_l2")

PLAUSIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class Regularizer:
    kind: RegKind
    lam: float

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if not (self.lam > 0.0 and np.isfinite(self.lam)):
            raise ValueError("lam must be a finite positive real")


def reg_value(reg: Regularizer, rho: np.ndarray, theta: np.ndarray) -> float:
    delta = np.asarray(rho, dtype=np.float64) - np.asarray(theta, dtype=np.float64)
    n2 = float(delta @ delta)
    if reg.kind == "l2_squared":
        return reg.lam * n2
    if reg.kind == "l2":
        return reg.lam * float(np.sqrt(n2))
    return reg.lam * float(np.sqrt(1.0 + n2))


def reg_grad_rho(reg: Regularizer, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    delta = np.asarray(rho, dtype=np.float64) - np.asarray(theta, dtype=np.float64)
    if reg.kind == "l2_squared":
        return 2.0 * reg.lam * delta
    n = float(np.linalg.norm(delta))
    if reg.kind == "l2":
        if n == 0.0:
            return np.zeros_like(delta)
        return reg.lam * delta / n
    return reg.lam * delta / np.sqrt(1.0 + n * n)


def reg_grad_theta(reg: Regularizer, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Gradient in theta; equals -grad_rho since R depends on rho - theta."""
    return -reg_grad_rho(reg, rho, theta)


def reg_hessian_theta(reg: Regularizer, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Hessian of R in theta, for the smooth kinds (Newton local solves)."""
    delta = np.asarray(rho, dtype=np.float64) - np.asarray(theta, dtype=np.float64)
    d = delta.shape[0]
    if reg.kind == "l2_squared":
        return 2.0 * reg.lam * np.eye(d)
    if reg.kind == "smooth_l2":
        s = np.sqrt(1.0 + float(delta @ delta))
        return reg.lam * (np.eye(d) / s - np.outer(delta, delta) / s**3)
    raise ValueError("l2 regularizer is nonsmooth; no Hessian at the kink")


def grad_set_contains(reg: Regularizer, g: np.ndarray, tol: float = PLAUSIBILITY_TOL) -> bool:
    """Whether g is a plausible report, i.e. g = grad_rho R(rho, theta) for some theta."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        return False
    if reg.kind == "l2_squared":
        return True
    return float(np.linalg.norm(g)) <= reg.lam * (1.0 + tol)


def project_to_grad_set(reg: Regularizer, g: np.ndarray) -> np.ndarray:
    """Nearest plausible report: identity for l2_squared, ball clip otherwise."""
    g = np.asarray(g, dtype=np.float64)
    if reg.kind == "l2_squared":
        return g.copy()
    n = float(np.linalg.norm(g))
    if n <= reg.lam or n == 0.0:
        return g.copy()
    return g * (reg.lam / n)
