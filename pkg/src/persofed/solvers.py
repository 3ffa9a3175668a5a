"""Local and global minimization of the personalized objective.

Local problem (one user):   min_theta  local_loss(theta, D) + R(rho, theta)
Global problem:             min_{rho, theta_1..N}  sum_n local_loss_n + sum_n R(rho, theta_n)

Solver paths, selected by loss/regularizer kind:

- least squares + l2_squared: exact closed forms (ridge systems), including a
  joint linear solve for the global problem.
- smooth objectives (anything else except the l2 regularizer): damped Newton
  with Armijo backtracking for locals; envelope descent (L-BFGS on
  phi(rho) = sum_n min_theta [...], whose gradient is the sum of regularizer
  rho-gradients at the local argmins) plus an alternating polish pass for the
  global problem.
- l2 regularizer (nonsmooth at theta == rho): kink-aware proximal path for
  locals (exact secular equation for least squares, proximal gradient
  otherwise) and alternating minimization with a geometric-median rho step
  for the global problem.

All paths report convergence against `grad_tol` measured as a (sub)gradient
residual; non-convergence raises ConvergenceError rather than returning a
silently bad point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .core import Dataset, substream
from .losses import (
    LossModel,
    data_term,
    data_term_grad,
    data_term_hessian,
    local_loss,
    local_loss_grad,
    local_loss_hessian,
)
from .regularizers import (
    Regularizer,
    reg_grad_rho,
    reg_grad_theta,
    reg_hessian_theta,
    reg_value,
)


class SolverError(Exception):
    """Base class for solver failures."""


class ConvergenceError(SolverError):
    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class DegenerateProblemError(SolverError):
    """The optimum is non-unique (zero curvature somewhere)."""


@dataclass(frozen=True)
class SolverConfig:
    grad_tol: float = 1e-8
    max_iters: int = 10_000

    def __post_init__(self):
        if not (self.grad_tol > 0):
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


DEFAULT_SOLVER = SolverConfig()


def global_loss(
    loss: LossModel,
    reg: Regularizer,
    rho: np.ndarray,
    thetas: Sequence[np.ndarray],
    datasets: Sequence[Dataset],
) -> float:
    """sum_n local_loss(theta_n, D_n) + sum_n R(rho, theta_n)."""
    if len(thetas) != len(datasets):
        raise ValueError("thetas and datasets must have the same length")
    total = 0.0
    for theta, D in zip(thetas, datasets):
        total += local_loss(loss, theta, D) + reg_value(reg, rho, theta)
    return total


# ---------------------------------------------------------------------------
# Local solves
# ---------------------------------------------------------------------------


def _newton(value_grad_hess, x0: np.ndarray, tol: float, max_iters: int) -> np.ndarray:
    x = np.array(x0, dtype=np.float64)
    fx, g, H = value_grad_hess(x)
    for it in range(max_iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return x
        try:
            c, low = scipy.linalg.cho_factor(H)
            step = scipy.linalg.cho_solve((c, low), -g)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(H + 1e-10 * np.eye(len(x)), -g)
        slope = float(g @ step)
        if slope >= 0:  # numerical breakdown; fall back to steepest descent
            step = -g
            slope = -gnorm * gnorm
        # Sufficient decrease up to the rounding floor of the value itself:
        # near the optimum the predicted decrease ~|slope| can be smaller
        # than eps*|f|, and an exact Armijo test would reject every step.
        f_eps = 4.0 * np.finfo(np.float64).eps * (1.0 + abs(fx))
        t = 1.0
        while t >= 1e-14:
            xn = x + t * step
            fn, gn, Hn = value_grad_hess(xn)
            if fn <= fx + 0.25 * t * slope + f_eps:
                x, fx, g, H = xn, fn, gn, Hn
                break
            t *= 0.5
        else:
            raise ConvergenceError("line search failed", it, gnorm)
    raise ConvergenceError("Newton did not converge", max_iters, float(np.linalg.norm(g)))


def _ridge_system(
    loss: LossModel, reg: Regularizer, dataset: Dataset, dim: int
) -> tuple[np.ndarray, np.ndarray]:
    """M, b with M theta = b + 2 lambda rho the least-squares stationarity."""
    zero = np.zeros(dim)
    M = data_term_hessian(loss, zero, dataset) + 2.0 * (loss.mu + reg.lam) * np.eye(dim)
    b = -data_term_grad(loss, zero, dataset)
    return M, b


def _l2_subgrad_residual(
    loss: LossModel, reg: Regularizer, dataset: Dataset, rho: np.ndarray, theta: np.ndarray
) -> float:
    g = local_loss_grad(loss, theta, dataset)
    d = theta - rho
    n = float(np.linalg.norm(d))
    if n == 0.0:
        return max(0.0, float(np.linalg.norm(g)) - reg.lam)
    return float(np.linalg.norm(g + reg.lam * d / n))


def _local_argmin_l2(
    loss: LossModel,
    reg: Regularizer,
    dataset: Dataset,
    rho: np.ndarray,
    cfg: SolverConfig,
    theta0: np.ndarray | None,
) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.float64)
    # Kink check: theta = rho is optimal iff the smooth gradient fits in the
    # lambda-ball (0 in grad + lambda * unit-ball).
    if float(np.linalg.norm(local_loss_grad(loss, rho, dataset))) <= reg.lam:
        return rho.copy()
    if loss.kind == "least_squares":
        # Away from the kink the optimum solves (M + tau I) theta = b + tau rho
        # with tau = lambda/||theta - rho||; tau ||theta(tau) - rho|| increases
        # in tau, so the scalar equation brackets and solves cleanly.
        M, b = _ridge_system(loss, reg, dataset, rho.shape[0])
        M = M - 2.0 * reg.lam * np.eye(rho.shape[0])  # ridge system without the reg part

        def theta_of(tau: float) -> np.ndarray:
            return np.linalg.solve(M + tau * np.eye(rho.shape[0]), b + tau * rho)

        def phi(tau: float) -> float:
            return tau * float(np.linalg.norm(theta_of(tau) - rho)) - reg.lam

        lo, hi = 1e-12, 1.0
        while phi(hi) < 0:
            hi *= 4.0
            if hi > 1e18:
                raise ConvergenceError("l2 secular bracket failed", 0, phi(1e18))
        while phi(lo) > 0:
            lo /= 4.0
            if lo < 1e-300:
                raise ConvergenceError("l2 secular bracket failed", 0, phi(1e-300))
        tau = scipy.optimize.brentq(phi, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500)
        theta = theta_of(tau)
    else:
        theta = _prox_gradient(loss, reg, dataset, rho, cfg, theta0)
    res = _l2_subgrad_residual(loss, reg, dataset, rho, theta)
    if res > cfg.grad_tol:
        raise ConvergenceError("l2 local solve above tolerance", cfg.max_iters, res)
    return theta


def _prox_gradient(
    loss: LossModel,
    reg: Regularizer,
    dataset: Dataset,
    rho: np.ndarray,
    cfg: SolverConfig,
    theta0: np.ndarray | None,
) -> np.ndarray:
    """Proximal gradient on smooth-part + lambda||theta - rho||."""

    def prox(x: np.ndarray, t: float) -> np.ndarray:
        d = x - rho
        n = float(np.linalg.norm(d))
        if n <= t * reg.lam:
            return rho.copy()
        return rho + (1.0 - t * reg.lam / n) * d

    x = np.array(rho if theta0 is None else theta0, dtype=np.float64)
    t = 1.0
    f = lambda v: local_loss(loss, v, dataset)
    fx = f(x)
    for it in range(cfg.max_iters):
        g = local_loss_grad(loss, x, dataset)
        f_eps = 4.0 * np.finfo(np.float64).eps * (1.0 + abs(fx))
        while True:
            xn = prox(x - t * g, t)
            dx = xn - x
            fn = f(xn)
            if fn <= fx + float(g @ dx) + float(dx @ dx) / (2.0 * t) + f_eps:
                break
            t *= 0.5
            if t < 1e-18:
                raise ConvergenceError("proximal backtracking failed", it, fx)
        x, fx = xn, fn
        t *= 1.2
        if _l2_subgrad_residual(loss, reg, dataset, rho, x) <= cfg.grad_tol:
            return x
    raise ConvergenceError(
        "proximal gradient did not converge",
        cfg.max_iters,
        _l2_subgrad_residual(loss, reg, dataset, rho, x),
    )


def local_argmin(
    loss: LossModel,
    reg: Regularizer,
    dataset: Dataset,
    rho: np.ndarray,
    cfg: SolverConfig = DEFAULT_SOLVER,
    theta0: np.ndarray | None = None,
) -> np.ndarray:
    """argmin_theta local_loss(theta, D) + R(rho, theta)."""
    rho = np.asarray(rho, dtype=np.float64)
    if reg.kind == "l2":
        return _local_argmin_l2(loss, reg, dataset, rho, cfg, theta0)
    if loss.kind == "least_squares" and reg.kind == "l2_squared":
        M, b = _ridge_system(loss, reg, dataset, rho.shape[0])
        return np.linalg.solve(M, b + 2.0 * reg.lam * rho)

    def vgh(theta):
        v = local_loss(loss, theta, dataset) + reg_value(reg, rho, theta)
        g = local_loss_grad(loss, theta, dataset) + reg_grad_theta(reg, rho, theta)
        H = local_loss_hessian(loss, theta, dataset) + reg_hessian_theta(reg, rho, theta)
        return v, g, H

    x0 = rho if theta0 is None else np.asarray(theta0, dtype=np.float64)
    return _newton(vgh, x0, cfg.grad_tol, cfg.max_iters)


def solo_fit(
    loss: LossModel, dataset: Dataset, cfg: SolverConfig = DEFAULT_SOLVER, ridge: float = 1e-6
) -> np.ndarray:
    """Fit one dataset alone (regularized by max(mu, ridge) for solvability)."""
    dim = loss.model_dim(dataset.dim)
    if len(dataset) == 0:
        return np.zeros(dim)
    mu = max(loss.mu, ridge)
    if loss.kind == "least_squares":
        zero = np.zeros(dim)
        M = data_term_hessian(loss, zero, dataset) + 2.0 * mu * np.eye(dim)
        return np.linalg.solve(M, -data_term_grad(loss, zero, dataset))

    def vgh(theta):
        v = mu * float(theta @ theta) + data_term(loss, theta, dataset)
        g = 2.0 * mu * theta + data_term_grad(loss, theta, dataset)
        H = 2.0 * mu * np.eye(dim) + data_term_hessian(loss, theta, dataset)
        return v, g, H

    return _newton(vgh, np.zeros(dim), max(cfg.grad_tol, 1e-10), cfg.max_iters)


# ---------------------------------------------------------------------------
# Global solves
# ---------------------------------------------------------------------------


@dataclass
class GlobalSolution:
    rho: np.ndarray
    thetas: list[np.ndarray]
    value: float
    residual: float
    method: str


def joint_residual(
    loss: LossModel,
    reg: Regularizer,
    rho: np.ndarray,
    thetas: Sequence[np.ndarray],
    datasets: Sequence[Dataset],
    pinned: dict[int, np.ndarray] | None = None,
) -> float:
    """Max block-wise (sub)gradient norm of the global objective."""
    pinned = pinned or {}
    res = 0.0
    if reg.kind == "l2":
        # At a kink (theta_n == rho) the shared subgradient is pinned by the
        # theta-block to the user's own loss gradient, so the rho-condition
        # must sum exactly that; only pinned kink users keep a free ball term.
        acc = np.zeros_like(np.asarray(rho, dtype=np.float64))
        free_kinks = 0
        for n, theta in enumerate(thetas):
            d = np.asarray(rho) - theta
            nn = float(np.linalg.norm(d))
            if nn == 0.0:
                if n in pinned:
                    free_kinks += 1
                else:
                    acc += local_loss_grad(loss, np.asarray(rho, dtype=np.float64), datasets[n])
            else:
                acc += reg.lam * d / nn
            if n not in pinned:
                res = max(res, _l2_subgrad_residual(loss, reg, datasets[n], rho, theta))
        res = max(res, max(0.0, float(np.linalg.norm(acc)) - free_kinks * reg.lam))
        return res
    acc = np.zeros_like(np.asarray(rho, dtype=np.float64))
    for n, theta in enumerate(thetas):
        acc += reg_grad_rho(reg, rho, theta)
        if n not in pinned:
            gt = local_loss_grad(loss, theta, datasets[n]) + reg_grad_theta(reg, rho, theta)
            res = max(res, float(np.linalg.norm(gt)))
    return max(res, float(np.linalg.norm(acc)))


def _validate_instance(
    loss: LossModel, reg: Regularizer, datasets: Sequence[Dataset], pinned: dict[int, np.ndarray]
) -> int:
    if len(datasets) == 0:
        raise ValueError("need at least one user")
    dims = {D.dim for D in datasets}
    if len(dims) > 1:
        raise ValueError(f"datasets disagree on query dimension: {sorted(dims)}")
    dim = loss.model_dim(datasets[0].dim)
    for idx in pinned:
        if not 0 <= idx < len(datasets):
            raise ValueError(f"pinned index {idx} out of range")
    free = [n for n in range(len(datasets)) if n not in pinned]
    if loss.mu == 0.0 and not pinned and all(len(datasets[n]) == 0 for n in free):
        raise DegenerateProblemError("all datasets empty with mu = 0: optimum is translation-invariant")
    return dim


def _warm_start_rho(
    loss: LossModel, datasets: Sequence[Dataset], pinned: dict[int, np.ndarray], dim: int,
    cfg: SolverConfig,
) -> np.ndarray:
    acc, wsum = np.zeros(dim), 0.0
    for n, D in enumerate(datasets):
        if n in pinned:
            acc += pinned[n]
            wsum += 1.0
        elif len(D) > 0:
            acc += D.total_weight() * solo_fit(loss, D, cfg)
            wsum += D.total_weight()
    return acc / wsum if wsum > 0 else np.zeros(dim)


def _global_least_squares_l2sq(
    loss: LossModel,
    reg: Regularizer,
    datasets: Sequence[Dataset],
    pinned: dict[int, np.ndarray],
    dim: int,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Exact joint solve: eliminate each free theta_n, then solve for rho."""
    N = len(datasets)
    invs, binvs = {}, {}
    for n, D in enumerate(datasets):
        if n in pinned:
            continue
        M, b = _ridge_system(loss, reg, D, dim)
        invs[n] = np.linalg.inv(M)
        binvs[n] = invs[n] @ b
    A = N * np.eye(dim)
    rhs = np.zeros(dim)
    for n in range(N):
        if n in pinned:
            rhs += pinned[n]
        else:
            A -= 2.0 * reg.lam * invs[n]
            rhs += binvs[n]
    if np.linalg.cond(A) > 1e12:
        raise DegenerateProblemError("global optimum is not unique (singular stationarity system)")
    rho = np.linalg.solve(A, rhs)
    thetas = [
        pinned[n] if n in pinned else invs[n] @ (2.0 * reg.lam * rho) + binvs[n]
        for n in range(N)
    ]
    return rho, thetas


def _rho_step(
    reg: Regularizer, thetas: Sequence[np.ndarray], rho: np.ndarray, cfg: SolverConfig
) -> np.ndarray:
    """argmin_rho sum_n R(rho, theta_n) for fixed local models."""
    T = np.stack(thetas)
    if reg.kind == "l2_squared":
        return T.mean(axis=0)
    if reg.kind == "smooth_l2":

        def vgh(rho_):
            v = sum(reg_value(reg, rho_, t) for t in thetas)
            g = sum(reg_grad_rho(reg, rho_, t) for t in thetas)
            H = sum(reg_hessian_theta(reg, rho_, t) for t in thetas)  # symmetric in rho/theta
            return v, g, H

        return _newton(vgh, rho, max(cfg.grad_tol * 1e-2, 1e-12), cfg.max_iters)
    # l2: weighted geometric median of the local models (Weiszfeld with kink checks)
    x = np.array(rho, dtype=np.float64)
    for _ in range(cfg.max_iters):
        d = T - x
        norms = np.linalg.norm(d, axis=1)
        at = norms < 1e-14
        if at.any():
            pull = d[~at] / norms[~at, None]
            if np.linalg.norm(pull.sum(axis=0)) <= at.sum():
                return x
        inv = 1.0 / np.maximum(norms, 1e-14)
        xn = (T * inv[:, None]).sum(axis=0) / inv.sum()
        if np.linalg.norm(xn - x) <= 1e-14 * (1.0 + np.linalg.norm(x)):
            return xn
        x = xn
    return x


def global_minimize(
    loss: LossModel,
    reg: Regularizer,
    datasets: Sequence[Dataset],
    cfg: SolverConfig = DEFAULT_SOLVER,
    rho0: np.ndarray | None = None,
    pinned: dict[int, np.ndarray] | None = None,
) -> GlobalSolution:
    """Minimize the global objective over rho and all non-pinned local models.

    `pinned` maps user indices to fixed local models (their datasets are
    ignored); this is how a model-attacking user is represented.
    """
    pinned = {k: np.asarray(v, dtype=np.float64) for k, v in (pinned or {}).items()}
    dim = _validate_instance(loss, reg, datasets, pinned)
    inner = SolverConfig(grad_tol=min(cfg.grad_tol * 1e-2, 1e-10), max_iters=cfg.max_iters)

    if loss.kind == "least_squares" and reg.kind == "l2_squared":
        rho, thetas = _global_least_squares_l2sq(loss, reg, datasets, pinned, dim)
        res = joint_residual(loss, reg, rho, thetas, datasets, pinned)
        value = global_loss(loss, reg, rho, thetas, datasets)
        return GlobalSolution(rho, thetas, value, res, "closed_form")

    rho = (
        np.asarray(rho0, dtype=np.float64)
        if rho0 is not None
        else _warm_start_rho(loss, datasets, pinned, dim, cfg)
    )
    warm: list[np.ndarray | None] = [None] * len(datasets)

    def solve_locals(rho_, tol_cfg) -> list[np.ndarray]:
        out = []
        for n, D in enumerate(datasets):
            if n in pinned:
                out.append(pinned[n])
            else:
                t = local_argmin(loss, reg, D, rho_, tol_cfg, theta0=warm[n])
                warm[n] = t
                out.append(t)
        return out

    # Alternating sweeps contract fast when every user's data curvature
    # dominates the coupling strength; when a sweep stalls (data-poor users
    # with mu << lambda) switch to quasi-Newton descent on the envelope.
    method = "alternating"
    thetas = solve_locals(rho, inner)
    res = joint_residual(loss, reg, rho, thetas, datasets, pinned)
    sweeps = 0
    prev = np.inf
    while res > cfg.grad_tol and sweeps < cfg.max_iters:
        if sweeps >= 3 and res > 0.5 * prev:
            break  # slow contraction; hand over to the envelope path
        prev = res
        rho = _rho_step(reg, thetas, rho, cfg)
        thetas = solve_locals(rho, inner)
        res = joint_residual(loss, reg, rho, thetas, datasets, pinned)
        sweeps += 1

    if res > cfg.grad_tol:

        def phi_and_grad(rho_):
            thetas_ = solve_locals(rho_, inner)
            val = global_loss(loss, reg, rho_, thetas_, datasets)
            g = np.zeros(dim)
            for n, t in enumerate(thetas_):
                if reg.kind == "l2" and n not in pinned and np.array_equal(t, rho_):
                    # the envelope tracks this user's own loss through the kink
                    g += local_loss_grad(loss, rho_, datasets[n])
                else:
                    g += reg_grad_rho(reg, rho_, t)
            return val, g

        out = scipy.optimize.minimize(
            phi_and_grad,
            rho,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 2000, "ftol": 1e-18, "gtol": cfg.grad_tol * 1e-2},
        )
        rho = np.asarray(out.x, dtype=np.float64)
        method = "alternating+envelope"
        thetas = solve_locals(rho, inner)
        res = joint_residual(loss, reg, rho, thetas, datasets, pinned)
        best = (rho, thetas, res)
        while res > cfg.grad_tol and sweeps < cfg.max_iters:
            prev = res
            rho = _rho_step(reg, thetas, rho, cfg)
            thetas = solve_locals(rho, inner)
            res = joint_residual(loss, reg, rho, thetas, datasets, pinned)
            sweeps += 1
            if res < best[2]:
                best = (rho, thetas, res)
            if res > 0.9 * prev:
                break  # the polish sweep has stopped contracting
        rho, thetas, res = best
    if res > cfg.grad_tol:
        raise ConvergenceError("global minimization did not converge", sweeps, res)
    value = global_loss(loss, reg, rho, thetas, datasets)
    return GlobalSolution(rho, thetas, value, res, method)


# ---------------------------------------------------------------------------
# Envelope over the other users, and its smoothness
# ---------------------------------------------------------------------------


def minimized_loss_over_others(
    loss: LossModel,
    reg: Regularizer,
    datasets: Sequence[Dataset],
    exclude_idx: int,
    rho: np.ndarray,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> tuple[float, np.ndarray]:
    """Value and rho-gradient of sum_{n != s} min_theta [local_loss_n + R(rho, .)].

    The gradient is the envelope formula: sum of regularizer rho-gradients at
    the per-user argmins (the argmin terms drop out by first-order optimality).
    Where the norm coupling pins a user's argmin onto rho itself, the envelope
    locally equals that user's bare local loss, so its own gradient at rho is
    the correct contribution there.
    """
    if not 0 <= exclude_idx < len(datasets):
        raise ValueError(f"exclude_idx {exclude_idx} out of range for {len(datasets)} users")
    rho = np.asarray(rho, dtype=np.float64)
    value = 0.0
    grad = np.zeros_like(rho)
    for n, D in enumerate(datasets):
        if n == exclude_idx:
            continue
        theta = local_argmin(loss, reg, D, rho, cfg)
        value += local_loss(loss, theta, D) + reg_value(reg, rho, theta)
        if reg.kind == "l2" and np.array_equal(theta, rho):
            grad += local_loss_grad(loss, rho, D)
        else:
            grad += reg_grad_rho(reg, rho, theta)
    return value, grad


def estimate_smoothness(
    loss: LossModel,
    reg: Regularizer,
    datasets: Sequence[Dataset],
    rho: np.ndarray,
    cfg: SolverConfig = DEFAULT_SOLVER,
    exclude_idx: int | None = None,
    seed: int = 0,
    iters: int = 200,
) -> float:
    """Largest curvature of the minimized (envelope) loss at rho, by power iteration.

    Exact for least squares + l2_squared; otherwise uses central finite
    differences of the envelope gradient map.
    """
    rho = np.asarray(rho, dtype=np.float64)
    dim = rho.shape[0]
    active = [n for n in range(len(datasets)) if n != exclude_idx]
    if not active:
        raise ValueError("no users left after exclusion")
    if loss.kind == "least_squares" and reg.kind == "l2_squared":
        H = np.zeros((dim, dim))
        for n in active:
            M, _ = _ridge_system(loss, reg, datasets[n], dim)
            H += 2.0 * reg.lam * (np.eye(dim) - 2.0 * reg.lam * np.linalg.inv(M))
        return float(np.linalg.eigvalsh(H)[-1])

    tight = SolverConfig(grad_tol=1e-12, max_iters=cfg.max_iters)

    def env_grad(r):
        g = np.zeros(dim)
        for n in active:
            theta = local_argmin(loss, reg, datasets[n], r, tight)
            g += reg_grad_rho(reg, r, theta)
        return g

    rng = substream(seed, "smoothness")
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    eps = 1e-5 * (1.0 + float(np.linalg.norm(rho)))
    est = 0.0
    for _ in range(iters):
        w = (env_grad(rho + eps * v) - env_grad(rho - eps * v)) / (2.0 * eps)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        if abs(nw - est) <= 1e-9 * max(1.0, est):
            return nw
        est, v = nw, w / nw
    return est
