"""Attack strategies and attack-form conversions.

Implements the chain gradient attack -> model attack -> data poisoning:

- CounterGradientAttack (CGA): a gradient attack that estimates the other
  users' aggregate report from consecutive global models and reports the
  plausible gradient steering the next global model toward a target.
- ModelAttack: report the exact regularizer gradient of a fixed local model.
- gradient_to_model: turn a stabilized attack gradient into the fixed local
  model generating it.
- model_to_single_datapoint: for least squares with the quadratic
  regularizer, a single injected datapoint whose local optimum counteracts
  every other user's pull, placing the global optimum exactly on the target.
- indifference_project / fabricate_poison_dataset: multiclass poisoning via
  queries projected onto the target model's equal-probability subspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataPoint, Dataset
from .losses import LossModel, data_term_grad
from .regularizers import Regularizer, project_to_grad_set, reg_grad_rho
from .solvers import DEFAULT_SOLVER, SolverConfig, minimized_loss_over_others


class AttackError(Exception):
    pass


class AttackConfigError(AttackError):
    pass


class DegenerateTargetError(AttackError):
    """The target model's class directions are linearly dependent."""


# ---------------------------------------------------------------------------
# Gradient attacks
# ---------------------------------------------------------------------------


class CounterGradientAttack:
    """Stateful report strategy steering the global model toward `target`.

    Round 1 assumes the others report nothing; afterwards their previous
    aggregate is recovered exactly from the observed global-model step:

        others_hat^t = (rho^{t-1} - rho^t)/eta^{t-1} - own_report^{t-1}

    and the raw counter-gradient (rho^t - target)/eta_t - others_hat^t is
    projected onto the regularizer's plausible-report set. The `local`
    variant shifts the target by others_hat/(2 lambda (N-1)), aiming the
    OTHER users' average local model at the target instead of the global
    model; it requires the quadratic regularizer.

    A constant step size is required: the recovery formula divides by the
    previous eta, and the strategy refuses schedules that change it.
    """

    def __init__(
        self,
        target: np.ndarray,
        reg: Regularizer,
        variant: str = "global",
        num_users: int | None = None,
        stab_tol: float = 1e-9,
        stab_rounds: int = 10,
    ):
        if variant not in ("global", "local"):
            raise AttackConfigError(f"unknown CGA variant {variant!r}")
        if variant == "local":
            if reg.kind != "l2_squared":
                raise AttackConfigError("local CGA variant needs the l2_squared regularizer")
            if num_users is None or num_users < 2:
                raise AttackConfigError("local CGA variant needs num_users >= 2")
        self.target = np.asarray(target, dtype=np.float64)
        self.reg = reg
        self.variant = variant
        self.num_users = num_users
        self.stab_tol = stab_tol
        self.stab_rounds = stab_rounds
        self._g_prev: np.ndarray | None = None
        self._rho_prev: np.ndarray | None = None
        self._eta_prev: float | None = None
        self._stable_run = 0
        self.stabilized_report: np.ndarray | None = None

    def others_estimate(self, rho: np.ndarray) -> np.ndarray:
        if self._rho_prev is None:
            return np.zeros_like(self.target)
        return (self._rho_prev - rho) / self._eta_prev - self._g_prev

    def report(self, t: int, rho: np.ndarray, eta: float) -> np.ndarray:
        if self._eta_prev is not None and eta != self._eta_prev:
            raise AttackConfigError(
                f"CGA needs a constant step size; got {eta} after {self._eta_prev}"
            )
        rho = np.asarray(rho, dtype=np.float64)
        ghat = self.others_estimate(rho)
        target = self.target
        if self.variant == "local":
            target = target + ghat / (2.0 * self.reg.lam * (self.num_users - 1))
        raw = (rho - target) / eta - ghat
        g = project_to_grad_set(self.reg, raw)
        if self._g_prev is not None and np.linalg.norm(g - self._g_prev) <= self.stab_tol:
            self._stable_run += 1
            if self._stable_run >= self.stab_rounds:
                self.stabilized_report = g.copy()
        else:
            self._stable_run = 0
        self._g_prev, self._rho_prev, self._eta_prev = g.copy(), rho.copy(), eta
        return g


class ModelAttack:
    """Report the regularizer gradient of a fixed local model every round."""

    def __init__(self, model: np.ndarray, reg: Regularizer):
        self.model = np.asarray(model, dtype=np.float64)
        self.reg = reg

    def report(self, t: int, rho: np.ndarray, eta: float) -> np.ndarray:
        return reg_grad_rho(self.reg, rho, self.model)


def gradient_to_model(g_inf: np.ndarray, target: np.ndarray, reg: Regularizer) -> np.ndarray:
    """Fixed local model whose report reproduces g_inf once rho sits at target.

    Solves grad_rho R(target, model) = g_inf, which for the quadratic
    regularizer gives model = target - g_inf/(2 lambda).
    """
    if reg.kind != "l2_squared":
        raise AttackConfigError("gradient-to-model conversion needs the l2_squared regularizer")
    return np.asarray(target, dtype=np.float64) - np.asarray(g_inf, dtype=np.float64) / (
        2.0 * reg.lam
    )


# ---------------------------------------------------------------------------
# Single-datapoint reconstruction (least squares)
# ---------------------------------------------------------------------------


@dataclass
class SingleDatapointAttack:
    status: str  # "ok" | "no_attack_needed" | "degenerate_query"
    gradient: np.ndarray
    model: np.ndarray
    point: DataPoint | None


def model_to_single_datapoint(
    loss: LossModel,
    reg: Regularizer,
    datasets: list[Dataset],
    attacker_idx: int,
    target: np.ndarray,
    cfg: SolverConfig = DEFAULT_SOLVER,
    zero_tol: float = 1e-12,
) -> SingleDatapointAttack:
    """One datapoint for the attacker that places the global optimum on target.

    Let g be the rho-gradient of the other users' minimized loss at the
    target. The attacker's local model must take the counteracting value
    model = target + g/(2 lambda); injecting

        query  q = g + 2 mu model
        answer a = q^T model + 1

    makes the attacker's local gradient at `model` equal exactly -g (the
    residual q^T model - a is -1 by construction), so (target, ..., model)
    is the unique global stationary point. ||g|| ~ 0 means the target is
    already optimal for the others (no attack needed); q ~ 0 means the mu
    term exactly cancels the query (degenerate, no single point works).
    """
    if loss.kind != "least_squares":
        raise AttackConfigError("single-datapoint reconstruction needs least squares")
    if reg.kind != "l2_squared":
        raise AttackConfigError("single-datapoint reconstruction needs the l2_squared regularizer")
    target = np.asarray(target, dtype=np.float64)
    _, g = minimized_loss_over_others(loss, reg, datasets, attacker_idx, target, cfg)
    scale = 1.0 + float(np.linalg.norm(target))
    if float(np.linalg.norm(g)) <= zero_tol * scale:
        return SingleDatapointAttack("no_attack_needed", g, target.copy(), None)
    model = target + g / (2.0 * reg.lam)
    q = g + 2.0 * loss.mu * model
    if float(np.linalg.norm(q)) <= zero_tol * scale:
        return SingleDatapointAttack("degenerate_query", g, model, None)
    a = float(q @ model) + 1.0
    return SingleDatapointAttack("ok", g, model, DataPoint(query=q, answer=a))


def poisoned_instance(
    datasets: list[Dataset], attacker_idx: int, poison: Dataset
) -> list[Dataset]:
    """Replace the attacker's dataset with the poison."""
    if not 0 <= attacker_idx < len(datasets):
        raise ValueError(f"attacker_idx {attacker_idx} out of range")
    out = list(datasets)
    out[attacker_idx] = poison
    return out


# ---------------------------------------------------------------------------
# Multiclass poisoning via the indifference subspace
# ---------------------------------------------------------------------------


def indifference_basis(loss: LossModel, theta_spade: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal normals Z (rows) and offsets c of the equal-logit hyperplanes.

    Queries x with Z x = c produce identical logits for every class under
    theta_spade, hence probability 1/C each. Built by Gram-Schmidt over the
    class-difference directions; linear dependence among those directions
    leaves fewer independent hyperplanes than classes and is reported as
    DegenerateTargetError.
    """
    if loss.kind != "multiclass_logistic":
        raise AttackConfigError("indifference projection needs a multiclass model")
    M = loss.as_class_matrix(theta_spade)
    C = loss.num_classes
    zs, cs = [], []
    for a in range(1, C):
        y = M[a, 1:] - M[0, 1:]
        c = -(M[a, 0] - M[0, 0])
        z = y.copy()
        cp = c
        for zb, cb in zip(zs, cs):
            coef = float(y @ zb) / float(zb @ zb)
            z -= coef * zb
            cp -= coef * cb
        if np.linalg.norm(z) <= 1e-10 * max(1.0, float(np.linalg.norm(y))):
            raise DegenerateTargetError(
                f"class-difference directions are linearly dependent (class {a})"
            )
        zs.append(z)
        cs.append(cp)
    return np.stack(zs), np.asarray(cs, dtype=np.float64)


def indifference_project(
    loss: LossModel,
    theta_spade: np.ndarray,
    queries: np.ndarray,
    noise_scale: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Project queries onto the equal-probability subspace of theta_spade,
    then add isotropic gaussian noise of the given scale."""
    Z, c = indifference_basis(loss, theta_spade)
    X = np.array(np.atleast_2d(queries), dtype=np.float64)
    for z, cv in zip(Z, c):
        X = X - np.outer((X @ z - cv) / float(z @ z), z)
    if noise_scale > 0.0:
        if rng is None:
            raise ValueError("noise_scale > 0 needs an rng")
        X = X + noise_scale * rng.standard_normal(X.shape)
    return X


def fabricate_poison_dataset(
    loss: LossModel,
    theta_spade: np.ndarray,
    count: int,
    rng: np.random.Generator,
    source_queries: np.ndarray | None = None,
    alpha: float = 1.0,
    noise_scale: float | str = "auto",
    label_mode: str = "soft",
    clip: bool = False,
    query_scale: float = 1.0,
) -> Dataset:
    """Build `count` poison points for a multiclass target model.

    Queries come from `source_queries` (first `count` rows) or are drawn
    gaussian; they are projected onto the indifference subspace, perturbed
    by noise ('auto' = 1e-3 x mean source norm), optionally renormalized to
    [0, 1] per row (`clip`: divide by the row max, zero out negatives), and
    labeled under theta_spade: full probability vectors (`soft`) or one
    sampled hard label (`sample`). Every point carries weight `alpha`.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if label_mode not in ("soft", "sample"):
        raise ValueError(f"unknown label_mode {label_mode!r}")
    if source_queries is not None:
        src = np.asarray(source_queries, dtype=np.float64)
        if src.shape[0] < count:
            raise ValueError(f"need {count} source queries, got {src.shape[0]}")
        X = src[:count]
    else:
        X = query_scale * rng.standard_normal((count, loss.feature_dim))
    if noise_scale == "auto":
        norms = np.linalg.norm(X, axis=1)
        noise_scale = 1e-3 * float(norms.mean()) if norms.size else 0.0
    X = indifference_project(loss, theta_spade, X, float(noise_scale), rng)
    if clip:
        mx = X.max(axis=1, keepdims=True)
        X = np.where(mx > 0, X / np.where(mx > 0, mx, 1.0), X)
        X = np.clip(X, 0.0, None)
    probs = loss.softmax_probs(theta_spade, X)
    points = []
    for i in range(count):
        if label_mode == "soft":
            p = probs[i] / probs[i].sum()
            points.append(DataPoint(query=X[i], probs=p, weight=alpha))
        else:
            lab = int(rng.choice(loss.num_classes, p=probs[i] / probs[i].sum()))
            points.append(DataPoint(query=X[i], label=lab, weight=alpha))
    return Dataset.from_points(points)


def auto_overweight(
    loss: LossModel,
    reg: Regularizer,
    target: np.ndarray,
    theta_spade: np.ndarray,
    poison: Dataset,
    factor: float = 10.0,
) -> float:
    """Weight multiplier making the poison's pull at the target dominate the
    regularizer pull toward it by `factor`. Assumes sum aggregation (weights
    scale the data term)."""
    pull = 2.0 * reg.lam * float(np.linalg.norm(np.asarray(target) - np.asarray(theta_spade)))
    base = data_term_grad(loss, np.asarray(target, dtype=np.float64), poison)
    base_norm = float(np.linalg.norm(base))
    if base_norm == 0.0:
        return 1.0
    return max(1.0, factor * pull / base_norm)


def reweight(dataset: Dataset, alpha: float) -> Dataset:
    """Scale every point's weight by alpha."""
    pts = [
        DataPoint(query=p.query, answer=p.answer, label=p.label, probs=p.probs,
                  weight=p.weight * alpha)
        for p in dataset
    ]
    return Dataset.from_points(pts, dim=dataset.dim)
