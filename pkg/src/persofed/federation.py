"""Synchronous federated gradient descent with personalization.

Each round t, every user reports a regularizer gradient: honest users first
refresh their local model against the current global model rho^t (either by
full local optimization or by one local gradient step), then report
grad_rho R(rho^t, theta_n^t). An attacking user, if present, reports whatever
its strategy computes. The server drops implausible reports (those outside
the regularizer's reachable-gradient set) and applies

    rho^{t+1} = rho^t - eta_t * sum(accepted reports)

exactly, in user order. There are no crashes and no subsampling; at most one
attacker is supported.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .core import Dataset
from .losses import LossModel, local_loss_grad
from .regularizers import Regularizer, grad_set_contains, reg_grad_rho, reg_grad_theta
from .solvers import (
    DEFAULT_SOLVER,
    SolverConfig,
    estimate_smoothness,
    local_argmin,
)


class ReportStrategy(Protocol):
    """Attacker interface: produce the round-t report given rho^t and eta_t."""

    def report(self, t: int, rho: np.ndarray, eta: float) -> np.ndarray: ...


@dataclass
class RoundTrace:
    t: int
    rho: np.ndarray
    reports: np.ndarray  # (N, d)
    rejected: np.ndarray  # (N,) bool
    rho_norm: float
    rejected_count: int
    target_dist: float | None = None
    target_accuracy: float | None = None


@dataclass
class Experiment:
    """One federated run. `datasets` covers every user; the attacker's entry
    is ignored (conventionally an empty dataset)."""

    loss: LossModel
    reg: Regularizer
    datasets: list[Dataset]
    rounds: int
    eta: float | str | Sequence[float] = "auto"
    rho0: np.ndarray | None = None
    attacker_idx: int | None = None
    attacker: ReportStrategy | None = None
    honest_mode: str = "full_opt"  # or "one_step"
    local_step: float | None = None
    solver: SolverConfig = field(default_factory=lambda: DEFAULT_SOLVER)
    target: np.ndarray | None = None
    eval_queries: np.ndarray | None = None

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if (self.attacker_idx is None) != (self.attacker is None):
            raise ValueError("attacker_idx and attacker must be set together")
        if self.attacker_idx is not None and not 0 <= self.attacker_idx < len(self.datasets):
            raise ValueError(f"attacker_idx {self.attacker_idx} out of range")
        if self.honest_mode not in ("full_opt", "one_step"):
            raise ValueError(f"unknown honest_mode {self.honest_mode!r}")
        if not self.datasets:
            raise ValueError("need at least one user")


@dataclass
class ExperimentResult:
    rho: np.ndarray
    thetas: list[np.ndarray]
    traces: list[RoundTrace]
    eta: float | list[float]


def resolve_eta(exp: Experiment) -> list[float]:
    """Materialize the step-size schedule; 'auto' means 1/(3 L_hat) with
    L_hat the power-iteration curvature of the honest envelope loss."""
    if isinstance(exp.eta, str):
        if exp.eta != "auto":
            raise ValueError(f"unknown eta spec {exp.eta!r}")
        dim = exp.loss.model_dim(exp.datasets[0].dim)
        rho0 = np.zeros(dim) if exp.rho0 is None else np.asarray(exp.rho0, dtype=np.float64)
        L = estimate_smoothness(
            exp.loss, exp.reg, exp.datasets, rho0, exp.solver, exclude_idx=exp.attacker_idx
        )
        if L <= 0:
            raise ValueError("estimated smoothness is zero; set eta explicitly")
        return [1.0 / (3.0 * L)] * exp.rounds
    if np.isscalar(exp.eta):
        eta = float(exp.eta)
        if eta <= 0:
            raise ValueError("eta must be positive")
        return [eta] * exp.rounds
    schedule = [float(e) for e in exp.eta]
    if len(schedule) != exp.rounds:
        raise ValueError(f"eta schedule has {len(schedule)} entries for {exp.rounds} rounds")
    if any(e <= 0 for e in schedule):
        raise ValueError("eta schedule entries must be positive")
    return schedule


def _metrics(exp: Experiment, rho: np.ndarray) -> tuple[float | None, float | None]:
    dist = acc = None
    if exp.target is not None:
        dist = float(np.linalg.norm(rho - exp.target))
        if exp.eval_queries is not None and exp.loss.kind == "multiclass_logistic":
            want = exp.loss.predict_labels(exp.target, exp.eval_queries)
            got = exp.loss.predict_labels(rho, exp.eval_queries)
            acc = float(np.mean(want == got))
        elif exp.eval_queries is not None and exp.loss.kind == "binary_logistic":
            want = np.sign(exp.eval_queries @ exp.target)
            got = np.sign(exp.eval_queries @ rho)
            acc = float(np.mean(want == got))
    return dist, acc


def run_round(
    exp: Experiment,
    t: int,
    rho: np.ndarray,
    thetas: list[np.ndarray],
    eta: float,
) -> tuple[np.ndarray, list[np.ndarray], RoundTrace]:
    """One synchronous round; returns (rho_next, thetas_next, trace row)."""
    N = len(exp.datasets)
    dim = rho.shape[0]
    reports = np.zeros((N, dim))
    rejected = np.zeros(N, dtype=bool)
    new_thetas = list(thetas)
    for n in range(N):
        if n == exp.attacker_idx:
            reports[n] = np.asarray(exp.attacker.report(t, rho.copy(), eta), dtype=np.float64)
            continue
        if exp.honest_mode == "full_opt":
            new_thetas[n] = local_argmin(
                exp.loss, exp.reg, exp.datasets[n], rho, exp.solver, theta0=thetas[n]
            )
        else:
            step = eta if exp.local_step is None else exp.local_step
            g = local_loss_grad(exp.loss, thetas[n], exp.datasets[n]) + reg_grad_theta(
                exp.reg, rho, thetas[n]
            )
            new_thetas[n] = thetas[n] - step * g
        reports[n] = reg_grad_rho(exp.reg, rho, new_thetas[n])
    for n in range(N):
        if not grad_set_contains(exp.reg, reports[n]):
            rejected[n] = True
    accepted = reports[~rejected].sum(axis=0) if (~rejected).any() else np.zeros(dim)
    rho_next = rho - eta * accepted
    dist, acc = _metrics(exp, rho)
    trace = RoundTrace(
        t=t,
        rho=rho.copy(),
        reports=reports,
        rejected=rejected,
        rho_norm=float(np.linalg.norm(rho)),
        rejected_count=int(rejected.sum()),
        target_dist=dist,
        target_accuracy=acc,
    )
    return rho_next, new_thetas, trace


def run_experiment(exp: Experiment) -> ExperimentResult:
    dim = exp.loss.model_dim(exp.datasets[0].dim)
    rho = (
        np.zeros(dim)
        if exp.rho0 is None
        else np.array(exp.rho0, dtype=np.float64)
    )
    if rho.shape != (dim,):
        raise ValueError(f"rho0 has shape {rho.shape}, expected ({dim},)")
    schedule = resolve_eta(exp)
    thetas: list[np.ndarray] = [rho.copy() for _ in exp.datasets]
    traces: list[RoundTrace] = []
    for t in range(1, exp.rounds + 1):
        rho, thetas, trace = run_round(exp, t, rho, thetas, schedule[t - 1])
        traces.append(trace)
    eta_out: float | list[float] = (
        schedule if len(set(schedule)) > 1 else (schedule[0] if schedule else 0.0)
    )
    return ExperimentResult(rho=rho, thetas=thetas, traces=traces, eta=eta_out)


def trace_to_csv(traces: Sequence[RoundTrace], path, include_rho: bool = False) -> None:
    """Write the per-round trace; floats use repr so parsing round-trips exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t", "target_dist", "target_accuracy", "rho_norm", "rejected_count"]
        if include_rho and traces:
            header += [f"rho_{i}" for i in range(traces[0].rho.shape[0])]
        writer.writerow(header)
        for tr in traces:
            row = [
                str(tr.t),
                "" if tr.target_dist is None else repr(tr.target_dist),
                "" if tr.target_accuracy is None else repr(tr.target_accuracy),
                repr(tr.rho_norm),
                str(tr.rejected_count),
            ]
            if include_rho:
                row += [repr(float(x)) for x in tr.rho]
            writer.writerow(row)
