"""Empirical verification of the learnability properties.

Two checks:

- Gradient growth (per-dataset): for datasets D of size I drawn honestly from
  a reference model theta_dagger, the local-loss gradient should correlate
  with the offset from theta_dagger at every scale:

      (theta - theta_dagger)^T grad l(theta, D)
          >= A * I * min(r, r^2) - B * I^alpha * r,    r = ||theta - theta_dagger||

  for constants A, B > 0 and alpha < 1. The event is checked on models
  sampled on shells around theta_dagger; constants are fitted by grid search
  maximizing A subject to a pass-rate floor at the largest I.

- Local recovery (end-to-end): honest users participating in the federated
  optimization recover their reference models within eps with probability
  >= the reported rate, for any fixed datasets held by the other users.

I is the total dataset weight (= the point count for unit-weight data).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Dataset, substream
from .losses import LossModel, local_loss_grad
from .regularizers import Regularizer
from .solvers import DEFAULT_SOLVER, SolverConfig, global_minimize

DatasetFactory = Callable[[np.ndarray, int, np.random.Generator], Dataset]

DEFAULT_RADII = (0.01, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class GradientPacParams:
    A: float
    B: float
    alpha: float = 0.75

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0):
            raise ValueError("A and B must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


def sample_shell_models(
    theta_dagger: np.ndarray,
    rng: np.random.Generator,
    radii: Sequence[float] = DEFAULT_RADII,
    per_radius: int = 16,
) -> list[np.ndarray]:
    """Models on spheres of the given radii around theta_dagger."""
    theta_dagger = np.asarray(theta_dagger, dtype=np.float64)
    out = []
    for r in radii:
        for _ in range(per_radius):
            u = rng.standard_normal(theta_dagger.shape[0])
            u /= np.linalg.norm(u)
            out.append(theta_dagger + r * u)
    return out


def _margin_parts(
    loss: LossModel,
    dataset: Dataset,
    theta_dagger: np.ndarray,
    thetas: Sequence[np.ndarray],
    alpha: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(s, u, v) with margin = s - A*u + B*v per sampled model."""
    theta_dagger = np.asarray(theta_dagger, dtype=np.float64)
    I = dataset.total_weight()
    s = np.empty(len(thetas))
    u = np.empty(len(thetas))
    v = np.empty(len(thetas))
    for i, theta in enumerate(thetas):
        d = np.asarray(theta, dtype=np.float64) - theta_dagger
        r = float(np.linalg.norm(d))
        s[i] = float(d @ local_loss_grad(loss, theta, dataset))
        u[i] = I * min(r, r * r)
        v[i] = (I ** alpha) * r
    return s, u, v


@dataclass
class PacEventReport:
    worst_margin: float
    holds: bool
    margins: np.ndarray


def check_gradient_pac_event(
    loss: LossModel,
    dataset: Dataset,
    theta_dagger: np.ndarray,
    params: GradientPacParams,
    samples: int | Sequence[np.ndarray] = 64,
    rng: np.random.Generator | None = None,
    radii: Sequence[float] = DEFAULT_RADII,
) -> PacEventReport:
    """Evaluate the gradient-growth event on sampled (or given) models."""
    if isinstance(samples, int):
        if rng is None:
            raise ValueError("sampling models needs an rng")
        per = max(1, samples // len(radii))
        thetas = sample_shell_models(theta_dagger, rng, radii, per)
    else:
        thetas = [np.asarray(t, dtype=np.float64) for t in samples]
    s, u, v = _margin_parts(loss, dataset, theta_dagger, thetas, params.alpha)
    margins = s - params.A * u + params.B * v
    worst = float(margins.min()) if margins.size else 0.0
    return PacEventReport(worst_margin=worst, holds=bool(worst >= 0.0), margins=margins)


@dataclass
class PacFit:
    params: GradientPacParams
    feasible: bool
    pass_rate_by_I: list[tuple[int, float]]
    rows: list[tuple[int, int, float, bool]] = field(default_factory=list)
    # rows: (I, trial, worst_margin at fitted params, holds)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["I", "trial", "worst_margin", "holds"])
            for I, trial, margin, ok in self.rows:
                w.writerow([str(I), str(trial), repr(margin), str(int(ok))])


def fit_pac_constants(
    loss: LossModel,
    theta_dagger: np.ndarray,
    dataset_factory: DatasetFactory,
    I_grid: Sequence[int],
    trials: int,
    alpha: float = 0.75,
    seed: int = 0,
    A_grid: Sequence[float] | None = None,
    B_grid: Sequence[float] | None = None,
    radii: Sequence[float] = DEFAULT_RADII,
    per_radius: int = 16,
    min_pass: float = 0.95,
) -> PacFit:
    """Grid-search (A, B) maximizing A subject to pass-rate >= min_pass at the
    largest I (ties prefer the smallest B, the weakest slack term)."""
    if not I_grid or trials < 1:
        raise ValueError("need a nonempty I_grid and trials >= 1")
    A_grid = np.asarray(A_grid if A_grid is not None else np.logspace(-4, 1, 51))
    B_grid = np.asarray(B_grid if B_grid is not None else np.logspace(-3, 0, 13))
    I_list = sorted(int(I) for I in I_grid)
    parts: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    for I in I_list:
        for trial in range(trials):
            D = dataset_factory(theta_dagger, I, substream(seed, "pac-data", I, trial))
            thetas = sample_shell_models(
                theta_dagger, substream(seed, "pac-models", I, trial), radii, per_radius
            )
            parts[(I, trial)] = _margin_parts(loss, D, theta_dagger, thetas, alpha)

    def pass_counts(I: int) -> np.ndarray:
        counts = np.zeros((A_grid.size, B_grid.size))
        for trial in range(trials):
            s, u, v = parts[(I, trial)]
            m = (
                s[None, None, :]
                - A_grid[:, None, None] * u[None, None, :]
                + B_grid[None, :, None] * v[None, None, :]
            )
            counts += m.min(axis=2) >= 0.0
        return counts / trials

    at_max = pass_counts(I_list[-1])
    feasible_mask = at_max >= min_pass
    if feasible_mask.any():
        ai, bi = max(
            ((i, j) for i in range(A_grid.size) for j in range(B_grid.size) if feasible_mask[i, j]),
            key=lambda ij: (A_grid[ij[0]], -B_grid[ij[1]]),
        )
        params = GradientPacParams(float(A_grid[ai]), float(B_grid[bi]), alpha)
        feasible = True
    else:
        params = GradientPacParams(float(A_grid[0]), float(B_grid[-1]), alpha)
        feasible = False

    rates = []
    rows = []
    for I in I_list:
        ok_count = 0
        for trial in range(trials):
            s, u, v = parts[(I, trial)]
            margins = s - params.A * u + params.B * v
            worst = float(margins.min())
            ok = worst >= 0.0
            ok_count += ok
            rows.append((I, trial, worst, ok))
        rates.append((I, ok_count / trials))
    return PacFit(params=params, feasible=feasible, pass_rate_by_I=rates, rows=rows)


# ---------------------------------------------------------------------------
# End-to-end local recovery
# ---------------------------------------------------------------------------


@dataclass
class LocalPacResult:
    I_grid: list[int]
    eps_grid: list[float]
    trials: int
    success: np.ndarray  # (len(I_grid), len(eps_grid)) success rates

    def rate(self, I: int, eps: float) -> float:
        return float(self.success[self.I_grid.index(I), self.eps_grid.index(eps)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["I", "eps", "success_rate"])
            for i, I in enumerate(self.I_grid):
                for j, eps in enumerate(self.eps_grid):
                    w.writerow([str(I), repr(float(eps)), repr(float(self.success[i, j]))])


def check_local_pac(
    loss: LossModel,
    reg: Regularizer,
    honest_targets: Sequence[np.ndarray],
    dataset_factory: DatasetFactory,
    other_datasets: Sequence[Dataset],
    I_grid: Sequence[int],
    eps_grid: Sequence[float],
    trials: int,
    cfg: SolverConfig = DEFAULT_SOLVER,
    seed: int = 0,
) -> LocalPacResult:
    """Success rates for honest users recovering their reference models.

    Honest users come first; `other_datasets` (e.g. an adversarial dataset)
    are appended verbatim and held fixed across trials. One global solve per
    (I, trial); every eps is evaluated on the same solution.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    I_list = [int(I) for I in I_grid]
    eps_list = [float(e) for e in eps_grid]
    H = len(honest_targets)
    success = np.zeros((len(I_list), len(eps_list)))
    for i, I in enumerate(I_list):
        for trial in range(trials):
            datasets = [
                dataset_factory(
                    np.asarray(honest_targets[h], dtype=np.float64),
                    I,
                    substream(seed, "local-pac", I, trial, h),
                )
                for h in range(H)
            ] + list(other_datasets)
            sol = global_minimize(loss, reg, datasets, cfg)
            errs = [
                float(np.linalg.norm(sol.thetas[h] - np.asarray(honest_targets[h])))
                for h in range(H)
            ]
            for j, eps in enumerate(eps_list):
                success[i, j] += all(e <= eps for e in errs)
    success /= trials
    return LocalPacResult(I_grid=I_list, eps_grid=eps_list, trials=trials, success=success)
