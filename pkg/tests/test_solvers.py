"""Local/global solvers against closed forms, grid oracles, and probes."""

import numpy as np
import pytest

from persofed.core import DataPoint, Dataset, substream
from persofed.losses import LossModel, local_loss, local_loss_grad
from persofed.regularizers import Regularizer, reg_grad_rho, reg_value
from persofed.solvers import (
    ConvergenceError,
    DegenerateProblemError,
    SolverConfig,
    estimate_smoothness,
    global_loss,
    global_minimize,
    joint_residual,
    local_argmin,
    minimized_loss_over_others,
    solo_fit,
)

LSQ0 = LossModel(kind="least_squares", mu=0.0)
CFG = SolverConfig()


def one_point(q, a, weight=1.0):
    return Dataset.from_points([DataPoint(query=q, answer=a, weight=weight)])


class TestLocalArgmin:
    def test_hand_case_one_point(self):
        # min_theta 1/2 (theta - 1)^2 + (0 - theta)^2  =>  3 theta = 1
        D = one_point([1.0], 1.0)
        reg = Regularizer(kind="l2_squared", lam=1.0)
        theta = local_argmin(LSQ0, reg, D, np.array([0.0]))
        np.testing.assert_allclose(theta, [1.0 / 3.0], rtol=1e-12)

    def test_matches_hand_built_ridge_system(self):
        rng = substream(21, "ridge")
        loss = LossModel(kind="least_squares", mu=0.01)
        reg = Regularizer(kind="l2_squared", lam=0.7)
        for _ in range(10):
            d = int(rng.integers(1, 5))
            Q = rng.standard_normal((6, d))
            a = rng.standard_normal(6)
            w = rng.uniform(0.5, 2.0, size=6)
            rho = rng.standard_normal(d)
            D = Dataset.from_points(
                [DataPoint(query=Q[i], answer=float(a[i]), weight=float(w[i])) for i in range(6)]
            )
            # stationarity: (Q^T W Q + 2(mu + lam) I) theta = Q^T W a + 2 lam rho
            M = (Q.T * w) @ Q + 2.0 * (loss.mu + reg.lam) * np.eye(d)
            want = np.linalg.solve(M, (Q.T * w) @ a + 2.0 * reg.lam * rho)
            np.testing.assert_allclose(local_argmin(loss, reg, D, rho), want, rtol=1e-10)

    def test_smooth_paths_reach_stationarity(self):
        rng = substream(22, "smooth-paths")
        for kind in ("binary_logistic", "least_squares"):
            loss = LossModel(kind=kind, mu=0.05)
            for regkind in ("l2_squared", "smooth_l2"):
                reg = Regularizer(kind=regkind, lam=0.8)
                pts = [
                    DataPoint(
                        query=rng.standard_normal(3),
                        answer=float(rng.standard_normal()) if kind == "least_squares" else None,
                        label=None if kind == "least_squares" else int(rng.choice([-1, 1])),
                    )
                    for _ in range(8)
                ]
                D = Dataset.from_points(pts)
                rho = rng.standard_normal(3)
                theta = local_argmin(loss, reg, D, rho, CFG)
                resid = local_loss_grad(loss, theta, D) - reg_grad_rho(reg, rho, theta)
                assert np.linalg.norm(resid) <= 10 * CFG.grad_tol

    def test_l2_kink_returns_rho_exactly(self):
        # Data pull at rho smaller than lam: theta = rho is a subgradient zero.
        D = one_point([1.0], 0.1)
        reg = Regularizer(kind="l2", lam=1.0)
        rho = np.array([0.0])
        theta = local_argmin(LSQ0, reg, D, rho)
        assert theta[0] == 0.0

    def test_l2_off_kink_stationarity(self):
        rng = substream(23, "l2-off")
        reg = Regularizer(kind="l2", lam=0.5)
        for kind in ("least_squares", "binary_logistic"):
            loss = LossModel(kind=kind, mu=0.02)
            pts = [
                DataPoint(
                    query=rng.standard_normal(2) + 2.0,
                    answer=5.0 if kind == "least_squares" else None,
                    label=None if kind == "least_squares" else 1,
                )
                for _ in range(6)
            ]
            D = Dataset.from_points(pts)
            rho = np.array([-3.0, -3.0])
            theta = local_argmin(loss, reg, D, rho, CFG)
            delta = theta - rho
            n = np.linalg.norm(delta)
            assert n > 0  # off the kink
            resid = local_loss_grad(loss, theta, D) + reg.lam * delta / n
            assert np.linalg.norm(resid) <= 10 * CFG.grad_tol

    def test_heavy_weight_plateau_still_converges(self):
        # At heavily weighted optima the Newton decrease falls below the
        # floating-point resolution of the objective value; the line search
        # must not diverge into ConvergenceError there.
        rng = substream(24, "plateau")
        Q = rng.standard_normal((300, 3))
        labels = np.where(rng.random(300) < 0.5, 1, -1)  # pure noise labels
        pts = [DataPoint(query=Q[i], label=int(labels[i]), weight=200.0) for i in range(300)]
        D = Dataset.from_points(pts)
        loss = LossModel(kind="binary_logistic", mu=1e-3)
        reg = Regularizer(kind="l2_squared", lam=1.0)
        rho = np.full(3, 2.0)
        theta = local_argmin(loss, reg, D, rho, SolverConfig(grad_tol=1e-8))
        resid = local_loss_grad(loss, theta, D) - reg_grad_rho(reg, rho, theta)
        assert local_loss(loss, theta, D) > 1e4  # the plateau regime is real
        assert np.linalg.norm(resid) <= 1e-7


class TestSoloFit:
    def test_noise_free_recovery(self):
        rng = substream(25, "solo")
        theta_star = rng.standard_normal(4)
        Q = rng.standard_normal((40, 4))
        D = Dataset.from_points(
            [DataPoint(query=Q[i], answer=float(Q[i] @ theta_star)) for i in range(40)]
        )
        fit = solo_fit(LSQ0, D)
        np.testing.assert_allclose(fit, theta_star, atol=1e-4)

    def test_empty_dataset_fits_zero(self):
        np.testing.assert_array_equal(solo_fit(LSQ0, Dataset.empty(3)), np.zeros(3))


class TestGlobalMinimize:
    def test_single_user_hand_case(self):
        # One user, one exact point: rho = theta = 1 kills both terms.
        D = one_point([1.0], 1.0)
        reg = Regularizer(kind="l2_squared", lam=0.6)
        sol = global_minimize(LSQ0, reg, [D])
        np.testing.assert_allclose(sol.rho, [1.0], atol=1e-10)
        np.testing.assert_allclose(sol.thetas[0], [1.0], atol=1e-10)
        assert sol.value == pytest.approx(0.0, abs=1e-12)
        assert sol.method == "closed_form"

    def test_perturbation_probes_never_improve(self):
        # Convexity makes first-order points global; probe deterministically.
        rng = substream(26, "probes")
        cases = [
            ("least_squares", "l2_squared", "sum"),
            ("least_squares", "l2", "sum"),
            ("least_squares", "smooth_l2", "sum"),
            ("binary_logistic", "l2_squared", "mean"),
            ("binary_logistic", "smooth_l2", "sum"),
            ("binary_logistic", "l2", "sum"),
        ]
        for kind, regkind, agg in cases:
            loss = LossModel(kind=kind, mu=0.05, aggregation=agg)
            reg = Regularizer(kind=regkind, lam=0.7)
            datasets = []
            for _ in range(2):
                pts = [
                    DataPoint(
                        query=rng.standard_normal(2),
                        answer=float(rng.standard_normal()) if kind == "least_squares" else None,
                        label=None if kind == "least_squares" else int(rng.choice([-1, 1])),
                    )
                    for _ in range(5)
                ]
                datasets.append(Dataset.from_points(pts))
            sol = global_minimize(loss, reg, datasets)
            base = global_loss(loss, reg, sol.rho, sol.thetas, datasets)
            assert sol.value == pytest.approx(base, rel=1e-12)
            for _ in range(20):
                step = 10.0 ** rng.uniform(-4, -1)
                drho = step * rng.standard_normal(2)
                dthetas = [step * rng.standard_normal(2) for _ in datasets]
                perturbed = global_loss(
                    loss, reg, sol.rho + drho,
                    [t + dt for t, dt in zip(sol.thetas, dthetas)], datasets,
                )
                assert perturbed >= base - 1e-9 * (1.0 + abs(base))

    def test_two_stage_grid_oracle_smooth_l2(self):
        # Independent oracle: exhaustive grid over (rho, theta), refined once.
        loss = LossModel(kind="least_squares", mu=0.1)
        reg = Regularizer(kind="smooth_l2", lam=0.9)
        D = one_point([1.0], 2.0)

        def value(rho, theta):
            r = theta[0] - 2.0
            return (
                0.1 * theta[0] ** 2
                + 0.5 * r * r
                + 0.9 * np.sqrt(1.0 + (rho[0] - theta[0]) ** 2)
            )

        lo, hi, steps = -3.0, 3.0, 241
        best = (np.inf, None, None)
        for _ in range(3):
            rr = np.linspace(lo, hi, steps)
            tt = np.linspace(lo, hi, steps)
            R, T = np.meshgrid(rr, tt, indexing="ij")
            V = 0.1 * T**2 + 0.5 * (T - 2.0) ** 2 + 0.9 * np.sqrt(1.0 + (R - T) ** 2)
            i, j = np.unravel_index(np.argmin(V), V.shape)
            best = (float(V[i, j]), float(rr[i]), float(tt[j]))
            span = (hi - lo) / 8.0
            lo, hi = best[1] - span, best[1] + span
        sol = global_minimize(loss, reg, [D])
        assert sol.value <= best[0] + 1e-6
        assert abs(sol.value - best[0]) <= 2e-3

    def test_pinned_user_stays_fixed(self):
        rng = substream(27, "pinned")
        loss = LossModel(kind="least_squares", mu=0.01)
        reg = Regularizer(kind="l2_squared", lam=1.0)
        D = one_point([1.0, 0.0], 1.0)
        fixed = np.array([5.0, -5.0])
        sol = global_minimize(loss, reg, [D, Dataset.empty(2)], pinned={1: fixed})
        np.testing.assert_array_equal(sol.thetas[1], fixed)
        # rho balances the pull of the pinned model against user 0
        assert sol.residual <= CFG.grad_tol

    def test_degenerate_instance_raises(self):
        reg = Regularizer(kind="l2_squared", lam=1.0)
        with pytest.raises(DegenerateProblemError):
            global_minimize(LSQ0, reg, [Dataset.empty(2), Dataset.empty(2)])

    def test_impossible_budget_raises_convergence_error(self):
        rng = substream(28, "budget")
        loss = LossModel(kind="binary_logistic", mu=0.01)
        reg = Regularizer(kind="smooth_l2", lam=1.0)
        pts = [DataPoint(query=rng.standard_normal(2) + 3.0, label=1) for _ in range(4)]
        with pytest.raises(ConvergenceError):
            global_minimize(
                loss, reg, [Dataset.from_points(pts)], SolverConfig(grad_tol=1e-8, max_iters=1)
            )

    def test_mismatched_dims_rejected(self):
        reg = Regularizer(kind="l2_squared", lam=1.0)
        with pytest.raises(ValueError, match="disagree"):
            global_minimize(LSQ0, reg, [one_point([1.0], 1.0), one_point([1.0, 2.0], 1.0)])


class TestEnvelope:
    def test_value_and_grad_small_instance(self):
        # One other user with a single exact point; everything in closed form:
        # theta*(rho) = (a q + 2 lam rho)/(q^2 + 2 lam) for scalar q.
        loss = LSQ0
        reg = Regularizer(kind="l2_squared", lam=1.0)
        datasets = [Dataset.empty(1), one_point([1.0], 2.0)]
        rho = np.array([0.5])
        theta = (2.0 + 2.0 * 0.5) / 3.0
        want_value = 0.5 * (theta - 2.0) ** 2 + (0.5 - theta) ** 2
        want_grad = 2.0 * (0.5 - theta)
        value, grad = minimized_loss_over_others(loss, reg, datasets, 0, rho)
        assert value == pytest.approx(want_value, rel=1e-12)
        np.testing.assert_allclose(grad, [want_grad], rtol=1e-12)

    def test_exclude_idx_validated(self):
        reg = Regularizer(kind="l2_squared", lam=1.0)
        with pytest.raises(ValueError, match="exclude_idx"):
            minimized_loss_over_others(LSQ0, reg, [one_point([1.0], 1.0)], 3, np.zeros(1))

    def test_smoothness_hand_case(self):
        # Two users each holding the single point (e_1, a): per-user envelope
        # Hessian is 2 lam (I - 2 lam M^-1) with M = diag(3, 2), so the total
        # curvature along e_1 is 2 * 2(1 - 2/3) = 4/3.
        reg = Regularizer(kind="l2_squared", lam=1.0)
        D = one_point([1.0, 0.0], 1.0)
        L = estimate_smoothness(LSQ0, reg, [D, D], np.zeros(2))
        assert L == pytest.approx(4.0 / 3.0, rel=1e-12)

    def test_smoothness_bounded_by_regularizer_curvature(self):
        # The minimized loss inherits the regularizer's smoothness: each
        # user's envelope term can never curve more than R itself does in
        # rho (2 lam for the quadratic, lam for smooth_l2).
        rng = substream(29, "fdsmooth")
        Q = rng.standard_normal((5, 2))
        D = Dataset.from_points(
            [DataPoint(query=Q[i], answer=float(rng.standard_normal())) for i in range(5)]
        )
        closed = estimate_smoothness(
            LSQ0, Regularizer(kind="l2_squared", lam=0.8), [D, D], np.zeros(2)
        )
        assert 0.0 < closed <= 2 * 2.0 * 0.8 * (1.0 + 1e-9)
        via_fd = estimate_smoothness(
            LSQ0, Regularizer(kind="smooth_l2", lam=0.8), [D, D], np.zeros(2)
        )
        assert 0.0 < via_fd <= 2 * 0.8 * (1.0 + 1e-5)

    def test_joint_residual_zero_at_optimum(self):
        rng = substream(30, "resid")
        reg = Regularizer(kind="l2_squared", lam=1.2)
        datasets = [
            Dataset.from_points(
                [DataPoint(query=rng.standard_normal(2), answer=float(rng.standard_normal()))
                 for _ in range(4)]
            )
            for _ in range(3)
        ]
        sol = global_minimize(LSQ0, reg, datasets)
        assert joint_residual(LSQ0, reg, sol.rho, sol.thetas, datasets) <= CFG.grad_tol


class TestSolverConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(grad_tol=0.0)
        with pytest.raises(ValueError):
            SolverConfig(max_iters=0)
