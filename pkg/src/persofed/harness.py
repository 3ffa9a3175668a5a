"""Command-line harness for running experiments from JSON configs.

Subcommands:

- simulate        generic federated run (optional model attacker)
- cga             counter-gradient attack run
- equivalence     gradient attack -> model attack -> single-datapoint chain
- poison-lsq      single-datapoint reconstruction for least squares
- poison-logistic multiclass poisoning via the indifference subspace
- pac-check       gradient-growth or local-recovery verification
- byz-metric      deviation/heterogeneity ratio under a poisoning attack

Every command takes --config PATH --out DIR [--seed N] [--quiet] and writes
a run manifest (config echo + effective seed + package version) alongside
its outputs, so a run is reproducible from the manifest alone. Exit codes:
0 on success, 2 for configuration problems, 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import (
    AttackError,
    CounterGradientAttack,
    ModelAttack,
    auto_overweight,
    fabricate_poison_dataset,
    gradient_to_model,
    model_to_single_datapoint,
    poisoned_instance,
    reweight,
)
from .core import Dataset, substream
from .data import (
    dataset_from_csv,
    dataset_to_csv,
    generate_binary_logistic_dataset,
    generate_linear_dataset,
    generate_multiclass_dataset,
    load_idx_images,
    make_queries,
    relabel_shift,
)
from .federation import Experiment, run_experiment, trace_to_csv
from .losses import LossModel
from .pac import check_local_pac, fit_pac_constants
from .regularizers import Regularizer, reg_grad_rho
from .solvers import (
    SolverConfig,
    SolverError,
    global_loss,
    global_minimize,
    minimized_loss_over_others,
    solo_fit,
)


class ConfigError(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(f"config error at {path or '<root>'}: {message}")
        self.path = path


_REQUIRED = object()


def _get(cfg, key, path, default=_REQUIRED, kind=None, choices=None):
    if not isinstance(cfg, dict):
        raise ConfigError(path, f"expected an object, got {type(cfg).__name__}")
    here = f"{path}.{key}" if path else key
    if key not in cfg:
        if default is _REQUIRED:
            raise ConfigError(here, "missing required field")
        return default
    val = cfg[key]
    if kind == "number":
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(here, f"expected a number, got {val!r}")
        val = float(val)
    elif kind == "int":
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(here, f"expected an integer, got {val!r}")
    elif kind == "str":
        if not isinstance(val, str):
            raise ConfigError(here, f"expected a string, got {val!r}")
    elif kind == "bool":
        if not isinstance(val, bool):
            raise ConfigError(here, f"expected a boolean, got {val!r}")
    elif kind == "list":
        if not isinstance(val, list):
            raise ConfigError(here, f"expected a list, got {val!r}")
    elif kind == "dict":
        if not isinstance(val, dict):
            raise ConfigError(here, f"expected an object, got {val!r}")
    if choices is not None and val not in choices:
        raise ConfigError(here, f"expected one of {sorted(choices)}, got {val!r}")
    return val


def _parse_loss(cfg, path="loss") -> LossModel:
    spec = _get(cfg, "loss", "", kind="dict") if path == "loss" else cfg
    try:
        return LossModel(
            kind=_get(spec, "kind", path, kind="str"),
            mu=_get(spec, "mu", path, default=1e-3, kind="number"),
            num_classes=_get(spec, "num_classes", path, default=None),
            feature_dim=_get(spec, "feature_dim", path, default=None),
            aggregation=_get(spec, "aggregation", path, default="sum", kind="str"),
        )
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def _parse_reg(cfg, path="regularizer") -> Regularizer:
    spec = _get(cfg, "regularizer", "", kind="dict")
    try:
        return Regularizer(
            kind=_get(spec, "kind", path, kind="str"),
            lam=_get(spec, "lam", path, kind="number"),
        )
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def _parse_solver(cfg) -> SolverConfig:
    spec = _get(cfg, "solver", "", default={}, kind="dict")
    try:
        return SolverConfig(
            grad_tol=_get(spec, "grad_tol", "solver", default=1e-8, kind="number"),
            max_iters=_get(spec, "max_iters", "solver", default=10_000, kind="int"),
        )
    except ValueError as e:
        raise ConfigError("solver", str(e)) from None


def _parse_theta(spec, dim: int, rng: np.random.Generator, path: str) -> np.ndarray:
    """A model vector: explicit list, or {"random": {"scale": s}}."""
    if isinstance(spec, list):
        if len(spec) != dim:
            raise ConfigError(path, f"expected {dim} coordinates, got {len(spec)}")
        try:
            return np.asarray([float(x) for x in spec], dtype=np.float64)
        except (TypeError, ValueError):
            raise ConfigError(path, "coordinates must be numbers") from None
    if isinstance(spec, dict) and "random" in spec:
        r = _get(spec, "random", path, kind="dict")
        scale = _get(r, "scale", f"{path}.random", default=1.0, kind="number")
        return scale * rng.standard_normal(dim)
    raise ConfigError(path, "expected a coordinate list or {'random': {'scale': s}}")


def _parse_dataset(spec, loss: LossModel, seed: int, idx: int, base_dir: Path, path: str) -> Dataset:
    if not isinstance(spec, dict):
        raise ConfigError(path, "expected an object")
    if "csv" in spec:
        rel = _get(spec, "csv", path, kind="str")
        try:
            return dataset_from_csv(base_dir / rel)
        except (OSError, ValueError) as e:
            raise ConfigError(f"{path}.csv", str(e)) from None
    count = _get(spec, "count", path, kind="int")
    if count < 0:
        raise ConfigError(f"{path}.count", "must be >= 0")
    qdist = _get(spec, "query_dist", path, default="gaussian", kind="str",
                 choices={"gaussian", "sphere", "pm"})
    qscale = _get(spec, "query_scale", path, default=1.0, kind="number")
    weight = _get(spec, "weight", path, default=1.0, kind="number")
    dim = loss.feature_dim if loss.kind == "multiclass_logistic" else _get(
        spec, "dim", path, kind="int"
    )
    theta = _parse_theta(
        _get(spec, "theta", path),
        loss.model_dim(dim),
        substream(seed, "user-theta", idx),
        f"{path}.theta",
    )
    rng = substream(seed, "user-data", idx)
    if loss.kind == "least_squares":
        noise = _get(spec, "noise_sigma", path, default=0.0, kind="number")
        return generate_linear_dataset(theta, count, rng, noise, qdist, qscale, weight)
    if loss.kind == "binary_logistic":
        return generate_binary_logistic_dataset(theta, count, rng, qdist, qscale, weight)
    label_mode = _get(spec, "label_mode", path, default="sample", kind="str",
                      choices={"sample", "argmax"})
    return generate_multiclass_dataset(loss, theta, count, rng, qdist, qscale, weight, label_mode)


def _parse_users(cfg, loss, seed, base_dir) -> tuple[list[Dataset], list[np.ndarray | None]]:
    users = _get(cfg, "users", "", kind="list")
    if not users:
        raise ConfigError("users", "need at least one honest user")
    datasets, targets = [], []
    for i, u in enumerate(users):
        spec = _get(u, "data", f"users[{i}]", kind="dict")
        datasets.append(_parse_dataset(spec, loss, seed, i, base_dir, f"users[{i}].data"))
        targets.append(None)
    return datasets, targets


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    return obj


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_manifest(out: Path, command: str, cfg: dict, seed: int) -> None:
    _write_json(
        out / "manifest.json",
        {"command": command, "config": cfg, "seed": seed, "version": __version__},
    )


def byz_metric(rho: np.ndarray, declared_models: list[np.ndarray]) -> tuple[float, bool]:
    """Squared deviation from the declared-honest mean over their squared
    heterogeneity diameter. Identical declared models have zero diameter:
    the ratio is infinite and flagged degenerate."""
    if len(declared_models) < 2:
        raise ValueError("need at least two declared honest models")
    models = [np.asarray(m, dtype=np.float64) for m in declared_models]
    mean = np.mean(models, axis=0)
    dev = float(np.sum((np.asarray(rho, dtype=np.float64) - mean) ** 2))
    het = max(
        float(np.sum((a - b) ** 2)) for i, a in enumerate(models) for b in models[i + 1:]
    )
    if het == 0.0:
        return float("inf"), True
    return dev / het, False


# ---------------------------------------------------------------------------
# Subcommand runners (each returns the summary dict it wrote)
# ---------------------------------------------------------------------------


def _resolve_target(cfg, key, dim, seed, rho0, path) -> np.ndarray | None:
    spec = cfg.get(key)
    if spec is None:
        return None
    if isinstance(spec, dict) and "distance" in spec:
        d = _get(spec, "distance", path, kind="number")
        u = substream(seed, "target").standard_normal(dim)
        u /= np.linalg.norm(u)
        base = np.zeros(dim) if rho0 is None else rho0
        return base + d * u
    return _parse_theta(spec, dim, substream(seed, "target"), path)


def _eval_queries(cfg, loss, seed):
    spec = cfg.get("eval")
    if spec is None:
        return None
    count = _get(spec, "count", "eval", kind="int")
    qscale = _get(spec, "query_scale", "eval", default=1.0, kind="number")
    qdist = _get(spec, "query_dist", "eval", default="gaussian", kind="str",
                 choices={"gaussian", "sphere", "pm"})
    dim = loss.feature_dim if loss.kind == "multiclass_logistic" else _get(
        spec, "dim", "eval", kind="int"
    )
    return make_queries(dim, count, substream(seed, "eval"), qdist, qscale)


def _experiment_common(cfg, seed, base_dir):
    loss = _parse_loss(cfg)
    reg = _parse_reg(cfg)
    solver = _parse_solver(cfg)
    datasets, _ = _parse_users(cfg, loss, seed, base_dir)
    rounds = _get(cfg, "rounds", "", kind="int")
    if rounds < 0:
        raise ConfigError("rounds", "must be >= 0")
    eta = cfg.get("eta", "auto")
    if isinstance(eta, list):
        eta = [float(e) for e in eta]
    elif not (eta == "auto" or isinstance(eta, (int, float))):
        raise ConfigError("eta", "expected a number, a schedule list, or 'auto'")
    dim = loss.model_dim(datasets[0].dim)
    rho0 = cfg.get("rho0")
    if rho0 is not None:
        rho0 = _parse_theta(rho0, dim, substream(seed, "rho0"), "rho0")
    honest_mode = _get(cfg, "honest_mode", "", default="full_opt", kind="str",
                       choices={"full_opt", "one_step"})
    local_step = _get(cfg, "local_step", "", default=None)
    return loss, reg, solver, datasets, rounds, eta, dim, rho0, honest_mode, local_step


def run_simulate(cfg: dict, out: Path, seed: int, base_dir: Path, quiet: bool) -> dict:
    loss, reg, solver, datasets, rounds, eta, dim, rho0, mode, lstep = _experiment_common(
        cfg, seed, base_dir
    )
    attacker = attacker_idx = None
    spec = cfg.get("attacker")
    if spec is not None:
        kind = _get(spec, "kind", "attacker", kind="str", choices={"model"})
        model = _parse_theta(
            _get(spec, "model", "attacker"), dim, substream(seed, "attacker-model"),
            "attacker.model",
        )
        attacker = ModelAttack(model, reg)
        attacker_idx = len(datasets)
        datasets = datasets + [Dataset.empty(datasets[0].dim)]
    target = _resolve_target(cfg, "target", dim, seed, rho0, "target")
    exp = Experiment(
        loss=loss, reg=reg, datasets=datasets, rounds=rounds, eta=eta, rho0=rho0,
        attacker_idx=attacker_idx, attacker=attacker, honest_mode=mode, local_step=lstep,
        solver=solver, target=target, eval_queries=_eval_queries(cfg, loss, seed),
    )
    res = run_experiment(exp)
    include_rho = bool(_get(cfg.get("trace", {}), "include_rho", "trace", default=False))
    trace_to_csv(res.traces, out / "trace.csv", include_rho=include_rho)
    summary = {
        "rho": res.rho,
        "eta": res.eta,
        "final_loss": global_loss(loss, reg, res.rho, res.thetas, datasets),
        "rejected_total": int(sum(t.rejected_count for t in res.traces)),
        "final_target_dist": (
            None if target is None else float(np.linalg.norm(res.rho - target))
        ),
    }
    if "user_targets" in cfg:
        specs = _get(cfg, "user_targets", "", kind="list")
        if len(specs) != len(cfg["users"]):
            raise ConfigError("user_targets", "must match the number of users")
        dists = []
        for i, s in enumerate(specs):
            t = _parse_theta(s, dim, substream(seed, "user-theta", i), f"user_targets[{i}]")
            dists.append(float(np.linalg.norm(res.thetas[i] - t)))
        summary["local_dists"] = dists
    _write_json(out / "summary.json", summary)
    if not quiet:
        print(f"simulate: {rounds} rounds, final loss {summary['final_loss']:.6g}")
    return summary


def _cga_setup(cfg, seed, base_dir):
    loss, reg, solver, datasets, rounds, eta, dim, rho0, mode, lstep = _experiment_common(
        cfg, seed, base_dir
    )
    atk_cfg = _get(cfg, "attack", "", kind="dict")
    variant = _get(atk_cfg, "variant", "attack", default="global", kind="str",
                   choices={"global", "local"})
    target = _resolve_target(atk_cfg, "target", dim, seed, rho0, "attack.target")
    if target is None:
        raise ConfigError("attack.target", "missing required field")
    num_users = len(datasets) + 1
    try:
        attacker = CounterGradientAttack(
            target, reg, variant=variant, num_users=num_users,
            stab_tol=_get(atk_cfg, "stab_tol", "attack", default=1e-9, kind="number"),
            stab_rounds=_get(atk_cfg, "stab_rounds", "attack", default=10, kind="int"),
        )
    except AttackError as e:
        raise ConfigError("attack", str(e)) from None
    datasets = datasets + [Dataset.empty(datasets[0].dim)]
    exp = Experiment(
        loss=loss, reg=reg, datasets=datasets, rounds=rounds, eta=eta, rho0=rho0,
        attacker_idx=len(datasets) - 1, attacker=attacker, honest_mode=mode,
        local_step=lstep, solver=solver, target=target,
        eval_queries=_eval_queries(cfg, loss, seed),
    )
    return exp, attacker, target


def _u_sequence(traces, rho_final):
    rhos = [t.rho for t in traces] + [rho_final]
    return [float(np.linalg.norm(b - a)) for a, b in zip(rhos, rhos[1:])]


def run_cga(cfg: dict, out: Path, seed: int, base_dir: Path, quiet: bool) -> dict:
    exp, attacker, target = _cga_setup(cfg, seed, base_dir)
    res = run_experiment(exp)
    include_rho = bool(_get(cfg.get("trace", {}), "include_rho", "trace", default=False))
    trace_to_csv(res.traces, out / "trace.csv", include_rho=include_rho)
    honest = [th for n, th in enumerate(res.thetas) if n != exp.attacker_idx]
    avg_local = np.mean(honest, axis=0)
    summary = {
        "final_dist": float(np.linalg.norm(res.rho - target)),
        "avg_local_model_dist": float(np.linalg.norm(avg_local - target)),
        "g_inf": attacker.stabilized_report,
        "g_last": res.traces[-1].reports[exp.attacker_idx] if res.traces else None,
        "stabilized": attacker.stabilized_report is not None,
        "eta": res.eta,
        "rejected_total": int(sum(t.rejected_count for t in res.traces)),
        "u": _u_sequence(res.traces, res.rho),
        "rho": res.rho,
        "target": target,
    }
    _write_json(out / "summary.json", summary)
    if not quiet:
        print(
            f"cga[{attacker.variant}]: final dist {summary['final_dist']:.3e}, "
            f"stabilized={summary['stabilized']}"
        )
    return summary


def run_equivalence(cfg: dict, out: Path, seed: int, base_dir: Path, quiet: bool) -> dict:
    exp, attacker, target = _cga_setup(cfg, seed, base_dir)
    if exp.loss.kind != "least_squares" or exp.reg.kind != "l2_squared":
        raise ConfigError(
            "loss", "the equivalence chain needs least_squares with the l2_squared regularizer"
        )
    res = run_experiment(exp)
    trace_to_csv(res.traces, out / "cga_trace.csv")
    g_inf = attacker.stabilized_report
    stabilized = g_inf is not None
    if g_inf is None:
        g_inf = res.traces[-1].reports[exp.attacker_idx]
    model = gradient_to_model(g_inf, target, exp.reg)
    _, env_grad = minimized_loss_over_others(
        exp.loss, exp.reg, exp.datasets, exp.attacker_idx, target, exp.solver
    )
    grad_at_target = float(
        np.linalg.norm(env_grad + reg_grad_rho(exp.reg, target, model))
    )
    model_exp = Experiment(
        loss=exp.loss, reg=exp.reg, datasets=exp.datasets, rounds=exp.rounds, eta=exp.eta,
        rho0=exp.rho0, attacker_idx=exp.attacker_idx, attacker=ModelAttack(model, exp.reg),
        solver=exp.solver, target=target,
    )
    model_res = run_experiment(model_exp)
    trace_to_csv(model_res.traces, out / "model_trace.csv")
    att = model_to_single_datapoint(
        exp.loss, exp.reg, exp.datasets, exp.attacker_idx, target, exp.solver
    )
    rho_poison = None
    if att.status == "ok":
        poisoned = poisoned_instance(
            exp.datasets, exp.attacker_idx, Dataset.from_points([att.point])
        )
        dataset_to_csv(poisoned[exp.attacker_idx], out / "poison_datapoint.csv")
        rho_poison = global_minimize(exp.loss, exp.reg, poisoned, exp.solver).rho
    summary = {
        "target": target,
        "stabilized": stabilized,
        "g_inf": g_inf,
        "model": model,
        "grad_norm_at_target": grad_at_target,
        "dist_cga": float(np.linalg.norm(res.rho - target)),
        "dist_model": float(np.linalg.norm(model_res.rho - target)),
        "dist_poison": (
            None if rho_poison is None else float(np.linalg.norm(rho_poison - target))
        ),
        "model_vs_cga": float(np.linalg.norm(model_res.rho - res.rho)),
        "poison_vs_model": (
            None if rho_poison is None else float(np.linalg.norm(rho_poison - model_res.rho))
        ),
        "poison_status": att.status,
    }
    _write_json(out / "summary.json", summary)
    if not quiet:
        print(
            f"equivalence: cga {summary['dist_cga']:.2e}, model {summary['dist_model']:.2e}, "
            f"poison {summary['dist_poison'] if summary['dist_poison'] is not None else 'n/a'}"
        )
    return summary


def run_poison_lsq(cfg: dict, out: Path, seed: int, base_dir: Path, quiet: bool) -> dict:
    loss = _parse_loss(cfg)
    if loss.kind != "least_squares":
        raise ConfigError("loss.kind", "poison-lsq needs least_squares")
    reg = _parse_reg(cfg)
    solver = _parse_solver(cfg)
    datasets, _ = _parse_users(cfg, loss, seed, base_dir)
    dim = loss.model_dim(datasets[0].dim)
    target = _resolve_target(cfg, "target", dim, seed, None, "target")
    if target is None:
        raise ConfigError("target", "missing required field")
    datasets = datasets + [Dataset.empty(datasets[0].dim)]
    attacker_idx = len(datasets) - 1
    att = model_to_single_datapoint(loss, reg, datasets, attacker_idx, target, solver)
    final_dist = None
    if att.status == "ok":
        poison = Dataset.from_points([att.point])
        dataset_to_csv(poison, out / "datapoint.csv")
        sol = global_minimize(loss, reg, poisoned_instance(datasets, attacker_idx, poison), solver)
        final_dist = float(np.linalg.norm(sol.rho - target))
    summary = {
        "status": att.status,
        "target": target,
        "gradient": att.gradient,
        "model": att.model,
        "query": None if att.point is None else att.point.query,
        "answer": None if att.point is None else att.point.answer,
        "query_norm": None if att.point is None else float(np.linalg.norm(att.point.query)),
        "final_dist": final_dist,
    }
    _write_json(out / "report.json", summary)
    if not quiet:
        print(f"poison-lsq: {att.status}, final dist {final_dist}")
    return summary


def run_poison_logistic(cfg: dict, out: Path, seed: int, base_dir: Path, quiet: bool) -> dict:
    loss = _parse_loss(cfg)
    if loss.kind != "multiclass_logistic":
        raise ConfigError("loss.kind", "poison-logistic needs multiclass_logistic")
    reg = _parse_reg(cfg)
    if reg.kind != "l2_squared":
        raise ConfigError("regularizer.kind", "poison-logistic needs l2_squared")
    solver = _parse_solver(cfg)
    hcfg = _get(cfg, "honest", "", kind="dict")
    H = _get(hcfg, "users", "honest", kind="int")
    count = _get(hcfg, "count", "honest", kind="int")
    qscale = _get(hcfg, "query_scale", "honest", default=1.0, kind="number")
    if H < 1 or count < 1:
        raise ConfigError("honest", "need users >= 1 and count >= 1")
    dim = loss.model_dim()
    theta_gt = _parse_theta(
        _get(hcfg, "ground_truth", "honest"), dim, substream(seed, "ground-truth"),
        "honest.ground_truth",
    )
    honest = [
        generate_multiclass_dataset(
            loss, theta_gt, count, substream(seed, "honest", h), query_scale=qscale
        )
        for h in range(H)
    ]
    shift = _get(cfg, "relabel_shift", "", default=1, kind="int")
    pooled = honest[0]
    for D in honest[1:]:
        pooled = pooled.concat(D)
    target = solo_fit(loss, relabel_shift(pooled, loss.num_classes, shift), solver)

    attacker_idx = H
    env_datasets = honest + [Dataset.empty(loss.feature_dim)]
    _, g = minimized_loss_over_others(loss, reg, env_datasets, attacker_idx, target, solver)
    theta_spade = target + g / (2.0 * reg.lam)

    pcfg = _get(cfg, "poison", "", kind="dict")
    pcount = _get(pcfg, "count", "poison", kind="int")
    noise_scale = pcfg.get("noise_scale", "auto")
    if noise_scale != "auto" and (isinstance(noise_scale, bool) or not isinstance(noise_scale, (int, float))):
        raise ConfigError("poison.noise_scale", "expected a number or 'auto'")
    label_mode = _get(pcfg, "label_mode", "poison", default="soft", kind="str",
                      choices={"soft", "sample"})
    clip = _get(pcfg, "clip", "poison", default=False, kind="bool")
    pqscale = _get(pcfg, "query_scale", "poison", default=qscale, kind="number")
    source = None
    if "idx_images" in pcfg:
        images = load_idx_images(base_dir / _get(pcfg, "idx_images", "poison", kind="str"))
        if images.shape[1] != loss.feature_dim:
            raise RuntimeError(
                f"IDX images have {images.shape[1]} pixels, feature_dim is {loss.feature_dim}"
            )
        source = images
    poison = fabricate_poison_dataset(
        loss, theta_spade, pcount, substream(seed, "poison"), source_queries=source,
        alpha=1.0, noise_scale="auto" if noise_scale == "auto" else float(noise_scale),
        label_mode=label_mode, clip=clip, query_scale=pqscale,
    )
    alpha = pcfg.get("alpha", "auto")
    if alpha == "auto":
        factor = _get(pcfg, "alpha_factor", "poison", default=10.0, kind="number")
        alpha = auto_overweight(loss, reg, target, theta_spade, poison, factor)
    elif isinstance(alpha, bool) or not isinstance(alpha, (int, float)):
        raise ConfigError("poison.alpha", "expected a number or 'auto'")
    alpha = float(alpha)
    if alpha != 1.0:
        poison = reweight(poison, alpha)
    dataset_to_csv(poison, out / "poison.csv")

    sol = global_minimize(loss, reg, honest + [poison], solver)
    eval_count = _get(cfg, "eval_count", "", default=2000, kind="int")
    eval_q = make_queries(loss.feature_dim, eval_count, substream(seed, "eval"), scale=qscale)
    want = loss.predict_labels(target, eval_q)
    got = loss.predict_labels(sol.rho, eval_q)
    gt_labels = loss.predict_labels(theta_gt, eval_q)
    summary = {
        "target_accuracy": float(np.mean(want == got)),
        "ground_truth_agreement": float(np.mean(got == gt_labels)),
        "rho_dist_to_target": float(np.linalg.norm(sol.rho - target)),
        "alpha": alpha,
        "poison_count": pcount,
        "honest_count_total": int(H * count),
        "poison_fraction": pcount / (pcount + H * count),
        "clip": clip,
        "attacker_model_dist_to_plan": float(np.linalg.norm(sol.thetas[attacker_idx] - theta_spade)),
    }
    _write_json(out / "report.json", summary)
    if not quiet:
        print(
            f"poison-logistic: target accuracy {summary['target_accuracy']:.3f} "
            f"with {pcount} poison points ({100 * summary['poison_fraction']:.1f}%)"
        )
    return summary


def _pac_factory(loss: LossModel, data_cfg: dict, path: str):
    noise = _get(data_cfg, "noise_sigma", path, default=0.0, kind="number")
    qdist = _get(data_cfg, "query_dist", path, default="gaussian", kind="str",
                 choices={"gaussian", "sphere", "pm"})
    qscale = _get(data_cfg, "query_scale", path, default=1.0, kind="number")
    if loss.kind == "least_squares":
        return lambda theta, I, rng: generate_linear_dataset(theta, I, rng, noise, qdist, qscale)
    if loss.kind == "binary_logistic":
        return lambda theta, I, rng: generate_binary_logistic_dataset(theta, I, rng, qdist, qscale)
    raise ConfigError(path, "PAC checks support least_squares and binary_logistic")


def run_pac_check(cfg: dict, out: Path, seed: int, base_dir: Path, quiet: bool) -> dict:
    mode = _get(cfg, "mode", "", kind="str", choices={"gradient", "local"})
    loss = _parse_loss(cfg)
    solver = _parse_solver(cfg)
    data_cfg = _get(cfg, "data", "", default={}, kind="dict")
    factory = _pac_factory(loss, data_cfg, "data")
    I_grid = _get(cfg, "I_grid", "", kind="list")
    trials = _get(cfg, "trials", "", kind="int")
    if mode == "gradient":
        dim = _get(cfg, "dim", "", kind="int")
        theta = _parse_theta(_get(cfg, "theta", ""), dim, substream(seed, "theta"), "theta")
        fit = fit_pac_constants(
            loss, theta, factory, [int(i) for i in I_grid], trials,
            alpha=_get(cfg, "alpha", "", default=0.75, kind="number"),
            seed=seed,
            radii=tuple(_get(cfg, "radii", "", default=[0.01, 0.1, 1.0, 10.0], kind="list")),
            per_radius=_get(cfg, "per_radius", "", default=16, kind="int"),
            min_pass=_get(cfg, "min_pass", "", default=0.95, kind="number"),
        )
        fit.to_csv(out / "pac_rows.csv")
        summary = {
            "A": fit.params.A,
            "B": fit.params.B,
            "alpha": fit.params.alpha,
            "feasible": fit.feasible,
            "pass_rate_by_I": [[I, r] for I, r in fit.pass_rate_by_I],
        }
        if loss.kind == "least_squares":
            # measured covariance floor: lambda_min of the empirical second
            # moment of the queries, per trial at the largest I
            I_max = max(int(i) for i in I_grid)
            lams = []
            for trial in range(trials):
                D = factory(theta, I_max, substream(seed, "pac-data", I_max, trial))
                Q, w = D.queries(), D.weights()
                cov = (Q.T * w) @ Q / float(w.sum())
                lams.append(float(np.linalg.eigvalsh(cov)[0]))
            summary["lambda_min_mean"] = float(np.mean(lams))
            summary["lambda_min_min"] = float(np.min(lams))
        _write_json(out / "report.json", summary)
        if not quiet:
            print(f"pac-check[gradient]: A={fit.params.A:.4g} B={fit.params.B:.4g} "
                  f"feasible={fit.feasible}")
        return summary
    # local mode
    reg = _parse_reg(cfg)
    hspecs = _get(cfg, "honest_targets", "", kind="list")
    dim = _get(cfg, "dim", "", kind="int")
    targets = [
        _parse_theta(s, loss.model_dim(dim), substream(seed, "honest-target", i),
                     f"honest_targets[{i}]")
        for i, s in enumerate(hspecs)
    ]
    others = []
    adv = cfg.get("adversary")
    if adv is not None:
        theta_adv = _parse_theta(
            _get(adv, "theta", "adversary"), loss.model_dim(dim),
            substream(seed, "adversary-theta"), "adversary.theta",
        )
        adv_factory = _pac_factory(loss, adv, "adversary")
        others.append(
            adv_factory(theta_adv, _get(adv, "count", "adversary", kind="int"),
                        substream(seed, "adversary-data"))
        )
    eps_grid = [float(e) for e in _get(cfg, "eps_grid", "", kind="list")]
    result = check_local_pac(
        loss, reg, targets, factory, others, [int(i) for i in I_grid], eps_grid,
        trials, solver, seed,
    )
    result.to_csv(out / "local_pac.csv")
    violations = {}
    for j, eps in enumerate(eps_grid):
        col = result.success[:, j]
        violations[repr(eps)] = int(np.sum(col[1:] < col[:-1] - 1e-12))
    summary = {
        "I_grid": result.I_grid,
        "eps_grid": result.eps_grid,
        "success": result.success,
        "trend_violations_by_eps": violations,
        "adversary_present": adv is not None,
    }
    _write_json(out / "report.json", summary)
    if not quiet:
        print(f"pac-check[local]: success at largest I = {result.success[-1].tolist()}")
    return summary


def run_byz_metric(cfg: dict, out: Path, seed: int, base_dir: Path, quiet: bool) -> dict:
    loss = _parse_loss(cfg)
    if loss.kind != "least_squares":
        raise ConfigError("loss.kind", "byz-metric needs least_squares")
    reg = _parse_reg(cfg)
    solver = _parse_solver(cfg)
    datasets, _ = _parse_users(cfg, loss, seed, base_dir)
    dim = loss.model_dim(datasets[0].dim)
    target = _parse_theta(
        _get(cfg, "attacker_target", ""), dim, substream(seed, "target"), "attacker_target"
    )
    declared = [
        _parse_theta(s, dim, substream(seed, "declared", i), f"declared_models[{i}]")
        for i, s in enumerate(_get(cfg, "declared_models", "", kind="list"))
    ]
    datasets = datasets + [Dataset.empty(datasets[0].dim)]
    attacker_idx = len(datasets) - 1
    att = model_to_single_datapoint(loss, reg, datasets, attacker_idx, target, solver)
    if att.status == "ok":
        instance = poisoned_instance(datasets, attacker_idx, Dataset.from_points([att.point]))
    else:
        instance = datasets
    sol = global_minimize(loss, reg, instance, solver)
    ratio, degenerate = byz_metric(sol.rho, declared)
    summary = {
        "rho": sol.rho,
        "ratio": None if degenerate else ratio,
        "degenerate": degenerate,
        "attack_status": att.status,
        "target": target,
        "dist_to_target": float(np.linalg.norm(sol.rho - target)),
    }
    _write_json(out / "report.json", summary)
    if not quiet:
        shown = "inf" if degenerate else f"{ratio:.4f}"
        print(f"byz-metric: ratio {shown}")
    return summary


_RUNNERS = {
    "simulate": run_simulate,
    "cga": run_cga,
    "equivalence": run_equivalence,
    "poison-lsq": run_poison_lsq,
    "poison-logistic": run_poison_logistic,
    "pac-check": run_pac_check,
    "byz-metric": run_byz_metric,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="persofed",
        description="Personalized federated learning attack simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg_path = Path(args.config)
        try:
            raw = cfg_path.read_text()
        except OSError as e:
            raise ConfigError("", f"cannot read {cfg_path}: {e}") from None
        try:
            cfg = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError("", f"invalid JSON in {cfg_path}: {e}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("", "top-level config must be an object")
        declared = cfg.get("command")
        if declared is not None and declared != args.command:
            raise ConfigError("command", f"config is for {declared!r}, invoked as {args.command!r}")
        seed = args.seed if args.seed is not None else _get(cfg, "seed", "", default=0, kind="int")
        cfg_echo = dict(cfg)
        cfg_echo["seed"] = seed
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return 2

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _RUNNERS[args.command](cfg, out, seed, cfg_path.parent, args.quiet)
        _write_manifest(out, args.command, cfg_echo, seed)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return 2
    except (SolverError, AttackError, OSError, RuntimeError, ValueError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
