"""Seeded Monte Carlo experiments comparing empirical scaled risks with predictions.

Trials are grouped into fixed-size chunks that depend only on the trial index,
each trial draws from its own counter-based stream keyed by
``(seed, trial, tag)``, and results are reassembled in trial order.  The worker
count therefore only changes scheduling, never the numbers written out.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields, replace
import io
import json
import math
import time

import numpy as np

from .asymptotics import (
    eval_plugin_exact,
    eval_plugin_limit,
    lstd_limit_exact,
    lstd_limit_lower,
    lstd_limit_lower_rederived,
    opt_plugin_limit,
    pg_risk_lower,
    pg_sgd_limit,
)
from .errors import LqrGapError, RankError, ValidationError
from .instances import instance_to_dict, make_eval_instance, make_opt_instance
from .lqr_core import LinearSystem, cost_closed_form, draw_noise, make_rng, simulate
from .matrix_equations import dlyap, spectral_radius
from .policy_eval import lstd_policy_eval, plugin_policy_eval, true_average_cost
from .policy_opt import BaselineKind, fit_dynamics, nominal_controller, reinforce_batch

CSV_COLUMNS = (
    "task", "method", "baseline", "n", "d", "rho", "sigma_w", "sigma_u", "horizon_T",
    "rollouts_N", "trials", "failures", "scaled_risk_mean", "scaled_risk_stderr",
    "prediction", "prediction_kind", "seed",
)

EVAL_METHODS = ("plugin", "lstd")
OPT_METHODS = ("nominal", "reinforce")


@dataclass
class ExperimentConfig:
    task: str
    n: int
    rho: float
    grid: list
    trials: int
    seed: int = 0
    d: int | None = None
    tau: float | None = None
    gamma: float | None = None
    sigma_w: float = 1.0
    sigma_u: float = 1.0
    methods: list | None = None
    baselines: list = field(default_factory=lambda: [b.value for b in BaselineKind])
    horizon_T: int = 10
    instance_seed: int | None = None
    ridge: float = 1e-3
    lstd_lambda: str = "true"
    reinforce_zeta: float | None = None
    sweep_n: list | None = None
    workers: int = 1
    chunk_size: int = 50
    out: str | None = None
    format: str = "csv"
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in ("eval", "opt"):
            raise ValidationError("task must be 'eval' or 'opt'")
        if self.d is None:
            self.d = self.n
        if self.methods is None:
            self.methods = list(EVAL_METHODS if self.task == "eval" else OPT_METHODS)
        if self.task == "eval" and self.tau is None and self.gamma is None:
            self.tau = self.gamma = self.rho / 2.0
        self.validate()

    @classmethod
    def from_mapping(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        missing = {"task", "n", "rho", "grid", "trials"} - set(doc)
        if missing:
            raise ValidationError(f"missing config keys: {sorted(missing)}")
        return cls(**doc)

    def validate(self):
        if self.trials < 1:
            raise ValidationError("trials must be at least 1")
        if not self.grid:
            raise ValidationError("grid must be nonempty")
        if self.n < 1 or not 1 <= self.d <= self.n:
            raise ValidationError("need n >= 1 and 1 <= d <= n")
        if not 0.0 < self.rho < 1.0:
            raise ValidationError(f"rho must lie in (0, 1), got {self.rho}")
        if self.sigma_w <= 0 or self.sigma_u <= 0:
            raise ValidationError("noise scales must be positive")
        if self.workers < 1 or self.chunk_size < 1:
            raise ValidationError("workers and chunk_size must be positive")
        if self.format not in ("csv", "json"):
            raise ValidationError("format must be csv or json")
        allowed = EVAL_METHODS if self.task == "eval" else OPT_METHODS
        for m in self.methods:
            if m not in allowed:
                raise ValidationError(f"method {m!r} not available for task {self.task}")
        for b in self.baselines:
            BaselineKind(b)
        if self.task == "eval":
            if not (0.0 <= self.tau < 1.0 and 0.0 <= self.gamma < 1.0):
                raise ValidationError("tau and gamma must lie in [0, 1)")
            if self.tau + self.gamma > self.rho + 1e-12:
                raise ValidationError("need tau + gamma <= rho")
            if self.lstd_lambda not in ("true", "empirical"):
                raise ValidationError("lstd_lambda must be 'true' or 'empirical'")
            if any(int(T) < 1 for T in self.grid):
                raise ValidationError("horizons must be positive")
        else:
            if self.horizon_T < 4:
                raise ValidationError("horizon_T must be at least 4")
            if any(int(N) < 1 for N in self.grid):
                raise ValidationError("rollout counts must be positive")

    @property
    def resolved_instance_seed(self):
        return self.seed if self.instance_seed is None else self.instance_seed


@dataclass
class ExperimentReport:
    config: dict
    instance: dict
    predictions: dict
    rows: list

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_csv_cell(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self):
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def merge_reports(reports):
    rows = [r for rep in reports for r in rep.rows]
    return ExperimentReport(config=reports[0].config, instance={"sweep": [r.instance for r in reports]},
                            predictions={"sweep": [r.predictions for r in reports]}, rows=rows)


# --------------------------------------------------------------------------
# Instances and predictions
# --------------------------------------------------------------------------

def build_instance(cfg):
    if cfg.task == "eval":
        return make_eval_instance(cfg.n, cfg.d, cfg.tau, cfg.gamma, cfg.resolved_instance_seed, cfg.sigma_w)
    return make_opt_instance(cfg.n, cfg.d, cfg.rho, cfg.resolved_instance_seed, cfg.sigma_w, cfg.sigma_u)


def _predictions(cfg, inst):
    if cfg.task == "eval":
        return {
            "plugin": eval_plugin_limit(inst),
            "plugin_exact": eval_plugin_exact(inst),
            "lstd_lower": lstd_limit_lower(inst),
            "lstd_lower_rederived": lstd_limit_lower_rederived(inst),
            "lstd_exact_trace": lstd_limit_exact(inst),
        }
    T = cfg.horizon_T
    preds = {"nominal": opt_plugin_limit(inst, T)}
    for b in BaselineKind:
        preds[f"reinforce_{b.value}_lower"] = pg_risk_lower(inst, T, b)
    preds["reinforce_advantage_sgd_limit"] = pg_sgd_limit(inst, T)
    return preds


def predict(cfg):
    """All closed-form predictions for the configured instance; no simulation."""
    inst = build_instance(cfg)
    preds = _predictions(cfg, inst)
    return {
        "task": cfg.task,
        "n": cfg.n,
        "d": cfg.d,
        "rho": cfg.rho,
        "sigma_w": cfg.sigma_w,
        "sigma_u": cfg.sigma_u if cfg.task == "opt" else None,
        "horizon_T": cfg.horizon_T if cfg.task == "opt" else None,
        "predictions": {k: v.to_dict() for k, v in preds.items()},
    }


PREDICTION_FOR_METHOD = {
    "plugin": "plugin",
    "lstd": "lstd_exact_trace",
    "nominal": "nominal",
}


# --------------------------------------------------------------------------
# Trial execution
# --------------------------------------------------------------------------

def _chunks(trials, size):
    return [range(a, min(a + size, trials)) for a in range(0, trials, size)]


def _run_chunks(cfg, job):
    chunks = _chunks(cfg.trials, cfg.chunk_size)
    if cfg.workers == 1:
        parts = [job(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(job, chunks))
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


def _summary(values, failed):
    ok = values[~failed]
    count = int(ok.size)
    mean = float(np.mean(ok)) if count else math.nan
    stderr = float(np.std(ok, ddof=1) / math.sqrt(count)) if count > 1 else math.nan
    return mean, stderr, int(failed.sum())


def _row(cfg, method, baseline, horizon, rollouts, values, failed, pred):
    mean, stderr, failures = _summary(values, failed)
    row = {
        "task": cfg.task,
        "method": method,
        "baseline": baseline,
        "n": cfg.n,
        "d": cfg.d,
        "rho": float(cfg.rho),
        "sigma_w": float(cfg.sigma_w),
        "sigma_u": float(cfg.sigma_u) if cfg.task == "opt" else None,
        "horizon_T": int(horizon),
        "rollouts_N": None if rollouts is None else int(rollouts),
        "trials": cfg.trials,
        "failures": failures,
        "scaled_risk_mean": mean,
        "scaled_risk_stderr": stderr,
        "prediction": pred.value,
        "prediction_kind": pred.kind,
        "seed": cfg.seed,
    }
    rel_tol = cfg.tolerances.get("relative")
    if rel_tol is not None and pred.value > 0:
        row["relative_error"] = (mean - pred.value) / pred.value
        row["within_tolerance"] = bool(abs(row["relative_error"]) <= rel_tol)
    return row


def _eval_chunk_job(cfg, inst, T, P_star, lam_star):
    n = inst.n
    plant = LinearSystem(A=inst.L_star, B=np.zeros((n, 1)), sigma_w=inst.sigma_w, sigma_u=0.0)
    K0 = np.zeros((1, n))
    zeta = 0.5 * (spectral_radius(inst.L_star) + 1.0)
    psi = 2.0 * np.linalg.norm(inst.L_star, 2)
    do_plugin = "plugin" in cfg.methods
    do_lstd = "lstd" in cfg.methods

    def job(trials):
        w = np.stack([draw_noise(plant, T, make_rng(cfg.seed, i, f"eval:T={T}"))[0] for i in trials])
        trajs = simulate(plant, K0, w)
        out = {k: np.zeros(len(trials)) for k in ("plugin", "lstd")}
        out.update({f"{k}_failed": np.zeros(len(trials), dtype=bool) for k in ("plugin", "lstd")})
        for j in range(len(trials)):
            traj = trajs[j]
            if do_plugin:
                est = plugin_policy_eval(traj, inst.M, cfg.ridge, zeta, psi)
                out["plugin"][j] = T * np.sum((est.P_hat - P_star) ** 2)
            if do_lstd:
                try:
                    est = lstd_policy_eval(traj, inst.M, lam_star)
                    out["lstd"][j] = T * np.sum((est.P_hat - P_star) ** 2)
                except RankError:
                    out["lstd_failed"][j] = True
        return out

    return job


def run_policy_eval_experiment(cfg):
    """Scaled risks ``T * mean ||P_hat - P||_F^2`` of the plugin and LSTD estimators."""
    if cfg.task != "eval":
        raise ValidationError("run_policy_eval_experiment needs task = eval")
    inst = build_instance(cfg)
    preds = _predictions(cfg, inst)
    P_star = dlyap(inst.L_star, inst.M).P
    lam_star = true_average_cost(inst) if cfg.lstd_lambda == "true" else None
    rows = []
    for T in cfg.grid:
        T = int(T)
        start = time.perf_counter()
        res = _run_chunks(cfg, _eval_chunk_job(cfg, inst, T, P_star, lam_star))
        elapsed = time.perf_counter() - start
        for method in cfg.methods:
            row = _row(cfg, method, None, T, None, res[method], res[f"{method}_failed"],
                       preds[PREDICTION_FOR_METHOD[method]])
            row["wall_time"] = elapsed
            rows.append(row)
    return ExperimentReport(config=asdict(cfg), instance=instance_to_dict(inst),
                            predictions={k: v.to_dict() for k, v in preds.items()}, rows=rows)


def _opt_thresholds(inst):
    A, B = inst.system.A, inst.system.B
    sv = np.linalg.svd(B, compute_uv=False)
    return dict(varrho=0.5 * (spectral_radius(A) + 1.0), zeta=2.0 * np.linalg.norm(A, 2),
                psi=2.0 * sv[0], gamma=0.5 * sv[-1])


def _nominal_chunk_job(cfg, inst, N):
    sys = inst.system
    T = cfg.horizon_T
    K0 = np.zeros((sys.d, sys.n))
    thresholds = _opt_thresholds(inst)
    J_star = T * sys.sigma_w**2 * sys.n

    def job(trials):
        risk = np.zeros(len(trials))
        failed = np.zeros(len(trials), dtype=bool)
        for j, i in enumerate(trials):
            w, eta = draw_noise(sys, T, make_rng(cfg.seed, i, f"nominal:N={N}"), batch=(N,), exploring=True)
            fit = fit_dynamics(simulate(sys, K0, w, eta), cfg.ridge)
            try:
                ctrl = nominal_controller(fit, **thresholds)
            except LqrGapError:
                failed[j] = True
                continue
            risk[j] = N * (cost_closed_form(sys, ctrl.K, T) - J_star)
        return {"nominal": risk, "nominal_failed": failed}

    return job


def _reinforce_chunk_job(cfg, inst, N, baseline, zeta):
    sys = inst.system
    T = cfg.horizon_T
    J_star = T * sys.sigma_w**2 * sys.n
    smin = float(np.linalg.svd(sys.B, compute_uv=False)[-1])

    def job(trials):
        rngs = [make_rng(cfg.seed, i, f"reinforce:{baseline}:N={N}") for i in trials]
        K, failed = reinforce_batch(sys, N, T, baseline, zeta, rngs, sigma_min_B=smin)
        risk = N * (cost_closed_form(sys, K, T) - J_star)
        risk = np.where(failed, 0.0, risk)
        return {"risk": risk, "failed": failed}

    return job


def run_policy_opt_experiment(cfg):
    """Scaled risks ``N * mean(J(K_hat) - J*)`` of nominal control and REINFORCE."""
    if cfg.task != "opt":
        raise ValidationError("run_policy_opt_experiment needs task = opt")
    inst = build_instance(cfg)
    preds = _predictions(cfg, inst)
    zeta = cfg.reinforce_zeta
    if zeta is None:
        zeta = 2.0 * np.linalg.norm(inst.K_star, 2)
    T = cfg.horizon_T
    rows = []
    for N in cfg.grid:
        N = int(N)
        for method in cfg.methods:
            if method == "nominal":
                start = time.perf_counter()
                res = _run_chunks(cfg, _nominal_chunk_job(cfg, inst, N))
                row = _row(cfg, "nominal", None, T, N, res["nominal"], res["nominal_failed"], preds["nominal"])
                row["wall_time"] = time.perf_counter() - start
                rows.append(row)
                continue
            for b in cfg.baselines:
                start = time.perf_counter()
                res = _run_chunks(cfg, _reinforce_chunk_job(cfg, inst, N, b, zeta))
                row = _row(cfg, "reinforce", b, T, N, res["risk"], res["failed"],
                           preds[f"reinforce_{b}_lower"])
                row["wall_time"] = time.perf_counter() - start
                rows.append(row)
    return ExperimentReport(config=asdict(cfg), instance=instance_to_dict(inst),
                            predictions={k: v.to_dict() for k, v in preds.items()}, rows=rows)


def run_experiment(cfg):
    if cfg.task == "eval":
        return run_policy_eval_experiment(cfg)
    return run_policy_opt_experiment(cfg)


def run_sweep(cfg):
    """Run the configured task for each dimension in ``sweep_n``."""
    if not cfg.sweep_n:
        raise ValidationError("sweep needs a nonempty sweep_n list")
    reports = []
    for n in cfg.sweep_n:
        d = n if cfg.d == cfg.n or cfg.d > n else cfg.d
        reports.append(run_experiment(replace(cfg, n=int(n), d=int(d), sweep_n=None)))
    return merge_reports(reports)
