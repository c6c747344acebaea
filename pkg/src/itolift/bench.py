"""Experiment orchestration: fitting, seeded trial batches and result files.

Every trial i uses the seed ``base_seed + i``. Its SeedSequence is split into
four independent streams (initial state, truth path, observation noise and
particle filter) so each piece can be reproduced on its own.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import filters as flt
from .config import ExperimentConfig
from .discretize import build_discrete, van_loan
from .errors import InvalidInputError, LiftError, OptimizationFailedError
from .lifting import LiftedModel, WeightedResiduals, lift, make_grid
from .optimize import FitReport, fit
from .sde import observe, sample_stationary, simulate_em

log = logging.getLogger(__name__)

FILTERS = ("lifted_kf", "ekf", "ukf", "pf", "regular_kf")
LABELS = {
    "lifted_kf": "Lifted-KF",
    "ekf": "EKF",
    "ukf": "UKF",
    "pf": "Particle Filter",
    "regular_kf": "Regular KF",
}
MAX_FAILURE_FRACTION = 0.10


def prepare_output(out: str | Path, overwrite: bool = False) -> Path:
    """Create ``out`` or check that it is safe to write into."""
    out = Path(out)
    if out.exists():
        if not out.is_dir():
            raise InvalidInputError(f"{out} exists and is not a directory")
        if any(out.iterdir()) and not overwrite:
            raise InvalidInputError(f"{out} is not empty; pass --overwrite to replace its contents")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- lifting

def fit_config(config: ExperimentConfig) -> tuple[FitReport, object]:
    model = config.lift_model()
    bounds = tuple(config.lifting.bounds) if config.lifting.bounds else None
    grid = make_grid(model, config.lifting.dx, bounds)
    return fit(model, config.lifting.M, grid, config.lifting.optimizer), grid


def model_bundle(config: ExperimentConfig, report: FitReport) -> dict:
    return {
        "process": config.to_dict()["process"],
        "sigma_model": config.tracking.sigma_model,
        "lifting": config.to_dict()["lifting"],
        "fingerprint": config.fingerprint(),
        "lifted": report.lifted.to_dict(),
        "fit": report.to_dict(),
    }


def run_lift(config: ExperimentConfig, out: str | Path | None = None, overwrite: bool = False) -> dict:
    """Fit the lifted model; with ``out`` given, write ``model.json`` there.

    On optimizer failure the diagnostics go to ``fit_error.json`` before the
    error is re-raised.
    """
    target = prepare_output(out, overwrite) if out is not None else None
    try:
        report, _ = fit_config(config)
    except OptimizationFailedError as exc:
        if target is not None:
            write_json(target / "fit_error.json", {"error": str(exc), "diagnostics": exc.diagnostics})
        raise
    bundle = model_bundle(config, report)
    if target is not None:
        write_json(target / "model.json", bundle)
    return bundle


def load_bundle(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "model.json"
    if not path.is_file():
        raise InvalidInputError(f"no lifted model at {path}")
    return json.loads(path.read_text())


def check_bundle(config: ExperimentConfig, bundle: dict) -> LiftedModel:
    if bundle.get("process") != config.to_dict()["process"] or \
            not math.isclose(bundle.get("sigma_model", float("nan")), config.tracking.sigma_model):
        raise InvalidInputError("lifted model was fitted for a different process configuration")
    return LiftedModel.from_dict(bundle["lifted"])


# ---------------------------------------------------------------- trials

@dataclass
class TrialRecord:
    trial_index: int
    seed: int
    rmse: dict = field(default_factory=dict)
    divergences: dict = field(default_factory=dict)
    failed: bool = False
    error: str | None = None
    series_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "seed": self.seed,
            "rmse": {k: float(v) for k, v in self.rmse.items()},
            "divergences": dict(self.divergences),
            "failed": self.failed,
            "error": self.error,
            "series_path": self.series_path,
        }


def trial_streams(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def simulate_trial(config: ExperimentConfig, seed: int):
    """Truth path and shared observations for one trial."""
    tc = config.tracking
    truth_model = config.true_model()
    r_x0, r_path, r_obs, _ = trial_streams(seed)
    x0 = sample_stationary(truth_model, rng=r_x0)
    traj = simulate_em(truth_model, x0, tc.dt, tc.T, seed=seed, rng=r_path)
    obs = observe(traj, tc.delta, tc.sigma_y, rng=r_obs)
    return x0, traj, obs


def run_trial(config: ExperimentConfig, lifted: LiftedModel, index: int):
    """Run all five filters on one trial; returns the record and the series table."""
    tc = config.tracking
    seed = tc.base_seed + index
    record = TrialRecord(index, seed)
    x0, traj, obs = simulate_trial(config, seed)
    truth = traj.states[::obs.stride]
    model = config.lift_model()
    cfg = flt.FilterConfig(sigma_model=tc.sigma_model, prior_var=tc.prior_var,
                           pf_particles=tc.pf_particles, dt=tc.dt)
    pf_rng = trial_streams(seed)[3]
    series = {"t": obs.times, "truth": truth, "y": obs.values}
    try:
        discrete = build_discrete(lifted, tc.delta, tc.sigma_y)
        results = [
            flt.lifted_kf_run(lifted, discrete, obs, x0, tc.prior_var),
            flt.ekf_run(model, obs, x0, cfg),
            flt.ukf_run(model, obs, x0, cfg),
            flt.pf_run(model, obs, x0, cfg, rng=pf_rng),
            flt.regular_kf_run(model, obs, x0, cfg),
        ]
    except (LiftError, ArithmeticError, np.linalg.LinAlgError) as exc:
        record.failed = True
        record.error = f"{type(exc).__name__}: {exc}"
        log.warning("trial %d failed: %s", index, record.error)
        return record, None
    for res in results:
        record.rmse[res.name] = flt.rmse(res.estimates, truth)
        record.divergences[res.name] = int(res.divergences)
        series[res.name] = res.estimates
    bad = [k for k, v in record.rmse.items() if not math.isfinite(v)]
    if bad:
        record.failed = True
        record.error = f"non-finite RMSE for {', '.join(bad)}"
        return record, None
    return record, series


def _trial_job(args):
    config, lifted_doc, index = args
    return run_trial(config, LiftedModel.from_dict(lifted_doc), index)


def run_trials(config: ExperimentConfig, lifted: LiftedModel, indices=None):
    """Ordered list of (record, series) pairs, in parallel when workers > 1."""
    if indices is None:
        indices = range(config.tracking.n_trials)
    jobs = [(config, lifted.to_dict(), i) for i in indices]
    if config.tracking.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.tracking.workers) as pool:
            return list(pool.map(_trial_job, jobs))
    return [run_trial(config, lifted, i) for i in indices]


def write_series(path: Path, series: dict) -> None:
    cols = ["t", "truth", "y", *FILTERS]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in zip(*(series[c] for c in cols)):
            writer.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------- summary

@dataclass
class BenchSummary:
    rmse_mean: dict
    rmse_std: dict
    n_trials: int
    n_completed: int
    failed_trials: list
    fingerprint: str
    std_defined: bool = True
    divergences: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return len(self.failed_trials) <= MAX_FAILURE_FRACTION * self.n_trials and self.n_completed > 0

    def to_dict(self) -> dict:
        return {
            "filters": {
                k: {"label": LABELS[k], "rmse_mean": self.rmse_mean[k], "rmse_std": self.rmse_std[k]}
                for k in FILTERS if k in self.rmse_mean
            },
            "n_trials": self.n_trials,
            "n_completed": self.n_completed,
            "n_failed": len(self.failed_trials),
            "failed_trials": list(self.failed_trials),
            "valid": self.valid,
            "std_defined": self.std_defined,
            "divergences": dict(self.divergences),
            "fingerprint": self.fingerprint,
        }


def summarize(records, fingerprint: str) -> BenchSummary:
    ok = [r for r in records if not r.failed]
    failed = [r.trial_index for r in records if r.failed]
    mean, std, div = {}, {}, {}
    for k in FILTERS:
        vals = np.array([r.rmse[k] for r in ok], dtype=float)
        if vals.size:
            mean[k] = float(vals.mean())
            std[k] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        div[k] = int(sum(r.divergences.get(k, 0) for r in ok))
    return BenchSummary(mean, std, len(records), len(ok), failed, fingerprint,
                        std_defined=len(ok) > 1, divergences=div)


def render_table(summary: BenchSummary, title: str = "") -> str:
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'Method':<16}{'RMSE (mean)':>14}{'RMSE (std)':>14}")
    for k in FILTERS:
        if k in summary.rmse_mean:
            std = f"{summary.rmse_std[k]:14.6f}" if summary.std_defined else f"{'n/a':>14}"
            lines.append(f"{LABELS[k]:<16}{summary.rmse_mean[k]:14.6f}{std}")
    lines.append(f"trials: {summary.n_completed}/{summary.n_trials} completed"
                 + ("" if summary.valid else "  (INVALID: too many failed trials)"))
    return "\n".join(lines) + "\n"


def run_bench(config: ExperimentConfig, lifted: LiftedModel, out: str | Path,
              overwrite: bool = False, bundle: dict | None = None) -> BenchSummary:
    """Run every trial, write per-trial CSVs, ``summary.json`` and ``table.txt``."""
    target = prepare_output(out, overwrite)
    if bundle is not None:
        write_json(target / "model.json", bundle)
    pairs = run_trials(config, lifted)
    records = []
    for record, series in pairs:
        if series is not None:
            name = f"trial_{record.trial_index}.csv"
            write_series(target / name, series)
            record.series_path = name
        records.append(record)
    summary = summarize(records, config.fingerprint())
    doc = summary.to_dict()
    doc["config"] = config.to_dict()
    doc["config"].pop("output")
    doc["config"]["tracking"].pop("workers")
    doc["trials"] = [r.to_dict() for r in records]
    write_json(target / "summary.json", doc)
    (target / "table.txt").write_text(render_table(summary, f"{config.name} ({config.process.process})"))
    if "png" in config.output.formats:
        from .plotting import plot_bench
        plot_bench(summary.to_dict(), target / "table.png")
    return summary


def rmse_from_series(path: Path) -> dict:
    """Recompute per-filter RMSEs from a written trial CSV."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {k: float(np.sqrt(np.mean((data[k] - data["truth"]) ** 2))) for k in FILTERS}


# ---------------------------------------------------------------- figure data

def density_data(config: ExperimentConfig, lifted: LiftedModel) -> dict:
    """Grid values of the stationary density and the weighted residual density."""
    model = config.lift_model()
    bounds = tuple(config.lifting.bounds) if config.lifting.bounds else None
    grid = make_grid(model, config.lifting.dx, bounds)
    terms = WeightedResiduals(model, grid)
    return {
        "x": grid.points,
        "rho": model.stationary_density(grid.points),
        "weighted_residual": terms.pointwise(lifted.exponents, lifted.A, lifted.B),
        "J_value": terms.value(lifted.exponents, lifted.A, lifted.B),
    }


def simulate_lifted(lifted: LiftedModel, x0: float, dt: float, T: float, rng) -> np.ndarray:
    """Anchor coordinate of the lifted linear SDE, stepped exactly at ``dt``."""
    F, Q = van_loan(lifted.A, lifted.B, dt)
    w, V = np.linalg.eigh(Q)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    k = int(round(T / dt))
    u = lift(lifted.basis, float(x0))
    out = np.empty(k + 1)
    out[0] = u[0]
    for i in range(1, k + 1):
        u = F @ u + root @ rng.standard_normal(u.size)
        out[i] = u[0]
    return out


def overlay_data(config: ExperimentConfig, lifted: LiftedModel, n_paths: int = 5,
                 horizon: float = 10.0, seed: int | None = None) -> dict:
    """``n_paths`` original and ``n_paths`` lifted trajectories from a common start."""
    tc = config.tracking
    model = config.lift_model()
    seed = tc.base_seed if seed is None else seed
    r_x0, r_orig, r_lift = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    x0 = tc.overlay_x0 if tc.overlay_x0 is not None else sample_stationary(model, rng=r_x0)
    orig = simulate_em(model, np.full(n_paths, float(x0)), tc.dt, horizon, rng=r_orig)
    data = {"t": orig.times}
    for j in range(n_paths):
        data[f"original_{j}"] = orig.states[:, j]
    for j in range(n_paths):
        data[f"lifted_{j}"] = simulate_lifted(lifted, x0, tc.dt, horizon, r_lift)
    return data


def timeseries_data(config: ExperimentConfig, lifted: LiftedModel) -> dict:
    """Per-time RMSE across trials for every filter (failed trials excluded)."""
    pairs = run_trials(config, lifted)
    ok = [s for _, s in pairs if s is not None]
    if not ok:
        raise InvalidInputError("every trial failed; no time series to emit")
    data = {"t": ok[0]["t"]}
    for k in FILTERS:
        err = np.array([s[k] - s["truth"] for s in ok])
        data[k] = np.sqrt(np.mean(err**2, axis=0))
    data["n_trials"] = len(ok)
    return data


def write_columns(path: Path, data: dict) -> None:
    cols = [k for k, v in data.items() if np.ndim(v) == 1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in zip(*(data[c] for c in cols)):
            writer.writerow([repr(float(v)) for v in row])


def emit_figure_data(config: ExperimentConfig, lifted: LiftedModel, out: str | Path,
                     which=("density", "overlay", "timeseries"), overwrite: bool = False) -> dict:
    """Write plot-ready CSV files (and PNG renderings when requested)."""
    target = prepare_output(out, overwrite)
    png = "png" in config.output.formats
    written = {}
    if png:
        from . import plotting
    for kind in which:
        if kind == "density":
            data = density_data(config, lifted)
        elif kind == "overlay":
            data = overlay_data(config, lifted)
        elif kind == "timeseries":
            data = timeseries_data(config, lifted)
        else:
            raise InvalidInputError(f"unknown figure kind {kind!r}")
        path = target / f"figure_{kind}.csv"
        write_columns(path, data)
        written[kind] = path.name
        if png:
            getattr(plotting, f"plot_{kind}")(data, target / f"figure_{kind}.png",
                                              title=f"{config.name}")
    return written
