"""Quick invariant suites runnable from the command line.

Each check returns (name, passed, detail). None of them needs a fitted model;
``check_results`` additionally re-derives a bench summary from its trial CSVs.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy import stats

from . import filters as flt
from .config import load_config
from .discretize import van_loan
from .filters import GaussianBelief, kf_update
from .lifting import ExponentialBasis, LiftedModel, make_grid, objective
from .sde import make_bessel, make_cubic, make_ou, make_wright_fisher, observe, simulate_em


def _check(name, ok, detail=""):
    return name, bool(ok), detail


def check_density_normalization():
    errs = {}
    for m in (make_cubic(1.0), make_bessel(3, 1.0, 5.0), make_wright_fisher(2.0), make_ou()):
        g = make_grid(m, 1e-4)
        errs[m.name] = abs(float(g.weights.sum()) - 1.0)
    return _check("density integrates to one", max(errs.values()) < 1e-3, json.dumps(errs))


def check_van_loan_scalar():
    a, b, d = -0.7, 0.4, 0.3
    F, Q = van_loan([[a]], [[b]], d)
    f_ref = math.exp(a * d)
    q_ref = b * b * (math.exp(2 * a * d) - 1) / (2 * a)
    err = max(abs(F[0, 0] - f_ref) / f_ref, abs(Q[0, 0] - q_ref) / q_ref)
    return _check("van loan matches scalar closed form", err < 1e-10, f"rel err {err:.2e}")


def check_conjugate_update():
    m0, p0, y, r = 0.3, 0.5, 1.1, 0.2
    post, _ = kf_update(GaussianBelief([m0], [[p0]]), y, np.array([[1.0]]), r)
    mean = (m0 / p0 + y / r) / (1 / p0 + 1 / r)
    var = 1.0 / (1 / p0 + 1 / r)
    err = max(abs(post.mean[0] - mean), abs(post.cov[0, 0] - var))
    return _check("kalman update matches conjugate posterior", err < 1e-12, f"err {err:.2e}")


def check_linear_filters():
    model = make_ou(1.0, 0.5)
    traj = simulate_em(model, 0.2, 1e-3, 5.0, seed=3)
    obs = observe(traj, 0.1, 0.25, seed=4)
    cfg = flt.FilterConfig(sigma_model=0.5)
    ekf = flt.ekf_run(model, obs, 0.2, cfg).estimates
    ukf = flt.ukf_run(model, obs, 0.2, cfg).estimates
    ref = flt.regular_kf_run(model, obs, 0.2, flt.FilterConfig(sigma_model=0.5, linearization_point=0.0))
    err = max(np.max(np.abs(ekf - ref.estimates)), np.max(np.abs(ukf - ref.estimates)))
    return _check("EKF and UKF reduce to the KF on a linear model", err < 1e-6, f"max diff {err:.2e}")


def check_pf_weights():
    model = make_wright_fisher(2.0)
    traj = simulate_em(model, 0.5, 1e-3, 2.0, seed=5)
    obs = observe(traj, 0.1, 0.25, seed=6)
    res = flt.pf_run(model, obs, 0.5, flt.FilterConfig(pf_particles=500), seed=7)
    err = res.extra["weight_norm_error"]
    return _check("particle weights normalized", err <= 1e-12, f"max |sum w - 1| {err:.1e}")


def check_fingerprint():
    base = load_config("ou-smoke")
    same = load_config("ou-smoke")
    changed = load_config("ou-smoke")
    changed.tracking.sigma_y = 0.3
    ok = base.fingerprint() == same.fingerprint() and base.fingerprint() != changed.fingerprint()
    return _check("config fingerprint tracks semantic changes", ok, base.fingerprint())


def check_exact_ou_lift():
    model = make_ou(1.0, 1.0)
    exact = LiftedModel(ExponentialBasis([0.0]), np.array([[-1.0, 0.0], [0.0, 0.0]]),
                        np.array([[0.0, 1.0], [0.0, 0.0]]))
    j = objective(model, exact, make_grid(model))
    return _check("exact OU lift has zero objective", j < 1e-20, f"J={j:.2e}")


def check_stationary_ks(paths: int = 300, horizon: float = 50.0):
    model = make_wright_fisher(2.0)
    rng = np.random.default_rng(11)
    tr = simulate_em(model, np.full(paths, 0.5), 1e-3, horizon, rng=rng)
    d = stats.kstest(tr.states[-1], stats.beta(2.0, 2.0).cdf).statistic
    return _check("Wright-Fisher endpoints follow the Beta law", d < 0.1, f"KS {d:.3f}")


SUITE = (check_density_normalization, check_van_loan_scalar, check_conjugate_update,
         check_linear_filters, check_pf_weights, check_fingerprint, check_exact_ou_lift,
         check_stationary_ks)


def check_results(directory: str | Path):
    """Bookkeeping checks on a finished bench directory."""
    from .bench import FILTERS, rmse_from_series

    directory = Path(directory)
    doc = json.loads((directory / "summary.json").read_text())
    out = []
    worst = 0.0
    per = {k: [] for k in FILTERS}
    for trial in doc["trials"]:
        if trial["failed"]:
            continue
        rec = rmse_from_series(directory / trial["series_path"])
        for k in FILTERS:
            worst = max(worst, abs(rec[k] - trial["rmse"][k]))
            per[k].append(rec[k])
    out.append(_check("trial CSVs reproduce recorded RMSEs", worst < 1e-12, f"max diff {worst:.1e}"))
    worst = 0.0
    for k in FILTERS:
        if per[k]:
            worst = max(worst, abs(float(np.mean(per[k])) - doc["filters"][k]["rmse_mean"]))
    out.append(_check("trial CSVs reproduce mean RMSE", worst < 1e-12, f"max diff {worst:.1e}"))
    return out


def run_suite(results_dir=None):
    out = [fn() for fn in SUITE]
    if results_dir is not None:
        out.extend(check_results(results_dir))
    return out

