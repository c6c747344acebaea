"""Acceptance criteria, one test per criterion, at the documented tolerances.

Each test prints a single PASS/FAIL line (repeated in the terminal summary)
and then asserts, so an unmet criterion shows up red. The tracking tables take
several minutes each.
"""

import time

import numpy as np
import pytest
from scipy import stats

from itolift import bench
from itolift import filters as flt
from itolift.config import load_config
from itolift.discretize import build_discrete, van_loan
from itolift.lifting import ExponentialBasis, LiftedModel, make_grid, objective
from itolift.optimize import stationarity_check
from itolift.sde import make_bessel, make_cubic, make_ou, make_wright_fisher, observe, simulate_em

FIT_PRESETS = {"cubic": "cubic-table", "bessel": "bessel-lift", "wright_fisher": "wright_fisher-table"}
R2_MIN = {"cubic": 0.70, "bessel": 0.95, "wright_fisher": 0.99}
FIT_SECONDS = 300.0
TABLE_TOL = 0.03
REFERENCE_RMSE = {
    "cubic": {"lifted_kf": 0.213317, "ekf": 0.224092, "ukf": 0.224092, "pf": 0.224115, "regular_kf": 0.224578},
    "bessel": {"lifted_kf": 0.238677, "ekf": 0.251587, "ukf": 0.251536, "pf": 0.252577, "regular_kf": 0.251598},
    "wright_fisher": {"lifted_kf": 0.140054, "ekf": 0.149525, "ukf": 0.152077, "pf": 0.125700,
                      "regular_kf": 0.262851},
}

_fits = {}
_tables = {}


def fitted(preset):
    if preset not in _fits:
        cfg = load_config(preset)
        t0 = time.perf_counter()
        report, grid = bench.fit_config(cfg)
        _fits[preset] = (cfg, report, grid, time.perf_counter() - t0)
    return _fits[preset]


def table(process, tmp_path_factory):
    if process not in _tables:
        cfg = load_config(f"{process}-table")
        _, report, _, _ = fitted(f"{process}-table")
        out = tmp_path_factory.mktemp(f"table_{process}")
        summary = bench.run_bench(cfg, report.lifted, out, bundle=bench.model_bundle(cfg, report))
        _tables[process] = summary
    return _tables[process]


def within(summary, process):
    dev = {k: summary.rmse_mean[k] - REFERENCE_RMSE[process][k] for k in bench.FILTERS}
    return all(abs(v) <= TABLE_TOL for v in dev.values()), dev


def fmt_means(summary):
    return " ".join(f"{k}={summary.rmse_mean[k]:.4f}" for k in bench.FILTERS)


@pytest.mark.slow
def test_criterion_1_r2_lift(report_criterion):
    parts, ok = [], True
    for proc, preset in FIT_PRESETS.items():
        _, rep, _, secs = fitted(preset)
        r2 = rep.lifted.diagnostics["r2_lift"]
        good = r2 >= R2_MIN[proc] and secs < FIT_SECONDS
        ok &= good
        parts.append(f"{proc} r2={r2:.4f} (>= {R2_MIN[proc]}) in {secs:.0f}s")
    report_criterion(1, ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_2_spectral_abscissa(report_criterion):
    parts, ok = [], True
    for proc, preset in FIT_PRESETS.items():
        ab = fitted(preset)[1].lifted.diagnostics["spectral_abscissa"]
        ok &= ab <= 0.01
        parts.append(f"{proc} {ab:.3g}")
    report_criterion(2, ok, "abscissa <= 0.01: " + ", ".join(parts))
    assert ok


def _table_criterion(process, number, ordering_ok, ordering_text, report_criterion, tmp_path_factory):
    s = table(process, tmp_path_factory)
    close, dev = within(s, process)
    order = ordering_ok(s.rmse_mean)
    worst = max(dev, key=lambda k: abs(dev[k]))
    ok = close and order and s.valid
    report_criterion(number, ok, f"{process}: {fmt_means(s)}; worst deviation {worst} {dev[worst]:+.4f} "
                                 f"(tol {TABLE_TOL}); {ordering_text} {'holds' if order else 'violated'}")
    return ok


@pytest.mark.slow
def test_criterion_3_cubic_table(report_criterion, tmp_path_factory):
    def order(m):
        return all(m["lifted_kf"] <= m[k] for k in ("ekf", "ukf", "pf", "regular_kf"))
    assert _table_criterion("cubic", 3, order, "Lifted-KF <= baselines", report_criterion, tmp_path_factory)


@pytest.mark.slow
def test_criterion_4_bessel_table(report_criterion, tmp_path_factory):
    def order(m):
        return all(m["lifted_kf"] < m[k] for k in ("ekf", "ukf", "pf", "regular_kf"))
    assert _table_criterion("bessel", 4, order, "Lifted-KF strictly best", report_criterion, tmp_path_factory)


@pytest.mark.slow
def test_criterion_5_wright_fisher_table(report_criterion, tmp_path_factory):
    def order(m):
        return m["pf"] < m["lifted_kf"] < m["ekf"] <= m["ukf"] < m["regular_kf"]
    assert _table_criterion("wright_fisher", 5, order, "PF < Lifted-KF < EKF <= UKF < Regular-KF",
                            report_criterion, tmp_path_factory)


def test_criterion_6_exact_lift_oracle(report_criterion):
    cfg = load_config("ou-smoke")
    rep, grid = bench.fit_config(cfg)
    model = cfg.lift_model()
    exact = LiftedModel(ExponentialBasis([0.0]), np.array([[-1.0, 0.0], [0.0, 0.0]]),
                        np.array([[0.0, 1.0], [0.0, 0.0]]))
    gap = rep.lifted.diagnostics["penalized_objective"] - objective(model, exact, grid)

    tr = simulate_em(model, 0.3, 1e-3, 20.0, seed=1)
    obs = observe(tr, 0.1, 0.25, seed=2)
    est = flt.lifted_kf_run(rep.lifted, build_discrete(rep.lifted, 0.1, 0.25), obs, 0.3).estimates
    F, Q = np.exp(-0.1), (1 - np.exp(-0.2)) / 2
    m, P, ref = 0.3, 0.1, []
    for k, y in enumerate(obs.values):
        if k:
            m, P = F * m, F * F * P + Q
        gain = P / (P + 0.0625)
        m, P = m + gain * (y - m), (1 - gain) * P
        ref.append(m)
    diff = float(np.max(np.abs(est - np.array(ref))))
    ok = gap <= 1e-6 and diff <= 1e-6
    report_criterion(6, ok, f"objective gap {gap:.2e} (<= 1e-6); lifted vs scalar KF max diff {diff:.2e} (<= 1e-6)")
    assert ok


def test_criterion_7_van_loan_oracle(report_criterion):
    a, b, d = -0.8, 0.6, 0.25
    F, Q = van_loan([[a]], [[b]], d)
    rel = max(abs(F[0, 0] / np.exp(a * d) - 1), abs(Q[0, 0] / (b * b * (np.exp(2 * a * d) - 1) / (2 * a)) - 1))

    rng = np.random.default_rng(2024)
    A = 0.5 * rng.normal(size=(4, 4)) - 1.5 * np.eye(4)
    assert np.linalg.eigvals(A).real.max() < 0
    B = 0.5 * rng.normal(size=(4, 4))
    delta, n, steps = 0.2, 100_000, 1000
    F4, Q4 = van_loan(A, B, delta)
    h = delta / steps
    u0 = np.array([1.0, -0.5, 0.25, 0.0])
    U = np.tile(u0, (n, 1))
    for _ in range(steps):
        U = U + h * U @ A.T + np.sqrt(h) * rng.standard_normal((n, 4)) @ B.T
    mean_se = np.sqrt(np.diag(Q4) / n)
    z_mean = np.abs(U.mean(0) - F4 @ u0) / mean_se
    S = np.cov(U.T)
    se = np.sqrt((np.outer(np.diag(Q4), np.diag(Q4)) + Q4**2) / n)
    z_cov = np.abs(S - Q4) / se
    ok = rel <= 1e-10 and z_mean.max() <= 3 and z_cov.max() <= 3
    report_criterion(7, ok, f"scalar rel err {rel:.1e} (<= 1e-10); 4x4 MC max |z| mean {z_mean.max():.2f}, "
                            f"cov {z_cov.max():.2f} (<= 3)")
    assert ok


def test_criterion_8_filter_equivalence(report_criterion):
    sigma, delta = 0.5, 0.1
    model = make_ou(1.0, sigma)
    tr = simulate_em(model, 0.2, 1e-3, 5.0, seed=8)
    obs = observe(tr, delta, 0.25, seed=9)
    cfg = flt.FilterConfig(sigma_model=sigma, pf_particles=100_000)

    # Euler-discretized KF is the exact counterpart of one-step EKF/UKF prediction
    euler = flt.regular_kf_run(model, obs, 0.2, flt.FilterConfig(sigma_model=sigma, linearization_point=0.0))
    d_ekf = float(np.max(np.abs(flt.ekf_run(model, obs, 0.2, cfg).estimates - euler.estimates)))
    d_ukf = float(np.max(np.abs(flt.ukf_run(model, obs, 0.2, cfg).estimates - euler.estimates)))

    # the particle filter targets the exact transition; compare to the exactly discretized KF
    exact = LiftedModel(ExponentialBasis([0.0]), np.array([[-1.0, 0.0], [0.0, 0.0]]),
                        np.array([[0.0, sigma], [0.0, 0.0]]))
    kf = flt.lifted_kf_run(exact, build_discrete(exact, delta, 0.25), obs, 0.2, cfg.prior_var)
    pf = flt.pf_run(model, obs, 0.2, cfg, seed=10)
    d_pf = float(np.max(np.abs(pf.estimates - kf.estimates)))

    # covariance health across the three nonlinear processes
    psd_ok = True
    for m, x0 in ((make_cubic(2.0), 0.5), (make_bessel(3, 1.0, 5.0), 2.0), (make_wright_fisher(2.0), 0.5)):
        o = observe(simulate_em(m, x0, 1e-3, 10.0, seed=3), 0.1, 0.25, seed=4)
        small = flt.FilterConfig(pf_particles=500)
        for res in (flt.ekf_run(m, o, x0, small), flt.ukf_run(m, o, x0, small),
                    flt.regular_kf_run(m, o, x0, small), flt.pf_run(m, o, x0, small, seed=5)):
            psd_ok &= bool(np.all(res.variances >= -1e-9))
    ok = d_ekf <= 1e-6 and d_ukf <= 1e-6 and d_pf <= 0.01 and psd_ok
    report_criterion(8, ok, f"EKF {d_ekf:.1e}, UKF {d_ukf:.1e} (<= 1e-6); PF N=1e5 {d_pf:.4f} (<= 0.01); "
                            f"variances non-negative: {psd_ok}")
    assert ok


@pytest.mark.slow
def test_criterion_9_stationarity(report_criterion):
    parts, ok = [], True
    presets = ["cubic-table", "bessel-lift", "bessel-table", "wright_fisher-table", "ou-smoke"]
    for preset in presets:
        cfg, rep, grid, _ = fitted(preset)
        tol = cfg.lifting.optimizer.gradient_tol
        model = cfg.lift_model()
        g = stationarity_check(model, rep.lifted, grid, mu_stab=cfg.lifting.optimizer.mu_stab)
        g6 = stationarity_check(model, rep.lifted, grid, h=1e-6, mu_stab=cfg.lifting.optimizer.mu_stab)
        good = g <= 10 * tol
        ok &= good
        parts.append(f"{preset} {g:.2e} [h=1e-6: {g6:.2e}]{'' if good else ' X'}")
    report_criterion(9, ok, "FD gradient <= 1e-5: " + "; ".join(parts))
    assert ok


def test_criterion_10_stationary_density(report_criterion):
    cases = [
        ("cubic", make_cubic(1.0), 0.0),
        ("bessel", make_bessel(3, 1.0, 5.0), 2.5),
        ("wright_fisher", make_wright_fisher(2.0), 0.5),
    ]
    parts, ok = [], True
    for name, model, x0 in cases:
        rng = np.random.default_rng(10)
        end = simulate_em(model, np.full(1000, x0), 1e-3, 200.0, rng=rng).states[-1]
        grid = np.linspace(*model.domain, 200_001)
        pdf = model.stationary_density(grid)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
        D = stats.kstest(end, lambda x: np.interp(x, grid, cdf / cdf[-1])).statistic
        ok &= D <= 0.05
        parts.append(f"{name} {D:.3f}")
    report_criterion(10, ok, "KS distance <= 0.05 (1000 paths, T=200): " + ", ".join(parts))
    assert ok


def test_criterion_11_determinism(report_criterion, tmp_path):
    blobs = []
    for preset, trials in (("ou-smoke", 3), ("cubic-table", 2)):
        cfg = load_config(preset)
        cfg.tracking.n_trials = trials
        cfg.output.formats = ["csv"]
        rep, _ = bench.fit_config(cfg)
        for run in ("a", "b"):
            out = tmp_path / f"{preset}_{run}"
            bench.run_bench(cfg, rep.lifted, out, bundle=bench.model_bundle(cfg, rep))
            blobs.append((out / "summary.json").read_bytes())
    ok = blobs[0] == blobs[1] and blobs[2] == blobs[3]
    report_criterion(11, ok, "repeated bench runs give byte-identical summary.json (ou-smoke, cubic-table)")
    assert ok
