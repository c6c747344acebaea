"""PNG renderings of the emitted figure data (Agg backend, no display needed)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"lifted_kf": "tab:blue", "ekf": "tab:orange", "ukf": "tab:green",
          "pf": "tab:red", "regular_kf": "tab:purple"}
NAMES = {"lifted_kf": "Lifted-KF", "ekf": "EKF", "ukf": "UKF",
         "pf": "Particle Filter", "regular_kf": "Regular KF"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_density(data, path, title=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(data["x"], data["rho"], color="k", label=r"$\rho(x)$")
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax2 = ax.twinx()
    ax2.plot(data["x"], data["weighted_residual"], color="tab:red", lw=1, label="weighted residual")
    ax2.set_ylabel("weighted residual", color="tab:red")
    ax.set_title(title)
    _save(fig, path)


def plot_overlay(data, path, title=""):
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, col in data.items():
        if key.startswith("original_"):
            ax.plot(data["t"], col, color="k", lw=0.6, alpha=0.7)
        elif key.startswith("lifted_"):
            ax.plot(data["t"], col, color="tab:blue", lw=0.6, alpha=0.7)
    ax.plot([], [], color="k", label="original")
    ax.plot([], [], color="tab:blue", label="lifted")
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.legend()
    ax.set_title(title)
    _save(fig, path)


def plot_timeseries(data, path, title=""):
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, c in COLORS.items():
        if k in data:
            ax.plot(data["t"], data[k], color=c, lw=1, label=NAMES[k])
    ax.set_xlabel("t")
    ax.set_ylabel("RMSE across trials")
    ax.legend()
    ax.set_title(title)
    _save(fig, path)


def plot_bench(summary: dict, path):
    rows = summary["filters"]
    keys = [k for k in COLORS if k in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    pos = np.arange(len(keys))
    ax.bar(pos, [rows[k]["rmse_mean"] for k in keys], yerr=[rows[k]["rmse_std"] for k in keys],
           color=[COLORS[k] for k in keys], capsize=3)
    ax.set_xticks(pos, [NAMES[k] for k in keys], rotation=20)
    ax.set_ylabel("RMSE (mean)")
    _save(fig, path)
