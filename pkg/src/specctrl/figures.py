"""PNG figures written next to CSV artifacts."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_scan(scan, path, fits=()):
    """h * norm (and h * cutoff norm) against log(1/h), with fitted curves."""
    h = scan.h
    t = np.log(1 / h)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(t, h * scan.norms, "o-", label="h ||Q^-1||")
    cut = scan.cutoff_norms
    if np.all(np.isfinite(cut)):
        ax.plot(t, h * cut, "s--", label="h ||Q^-1 phi||")
    for f in fits:
        c = f.constants
        if f.law == "log":
            ax.plot(t, c["C"] * t + c["intercept"], ":", label=f"log fit R2={f.r2:.3f}")
        elif f.law == "power":
            ax.plot(t, h * c["C"] * h ** -c["alpha"], ":", label=f"power fit a={c['alpha']:.3f}")
    ax.set_xlabel("log(1/h)")
    ax.set_ylabel("h * norm")
    ax.set_title(scan.model)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_report(rep, path):
    """One panel per observability experiment."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if rep.experiment == "stadium":
        ax.loglog(rep.column("lambda"), rep.column("ratio"), ".", ms=3)
        ax.set_xlabel("lambda")
        ax.set_ylabel("wing mass ratio")
    elif rep.experiment == "geodesic":
        ax.semilogx(rep.column("m"), rep.column("mu_log_lambda"), "o-", label="mu log(lambda)")
        ax.semilogx(rep.column("m"), rep.column("mu"), "s--", label="mu")
        ax.set_xlabel("m")
        ax.legend(fontsize=8)
    elif rep.experiment == "permode":
        k, z, c = rep.column("k"), rep.column("z"), rep.column("constant")
        for zi in np.unique(z)[:: max(1, len(np.unique(z)) // 5)]:
            sel = z == zi
            ax.plot(k[sel], c[sel], ".-", lw=0.8, label=f"z={zi:.3g}")
        ax.set_xlabel("k")
        ax.set_ylabel("constant")
        ax.legend(fontsize=7)
    else:
        keys = [k for k, v in (rep.records[0].items() if rep.records else []) if isinstance(v, float)]
        if keys:
            ax.bar(keys, [rep.records[0][k] for k in keys])
    ax.set_title(rep.experiment)
    return _save(fig, path)


def plot_series(x, ys, path, xlabel="", ylabel="", title="", logx=False):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, y in ys.items():
        ax.plot(x, y, "o-", label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(ys) > 1:
        ax.legend(fontsize=8)
    return _save(fig, path)


def plot_columns(header, rows, path):
    """Generic figure for a numeric CSV: every column against the first."""
    data = np.array(rows, float)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for j in range(1, data.shape[1]):
        col = data[:, j]
        if np.all(np.isfinite(col)) and np.ptp(col) > 0:
            ax.plot(data[:, 0], col, ".-", label=header[j])
    ax.set_xlabel(header[0])
    ax.legend(fontsize=7)
    ax.set_title(Path(path).stem)
    return _save(fig, path)
