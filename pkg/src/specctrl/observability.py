"""Eigenfunction mass ratios, per-mode observability constants and band Gramians.

Time evolution on a band is u(t) = sum_j c_j exp(-i nu_j t) u_j with
frequencies nu_j (eigenvalues, optionally rescaled). The observed energy
int_0^T ||1_omega u(t)||^2 dt is the Hermitian form c^* M c with

    M_jk = B_jk K(nu_j - nu_k, T),  B_jk = <1_omega u_k, u_j>,
    K(delta, T) = (exp(i delta T) - 1) / (i delta),  K(0, T) = T.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import eigh
from scipy.stats import spearmanr

from . import domain, sparsela, spectra
from .errors import DataError, InvalidArgument

log = logging.getLogger(__name__)


def _indicator(region, grid):
    if isinstance(region, domain.Region):
        if region.grid is not grid and region.grid.digest != grid.digest:
            raise InvalidArgument("region and grid function live on different grids")
        return region.indicator
    ind = np.asarray(region, float)
    if ind.shape != (grid.size,):
        raise InvalidArgument("indicator length does not match the grid")
    return ind


def mass_ratio(u, region, grid=None):
    """Fraction of the weighted L^2 mass of ``u`` carried by ``region``."""
    grid = grid or region.grid
    ind = _indicator(region, grid)
    if not np.any(ind):
        raise InvalidArgument("empty region")
    dens = grid.weights * np.abs(u) ** 2
    total = dens.sum()
    if total == 0:
        raise InvalidArgument("zero grid function")
    return float(np.dot(ind, dens) / total)


# ----------------------------------------------------------------- reports

@dataclass
class ObservabilityReport:
    experiment: str
    records: list
    summary: dict = field(default_factory=dict)

    def column(self, key):
        return np.array([r[key] for r in self.records])

    def to_dict(self):
        return {"experiment": self.experiment, "summary": self.summary, "records": self.records}

    def write(self, csv_path, json_path=None):
        csv_path = Path(csv_path)
        keys = list(self.records[0]) if self.records else []
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(keys)
            for r in self.records:
                wr.writerow([_cell(r[k]) for k in keys])
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        data = {"kind": self.summary.get("kind", self.experiment), "experiment": self.experiment,
                "summary": self.summary}
        json_path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ------------------------------------------------------------- stadium scan

def stadium_wing_scan(lam_max=2000.0, n_per_unit=128, r=0.5, L=1.0, margin=0.05,
                      min_ppw=10, tol=1e-9, cache=None):
    """Wing mass ratio of every stadium eigenfunction with eigenvalue <= lam_max."""
    ppw = 2 * np.pi / np.sqrt(lam_max) * n_per_unit
    if ppw < min_ppw:
        need = int(np.ceil(min_ppw * np.sqrt(lam_max) / (2 * np.pi)))
        raise InvalidArgument(f"n_per_unit={n_per_unit} gives {ppw:.1f} points per wavelength at "
                              f"lambda={lam_max}; need n_per_unit >= {need}")
    grid = domain.build_stadium(n_per_unit, r, L)
    op = sparsela.assemble_laplacian(grid)
    band = spectra.compute_band(op, (0.0, lam_max), tol=tol, cache=cache)
    wing = domain.stadium_wing_region(grid, margin)
    x = grid.points[:, 0]
    rect = domain.Region(grid, ((x >= 0) & (x <= L)).astype(float), "rectangle")
    recs = []
    for j in range(band.count):
        u = band.vectors[:, j]
        recs.append({"index": j, "lambda": float(band.values[j]),
                     "ratio": mass_ratio(u, wing), "rect_mass": mass_ratio(u, rect),
                     "residual": float(band.residuals[j])})
    ratios = np.array([r_["ratio"] for r_ in recs])
    lams = np.array([r_["lambda"] for r_ in recs])
    bb = [r_ for r_ in recs if r_["rect_mass"] >= 0.9]
    summary = {"count": len(recs), "min_ratio": float(ratios.min()), "max_ratio": float(ratios.max()),
               "slope": _loglog_slope(lams, ratios), "argmin_lambda": float(lams[ratios.argmin()]),
               "bouncing_ball_count": len(bb),
               "bouncing_ball_min_ratio": float(min((r_["ratio"] for r_ in bb), default=np.nan)),
               "n_per_unit": n_per_unit, "r": r, "L": L, "margin": margin, "lam_max": lam_max}
    return ObservabilityReport("stadium", recs, summary)


# --------------------------------------------------- geodesic concentration

def geodesic_concentration_scan(modes, delta=0.5, L=3.0, ppw=30, window=0.2, parity="even", tol=1e-9, cache=None):
    """Away-from-geodesic mass of the barrier-top state of each angular mode.

    For each m the state with eigenvalue nearest m^2 (within the relative
    ``window``) is selected among states of the requested ``parity`` under
    x -> -x ("even", "odd" or None for any). mu(m) is its mass on |x| > delta.
    """
    if not 0 < delta < L:
        raise InvalidArgument("delta must lie in (0, L)")
    recs, skipped = [], []
    for m in modes:
        band = spectra.cosh_band(m, ((1 - window) * m * m, (1 + window) * m * m), L=L, ppw=ppw,
                                 tol=tol, cache=cache)
        idx = np.arange(band.count)
        if parity is not None:
            want = "+" if parity == "even" else "-"
            idx = np.array([j for j in idx if band.parity[j] == want], dtype=int)
        if idx.size == 0:
            log.warning("mode %d: no eigenvalue within %.0f%% of m^2", m, 100 * window)
            skipped.append(m)
            continue
        j = idx[np.argmin(np.abs(band.values[idx] - m * m))]
        lam = float(band.values[j])
        mu = mass_ratio(band.vectors[:, j], domain.beyond_region(band.grid, delta))
        recs.append({"m": int(m), "lambda": lam, "offset": (lam - m * m) / m, "mu": mu,
                     "mu_log_lambda": float(mu * np.log(lam)), "band_count": band.count})
    summary = {"skipped": skipped, "delta": delta, "parity": parity}
    if recs:
        prod = np.array([r["mu_log_lambda"] for r in recs])
        summary.update(min=float(prod.min()), max=float(prod.max()),
                       max_over_min=float(prod.max() / prod.min()))
    if len(recs) >= 3:
        ms = [r["m"] for r in recs]
        mus = [r["mu"] for r in recs]
        summary["spearman_mu"] = float(spearmanr(ms, mus).correlation)
        summary["slope"] = _loglog_slope(ms, prod)
    return ObservabilityReport("geodesic", recs, summary)


# ---------------------------------------------------------- per-mode bound

class _Interval1D:
    """Dirichlet -D^2 on (0, 1): the discrete sines are exact eigenvectors."""

    def __init__(self, n):
        self.grid = domain.build_interval(n, 1.0)
        s = self.grid.spacing[0]
        j = np.arange(1, n + 1)
        x = self.grid.points[:, 0]
        self.mu = (4 / s**2) * np.sin(j * np.pi * s / 2) ** 2
        self.V = np.sqrt(2.0) * np.sin(np.outer(x, j) * np.pi)  # weighted-orthonormal


_INTERVALS = {}


def _interval(n):
    if n not in _INTERVALS:
        _INTERVALS[n] = _Interval1D(n)
    return _INTERVALS[n]


def permode_constant(k, z, a=1.0, omega=(0.1, 0.3), n=511, n_random=50, seed=0,
                     probes="all", rhs=None, return_details=False):
    """Probed best constant C in ||u||^2 <= C (||f||_{H^-1}^2 + ||u|_omega||^2).

    u solves (D^2 - (z + (k pi/a)^2)) u = f on (0, 1) with Dirichlet ends. The
    H^-1 norm is the spectral one, sum |f_n|^2 / (mu_n + 1). Probes are the
    Dirichlet eigenfunctions (``probes`` in {"all", "eigen"}) and ``n_random``
    seeded random right-hand sides ({"all", "random"}). A right-hand side
    component at an exact resonance is dropped. An explicit ``rhs`` (nodes x
    probes) replaces the random right-hand sides.
    """
    lo, hi = omega
    if not 0 <= lo < hi <= 1:
        raise InvalidArgument(f"omega must be a nonempty sub-interval of [0, 1], got {omega}")
    I = _interval(n)
    x = I.grid.points[:, 0]
    ind = ((x > lo) & (x < hi)).astype(float)
    if not ind.any():
        raise InvalidArgument("omega contains no grid nodes")
    w = I.grid.weights
    E = -z - (k * np.pi / a) ** 2
    gap = I.mu - E
    resonant = np.abs(gap) <= 1e-10 * np.maximum(1.0, np.abs(I.mu))
    omega_mass = (I.V**2 * (ind * w)[:, None]).sum(axis=0)  # mass of each eigenfunction on omega
    best, arg = 0.0, None
    if probes in ("all", "eigen"):
        fnorm = gap**2 / (I.mu + 1)
        fnorm[resonant] = 0.0
        ratio = 1.0 / (fnorm + omega_mass)
        j = int(np.argmax(ratio))
        best, arg = float(ratio[j]), ("eigen", j)
    if probes in ("all", "random") or rhs is not None:
        if rhs is not None:
            F = np.asarray(rhs, float).reshape(n, -1)
        else:
            F = np.random.default_rng(seed).standard_normal((n, n_random))
        fh = I.V.T @ (w[:, None] * F)  # spectral coefficients
        fh[resonant] = 0.0
        safe = np.where(resonant, 1.0, gap)
        uh = fh / safe[:, None]
        U = I.V @ uh
        num = (uh**2).sum(axis=0)
        den = (fh**2 / (I.mu + 1)[:, None]).sum(axis=0) + (ind * w) @ (U**2)
        ratio = num / den
        j = int(np.argmax(ratio))
        if ratio[j] > best:
            best, arg = float(ratio[j]), ("random", j)
    if return_details:
        return best, {"E": E, "argmax": arg, "resonant": np.flatnonzero(resonant).tolist()}
    return best


def permode_scan(ks, zs, a=1.0, omega=(0.1, 0.3), n=511, n_random=50, seed=0):
    """permode_constant over a (k, z) grid."""
    recs = []
    for k in ks:
        for z in zs:
            recs.append({"k": int(k), "z": float(z),
                         "constant": permode_constant(k, z, a, omega, n, n_random, seed)})
    c = np.array([r["constant"] for r in recs])
    summary = {"max": float(c.max()), "min": float(c.min()), "all_finite": bool(np.all(np.isfinite(c))),
               "omega": list(omega), "a": a}
    return ObservabilityReport("permode", recs, summary)


def default_permode_z_grid(kmax=50, a=1.0, count=21):
    """Real z from 0 down past -(kmax pi/a)^2, so every k meets resonances."""
    return -np.linspace(0.0, ((kmax + 5) * np.pi / a) ** 2, count)


# ----------------------------------------------------------------- Gramian

def kernel(delta, T):
    """K(delta, T) = int_0^T exp(i delta t) dt, evaluated stably near delta = 0."""
    delta = np.asarray(delta, float)
    x = delta * T
    out = np.empty(delta.shape, complex)
    small = np.abs(x) < 1e-4
    xs = x[small]
    out[small] = T * (1 + 1j * xs / 2 - xs**2 / 6 - 1j * xs**3 / 24)
    xl, dl = x[~small], delta[~small]
    out[~small] = np.expm1(1j * xl) / (1j * dl)
    return out


@dataclass(frozen=True, eq=False)
class GramianMatrix:
    band: spectra.EigenBand
    region: object
    T: float
    matrix: np.ndarray
    frequencies: np.ndarray
    overlap: np.ndarray


def overlap_matrix(band, region):
    """B_jk = <1_omega u_k, u_j> in the weighted inner product."""
    ind = _indicator(region, band.grid)
    V = band.vectors
    return (V.conj().T * (band.grid.weights * ind)) @ V


def gramian(band, region, T, time_scale=1.0):
    """Closed-form observability Gramian on ``band`` with frequencies lambda * time_scale."""
    if T <= 0:
        raise InvalidArgument("horizon T must be positive")
    if band.count == 0:
        raise InvalidArgument("empty band")
    nu = np.asarray(band.values, float) * time_scale
    B = overlap_matrix(band, region)
    M = B * kernel(nu[:, None] - nu[None, :], T)
    M = 0.5 * (M + M.conj().T)
    return GramianMatrix(band, region, float(T), M, nu, B)


def gramian_quadrature(band, region, T, steps=1000, time_scale=1.0):
    """Same form by composite Simpson quadrature of int_0^T ||1_omega u(t)||^2 dt."""
    if steps % 2:
        raise InvalidArgument("Simpson needs an even number of steps")
    nu = np.asarray(band.values, float) * time_scale
    B = overlap_matrix(band, region)
    t = np.linspace(0.0, T, steps + 1)
    phase = np.exp(1j * np.subtract.outer(nu, nu)[..., None] * t)
    return B * simpson(phase, x=t, axis=-1)


def observability_constant(G, tol=1e-10):
    """(lambda_min(M), minimizing band vector); negative beyond tol*T is a data error."""
    vals, vecs = eigh(G.matrix)
    lo = float(vals[0])
    if lo < -tol * G.T:
        raise DataError(f"Gramian is indefinite: lambda_min = {lo:.3e}")
    return max(lo, 0.0), vecs[:, 0]


def observability_report(G, label=""):
    c, _ = observability_constant(G)
    rec = {"T": G.T, "count": G.band.count, "C_obs": c, "region": label}
    return ObservabilityReport("gramian", [rec], {"C_obs": c, "C_obs_over_T": c / G.T})
