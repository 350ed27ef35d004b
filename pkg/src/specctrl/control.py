"""Band-restricted HUM null control, the resolvent-to-observability pipeline
check, and truncated-rectangle quasimodes on the stadium.

Controlled dynamics on a band: u' = -i A u + 1_omega g, with the control
g(t) = 1_omega sum_k d_k exp(-i nu_k t) u_k. The band coefficients at time T
are exp(-i nu T) (c + M d), so M d = -c steers u(T) to zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from . import domain, sparsela, spectra
from .errors import DependencyError, IllPosedError, InvalidArgument
from .observability import gramian, observability_constant

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ControlSolution:
    band: spectra.EigenBand
    region: domain.Region
    T: float
    gramian: object
    coefficients: np.ndarray
    dual: np.ndarray
    residual: float
    cost: float
    cg_iterations: int
    cg_residual: float
    out_of_band: float = 0.0

    @property
    def frequencies(self):
        return self.gramian.frequencies

    def control_at(self, t):
        """Grid function g(t)."""
        a = self.dual * np.exp(-1j * self.frequencies * t)
        return self.region.indicator * (self.band.vectors @ a)

    def terminal_coefficients(self):
        M = self.gramian.matrix
        return np.exp(-1j * self.frequencies * self.T) * (self.coefficients + M @ self.dual)

    def duality_gap(self):
        """|cost - (-Re <d, c>)| / cost."""
        alt = -np.real(np.vdot(self.dual, self.coefficients))
        return abs(self.cost - alt) / max(abs(self.cost), 1e-300)

    def sample_control(self, times):
        """Rows (t, ||g(t)||) for a time grid."""
        return [(float(t), self.band.grid.norm(self.control_at(t))) for t in times]


def hum_control(band, region, T, u0, tol=1e-10, time_scale=1.0, G=None):
    """Minimal-norm band control steering ``u0`` to zero at time ``T``."""
    if not region.is_sharp:
        raise InvalidArgument("control regions must be sharp")
    G = G or gramian(band, region, T, time_scale)
    cmin, _ = observability_constant(G)
    if cmin <= 1e-12 * T:
        raise IllPosedError(f"band is not observable from {region.label!r}: lambda_min = {cmin:.3e}",
                            lambda_min=cmin)
    c, rest = spectra.project_onto_band(band, u0)
    norm0 = band.grid.norm(u0)
    if norm0 == 0:
        raise InvalidArgument("u0 is zero")
    if rest > 1e-8 * norm0:
        log.warning("u0 has out-of-band part %.3e; only its band projection is controlled", rest / norm0)
    M = G.matrix
    res = sparsela.cg_hermitian_solve(lambda v: M @ v, -c, tol=tol, return_info=True)
    d = res.x
    rho = float(np.linalg.norm(c + M @ d) / np.linalg.norm(c))
    cost = float(np.real(np.vdot(d, M @ d)))
    return ControlSolution(band, region, float(T), G, c, d, rho, cost, res.iterations, res.residual,
                           float(rest / norm0))


@dataclass
class NullControlCheck:
    rho_quad: float
    rho_closed: float
    difference: float
    out_of_band: float
    steps: int


def verify_null_control(sol, steps=2000, chunk=256):
    """Re-propagate the controlled dynamics by Simpson quadrature of the Duhamel integral.

    The control is sampled as a grid function at each quadrature node and
    projected back onto the band, so the Gramian is not used.
    """
    if steps % 2:
        raise InvalidArgument("Simpson needs an even number of steps")
    band, grid, T = sol.band, sol.band.grid, sol.T
    nu = sol.frequencies
    t = np.linspace(0.0, T, steps + 1)
    V = band.vectors
    Vw = V.conj().T * grid.weights
    ind = sol.region.indicator
    proj = np.empty((band.count, t.size), complex)
    for s in range(0, t.size, chunk):
        ts = t[s:s + chunk]
        gs = ind[:, None] * (V @ (sol.dual[:, None] * np.exp(-1j * np.outer(nu, ts))))
        proj[:, s:s + chunk] = Vw @ (ind[:, None] * gs)
    integrand = np.exp(1j * np.outer(nu, t)) * proj
    cT = np.exp(-1j * nu * T) * (sol.coefficients + simpson(integrand, x=t, axis=1))
    uT = V @ cT
    _, rest = spectra.project_onto_band(band, uT)
    norm0 = np.linalg.norm(sol.coefficients)
    rho = float(np.linalg.norm(cT) / norm0)
    return NullControlCheck(rho, sol.residual, abs(rho - sol.residual), float(rest / norm0), steps)


# ---------------------------------------------------------------- pipeline

@dataclass
class PipelineCheck:
    K: float
    records: list
    C0: float
    min_over_median: float
    passed: bool
    summary: dict = field(default_factory=dict)


def resolvent_observability_pipeline(scan, modes, K=100.0, window=(0.5, 2.0), omega="cap", L=None, x0=None,
                      ppw=30, threshold=0.1, tol=1e-9, cache=None):
    """Observability on the energy band from measured resolvent norms.

    For each mode, G = h * ||Q^-1|| and g = h * ||Q^-1 phi|| come from ``scan``;
    the band of h^2 L_m in ``window`` evolves with frequencies lambda / h over
    T = K G. The pass criterion is min/median of C_obs T / g^2 >= ``threshold``.
    """
    params = scan.params or {}
    L = L or params.get("L", 3.0)
    x0 = x0 or params.get("x0", 1.5)
    recs = []
    for m in modes:
        h = 1.0 / m
        try:
            pt = scan.point_for(h)
        except KeyError:
            raise DependencyError(f"scan has no entry for mode {m}") from None
        if not np.isfinite(pt.cutoff_norm):
            raise DependencyError(f"scan entry for mode {m} lacks a cutoff norm")
        Ghat, ghat = h * pt.norm, h * pt.cutoff_norm
        T = K * Ghat
        band = spectra.cosh_band(m, (window[0] * m * m, window[1] * m * m), L=L, ppw=ppw,
                                 tol=tol, cache=cache)
        if omega == "full":
            reg = domain.full_region(band.grid)
        else:
            reg = domain.beyond_region(band.grid, x0, label="supp a")
        G = gramian(band, reg, T, time_scale=h)  # eigenvalues of h^2 L_m over h
        cobs, _ = observability_constant(G)
        recs.append({"m": int(m), "h": h, "G": Ghat, "g": ghat, "T": T, "band_count": band.count,
                     "C_obs": cobs, "C_obs_over_T": cobs / T, "ratio": cobs * T / ghat**2,
                     "ratio_g2_over_T": cobs * ghat**2 / T})
    ratio = np.array([r["ratio"] for r in recs])
    mom = float(ratio.min() / np.median(ratio))
    C0 = float(1.0 / ratio.min())
    for r in recs:
        r["pass"] = bool(r["ratio"] * C0 >= 1 - 1e-12)
    alt = np.array([r["ratio_g2_over_T"] for r in recs])
    summary = {"min_ratio": float(ratio.min()), "median_ratio": float(np.median(ratio)),
               "alt_min_over_median": float(alt.min() / np.median(alt)),
               "omega": omega, "window": list(window)}
    return PipelineCheck(float(K), recs, C0, mom, mom >= threshold, summary)


def pipeline_sweep(scan, modes, Ks=(1.0, 10.0, 100.0), **kw):
    """Pipeline at several horizon multipliers; the ratio trend locates the threshold."""
    out = []
    for K in Ks:
        chk = resolvent_observability_pipeline(scan, modes, K=K, **kw)
        r = np.array([x["ratio"] for x in chk.records])
        hs = np.array([x["h"] for x in chk.records])
        slope = float(np.polyfit(np.log(1 / hs), np.log(np.maximum(r, 1e-300)), 1)[0]) if len(r) > 1 else 0.0
        out.append({"K": K, "min_over_median": chk.min_over_median, "passed": chk.passed,
                    "ratio_slope": slope})
    return out


# --------------------------------------------------------------- quasimodes

def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, float)
    f = lambda s: np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    with np.errstate(over="ignore"):  # 1/s overflows for subnormal s; exp gives 0 as intended
        a, b = f(t), f(1 - t)
    return a / (a + b)


def quasimode(grid, m, k, eps=0.2, min_ppw=10):
    """Truncated rectangle mode and its discrete-dispersion eigenvalue.

    On a stadium the mode is chi(x) sin(m pi (y + r) / 2r) sin(k pi x / L),
    bouncing between the flat walls, with chi a smooth cutoff equal to 1 on
    [eps, L - eps] and 0 outside [0, L]. On a rectangle grid no truncation is
    applied and the result is an exact discrete eigenfunction.
    """
    s = grid.spacing[0]
    x, y = grid.coords
    if grid.kind == "stadium":
        r, L = grid.params["r"], grid.params["L"]
        width = 2 * r
        ty = y + r
        if not 0 < eps <= L / 2:
            raise InvalidArgument("eps must lie in (0, L/2]")
        chi = smooth_step(x / eps) * smooth_step((L - x) / eps)
    elif grid.kind == "rectangle":
        L, width = 1.0, grid.params["a"]
        ty = y
        chi = np.ones_like(x)
    else:
        raise InvalidArgument(f"quasimodes need a stadium or rectangle grid, not {grid.kind!r}")
    sy = grid.spacing[1]
    wavelength = 2 * width / m
    if wavelength / sy < min_ppw:
        raise InvalidArgument(f"mode m={m} has {wavelength / sy:.1f} points per wavelength; "
                              f"need {min_ppw}")
    u = chi * np.sin(m * np.pi * ty / width) * np.sin(k * np.pi * x / L)
    lam = (4 / sy**2) * np.sin(m * np.pi * sy / (2 * width)) ** 2 \
        + (4 / s**2) * np.sin(k * np.pi * s / (2 * L)) ** 2
    return u / grid.norm(u), lam


def quasimode_error(grid, m, k=1, eps=0.2, amplitude=1.0, op=None, min_ppw=10):
    """||(-Delta - lambda_{m,k}) u|| for the normalized truncated mode, scaled by ``amplitude``."""
    u, lam = quasimode(grid, m, k, eps, min_ppw)
    op = op or sparsela.assemble_laplacian(grid)
    u = amplitude * u
    return grid.norm(op.matrix @ u - lam * u)
