"""Named end-to-end checks. Each returns a ``Check`` with the measured
quantities and a pass flag; thresholds live next to each computation."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import control, domain, observability, resolvent, sparsela, spectra

HYPERBOLIC_MODES = [16, 32, 64, 128, 256, 512, 1024]
WELL_EXPONENTS = {1: 1.0, 2: 4 / 3, 3: 1.5}


@dataclass
class Check:
    number: int
    name: str
    passed: bool
    metrics: dict
    seconds: float = 0.0
    artifacts: dict = field(default_factory=dict)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items() if np.isscalar(v))
        return f"[{flag}] {self.number:2d} {self.name} ({self.seconds:.1f}s): {shown}"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{v:.4g}"
    return str(v)


def _timed(fn):
    def wrapper(*a, **kw):
        t = time.perf_counter()
        chk = fn(*a, **kw)
        chk.seconds = time.perf_counter() - t
        return chk
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def square_spectrum(n=255):
    """First ten discrete Dirichlet eigenvalues of the unit square vs pi^2 (m^2 + k^2)."""
    grid = domain.build_rectangle(n, n, 1.0)
    exact = [lam for lam, _ in spectra.analytic_rectangle_spectrum(1.0, (0, 18 * np.pi**2))][:10]
    band = spectra.compute_band(sparsela.assemble_laplacian(grid), (0, 18 * np.pi**2))
    rel = np.abs(band.values[:10] - exact) / exact
    return Check(1, "square spectrum", bool(rel.max() <= 5e-4 and band.count >= 10),
                 {"max_rel_error": float(rel.max()), "count": band.count})


@_timed
def stadium_wing(n_per_unit=128, lam_max=2000.0, cache=None):
    """Wing mass of every stadium eigenfunction up to lam_max."""
    rep = observability.stadium_wing_scan(lam_max, n_per_unit, cache=cache)
    s = rep.summary
    ok = s["min_ratio"] >= 0.005 and s["slope"] >= -0.05
    return Check(2, "stadium wing mass", bool(ok),
                 {"count": s["count"], "min_ratio": s["min_ratio"], "slope": s["slope"]},
                 artifacts={"report": rep})


@_timed
def permode_uniformity(kmax=50, a=1.0, omega=(0.1, 0.3)):
    """Per-mode constants over k <= kmax and 21 z values stay within 2x of the k <= 5 maximum."""
    zs = observability.default_permode_z_grid(kmax, a)
    rep = observability.permode_scan(range(1, kmax + 1), zs, a, omega)
    c, k = rep.column("constant"), rep.column("k")
    low = float(c[k <= 5].max())
    ok = np.all(np.isfinite(c)) and c.max() <= 2 * low
    return Check(3, "per-mode uniformity", bool(ok),
                 {"max": float(c.max()), "max_k_le_5": low, "ratio": float(c.max() / low)},
                 artifacts={"report": rep})


def hyperbolic_scan(modes=HYPERBOLIC_MODES, workers=1, cache=None):
    return resolvent.scan_h("hyperbolic", resolvent.modes_to_h(modes), workers=workers, cache=cache)


@_timed
def log_law(scan=None, workers=1):
    """h * resolvent norm is linear in log(1/h) and fits better than a pure power."""
    scan = scan or hyperbolic_scan(workers=workers)
    fl = resolvent.fit_scaling(scan, "log")
    fp = resolvent.fit_scaling(scan, "power")
    ok = fl.constants["C"] > 0 and fl.r2 >= 0.95 and fp.rss_log > fl.rss_log and len(scan.points) == 7
    return Check(4, "hyperbolic log law", bool(ok),
                 {"slope": fl.constants["C"], "r2": fl.r2, "rss_log": fl.rss_log,
                  "rss_power": fp.rss_log, "points": len(scan.points)},
                 artifacts={"scan": scan, "fits": [fl, fp]})


@_timed
def sqrt_log_gap(scan=None, workers=1):
    """(h * cutoff norm)^2 / (h * norm) stays in a factor-10 band."""
    scan = scan or hyperbolic_scan(workers=workers)
    r = resolvent.sqrt_log_gap(scan)
    below = bool(np.all(scan.cutoff_norms <= scan.norms * (1 + 1e-8)))
    ok = np.all(r > 0) and r.max() / r.min() <= 10 and below
    return Check(5, "cutoff gap", bool(ok),
                 {"min": float(r.min()), "max": float(r.max()), "max_over_min": float(r.max() / r.min()),
                  "cutoff_le_full": below})


@_timed
def well_exponents(powers=(1, 2, 3), exps=range(4, 11), workers=1, cache=None):
    """Pure-power exponents of the degenerate-well resolvent norm."""
    hs = [2.0 ** -e for e in exps]
    metrics, ok, scans = {}, True, {}
    for p in powers:
        scan = resolvent.scan_h(resolvent.ModelSpec("well", {"power": p}), hs, workers=workers, cache=cache)
        fit = resolvent.fit_scaling(scan, "power")
        alpha = fit.constants["alpha"]
        metrics[f"alpha_{p}"] = alpha
        ok &= abs(alpha - WELL_EXPONENTS[p]) <= 0.15 and len(scan.points) == len(hs)
        scans[p] = scan
    return Check(6, "well exponents", bool(ok), metrics, artifacts={"scans": scans})


@_timed
def hum_null_control(seeds=range(20), T=1.0, cache=None):
    """HUM on the rectangle band [0, 60] from a strip, closed form vs quadrature."""
    grid = domain.build_rectangle(255, 127, 1.0)
    band = spectra.compute_band(sparsela.assemble_laplacian(grid), (0.0, 60.0), cache=cache)
    reg = domain.strip_region(grid, 0.4, 0.6)
    G = observability.gramian(band, reg, T)
    worst_rho = worst_diff = 0.0
    for seed in seeds:
        u0 = random_band_vector(band, seed)
        sol = control.hum_control(band, reg, T, u0, G=G)
        chk = control.verify_null_control(sol)
        worst_rho = max(worst_rho, sol.residual)
        worst_diff = max(worst_diff, chk.difference)
    ok = worst_rho <= 1e-8 and worst_diff <= 1e-6
    return Check(7, "HUM null control", bool(ok),
                 {"max_rho": worst_rho, "max_quad_diff": worst_diff, "band_count": band.count})


def random_band_vector(band, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(band.count) + 1j * rng.standard_normal(band.count)
    return band.vectors @ (c / np.linalg.norm(c))


@_timed
def geodesic_concentration(modes=(8, 16, 32, 64, 128, 256, 512), delta=0.5, cache=None):
    """mu(m) log(lambda) within a factor 10 and mu decreasing in m."""
    rep = observability.geodesic_concentration_scan(modes, delta, cache=cache)
    s = rep.summary
    ok = not s["skipped"] and s["max_over_min"] <= 10 and s["spearman_mu"] <= -0.9
    return Check(8, "geodesic concentration", bool(ok),
                 {"max_over_min": s["max_over_min"], "spearman": s["spearman_mu"]},
                 artifacts={"report": rep})


@_timed
def resolvent_to_observability(scan=None, modes=(16, 32, 64, 128, 256), K=100.0, workers=1, cache=None):
    """C_obs T / g^2 uniformly bounded below at horizon T = K G."""
    scan = scan or hyperbolic_scan(modes, workers=workers)
    chk = control.resolvent_observability_pipeline(scan, modes, K=K, cache=cache)
    return Check(9, "resolvent to observability", bool(chk.min_over_median >= 0.1),
                 {"min_over_median": chk.min_over_median, "C0": chk.C0,
                  "alt_min_over_median": chk.summary["alt_min_over_median"]},
                 artifacts={"pipeline": chk})


@_timed
def quasimode_band(ms=range(5, 41), k=1, n_per_unit=256):
    """Truncated bouncing-ball residuals stay in a factor-5 band."""
    grid = domain.build_stadium(n_per_unit)
    op = sparsela.assemble_laplacian(grid)
    e = np.array([control.quasimode_error(grid, m, k, op=op) for m in ms])
    ok = e.min() > 0 and e.max() <= 5 * e.min()
    return Check(10, "quasimode band", bool(ok),
                 {"min": float(e.min()), "max": float(e.max()), "max_over_min": float(e.max() / e.min())},
                 artifacts={"errors": e})


@_timed
def oracles(seed=0):
    """Sparse kernels against dense references."""
    rng = np.random.default_rng(seed)
    worst_sv = 0.0
    for i in range(50):
        n = int(rng.integers(20, 301))
        A = sp.random(n, n, density=0.05, random_state=rng, dtype=complex) \
            + 1j * sp.random(n, n, density=0.05, random_state=rng) + sp.eye(n) * rng.uniform(0.1, 2)
        A = sp.csr_matrix(A)
        sv = sparsela.smallest_singular(sparsela.SparseOperator(A), tol=1e-12)
        ref = np.linalg.svd(A.toarray(), compute_uv=False)[-1]
        worst_sv = max(worst_sv, abs(sv.sigma - ref) / ref)

    grid = domain.build_rectangle(31, 31, 1.0)
    op = sparsela.assemble_laplacian(grid)
    band = spectra.compute_band(op, (0.0, 17.5 * np.pi**2)).subset(np.arange(10))
    reg = domain.strip_region(grid, 0.4, 0.6)
    T = 0.25
    Mc = observability.gramian(band, reg, T).matrix
    Mq = observability.gramian_quadrature(band, reg, T, steps=1000)
    gram_err = float(np.abs(Mc - Mq).max())

    st = domain.build_stadium(16)
    sop = sparsela.assemble_laplacian(st)
    dense = np.linalg.eigvalsh(sop.matrix.toarray().real)
    window = (0.0, 600.0)
    sb = sparsela.eig_band(sop, window)
    ref = dense[(dense >= window[0]) & (dense <= window[1])]
    eig_err = float(np.abs(sb.values - ref).max() / max(1.0, ref.max())) if len(ref) == len(sb.values) else np.inf
    ok = worst_sv <= 1e-8 and gram_err <= 1e-6 and eig_err <= 1e-8
    return Check(11, "dense oracles", bool(ok),
                 {"smin_rel_error": worst_sv, "gramian_error": gram_err, "eig_rel_error": eig_err,
                  "eig_count": len(ref)})


REGISTRY = {1: square_spectrum, 2: stadium_wing, 3: permode_uniformity, 4: log_law, 5: sqrt_log_gap,
            6: well_exponents, 7: hum_null_control, 8: geodesic_concentration,
            9: resolvent_to_observability, 10: quasimode_band, 11: oracles}
