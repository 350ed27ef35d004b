"""Complex-absorbing-potential operators and their resolvent norms.

Two separated 1D models are provided:

``hyperbolic``
    one angular mode m of the cosh cylinder, h = 1/m,
    Q(z) = h^2 L_m - z - i * strength * h * a(x). The closed geodesic x = 0 is a
    hyperbolic barrier top of the effective potential 1/cosh^2 x at energy 1.
``well``
    the degenerate barrier Q(z) = -h^2 D^2 - x^(2p) - z - i * amplitude * a(x)
    on (-X, X), barrier top at energy 0.

All norms are operator 2-norms in the weighted L^2 of the grid (the
symmetrized matrices make this the Euclidean norm).
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import domain, sparsela, spectra
from .errors import ConvergenceFailure, InvalidArgument, SingularShiftError

log = logging.getLogger(__name__)

SCAN_COLUMNS = ["h", "z_re", "z_im", "norm", "cutoff_norm", "iterations"]

HYPERBOLIC_DEFAULTS = {"L": 3.0, "x0": 1.5, "ramp": None, "strength": 10.0, "ppw": 30, "cutoff_at": None}
WELL_DEFAULTS = {"X": 2.0, "x0": 1.0, "ramp": None, "amplitude": 1.0, "ppw": 25, "power": 1}
Z_GRID = {"hyperbolic": (0.9, 1.1, 11), "well": (-0.05, 0.05, 11)}


@dataclass(frozen=True, eq=False)
class CapOperator:
    """Q = h^2 L + V - z - i * amplitude * diag(a), on a symmetrized 1D grid."""

    model: str
    base: sparsela.SparseOperator
    h: float
    z: complex
    damping: domain.Region
    amplitude: float
    matrix: sparsela.SparseOperator
    trapped: domain.Region

    @property
    def grid(self):
        return self.base.grid

    def damping_form(self, u):
        """-Im <Q u, u> for a grid function u (weighted inner product)."""
        v = np.sqrt(self.grid.weights) * u
        return -float(np.imag(np.vdot(v, self.matrix.matrix @ v)))


def _assemble_cap(model, base, potential, h, z, damping, amplitude, trapped):
    n = base.dimension
    a = damping.indicator
    if np.any(a[trapped.support] != 0):
        raise InvalidArgument("damping does not vanish on the trapped-set neighbourhood")
    Q = (h * h) * base.matrix + sp.diags(potential - z - 1j * amplitude * a)
    Q = sparsela.SparseOperator(sp.csr_matrix(Q, dtype=complex), sparsela.GENERAL,
                                f"cap:{model}", base.grid)
    return CapOperator(model, base, float(h), complex(z), damping, float(amplitude), Q, trapped)


def build_cap_hyperbolic(m, z=1.0, L=3.0, x0=1.5, ramp=None, n=None, strength=10.0, ppw=30):
    """CAP operator for angular mode ``m`` on the cosh cylinder; h = 1/m.

    ``a`` vanishes on |x| <= x0 and rises to 1 at |x| = x0 + ramp (default: at
    the ends). ``strength`` multiplies the paper-normalized damping h*a.
    """
    if not 0 < x0 < L:
        raise InvalidArgument(f"damping start x0={x0} must lie in (0, L={L})")
    h = 1.0 / m
    n = n or spectra.cosh_resolution(m, L, ppw)
    grid = domain.build_cosh_mode(n, L, m)
    base = sparsela.assemble_laplacian(grid)
    a = domain.cap_profile(grid, x0, ramp)
    trapped = domain.region_from_predicate(grid, lambda x: np.abs(x) <= x0, label="trapped")
    return _assemble_cap("hyperbolic", base, np.zeros(n), h, z, a, strength * h, trapped)


def well_resolution(h, power, X, z=0.0, ppw=25, n_min=201):
    k = math.sqrt(X ** (2 * power) + abs(z) + 1.0) / h
    n = max(int(math.ceil(2 * X * k * ppw / (2 * math.pi))), n_min)
    return n + (n % 2 == 0)


def build_cap_degenerate_well(h, power=1, z=0.0, X=2.0, x0=1.0, ramp=None, n=None,
                              amplitude=1.0, ppw=25):
    """CAP operator for -h^2 D^2 - x^(2*power) on (-X, X) with unit-amplitude damping."""
    if power < 1:
        raise InvalidArgument("well power must be >= 1")
    if not 0 < x0 < X:
        raise InvalidArgument(f"damping start x0={x0} must lie in (0, X={X})")
    if h <= 0:
        raise InvalidArgument("h must be positive")
    n = n or well_resolution(h, power, X, z, ppw)
    grid = domain.build_interval(n, 2 * X, start=-X)
    base = sparsela.assemble_laplacian(grid)
    x = grid.points[:, 0]
    a = domain.cap_profile(grid, x0, ramp)
    trapped = domain.region_from_predicate(grid, lambda x: np.abs(x) <= x0, label="trapped")
    return _assemble_cap("well", base, -(x ** (2 * power)), h, z, a, amplitude, trapped)


def resolvent_norm(capop, tol=1e-8, factorization=None, return_info=False):
    """||Q(z)^{-1}|| = 1 / sigma_min(Q)."""
    fact = factorization or sparsela.factorize(capop.matrix, 0.0)
    sv = sparsela.smallest_singular(capop.matrix, tol=tol, factorization=fact)
    norm = 1.0 / sv.sigma
    if return_info:
        return norm, sv.iterations, fact
    return norm


def cutoff_resolvent_norm(capop, phi, tol=1e-8, factorization=None, check_support=True):
    """||Q(z)^{-1} diag(phi)||, the resolvent cut off away from the trapped set."""
    ind = phi.indicator if isinstance(phi, domain.Region) else np.asarray(phi, float)
    if not np.any(ind):
        return 0.0
    if check_support and np.any(ind[capop.trapped.support] != 0):
        raise InvalidArgument("cutoff overlaps the trapped-set neighbourhood")
    fact = factorization or sparsela.factorize(capop.matrix, 0.0)
    est, _ = sparsela.inverse_composed_norm(fact, ind, tol=tol)
    return est


def default_cutoff(capop):
    """Sharp cutoff on |x| >= the point where the damping reaches 1/2."""
    x = capop.grid.points[:, 0]
    a = capop.damping.indicator
    inner = np.min(np.abs(x[a >= 0.5]))
    return domain.region_from_predicate(capop.grid, lambda x: np.abs(x) >= inner - 1e-12,
                                        label="cutoff")


# ------------------------------------------------------------------- scans

@dataclass
class ModelSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("hyperbolic", "well"):
            raise InvalidArgument(f"unknown model {self.kind!r}")
        base = dict(HYPERBOLIC_DEFAULTS if self.kind == "hyperbolic" else WELL_DEFAULTS)
        unknown = set(self.params) - set(base)
        if unknown:
            raise InvalidArgument(f"unknown {self.kind} parameters: {sorted(unknown)}")
        base.update(self.params)
        self.params = base

    @property
    def label(self):
        if self.kind == "well":
            return f"well-p{self.params['power']}"
        return "hyperbolic"

    def build(self, h, z):
        p = self.params
        if self.kind == "hyperbolic":
            m = round(1.0 / h)
            if abs(m * h - 1.0) > 1e-9:
                raise InvalidArgument(f"hyperbolic model needs h = 1/m, got h={h}")
            return build_cap_hyperbolic(m, z, L=p["L"], x0=p["x0"], ramp=p["ramp"],
                                        strength=p["strength"], ppw=p["ppw"])
        return build_cap_degenerate_well(h, p["power"], z, X=p["X"], x0=p["x0"], ramp=p["ramp"],
                                         amplitude=p["amplitude"], ppw=p["ppw"])

    def default_z_grid(self):
        lo, hi, k = Z_GRID[self.kind]
        return np.linspace(lo, hi, k)


@dataclass
class ScanPoint:
    h: float
    z: complex
    norm: float
    cutoff_norm: float = float("nan")
    iterations: int = 0


@dataclass
class ScanResult:
    model: str
    params: dict
    points: list
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: -p.h)

    @property
    def h(self):
        return np.array([p.h for p in self.points])

    @property
    def norms(self):
        return np.array([p.norm for p in self.points])

    @property
    def cutoff_norms(self):
        return np.array([p.cutoff_norm for p in self.points])

    def point_for(self, h):
        for p in self.points:
            if abs(p.h - h) <= 1e-12 * h:
                return p
        raise KeyError(h)


def _scan_point(model, h, z, with_cutoff, tol):
    try:
        cap = model.build(h, z)
        norm, its, fact = resolvent_norm(cap, tol=tol, return_info=True)
        cut = float("nan")
        if with_cutoff:
            cut = cutoff_resolvent_norm(cap, default_cutoff(cap), tol=tol, factorization=fact)
        return {"h": h, "z": complex(z), "norm": norm, "cutoff_norm": cut, "iterations": its}
    except (ConvergenceFailure, SingularShiftError) as exc:
        return {"h": h, "z": complex(z), "error": f"{type(exc).__name__}: {exc}"}


def _point_cache_path(model, h, z, with_cutoff, tol):
    key = json.dumps([model.kind, model.params, repr(h), repr(complex(z)), with_cutoff, tol],
                     sort_keys=True, default=str)
    digest = hashlib.sha256(key.encode()).hexdigest()[:32]
    return spectra.cache_dir() / "scan" / f"{digest}.json"


def _cached_point(model, h, z, with_cutoff, tol, use_cache):
    path = _point_cache_path(model, h, z, with_cutoff, tol) if use_cache else None
    if path is not None and path.exists():
        r = json.loads(path.read_text())
        r["z"] = complex(*r["z"])
        return r
    r = _scan_point(model, h, z, with_cutoff, tol)
    if path is not None and "error" not in r:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp")
        tmp.write_text(json.dumps(dict(r, z=[r["z"].real, r["z"].imag])))
        os.replace(tmp, path)
    return r


def scan_h(model, h_list, z_policy=None, with_cutoff=None, workers=1, tol=1e-8, cache=None):
    """Resolvent norms over ``h_list``.

    ``z_policy`` is a number (fixed z), a sequence (maximize the norm over
    that z-grid at each h), or None for the model's default grid. Failed
    points are recorded in ``diagnostics['failures']`` and skipped. Point
    results are cached like eigenbands (``cache=None`` follows SPECCTRL_CACHE_DIR).
    """
    use_cache = cache if cache is not None else bool(os.environ.get(spectra.CACHE_ENV))
    if isinstance(model, str):
        model = ModelSpec(model)
    hs = [float(h) for h in h_list]
    if not hs or min(hs) <= 0:
        raise InvalidArgument("h list must be nonempty and positive")
    if z_policy is None:
        zs = model.default_z_grid()
    elif np.ndim(z_policy) == 0:
        zs = np.array([z_policy])
    else:
        zs = np.asarray(z_policy)
    if with_cutoff is None:
        with_cutoff = model.kind == "hyperbolic"
    jobs = [(h, z) for h in hs for z in zs]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(_cached_point, model, h, z, with_cutoff, tol, use_cache) for h, z in jobs]
            rows = [f.result() for f in futs]
    else:
        rows = [_cached_point(model, h, z, with_cutoff, tol, use_cache) for h, z in jobs]
    rows.sort(key=lambda r: (-r["h"], r["z"].real, r["z"].imag))
    failures = [r for r in rows if "error" in r]
    best = {}
    for r in rows:
        if "error" in r:
            continue
        cur = best.get(r["h"])
        if cur is None or r["norm"] > cur["norm"]:
            best[r["h"]] = r
    pts = [ScanPoint(r["h"], r["z"], r["norm"], r["cutoff_norm"], r["iterations"]) for r in best.values()]
    for f in failures:
        log.warning("scan point h=%g z=%s failed: %s", f["h"], f["z"], f["error"])
    return ScanResult(model.label, dict(model.params, kind=model.kind), pts,
                      {"all": rows, "failures": failures, "z_grid": [complex(z) for z in zs]})


def modes_to_h(modes):
    return [1.0 / m for m in modes]


def dyadic(lo, hi):
    """Powers of two from lo to hi inclusive."""
    out, m = [], lo
    while m <= hi:
        out.append(m)
        m *= 2
    return out


def sqrt_log_gap(scan):
    """(h * cutoff norm)^2 / (h * full norm) per scan point."""
    h = scan.h
    return (h * scan.cutoff_norms) ** 2 / (h * scan.norms)


# -------------------------------------------------------------------- fits

LAWS = ("power", "log", "sqrt-log", "power-log")


@dataclass
class FitReport:
    model: str
    law: str
    constants: dict
    r2: float
    residuals: list
    rss_log: float

    def to_dict(self):
        return asdict(self)


def fit_scaling(scan_or_h, law, norms=None, model=None):
    """Least-squares fit of a scaling law to resolvent norms.

    * ``power``: log(norm) = log(C) + alpha * log(1/h)
    * ``log``: h * norm = C * log(1/h) + intercept
    * ``sqrt-log``: h * norm = C * sqrt(log(1/h)) + intercept
    * ``power-log``: log(norm / log(1/h)) = log(C) + alpha * log(1/h)

    ``r2`` is measured in each law's own regression coordinates; ``rss_log``
    is the residual sum of squares of log(norm) under the fitted law, which
    is comparable across laws.
    """
    if law not in LAWS:
        raise InvalidArgument(f"unknown law {law!r}; expected one of {LAWS}")
    if isinstance(scan_or_h, ScanResult):
        h, y, model = scan_or_h.h, scan_or_h.norms, model or scan_or_h.model
    else:
        h, y = np.asarray(scan_or_h, float), np.asarray(norms, float)
    if np.any(h >= 1) and law != "power":
        raise InvalidArgument("log laws need h < 1")
    if len(h) < 4:
        raise InvalidArgument(f"need at least 4 scan points, got {len(h)}")
    t = np.log(1.0 / h)
    if law == "power":
        X, target = t, np.log(y)
    elif law == "power-log":
        X, target = t, np.log(y / t)
    elif law == "log":
        X, target = t, h * y
    else:
        X, target = np.sqrt(t), h * y
    A = np.column_stack([X, np.ones_like(X)])
    coef, *_ = np.linalg.lstsq(A, target, rcond=None)
    pred = A @ coef
    resid = target - pred
    ss_tot = np.sum((target - target.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    r2 = float(min(max(r2, 0.0), 1.0))
    if law == "power":
        consts = {"alpha": float(coef[0]), "C": float(np.exp(coef[1]))}
        log_pred = pred
    elif law == "power-log":
        consts = {"alpha": float(coef[0]), "C": float(np.exp(coef[1]))}
        log_pred = pred + np.log(t)
    else:
        consts = {"C": float(coef[0]), "intercept": float(coef[1])}
        log_pred = np.log(np.maximum(pred, 1e-300) / h)
    rss_log = float(np.sum((np.log(y) - log_pred) ** 2))
    return FitReport(model or "", law, consts, r2, [float(r) for r in resid], rss_log)


# ---------------------------------------------------------------------- IO

def write_scan_csv(scan, path):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(SCAN_COLUMNS)
        for p in scan.points:
            wr.writerow([repr(p.h), repr(p.z.real), repr(p.z.imag), repr(p.norm),
                         repr(p.cutoff_norm), p.iterations])
    meta = {"model": scan.model, "params": scan.params,
            "failures": [{"h": f["h"], "z": [f["z"].real, f["z"].imag], "error": f["error"]}
                         for f in scan.diagnostics.get("failures", [])]}
    path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_scan_csv(path):
    path = Path(path)
    pts = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = set(SCAN_COLUMNS) - set(rd.fieldnames or [])
        if missing:
            raise InvalidArgument(f"{path}: missing columns {sorted(missing)}")
        for row in rd:
            pts.append(ScanPoint(float(row["h"]), complex(float(row["z_re"]), float(row["z_im"])),
                                 float(row["norm"]), float(row["cutoff_norm"]), int(row["iterations"])))
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    model, params = "hyperbolic", dict(HYPERBOLIC_DEFAULTS, kind="hyperbolic")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        model, params = meta["model"], meta["params"]
    return ScanResult(model, params, pts)
