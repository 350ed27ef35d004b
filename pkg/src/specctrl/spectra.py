"""Eigenbands in the weighted grid normalization, analytic reference spectra,
and the on-disk band cache."""
from __future__ import annotations

import csv
import hashlib
import logging
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import domain, sparsela
from .errors import InvalidArgument

log = logging.getLogger(__name__)

CACHE_ENV = "SPECCTRL_CACHE_DIR"


@dataclass(frozen=True, eq=False)
class EigenBand:
    """Eigenpairs of a grid operator inside a window.

    ``vectors[:, j]`` is the grid function u_j with ``grid.norm(u_j) == 1``.
    """

    grid: domain.Grid
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    window: tuple
    truncated: bool = False

    def __len__(self):
        return len(self.values)

    @property
    def count(self):
        return len(self.values)

    def gram(self):
        """Weighted Gram matrix of the stored vectors."""
        V = self.vectors
        return (V.conj().T * self.grid.weights) @ V

    @cached_property
    def parity(self):
        """One tag per eigenfunction: a '+', '-' or '0' (mixed) per grid reflection."""
        try:
            perms = self.grid.reflections()
        except InvalidArgument:
            return ["" for _ in self.values]
        tags = []
        for j in range(self.count):
            u = self.vectors[:, j]
            t = ""
            for p in perms:
                c = np.real(self.grid.inner(u[p], u))
                t += "+" if c > 1 - 1e-6 else "-" if c < -1 + 1e-6 else "0"
            tags.append(t)
        return tags

    def subset(self, idx):
        idx = np.atleast_1d(idx)
        return EigenBand(self.grid, self.values[idx], self.vectors[:, idx], self.residuals[idx],
                         self.window, self.truncated)


def from_pairs(grid, pairs):
    """Convert Euclidean eigenvectors of a symmetrized operator to weighted grid functions."""
    V = pairs.vectors / np.sqrt(grid.weights)[:, None]
    V = np.ascontiguousarray(V)
    V.setflags(write=False)
    return EigenBand(grid, pairs.values, V, pairs.residuals, pairs.window, pairs.truncated)


# ------------------------------------------------------------------ cache

def cache_dir():
    d = os.environ.get(CACHE_ENV)
    return Path(d) if d else Path.home() / ".cache" / "specctrl"


def band_cache_key(op, window, tol, max_count=None):
    h = hashlib.sha256()
    h.update((op.grid.digest if op.grid is not None else "nogrid").encode())
    m = op.matrix
    for a in (m.indptr, m.indices, m.data):
        h.update(np.ascontiguousarray(a).tobytes())
    h.update(repr((float(window[0]), float(window[1]), float(tol), max_count)).encode())
    return h.hexdigest()[:32]


def _load_cached(path, grid):
    with np.load(path, allow_pickle=False) as z:
        vec = z["vectors"]
        vec.setflags(write=False)
        return EigenBand(grid, z["values"], vec, z["residuals"], tuple(z["window"]),
                         bool(z["truncated"]))


def _store(path, band):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, values=band.values, vectors=band.vectors, residuals=band.residuals,
             window=np.array(band.window), truncated=np.array(band.truncated))
    os.replace(tmp, path)


def compute_band(op, window, max_count=None, tol=1e-9, cache=None):
    """Eigenband of a grid operator; ``cache=None`` uses the cache only when
    ``SPECCTRL_CACHE_DIR`` is set."""
    grid = op.grid
    if grid is None:
        raise InvalidArgument("operator carries no grid")
    use = cache if cache is not None else bool(os.environ.get(CACHE_ENV))
    path = None
    if use:
        path = cache_dir() / "bands" / f"{band_cache_key(op, window, tol, max_count)}.npz"
        if path.exists():
            log.debug("band cache hit %s", path.name)
            return _load_cached(path, grid)
    band = from_pairs(grid, sparsela.eig_band(op, window, max_count=max_count, tol=tol))
    if path is not None:
        _store(path, band)
    return band


# ------------------------------------------------------- reference spectra

def analytic_rectangle_spectrum(a, window):
    """Dirichlet eigenvalues pi^2 (m^2 + k^2/a^2) of [0,1]x[0,a] inside ``window``."""
    if a <= 0:
        raise InvalidArgument("height a must be positive")
    lo, hi = window
    out = []
    mmax = int(np.sqrt(max(hi, 0) / np.pi**2)) + 1
    for m in range(1, mmax + 1):
        for k in range(1, int(a * np.sqrt(max(hi, 0)) / np.pi) + 2):
            lam = np.pi**2 * (m * m + k * k / a**2)
            if lo <= lam <= hi:
                out.append((lam, (m, k)))
    out.sort()
    return out


def discrete_rectangle_eigenvalue(grid, m, k):
    """Exact eigenvalue of the 5-point Laplacian for mode (m, k) on a rectangle grid."""
    sx, sy = grid.spacing
    a = grid.params["a"]
    return (4 / sx**2) * np.sin(m * np.pi * sx / 2) ** 2 + (4 / sy**2) * np.sin(k * np.pi * sy / (2 * a)) ** 2


def project_onto_band(band, v, grid=None):
    """Weighted coefficients c_j = <v, u_j> and the out-of-band residual norm."""
    if grid is not None and grid is not band.grid and grid.digest != band.grid.digest:
        raise InvalidArgument("grid function does not live on the band's grid")
    v = np.asarray(v)
    if v.shape[0] != band.grid.size:
        raise InvalidArgument(f"grid function has {v.shape[0]} nodes, band grid has {band.grid.size}")
    w = band.grid.weights
    c = band.vectors.conj().T @ (w * v)
    rest = v - band.vectors @ c
    return c, band.grid.norm(rest)


# --------------------------------------------------------------- cosh modes

def cosh_resolution(m, L=3.0, ppw=30, energy=1.3, n_min=201):
    """Node count resolving wavenumber sqrt(energy)*m with ``ppw`` points per wavelength."""
    k = np.sqrt(energy) * m
    n = int(np.ceil(2 * L * k * ppw / (2 * np.pi)))
    n = max(n, n_min)
    return n + (n % 2 == 0)  # odd: a node sits on the geodesic x = 0


def mode_eigenpairs_cosh(L, m, count, n=None, ppw=30, tol=1e-9, cache=None):
    """Lowest ``count`` eigenpairs of the m-th angular mode on the cosh cylinder."""
    if m < 1:
        raise InvalidArgument("mode m must be >= 1")
    n = n or cosh_resolution(m, L, ppw)
    grid = domain.build_cosh_mode(n, L, m)
    op = sparsela.assemble_laplacian(grid)
    upper = float(abs(op.matrix).sum(axis=1).max()) * 1.01
    return compute_band(op, (0.0, upper), max_count=count, tol=tol, cache=cache)


def cosh_band(m, window, L=3.0, n=None, ppw=30, tol=1e-9, cache=None):
    """Eigenpairs of the m-th cosh mode with eigenvalues in ``window``."""
    n = n or cosh_resolution(m, L, ppw, energy=max(1.3, window[1] / m**2))
    grid = domain.build_cosh_mode(n, L, m)
    return compute_band(sparsela.assemble_laplacian(grid), window, tol=tol, cache=cache)


# ---------------------------------------------------------------------- IO

def write_band_csv(band, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["index", "lambda", "residual", "parity"])
        for j, (lam, res, par) in enumerate(zip(band.values, band.residuals, band.parity)):
            wr.writerow([j, repr(float(lam)), repr(float(res)), par])
