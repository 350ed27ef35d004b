"""Discretized model domains and regions.

Four grid kinds are supported:

* ``interval``: uniform nodes on (start, start + length), Dirichlet ends.
* ``rectangle``: tensor lattice on (0, 1) x (0, a), Dirichlet on all sides.
* ``stadium``: masked square lattice covering a Bunimovich stadium.
* ``cosh-mode``: one angular mode on the surface dx^2 + cosh(x)^2 dtheta^2,
  truncated to (-L, L).

Only the active (unknown) nodes are stored; boundary nodes carry the value
zero and never appear in any vector.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidArgument

log = logging.getLogger(__name__)

GRID_MAGIC = b"SPECCTRL-GRID\n"
_BOUNDARY_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


def smoothstep(t):
    """C^1 cubic ramp 3t^2 - 2t^3, clipped to [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True, eq=False)
class Grid:
    kind: str
    points: np.ndarray
    spacing: tuple
    weights: np.ndarray
    params: dict
    lattice_shape: tuple | None = None
    lattice_index: np.ndarray | None = None
    lattice_origin: tuple | None = None
    metric: dict | None = field(default=None)

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def coords(self):
        """Tuple of coordinate arrays, one per axis."""
        return tuple(self.points[:, k] for k in range(self.dim))

    @cached_property
    def index_map(self):
        """Lattice-shaped array of active-node indices, -1 where inactive."""
        if self.lattice_shape is None:
            return None
        imap = -np.ones(self.lattice_shape, dtype=np.int64)
        imap[tuple(self.lattice_index.T)] = np.arange(self.size)
        imap.setflags(write=False)
        return imap

    @property
    def mask(self):
        if self.lattice_shape is None:
            return None
        return self.index_map >= 0

    @cached_property
    def digest(self):
        h = hashlib.sha256()
        h.update(json.dumps(self.header(), sort_keys=True).encode())
        h.update(self.points.tobytes())
        h.update(self.weights.tobytes())
        return h.hexdigest()

    def header(self):
        return {
            "kind": self.kind,
            "size": int(self.size),
            "dim": int(self.dim),
            "spacing": [float(s) for s in self.spacing],
            "params": self.params,
            "lattice_shape": None if self.lattice_shape is None else list(self.lattice_shape),
            "lattice_origin": None if self.lattice_origin is None else list(self.lattice_origin),
        }

    def inner(self, u, v):
        """Weighted discrete inner product <u, v> (conjugate-linear in v)."""
        return np.sum(self.weights * u * np.conj(v))

    def norm(self, u):
        return float(np.sqrt(np.sum(self.weights * np.abs(u) ** 2)))

    def volume(self):
        return float(np.sum(self.weights))

    def reflections(self):
        """Index permutations realizing the grid's reflection symmetries.

        ``u[perm]`` is the reflected grid function.
        """
        if self.kind in ("interval", "cosh-mode"):
            return [np.arange(self.size)[::-1].copy()]
        if self.kind == "rectangle":
            nx, ny = self.lattice_shape
            i, j = self.lattice_index.T
            return [self.index_map[nx - 1 - i, j], self.index_map[i, ny - 1 - j]]
        if self.kind == "stadium":
            n = self.params["n_per_unit"]
            i0, j0 = self.lattice_origin
            i, j = self.lattice_index.T
            li = int(round(self.params["L"] * n))
            # x -> L - x in absolute lattice units, then back to array offsets
            ix = li - (i + i0) - i0
            jy = -(j + j0) - j0
            perms = []
            for a, b in ((ix, j), (i, jy)):
                ok = (a >= 0) & (a < self.lattice_shape[0]) & (b >= 0) & (b < self.lattice_shape[1])
                if not np.all(ok):
                    raise InvalidArgument("stadium lattice is not symmetric")
                p = self.index_map[a, b]
                if np.any(p < 0):
                    raise InvalidArgument("stadium mask is not symmetric")
                perms.append(p)
            return perms
        raise InvalidArgument(f"unknown grid kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Region:
    grid: Grid
    indicator: np.ndarray
    label: str = ""

    @property
    def is_sharp(self):
        return bool(np.all((self.indicator == 0.0) | (self.indicator == 1.0)))

    @property
    def is_empty(self):
        return not np.any(self.indicator > 0)

    @property
    def support(self):
        return self.indicator > 0

    def intersect(self, other, label=None):
        if other.grid is not self.grid:
            raise InvalidArgument("regions live on different grids")
        return Region(self.grid, _frozen(np.minimum(self.indicator, other.indicator)),
                      label or f"{self.label}&{other.label}")

    def complement(self, label=None):
        return Region(self.grid, _frozen(1.0 - self.indicator), label or f"~{self.label}")


# ---------------------------------------------------------------- builders

def build_interval(n, length=1.0, start=0.0):
    """Uniform grid on (start, start + length) with ``n`` interior nodes."""
    if n < 3:
        raise InvalidArgument(f"interval needs n >= 3 nodes, got {n}")
    if length <= 0:
        raise InvalidArgument("length must be positive")
    s = length / (n + 1)
    x = start + s * np.arange(1, n + 1)
    return Grid("interval", _frozen(x[:, None]), (s,), _frozen(np.full(n, s)),
                {"n": int(n), "length": float(length), "start": float(start)})


def build_rectangle(nx, ny, a=1.0):
    if nx < 3 or ny < 3:
        raise InvalidArgument(f"rectangle needs nx, ny >= 3, got {nx}, {ny}")
    if a <= 0:
        raise InvalidArgument("height a must be positive")
    sx, sy = 1.0 / (nx + 1), a / (ny + 1)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    idx = np.column_stack([i.ravel(), j.ravel()])
    pts = np.column_stack([(idx[:, 0] + 1) * sx, (idx[:, 1] + 1) * sy])
    return Grid("rectangle", _frozen(pts), (sx, sy), _frozen(np.full(nx * ny, sx * sy)),
                {"nx": int(nx), "ny": int(ny), "a": float(a)},
                lattice_shape=(nx, ny), lattice_index=_frozen(idx, np.int64),
                lattice_origin=(1, 1))


def stadium_indicator(x, y, r, L, tol=_BOUNDARY_TOL):
    """True strictly inside the stadium [0,L]x[-r,r] plus the two end discs."""
    rect = (x >= 0) & (x <= L) & (np.abs(y) < r - tol)
    left = x * x + y * y < r * r - tol
    right = (x - L) ** 2 + y * y < r * r - tol
    return rect | left | right


def build_stadium(n_per_unit, r=0.5, L=1.0):
    """Masked square lattice of spacing ``1/n_per_unit`` on the stadium.

    ``L * n_per_unit`` must be an integer so the rectangle's ends are lattice
    lines and the mask is reflection symmetric.
    """
    if r <= 0 or L <= 0:
        raise InvalidArgument("stadium needs r > 0 and L > 0")
    if r * n_per_unit < 4:
        raise InvalidArgument(
            f"n_per_unit={n_per_unit} too coarse: need at least 4 spacings per radius "
            f"(n_per_unit >= {int(np.ceil(4 / r))})")
    li = L * n_per_unit
    if abs(li - round(li)) > 1e-9:
        raise InvalidArgument("L * n_per_unit must be an integer")
    s = 1.0 / n_per_unit
    i0 = int(np.floor(-r * n_per_unit))
    i1 = int(round(li)) - i0
    j0 = i0
    j1 = -j0
    I, J = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    X, Y = I * s, J * s
    inside = stadium_indicator(X, Y, r, L)
    idx = np.argwhere(inside)
    pts = np.column_stack([X[inside], Y[inside]])
    return Grid("stadium", _frozen(pts), (s, s), _frozen(np.full(len(pts), s * s)),
                {"n_per_unit": int(n_per_unit), "r": float(r), "L": float(L)},
                lattice_shape=inside.shape, lattice_index=_frozen(idx, np.int64),
                lattice_origin=(i0, j0))


def build_cosh_mode(n, L=3.0, m=1):
    """One angular mode on the cosh cylinder, x in (-L, L), metric w = cosh x.

    Weights are the metric length elements ``spacing * w(x_i)``; the two end
    nodes also absorb the boundary half-cells so the weights integrate
    ``cosh`` with trapezoid accuracy.
    """
    if n < 3:
        raise InvalidArgument(f"cosh-mode grid needs n >= 3, got {n}")
    if L <= 0:
        raise InvalidArgument("half-length L must be positive")
    if m < 1 or int(m) != m:
        raise InvalidArgument("mode m must be a positive integer")
    s = 2.0 * L / (n + 1)
    x = -L + s * np.arange(1, n + 1)
    xm = -L + s * (np.arange(n + 1) + 0.5)
    w = np.cosh(x)
    weights = s * w
    weights[0] += 0.5 * s * np.cosh(L)
    weights[-1] += 0.5 * s * np.cosh(L)
    metric = {"nodes": _frozen(w), "midpoints": _frozen(np.cosh(xm))}
    return Grid("cosh-mode", _frozen(x[:, None]), (s,), _frozen(weights),
                {"n": int(n), "L": float(L), "m": int(m)}, metric=metric)


def rebuild(header):
    """Reconstruct a grid from its header (kind + params)."""
    p = header["params"]
    kind = header["kind"]
    if kind == "interval":
        return build_interval(p["n"], p["length"], p.get("start", 0.0))
    if kind == "rectangle":
        return build_rectangle(p["nx"], p["ny"], p["a"])
    if kind == "stadium":
        return build_stadium(p["n_per_unit"], p["r"], p["L"])
    if kind == "cosh-mode":
        return build_cosh_mode(p["n"], p["L"], p["m"])
    raise InvalidArgument(f"unknown grid kind {kind!r}")


# ----------------------------------------------------------------- regions

def region_from_predicate(grid, predicate, smooth_ramp=None, label=""):
    """Region from a function of the node coordinates.

    Without ``smooth_ramp`` the predicate's truthiness gives a sharp 0/1
    indicator. With a ramp width the predicate must return a signed depth
    (positive inside), and the indicator rises from 0 at depth 0 to 1 at
    depth ``smooth_ramp`` along a C^1 cubic.
    """
    vals = np.asarray(predicate(*grid.coords))
    if vals.shape != (grid.size,):
        vals = np.broadcast_to(vals, (grid.size,))
    if smooth_ramp is None:
        ind = (vals > 0).astype(float) if vals.dtype != bool else vals.astype(float)
    else:
        if smooth_ramp <= 0:
            raise InvalidArgument("ramp width must be positive")
        if vals.dtype == bool:
            raise InvalidArgument("a ramped region needs a signed-depth predicate, not a boolean one")
        ind = smoothstep(vals / smooth_ramp)
    reg = Region(grid, _frozen(ind), label)
    if reg.is_empty:
        log.warning("region %r is empty", label)
    return reg


def full_region(grid, label="full"):
    return Region(grid, _frozen(np.ones(grid.size)), label)


def strip_region(grid, lo, hi, label=None):
    """Sharp region lo < x < hi (first coordinate)."""
    return region_from_predicate(grid, lambda x, *rest: (x > lo) & (x < hi),
                                 label=label or f"strip:{lo}:{hi}")


def cap_profile(grid, x0, ramp=None, label="cap"):
    """Damping profile on a 1D grid: 0 for |x| <= x0, reaching 1 at |x| = x0 + ramp.

    ``ramp`` defaults to the distance from ``x0`` to the grid end.
    """
    if grid.dim != 1:
        raise InvalidArgument("cap_profile needs a 1D grid")
    end = _half_length(grid)
    if not 0 < x0 < end:
        raise InvalidArgument(f"damping start x0={x0} must lie in (0, {end})")
    if ramp is None:
        ramp = end - x0
    return region_from_predicate(grid, lambda x: np.abs(x) - x0, smooth_ramp=ramp, label=label)


def beyond_region(grid, x1, label=None):
    """Sharp region |x| > x1 on a 1D grid."""
    return region_from_predicate(grid, lambda x: np.abs(x) > x1, label=label or f"|x|>{x1}")


def stadium_wing_region(grid, margin=0.05, label="wing"):
    """The two half-discs of a stadium plus a ``margin``-wide strip of the rectangle."""
    if grid.kind != "stadium":
        raise InvalidArgument("wing region needs a stadium grid")
    L = grid.params["L"]
    return region_from_predicate(grid, lambda x, y: (x < margin) | (x > L - margin), label=label)


def _half_length(grid):
    if grid.kind == "cosh-mode":
        return grid.params["L"]
    if grid.kind == "interval":
        half = 0.5 * grid.params["length"]
        if abs(grid.params.get("start", 0.0) + half) > 1e-12:
            raise InvalidArgument("cap profiles need an interval centered at 0")
        return half
    raise InvalidArgument(f"no half-length for grid kind {grid.kind!r}")


# ----------------------------------------------------------- serialization

def save_grid(grid, path):
    """Write ``.grid``: magic line, JSON header line, then raw little-endian arrays."""
    arrays = [("points", grid.points.astype("<f8")), ("weights", grid.weights.astype("<f8"))]
    if grid.lattice_index is not None:
        arrays.append(("lattice_index", grid.lattice_index.astype("<i8")))
    if grid.metric is not None:
        arrays.append(("metric_nodes", grid.metric["nodes"].astype("<f8")))
        arrays.append(("metric_midpoints", grid.metric["midpoints"].astype("<f8")))
    head = grid.header()
    head["arrays"] = [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in arrays]
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(json.dumps(head, sort_keys=True).encode() + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a).tobytes())


def load_grid(path):
    raw = Path(path).read_bytes()
    if not raw.startswith(GRID_MAGIC):
        raise InvalidArgument(f"{path}: not a .grid file")
    rest = raw[len(GRID_MAGIC):]
    nl = rest.index(b"\n")
    head = json.loads(rest[:nl])
    buf = rest[nl + 1:]
    data, off = {}, 0
    for spec in head["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        data[spec["name"]] = np.frombuffer(buf, dt, count, off).reshape(spec["shape"])
        off += count * dt.itemsize
    metric = None
    if "metric_nodes" in data:
        metric = {"nodes": _frozen(data["metric_nodes"]), "midpoints": _frozen(data["metric_midpoints"])}
    li = data.get("lattice_index")
    return Grid(head["kind"], _frozen(data["points"]), tuple(head["spacing"]),
                _frozen(data["weights"]), head["params"],
                lattice_shape=None if head["lattice_shape"] is None else tuple(head["lattice_shape"]),
                lattice_index=None if li is None else _frozen(li, np.int64),
                lattice_origin=None if head["lattice_origin"] is None else tuple(head["lattice_origin"]),
                metric=metric)
