"""Sparse linear algebra kernels.

Assembly of the discrete Laplacians, shifted LU factorizations (SuperLU via
scipy), a shift-invert Lanczos band eigensolver with full
reorthogonalization, inverse iteration for the smallest singular value, and
conjugate gradients for Hermitian positive definite systems.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ConvergenceFailure, IndefiniteOperatorError, InvalidArgument,
                     SingularShiftError)

log = logging.getLogger(__name__)

HERMITIAN = "hermitian"
COMPLEX_SYMMETRIC = "complex-symmetric"
GENERAL = "general"

_EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class SparseOperator:
    matrix: sp.csr_matrix
    symmetry: str = GENERAL
    provenance: str = ""
    grid: object = None

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix)
        m.sum_duplicates()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)
        if m.shape[0] != m.shape[1]:
            raise InvalidArgument(f"operator must be square, got {m.shape}")

    @property
    def dimension(self):
        return self.matrix.shape[0]

    def __matmul__(self, x):
        return self.matrix @ x

    def hermitian_defect(self):
        """max |A - A*| relative to max |A|."""
        d = self.matrix - self.matrix.conj().T
        scale = abs(self.matrix).max() or 1.0
        return (abs(d).max() if d.nnz else 0.0) / scale


# ---------------------------------------------------------------- assembly

def assemble_laplacian(grid):
    """Second-order finite-difference -Laplacian with Dirichlet elimination.

    For ``cosh-mode`` grids this is the conservative Sturm-Liouville form
    ``-(1/w)(w u')' + m^2/w^2`` conjugated by ``diag(sqrt(weights))`` so the
    matrix is symmetric in the Euclidean inner product. Eigenvectors ``v`` of
    the returned matrix map back to grid functions ``u = v / sqrt(weights)``.
    """
    kind = grid.kind
    if kind == "interval":
        n = grid.size
        s = grid.spacing[0]
        A = sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / s**2
    elif kind in ("rectangle", "stadium"):
        A = _five_point(grid)
    elif kind == "cosh-mode":
        A = _cosh_mode(grid)
    else:
        raise InvalidArgument(f"cannot assemble Laplacian on grid kind {kind!r}")
    return SparseOperator(A, HERMITIAN, f"laplacian:{kind}", grid)


def _five_point(grid):
    sx, sy = grid.spacing
    imap = grid.index_map
    nx, ny = grid.lattice_shape
    i, j = grid.lattice_index.T
    n = grid.size
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.full(n, 2.0 / sx**2 + 2.0 / sy**2)]
    for di, dj, c in ((1, 0, sx), (-1, 0, sx), (0, 1, sy), (0, -1, sy)):
        ii, jj = i + di, j + dj
        inb = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
        nb = np.full(n, -1)
        nb[inb] = imap[ii[inb], jj[inb]]
        ok = nb >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(nb[ok])
        vals.append(np.full(ok.sum(), -1.0 / c**2))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def _cosh_mode(grid):
    s = grid.spacing[0]
    m = grid.params["m"]
    w = grid.metric["nodes"]
    wm = grid.metric["midpoints"]
    W = grid.weights
    diag = (wm[:-1] + wm[1:]) / (s * W) + m * m / w**2
    off = -wm[1:-1] / (s * np.sqrt(W[:-1] * W[1:]))
    return sp.diags([off, diag, off], [-1, 0, 1])


# ----------------------------------------------------------- factorization

@dataclass(eq=False)
class Factorization:
    """LU factors of ``A - shift*I``; reusable for many solves, including adjoint ones."""

    op: SparseOperator
    shift: complex
    lu: object
    symmetric_mode: bool = False
    negative_pivots: int | None = None
    info: dict = field(default_factory=dict)

    def solve(self, rhs):
        return self.lu.solve(_as_dtype(rhs, self.lu))

    def solve_adjoint(self, rhs):
        """Solve with ``(A - shift I)^*``."""
        return self.lu.solve(_as_dtype(rhs, self.lu), trans="H")

    def residual(self, x, rhs):
        r = self.op.matrix @ x - self.shift * x - rhs
        return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), np.finfo(float).tiny))


def _as_dtype(rhs, lu):
    rhs = np.asarray(rhs)
    if np.iscomplexobj(rhs) and lu.L.dtype.kind != "c":
        raise TypeError("complex right-hand side for a real factorization")
    return rhs.astype(lu.L.dtype, copy=False) if rhs.dtype != lu.L.dtype else rhs


def _shifted(op, shift):
    A = op.matrix
    if shift != 0:
        A = A - shift * sp.identity(A.shape[0], dtype=np.result_type(A.dtype, type(shift)), format="csr")
    return sp.csc_matrix(A)


def factorize(op, shift=0.0, inertia=False, check_singular=True):
    """Sparse LU of ``op - shift*I``.

    With ``inertia=True`` (Hermitian operator, real shift) the factorization
    is done with a symmetric ordering and no row pivoting, so the signs of
    ``diag(U)`` give the count of eigenvalues below ``shift`` (Sylvester).
    Falls back to a pivoted LU, without inertia, when that is unstable.
    """
    if isinstance(shift, complex) and shift.imag == 0:
        shift = shift.real
    M = _shifted(op, shift)
    n = M.shape[0]
    rng = np.random.default_rng(12345)
    b = rng.standard_normal(n)
    if np.iscomplexobj(M.data):
        b = b + 1j * rng.standard_normal(n)
    norm1 = spla.norm(M, 1) if M.nnz else 0.0

    def attempt(**kw):
        try:
            lu = spla.splu(M, **kw)
        except RuntimeError as exc:  # exactly singular pivot
            raise SingularShiftError(shift, str(exc)) from exc
        x = lu.solve(b.astype(lu.L.dtype, copy=False))
        resid = np.linalg.norm(M @ x - b) / np.linalg.norm(b)
        growth = np.linalg.norm(x) * norm1 / np.linalg.norm(b)
        return lu, resid, growth

    sym_ok = inertia and op.symmetry == HERMITIAN and np.isreal(shift)
    fact = None
    if sym_ok:
        lu, resid, growth = attempt(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                    options={"SymmetricMode": True})
        if resid < 1e-10 and np.array_equal(lu.perm_r, lu.perm_c):
            neg = int(np.sum(np.real(lu.U.diagonal()) < 0))
            fact = Factorization(op, shift, lu, True, neg, {"residual": resid, "growth": growth})
    if fact is None:
        lu, resid, growth = attempt()
        fact = Factorization(op, shift, lu, False, None, {"residual": resid, "growth": growth})
    if check_singular and (growth > 1.0 / (1e4 * _EPS) or not np.isfinite(growth)):
        raise SingularShiftError(shift, f"operator numerically singular at shift {shift!r} "
                                        f"(condition estimate {growth:.3g})")
    return fact


def solve(factorization, rhs, return_residual=False):
    x = factorization.solve(rhs)
    if return_residual:
        return x, factorization.residual(x, rhs)
    return x


# ------------------------------------------------------------ eigensolver

@dataclass(eq=False)
class EigenPairs:
    """Raw output of :func:`eig_band`; vectors are Euclidean-orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    window: tuple
    truncated: bool = False
    count_verified: bool = True
    expected_count: int | None = None


def eig_band(op, window, max_count=None, tol=1e-9, slice_size=48, seed=0, max_passes=8):
    """All eigenpairs of a Hermitian operator with eigenvalues in ``window``.

    The window is cut into slices of at most ``slice_size`` eigenvalues using
    Sylvester inertia counts; each slice is solved by shift-invert Lanczos at
    its midpoint with full reorthogonalization, restarting with locking until
    the slice count is matched. Returned pairs satisfy
    ``||A v - lam v|| <= tol * max(1, |lam|)``.

    With ``max_count`` the upper edge is lowered until at most that many
    eigenvalues remain; a degenerate cluster is never split, so fewer may
    be returned.
    """
    if op.symmetry != HERMITIAN:
        raise InvalidArgument("eig_band needs a Hermitian operator")
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise InvalidArgument(f"empty window {window}")
    n = op.dimension
    rng = np.random.default_rng(seed)

    for _ in range(4):
        lo_n, lo = _count_below(op, lo, -1)
        hi_n, hi = _count_below(op, hi, +1)
        verified = lo_n is not None and hi_n is not None
        total = (hi_n - lo_n) if verified else None
        truncated = False
        if max_count is not None and verified and total > max_count:
            truncated = True
            hi, hi_n = _shrink_to_count(op, lo, lo_n, hi, hi_n, max_count)
            total = hi_n - lo_n
            log.info("window %s holds more than %d eigenvalues; truncated to [%g, %g]",
                        window, max_count, lo, hi)
        if verified and total == 0:
            return EigenPairs(np.zeros(0), np.zeros((n, 0)), np.zeros(0), (lo, hi), truncated, True, 0)
        if verified:
            slices = _make_slices(op, lo, lo_n, hi, hi_n, slice_size)
        else:
            slices = [(lo, hi, None)]
        vals, vecs, res = [], [], []
        for a, b, cnt in slices:
            v, V, r = _solve_slice(op, a, b, cnt, tol, rng, max_passes)
            vals.append(v)
            vecs.append(V)
            res.append(r)
        vals = np.concatenate(vals)
        vecs = np.concatenate(vecs, axis=1) if vecs else np.zeros((n, 0))
        res = np.concatenate(res)
        # expand an edge that has an eigenvalue sitting on it and redo
        near_lo = np.any(np.abs(vals - lo) <= 1e-8 * max(1.0, abs(lo)))
        near_hi = np.any(np.abs(vals - hi) <= 1e-8 * max(1.0, abs(hi)))
        if not (near_lo or near_hi) or truncated:
            break
        if near_lo:
            lo -= 1e-6 * max(1.0, abs(hi))
        if near_hi:
            hi += 1e-6 * max(1.0, abs(hi))

    order = np.argsort(vals, kind="stable")
    vals, vecs, res = vals[order], vecs[:, order], res[order]
    vals, vecs, res = _canonicalize_clusters(op, vals, vecs, res)
    if verified and len(vals) != total:
        raise ConvergenceFailure(f"found {len(vals)} of {total} eigenvalues in [{lo}, {hi}]",
                                 estimate=vals)
    return EigenPairs(vals, vecs, res, (lo, hi), truncated, verified, total)


def _count_below(op, x, direction):
    """Eigenvalue count below ``x``; nudges ``x`` outward if it is an eigenvalue."""
    for k in range(6):
        try:
            f = factorize(op, x, inertia=True)
        except SingularShiftError:
            x += direction * 1e-6 * max(1.0, abs(x)) * (k + 1)
            continue
        return f.negative_pivots, x
    return None, x


def _shrink_to_count(op, lo, lo_n, hi, hi_n, max_count):
    a, b = lo, hi
    best = (lo, lo_n)
    for _ in range(60):
        mid = 0.5 * (a + b)
        cnt, mid = _count_below(op, mid, +1)
        if cnt is None:
            break
        if cnt - lo_n <= max_count:
            best = (mid, cnt)
            a = mid
            if cnt - lo_n == max_count:
                break
        else:
            b = mid
    return best


def _make_slices(op, lo, lo_n, hi, hi_n, size):
    out = []
    stack = [(lo, lo_n, hi, hi_n, 0)]
    while stack:
        a, an, b, bn, depth = stack.pop()
        cnt = bn - an
        if cnt == 0:
            continue
        if cnt <= size or depth > 30:
            out.append((a, b, cnt))
            continue
        mid = 0.5 * (a + b)
        mn, mid = _count_below(op, mid, +1)
        if mn is None:
            out.append((a, b, cnt))
            continue
        stack.append((mid, mn, b, bn, depth + 1))
        stack.append((a, an, mid, mn, depth + 1))
    out.sort()
    return out


def _orth_against(w, Q):
    if Q is not None and Q.shape[1]:
        for _ in range(2):
            w = w - Q @ (Q.conj().T @ w)
    return w


def _solve_slice(op, lo, hi, count, tol, rng, max_passes):
    A = op.matrix
    n = A.shape[0]
    dtype = np.result_type(A.dtype, float)
    sigma = 0.5 * (lo + hi)
    try:
        fact = factorize(op, sigma)
    except SingularShiftError:
        sigma += 1e-7 * max(1.0, hi - lo)
        fact = factorize(op, sigma)
    locked = np.zeros((n, 0), dtype=dtype)
    lvals, lres = [], []
    target = count if count is not None else None
    steps = min(n, max(2 * (count or 20) + 20, 40))
    idle = 0
    for p in range(max_passes):
        room = n - locked.shape[1]
        if room <= 0:
            break
        k = min(steps, room)
        V, T = _lanczos(fact, locked, k, rng, dtype)
        theta, Y = sla.eigh(T)
        keep = np.abs(theta) > 0
        lam = sigma + 1.0 / theta[keep]
        Y = Y[:, keep]
        inside = (lam >= lo) & (lam <= hi)
        added = 0
        for lv, y in zip(lam[inside], Y[:, inside].T):
            x = V @ y
            x = _orth_against(x, locked)
            nx = np.linalg.norm(x)
            if nx < 0.5:
                continue  # already locked direction
            x /= nx
            lv = float(np.real(np.vdot(x, A @ x)))
            r = np.linalg.norm(A @ x - lv * x)
            if r <= tol * max(1.0, abs(lv)):
                locked = np.column_stack([locked, x])
                lvals.append(lv)
                lres.append(r)
                added += 1
        if target is not None and len(lvals) >= target:
            break
        if target is None:
            idle = idle + 1 if added == 0 else 0
            if idle >= 2:
                break
        steps = min(n, int(steps * 1.5) + 10)
    return np.array(lvals), locked, np.array(lres)


def _lanczos(fact, locked, k, rng, dtype):
    """k steps of Lanczos on (A - sigma)^{-1}, fully reorthogonalized, deflating ``locked``.

    Returns the basis V and the projection V^* OP V. A breakdown restarts
    with a fresh random vector, which is how repeated eigenvalues get found.
    """
    n = fact.op.dimension
    V = np.zeros((n, k), dtype=dtype)
    W = np.zeros((n, k), dtype=dtype)

    def fresh(basis):
        for _ in range(5):
            v = rng.standard_normal(n).astype(dtype)
            v = _orth_against(v, locked)
            v = _orth_against(v, basis)
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                return v / nv
        return None

    v = fresh(None)
    if v is None:
        return V[:, :0], np.zeros((0, 0))
    V[:, 0] = v
    used = k
    prev_beta = 0.0
    for j in range(k):
        w = fact.solve(V[:, j])
        if not np.iscomplexobj(V):
            w = np.real(w)
        w = _orth_against(w, locked)
        W[:, j] = w
        a = abs(np.vdot(V[:, j], w))
        w = _orth_against(w, V[:, : j + 1])
        if j + 1 == k:
            break
        b = np.linalg.norm(w)
        if b <= 1e-10 * max(a, prev_beta, 1e-300):
            nv = fresh(V[:, : j + 1])
            if nv is None:
                used = j + 1
                break
            V[:, j + 1] = nv
            prev_beta = 0.0
        else:
            V[:, j + 1] = w / b
            prev_beta = b
    V, W = V[:, :used], W[:, :used]
    T = V.conj().T @ W
    return V, 0.5 * (T + T.conj().T)


def _canonicalize_clusters(op, vals, vecs, res, rel=1e-8):
    """Deterministic basis inside near-degenerate clusters and a sign convention for all vectors."""
    A = op.matrix
    n = len(vals)
    i = 0
    vals, vecs, res = vals.copy(), vecs.copy(), res.copy()
    while i < n:
        j = i + 1
        while j < n and abs(vals[j] - vals[j - 1]) <= rel * max(1.0, abs(vals[j])):
            j += 1
        if j - i > 1:
            C = vecs[:, i:j]
            _, _, piv = sla.qr(C.conj().T, pivoting=True, mode="economic")
            rows = np.sort(piv[: j - i])
            B = C @ np.linalg.inv(C[rows, :])
            Qc, _ = np.linalg.qr(B)
            for c in range(j - i):
                q = Qc[:, c]
                lv = float(np.real(np.vdot(q, A @ q)))
                vecs[:, i + c] = q
                vals[i + c] = lv
                res[i + c] = np.linalg.norm(A @ q - lv * q)
            # Rayleigh quotients inside a cluster differ by rounding only; keep them ascending
            vals[i:j] = np.maximum.accumulate(vals[i:j])
        i = j
    for c in range(n):
        v = vecs[:, c]
        big = np.nonzero(np.abs(v) > 1e-8 * np.abs(v).max())[0]
        if len(big):
            ph = v[big[0]] / abs(v[big[0]])
            vecs[:, c] = v / ph if np.iscomplexobj(v) else v * np.sign(np.real(ph))
    return vals, vecs, res


# --------------------------------------------------- singular values

class SingularValue(NamedTuple):
    sigma: float
    vector: np.ndarray
    iterations: int


def smallest_singular(op, tol=1e-8, maxiter=500, block=4, factorization=None, seed=0):
    """sigma_min(A) by block inverse iteration on A^* A.

    Uses one LU factorization of ``A``: each sweep solves with ``A`` and then
    with ``A^*``. Convergence is declared once successive Rayleigh-Ritz
    estimates agree to ``tol`` relative on two consecutive sweeps.
    """
    mat = op.matrix if isinstance(op, SparseOperator) else sp.csr_matrix(op)
    sop = op if isinstance(op, SparseOperator) else SparseOperator(mat)
    n = mat.shape[0]
    fact = factorization or factorize(sop, 0.0, check_singular=False)
    p = max(1, min(block, n))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p)) + 1j * rng.standard_normal((n, p))
    X, _ = np.linalg.qr(X)
    prev, agree = None, 0
    est, vec = None, X[:, 0]
    for it in range(1, maxiter + 1):
        Z = fact.solve(X)
        G = Z.conj().T @ Z
        mu, Y = np.linalg.eigh(0.5 * (G + G.conj().T))
        if mu[-1] <= 0 or not np.isfinite(mu[-1]):
            raise SingularShiftError(0.0, "operator is singular")
        est = 1.0 / np.sqrt(mu[-1])
        vec = X @ Y[:, -1]
        if prev is not None and abs(est - prev) <= tol * est:
            agree += 1
            if agree >= 2:
                return SingularValue(float(est), vec / np.linalg.norm(vec), it)
        else:
            agree = 0
        prev = est
        X, _ = np.linalg.qr(fact.solve_adjoint(Z @ Y[:, ::-1]))
    raise ConvergenceFailure(f"smallest_singular did not converge in {maxiter} sweeps",
                             estimate=est, vector=vec, iterations=maxiter)


def inverse_composed_norm(factorization, diag, tol=1e-8, maxiter=500, block=4, seed=1):
    """||(A - shift)^{-1} diag(d)||_2 by block power iteration on its normal operator."""
    d = np.asarray(diag)
    n = len(d)
    if not np.any(d):
        return 0.0, 0
    p = max(1, min(block, n))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p)) + 1j * rng.standard_normal((n, p))
    prev, agree, est = None, 0, 0.0
    for it in range(1, maxiter + 1):
        X, _ = np.linalg.qr(X)
        Z = factorization.solve(d[:, None] * X)
        G = Z.conj().T @ Z
        mu, Y = np.linalg.eigh(0.5 * (G + G.conj().T))
        est = float(np.sqrt(max(mu[-1], 0.0)))
        if prev is not None and abs(est - prev) <= tol * est:
            agree += 1
            if agree >= 2:
                return est, it
        else:
            agree = 0
        prev = est
        X = np.conj(d)[:, None] * factorization.solve_adjoint(Z @ Y[:, ::-1])
    raise ConvergenceFailure("composed-norm power iteration did not converge",
                             estimate=est, iterations=maxiter)


# ------------------------------------------------------------------- CG

class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def cg_hermitian_solve(apply: Callable, rhs, tol=1e-10, maxiter=None, x0=None, return_info=False):
    """Conjugate gradients for a Hermitian positive definite ``apply``.

    Stops when ``||b - A x|| <= tol * ||b||``; raises
    :class:`IndefiniteOperatorError` on non-positive curvature.
    """
    b = np.asarray(rhs)
    dtype = np.result_type(b.dtype, float)
    n = b.shape[0]
    maxiter = maxiter or max(10 * n, 100)
    x = np.zeros(n, dtype=dtype) if x0 is None else np.array(x0, dtype=dtype)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        out = CGResult(np.zeros(n, dtype=dtype), 0, 0.0)
        return out if return_info else out.x
    r = b - apply(x) if x0 is not None else b.astype(dtype, copy=True)
    p = r.copy()
    rr = np.real(np.vdot(r, r))
    it = 0
    while np.sqrt(rr) > tol * bnorm:
        if it >= maxiter:
            raise ConvergenceFailure(f"CG did not reach tol {tol} in {maxiter} iterations",
                                     estimate=x, iterations=it)
        Ap = apply(p)
        curv = np.vdot(p, Ap)
        if np.real(curv) <= 0 or abs(np.imag(curv)) > 1e-8 * abs(curv):
            raise IndefiniteOperatorError(f"non-positive curvature {curv} at iteration {it}")
        a = rr / np.real(curv)
        x = x + a * p
        r = r - a * Ap
        rr_new = np.real(np.vdot(r, r))
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    # confirm with a true residual
    res = np.linalg.norm(b - apply(x)) / bnorm
    out = CGResult(x, it, float(res))
    return out if return_info else out.x
