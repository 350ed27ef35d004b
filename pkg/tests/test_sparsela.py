import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import eigh, svdvals

from specctrl import domain, sparsela
from specctrl.errors import ConvergenceFailure, IndefiniteOperatorError, InvalidArgument, SingularShiftError


def test_interval_laplacian_n3():
    op = sparsela.assemble_laplacian(domain.build_interval(3))
    vals = np.sort(np.linalg.eigvalsh(op.matrix.toarray()))
    assert np.allclose(vals, [16 * (2 - np.sqrt(2)), 32, 16 * (2 + np.sqrt(2))])


@pytest.mark.parametrize("grid", [
    domain.build_interval(17),
    domain.build_rectangle(9, 7, 0.7),
    domain.build_stadium(16),
    domain.build_cosh_mode(41, 3.0, 5),
])
def test_assembled_operators_hermitian(grid):
    op = sparsela.assemble_laplacian(grid)
    assert op.symmetry == sparsela.HERMITIAN
    assert op.hermitian_defect() <= 1e-14
    m = op.matrix
    for i in range(m.shape[0]):
        cols = m.indices[m.indptr[i]:m.indptr[i + 1]]
        assert np.all(np.diff(cols) > 0)


def test_cosh_operator_matches_sturm_liouville():
    # symmetrized matrix, mapped back, acts as -(1/w)(w u')' + m^2/w^2 on a smooth u
    g = domain.build_cosh_mode(2001, 3.0, 2)
    x = g.points[:, 0]
    op = sparsela.assemble_laplacian(g)
    u = np.cos(np.pi * x / 6) ** 2  # vanishes at +-3
    W = np.sqrt(g.weights)
    Lu = (op.matrix @ (W * u)) / W
    exact = (-(1 / np.cosh(x)) * (np.sinh(x) * (-np.pi / 6) * np.sin(np.pi * x / 3)
                                  + np.cosh(x) * (-np.pi**2 / 18) * np.cos(np.pi * x / 3))
             + 4 / np.cosh(x) ** 2 * u)
    inner = slice(5, -5)
    assert np.max(np.abs(Lu - exact)[inner]) < 1e-3


def test_factorize_solve_and_adjoint(rng):
    n = 60
    A = sp.random(n, n, density=0.1, random_state=1, dtype=complex) + 3 * sp.eye(n)
    op = sparsela.SparseOperator(A)
    f = sparsela.factorize(op)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    Ad = A.toarray()
    assert np.allclose(Ad @ f.solve(b), b)
    assert np.allclose(Ad.conj().T @ f.solve_adjoint(b), b)
    x, res = sparsela.solve(f, b, return_residual=True)
    assert res < 1e-12


def test_factorize_inertia_counts():
    op = sparsela.assemble_laplacian(domain.build_rectangle(15, 15, 1.0))
    dense = np.linalg.eigvalsh(op.matrix.toarray())
    for shift in (10.0, 100.0, 555.5):
        f = sparsela.factorize(op, shift, inertia=True)
        assert f.negative_pivots == np.sum(dense < shift)


def test_singular_shift_raises():
    g = domain.build_rectangle(15, 15, 1.0)
    op = sparsela.assemble_laplacian(g)
    s = g.spacing[0]
    lam = 2 * (4 / s**2) * np.sin(np.pi * s / 2) ** 2
    with pytest.raises(SingularShiftError):
        sparsela.factorize(op, lam)


def test_eig_band_square_multiplicities():
    g = domain.build_rectangle(63, 63, 1.0)
    pairs = sparsela.eig_band(sparsela.assemble_laplacian(g), (0.0, 90.0))
    ratios = pairs.values / np.pi**2
    assert np.allclose(ratios, [2, 5, 5, 8], rtol=2e-3)
    V = pairs.vectors
    assert np.abs(V.conj().T @ V - np.eye(4)).max() < 1e-10
    assert np.all(pairs.residuals < 1e-7)


def test_eig_band_matches_dense_on_stadium():
    op = sparsela.assemble_laplacian(domain.build_stadium(16))
    dense = eigh(op.matrix.toarray(), eigvals_only=True)
    pairs = sparsela.eig_band(op, (50.0, 800.0), slice_size=10)
    ref = dense[(dense >= 50) & (dense <= 800)]
    assert len(ref) == len(pairs.values)
    assert np.max(np.abs(pairs.values - ref) / ref) < 1e-10


def test_eig_band_max_count_truncates():
    op = sparsela.assemble_laplacian(domain.build_rectangle(31, 31, 1.0))
    dense = np.linalg.eigvalsh(op.matrix.toarray())
    pairs = sparsela.eig_band(op, (0.0, 1e4), max_count=4)
    assert pairs.truncated and len(pairs.values) == 4
    assert np.allclose(pairs.values, dense[:4])
    # the 5th and 6th eigenvalues coincide; the cluster is kept whole, so it is dropped
    pairs = sparsela.eig_band(op, (0.0, 1e4), max_count=5)
    assert len(pairs.values) == 4 and dense[4] == pytest.approx(dense[5])


def test_eig_band_empty_window():
    op = sparsela.assemble_laplacian(domain.build_rectangle(15, 15, 1.0))
    pairs = sparsela.eig_band(op, (0.0, 5.0))
    assert len(pairs.values) == 0


def test_eig_band_rejects_bad_window():
    op = sparsela.assemble_laplacian(domain.build_interval(9))
    with pytest.raises(InvalidArgument):
        sparsela.eig_band(op, (5.0, 1.0))


def test_smallest_singular_diag():
    A = sp.diags([1.0, 2.0, 3.0]).astype(complex) - 0.5j * sp.eye(3)
    sv = sparsela.smallest_singular(sparsela.SparseOperator(A))
    assert sv.sigma == pytest.approx(np.sqrt(1.25), rel=1e-12)
    assert np.linalg.norm(A @ sv.vector) == pytest.approx(sv.sigma, rel=1e-8)


def test_smallest_singular_vs_dense(rng):
    worst = 0.0
    for k in range(12):
        n = int(rng.integers(20, 200))
        A = sp.random(n, n, density=0.05, random_state=k, dtype=complex) \
            + 1j * sp.random(n, n, density=0.05, random_state=100 + k) + 0.5 * sp.eye(n)
        sv = sparsela.smallest_singular(sparsela.SparseOperator(A), tol=1e-12)
        ref = svdvals(A.toarray())[-1]
        worst = max(worst, abs(sv.sigma - ref) / ref)
    assert worst < 1e-8


def test_inverse_composed_norm_identity_and_zero(rng):
    n = 80
    A = sp.random(n, n, density=0.08, random_state=7, dtype=complex) + 2 * sp.eye(n)
    f = sparsela.factorize(sparsela.SparseOperator(A))
    full, _ = sparsela.inverse_composed_norm(f, np.ones(n), tol=1e-12)
    ref = 1 / svdvals(A.toarray())[-1]
    assert full == pytest.approx(ref, rel=1e-8)
    d = (np.arange(n) % 3 == 0).astype(float)
    part, _ = sparsela.inverse_composed_norm(f, d, tol=1e-12)
    dense = np.linalg.norm(np.linalg.inv(A.toarray()) @ np.diag(d), 2)
    assert part == pytest.approx(dense, rel=1e-8)
    zero, _ = sparsela.inverse_composed_norm(f, np.zeros(n))
    assert zero == 0.0


def test_cg_solves_hpd(rng):
    n = 50
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = B.conj().T @ B + n * np.eye(n)
    b = rng.standard_normal(n) + 0j
    res = sparsela.cg_hermitian_solve(lambda v: A @ v, b, tol=1e-12, return_info=True)
    assert res.residual <= 1e-12
    assert np.allclose(A @ res.x, b)


def test_cg_zero_rhs():
    x = sparsela.cg_hermitian_solve(lambda v: v, np.zeros(4))
    assert np.all(x == 0)


def test_cg_detects_indefinite():
    A = np.diag([1.0, -1.0, 2.0])
    with pytest.raises(IndefiniteOperatorError):
        sparsela.cg_hermitian_solve(lambda v: A @ v, np.ones(3))


def test_cg_iteration_cap():
    A = np.diag(np.logspace(0, 8, 200))
    with pytest.raises(ConvergenceFailure) as exc:
        sparsela.cg_hermitian_solve(lambda v: A @ v, np.ones(200), tol=1e-14, maxiter=3)
    assert exc.value.iterations == 3
