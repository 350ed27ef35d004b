import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal, svdvals

from specctrl import domain, resolvent, sparsela, spectra
from specctrl.errors import ConvergenceFailure, InvalidArgument


@pytest.fixture(scope="module")
def cap64():
    return resolvent.build_cap_hyperbolic(64, 1.0, L=3.0, x0=1.5)


def test_damping_sign_on_random_vectors(cap64, rng):
    g = cap64.grid
    a = cap64.damping.indicator
    for _ in range(100):
        u = rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size)
        form = cap64.damping_form(u)
        assert form >= 0
        assert form == pytest.approx(cap64.amplitude * np.sum(a * np.abs(u) ** 2 * g.weights), rel=1e-9)


def test_damping_profile_ends(cap64):
    a = cap64.damping.indicator
    x = cap64.grid.points[:, 0]
    assert a[np.argmin(np.abs(x))] == 0.0
    assert np.all(a[np.abs(x) <= 1.5] == 0)
    assert a[0] == pytest.approx(1.0, abs=1e-4) and a[-1] == pytest.approx(1.0, abs=1e-4)


def test_hyperbolic_rejects_bad_x0():
    with pytest.raises(InvalidArgument):
        resolvent.build_cap_hyperbolic(16, 1.0, L=3.0, x0=3.0)


def test_hermitian_limit_hyperbolic():
    m = 32
    cap = resolvent.build_cap_hyperbolic(m, -1.0, strength=0.0)
    # the two lowest states sit at the walls and form a near-degenerate pair
    lam0 = sparsela.eig_band(cap.base, (0.0, 1e9), max_count=4).values[0]
    expect = 1.0 / (cap.h**2 * lam0 + 1.0)
    assert resolvent.resolvent_norm(cap, tol=1e-12) == pytest.approx(expect, rel=1e-8)


def test_dense_svd_agreement():
    cap = resolvent.build_cap_hyperbolic(8, 1.0, n=201)
    ref = 1 / svdvals(cap.matrix.matrix.toarray())[-1]
    assert resolvent.resolvent_norm(cap, tol=1e-12) == pytest.approx(ref, rel=1e-6)


def test_cutoff_trivial_cases(cap64):
    n = cap64.grid.size
    assert resolvent.cutoff_resolvent_norm(cap64, np.zeros(n)) == 0.0
    full = resolvent.resolvent_norm(cap64, tol=1e-12)
    one = resolvent.cutoff_resolvent_norm(cap64, np.ones(n), tol=1e-12, check_support=False)
    assert one == pytest.approx(full, rel=1e-8)
    with pytest.raises(InvalidArgument):
        resolvent.cutoff_resolvent_norm(cap64, np.ones(n))


def test_cutoff_below_full(cap64):
    phi = resolvent.default_cutoff(cap64)
    assert phi.indicator[cap64.grid.size // 2] == 0
    assert resolvent.cutoff_resolvent_norm(cap64, phi) <= resolvent.resolvent_norm(cap64)


def test_z_maximizer_is_interior():
    zs = np.linspace(0.9, 1.1, 11)
    scan = resolvent.scan_h("hyperbolic", [1 / 64], zs, with_cutoff=False)
    norms = [r["norm"] for r in scan.diagnostics["all"]]
    k = int(np.argmax(norms))
    assert 0 < k < len(zs) - 1


def test_well_sigma_min_decreases():
    sig = []
    for h in (2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6):
        cap = resolvent.build_cap_degenerate_well(h, 1, 0.0)
        sig.append(1 / resolvent.resolvent_norm(cap))
    assert np.all(np.diff(sig) < 0)


def test_well_hermitian_limit():
    X, p = 2.0, 1
    z = -2 * X ** (2 * p)
    cap = resolvent.build_cap_degenerate_well(0.1, p, z, X=X, amplitude=0.0)
    A = cap.matrix.matrix.toarray() + z * np.eye(cap.grid.size)
    ev = np.linalg.eigvalsh(A.real)
    assert resolvent.resolvent_norm(cap, tol=1e-12) == pytest.approx(1 / np.min(np.abs(ev - z)), rel=1e-8)


def _near_top(grid, hh, count=6):
    s = grid.spacing[0]
    x = grid.points[:, 0]
    d = 2 * hh**2 / s**2 - x**4
    e = np.full(grid.size - 1, -(hh**2) / s**2)
    ev = eigh_tridiagonal(d, e, eigvals_only=True)
    return np.sort(ev[np.argsort(np.abs(ev))[:count]])


def test_well_rescaling_identity():
    # -h^2 D^2 - x^4 on (-X, X) is h^(4/3) (-D^2 - y^4) on (-X/h^(1/3), X/h^(1/3))
    h, X = 2.0**-6, 1.0
    big = X / h ** (1 / 3)
    diffs = []
    for nx, ny in ((801, 1001), (1603, 2003), (3207, 4007)):
        gx = domain.build_interval(nx, 2 * X, start=-X)
        gy = domain.build_interval(ny, 2 * big, start=-big)
        diffs.append(np.max(np.abs(_near_top(gx, h) - h ** (4 / 3) * _near_top(gy, 1.0))))
    scale = np.max(np.abs(_near_top(gx, h)))
    assert diffs[-1] < 1e-4 * scale
    # the mismatch is discretization error: it shrinks at second order
    assert diffs[0] / diffs[1] > 3 and diffs[1] / diffs[2] > 3


def test_damped_below_undamped_elliptic():
    for m in (16, 32):
        damped = resolvent.build_cap_hyperbolic(m, -1.0)
        bare = resolvent.build_cap_hyperbolic(m, -1.0, strength=0.0)
        assert resolvent.resolvent_norm(damped) <= resolvent.resolvent_norm(bare) * (1 + 1e-10)


def test_elliptic_scan_is_flat():
    model = resolvent.ModelSpec("hyperbolic", {"strength": 0.0})
    scan = resolvent.scan_h(model, resolvent.modes_to_h([16, 32, 64]), -1.0, with_cutoff=False)
    # 1 / (1 + h^2 lambda_min): the bottom of h^2 L_m tends to 1/cosh(L)^2 as h -> 0
    assert np.ptp(scan.norms) / scan.norms.mean() < 0.05
    assert np.all(scan.norms <= 1.0)


def test_truncation_convergence():
    m = 64
    base = resolvent.build_cap_hyperbolic(m, 1.0, L=3.0, x0=1.5, ramp=1.5)
    longer = resolvent.build_cap_hyperbolic(m, 1.0, L=6.0, x0=1.5, ramp=1.5)
    finer = resolvent.build_cap_hyperbolic(m, 1.0, L=3.0, x0=1.5, ramp=1.5, ppw=60)
    n0 = resolvent.resolvent_norm(base)
    assert resolvent.resolvent_norm(longer) == pytest.approx(n0, rel=0.05)
    assert resolvent.resolvent_norm(finer) == pytest.approx(n0, rel=0.05)


def test_scan_sorted_and_positive():
    scan = resolvent.scan_h("hyperbolic", resolvent.modes_to_h([64, 16, 32]))
    assert np.all(np.diff(scan.h) < 0)
    assert np.all(scan.norms > 0)
    assert np.all(scan.cutoff_norms <= scan.norms)


def test_scan_workers_match_serial():
    hs = resolvent.modes_to_h([16, 32])
    a = resolvent.scan_h("hyperbolic", hs, workers=1)
    b = resolvent.scan_h("hyperbolic", hs, workers=2)
    assert np.array_equal(a.norms, b.norms)
    assert np.array_equal(a.cutoff_norms, b.cutoff_norms)


def test_scan_records_failures(monkeypatch):
    real = resolvent.resolvent_norm

    def flaky(cap, **kw):
        if cap.h == 1 / 32:
            raise ConvergenceFailure("forced")
        return real(cap, **kw)

    monkeypatch.setattr(resolvent, "resolvent_norm", flaky)
    scan = resolvent.scan_h("hyperbolic", resolvent.modes_to_h([16, 32, 64]), 1.0)
    assert len(scan.points) == 2
    assert len(scan.diagnostics["failures"]) == 1


def test_scan_rejects_bad_inputs():
    with pytest.raises(InvalidArgument):
        resolvent.scan_h("hyperbolic", [])
    with pytest.raises(InvalidArgument):
        resolvent.ModelSpec("unknown")
    with pytest.raises(InvalidArgument):
        resolvent.ModelSpec("well", {"nonsense": 1})
    with pytest.raises(InvalidArgument):
        resolvent.ModelSpec("hyperbolic").build(0.3, 1.0)


def test_scan_cache_reuse(tmp_path, monkeypatch):
    monkeypatch.setenv("SPECCTRL_CACHE_DIR", str(tmp_path))
    hs = resolvent.modes_to_h([16, 32])
    a = resolvent.scan_h("hyperbolic", hs, 1.0)
    assert len(list((tmp_path / "scan").glob("*.json"))) == 2
    monkeypatch.setattr(resolvent, "_scan_point", lambda *a, **k: pytest.fail("cache missed"))
    b = resolvent.scan_h("hyperbolic", hs, 1.0)
    assert np.array_equal(a.norms, b.norms)


H = 2.0 ** -np.arange(3, 11)


def test_fit_log_synthetic():
    f = resolvent.fit_scaling(H, "log", 5 * np.log(1 / H) / H)
    assert f.constants["C"] == pytest.approx(5.0) and f.r2 == pytest.approx(1.0)
    assert abs(f.constants["intercept"]) < 1e-10


def test_fit_power_synthetic():
    f = resolvent.fit_scaling(H, "power", H ** (-4 / 3))
    assert f.constants["alpha"] == pytest.approx(4 / 3) and f.r2 == pytest.approx(1.0)


def test_fit_sqrt_log_synthetic():
    f = resolvent.fit_scaling(H, "sqrt-log", 2 * np.sqrt(np.log(1 / H)) / H)
    assert f.constants["C"] == pytest.approx(2.0) and f.r2 == pytest.approx(1.0)


def test_fit_power_log_synthetic():
    f = resolvent.fit_scaling(H, "power-log", 3 * H ** -0.5 * np.log(1 / H))
    assert f.constants["alpha"] == pytest.approx(0.5) and f.constants["C"] == pytest.approx(3.0)


def test_fit_needs_four_points():
    with pytest.raises(InvalidArgument):
        resolvent.fit_scaling(H[:3], "power", H[:3] ** -1)
    with pytest.raises(InvalidArgument):
        resolvent.fit_scaling(H, "cubic", H ** -1)


def test_fit_rss_discriminates():
    y = 5 * np.log(1 / H) / H
    assert resolvent.fit_scaling(H, "log", y).rss_log < resolvent.fit_scaling(H, "power", y).rss_log


def test_scan_csv_roundtrip(tmp_path):
    scan = resolvent.scan_h("hyperbolic", resolvent.modes_to_h([16, 32]), 1.0)
    p = tmp_path / "scan.csv"
    resolvent.write_scan_csv(scan, p)
    back = resolvent.read_scan_csv(p)
    assert back.model == scan.model and back.params["kind"] == "hyperbolic"
    assert np.array_equal(back.norms, scan.norms)
    assert p.read_text().splitlines()[0] == ",".join(resolvent.SCAN_COLUMNS)


def test_read_scan_rejects_missing_columns(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("h,norm\n0.1,2\n")
    with pytest.raises(InvalidArgument):
        resolvent.read_scan_csv(p)
