"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``[PASS]``/``[FAIL]`` line with the measured quantities and
then asserts the thresholds directly. Run on its own with

    python3 -m pytest tests/test_acceptance.py -v -s

or as a script (``python3 tests/test_acceptance.py``) for the summary lines only.
"""
import os
import sys
import time

import numpy as np
import pytest

from specctrl import criteria

pytestmark = pytest.mark.slow

WORKERS = os.cpu_count() or 1
RESULTS = {}


def report(chk, budget=None):
    line = chk.line()
    if budget is not None and chk.seconds > budget:
        line += f"  [runtime {chk.seconds:.0f}s exceeds {budget:.0f}s]"
    RESULTS[chk.number] = chk
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()
    return chk


@pytest.fixture(scope="module")
def hyperbolic_scan():
    t = time.perf_counter()
    scan = criteria.hyperbolic_scan(criteria.HYPERBOLIC_MODES, workers=WORKERS)
    scan.diagnostics["seconds"] = time.perf_counter() - t
    return scan


def test_01_square_spectrum():
    chk = report(criteria.square_spectrum(), budget=60)
    assert chk.metrics["count"] >= 10
    assert chk.metrics["max_rel_error"] <= 5e-4
    assert chk.seconds <= 60


def test_02_stadium_wing_mass():
    chk = report(criteria.stadium_wing(n_per_unit=128, lam_max=2000.0), budget=900)
    assert chk.metrics["min_ratio"] >= 0.005
    assert chk.metrics["slope"] >= -0.05
    assert chk.seconds <= 900


def test_03_permode_uniformity():
    chk = report(criteria.permode_uniformity(kmax=50, a=1.0, omega=(0.1, 0.3)), budget=300)
    c = chk.artifacts["report"].column("constant")
    assert len(c) == 50 * 21 and np.all(np.isfinite(c))
    assert chk.metrics["max"] <= 2 * chk.metrics["max_k_le_5"]
    assert chk.seconds <= 300


def test_04_hyperbolic_log_law(hyperbolic_scan):
    chk = criteria.log_law(hyperbolic_scan)
    chk.seconds += hyperbolic_scan.diagnostics["seconds"]  # the shared scan counts against this budget
    report(chk, budget=600)
    assert chk.metrics["points"] == 7
    assert chk.metrics["slope"] > 0
    assert chk.metrics["r2"] >= 0.95
    assert chk.metrics["rss_power"] > chk.metrics["rss_log"]
    assert chk.seconds <= 600


def test_05_cutoff_gap(hyperbolic_scan):
    chk = report(criteria.sqrt_log_gap(hyperbolic_scan))
    assert chk.metrics["min"] > 0
    assert chk.metrics["max_over_min"] <= 10


def test_06_well_exponents():
    chk = report(criteria.well_exponents(powers=(1, 2, 3), exps=range(4, 11), workers=WORKERS), budget=300)
    for p, target in criteria.WELL_EXPONENTS.items():
        assert abs(chk.metrics[f"alpha_{p}"] - target) <= 0.15, p
    assert chk.seconds <= 300


def test_07_hum_null_control():
    chk = report(criteria.hum_null_control(seeds=range(20), T=1.0), budget=180)
    assert chk.metrics["max_rho"] <= 1e-8
    assert chk.metrics["max_quad_diff"] <= 1e-6
    assert chk.seconds <= 180


def test_08_geodesic_concentration():
    chk = report(criteria.geodesic_concentration(modes=(8, 16, 32, 64, 128, 256, 512), delta=0.5), budget=300)
    rep = chk.artifacts["report"]
    assert not rep.summary["skipped"]
    assert chk.metrics["max_over_min"] <= 10
    assert chk.metrics["spearman"] <= -0.9
    assert chk.seconds <= 300


def test_09_resolvent_to_observability(hyperbolic_scan):
    chk = report(criteria.resolvent_to_observability(hyperbolic_scan, modes=(16, 32, 64, 128, 256), K=100.0),
                 budget=600)
    assert chk.metrics["min_over_median"] >= 0.1
    assert chk.seconds <= 600


def test_10_quasimode_band():
    chk = report(criteria.quasimode_band(ms=range(5, 41), k=1))
    e = chk.artifacts["errors"]
    assert len(e) == 36 and e.min() > 0
    assert e.max() <= 5 * e.min()


def test_11_dense_oracles():
    chk = report(criteria.oracles(), budget=120)
    assert chk.metrics["smin_rel_error"] <= 1e-8
    assert chk.metrics["gramian_error"] <= 1e-6
    assert chk.metrics["eig_rel_error"] <= 1e-8
    assert chk.seconds <= 120


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
