"""Command-line entry point: ``specctrl <command> ...``.

Exit codes: 0 ok, 2 configuration error, 3 solver error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import control, criteria, domain, observability, resolvent, sparsela, spectra
from .errors import (ConvergenceFailure, DataError, DependencyError, IllPosedError, InvalidArgument,
                     SingularShiftError)

log = logging.getLogger("specctrl")

SCHEMA_VERSION = 1
CONFIG_KEYS = {"schema_version", "experiment", "params", "seed", "cache", "workers"}
EXPERIMENTS = ("scan", "fit", "observe", "control", "pipeline", "quasimode", "report", "selftest")


class ConfigError(InvalidArgument):
    pass


# ------------------------------------------------------------------ parsing

def int_range(text, dyadic=False):
    """'16:1024' (dyadic or unit step), '5:40:5', or a comma list."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                lo, hi = parts
                return resolvent.dyadic(lo, hi) if dyadic else list(range(lo, hi + 1))
            lo, hi, step = parts
            return list(range(lo, hi + 1, step))
        return [int(p) for p in text.split(",") if p]
    except ValueError:
        raise ConfigError(f"bad integer range {text!r}") from None


def float_pair(text):
    try:
        lo, hi = (float(p) for p in text.split(":"))
    except ValueError:
        raise ConfigError(f"expected lo:hi, got {text!r}") from None
    return lo, hi


def parse_params(items):
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def region_for(grid, spec):
    if spec == "full":
        return domain.full_region(grid)
    if spec == "wing":
        return domain.stadium_wing_region(grid)
    kind, _, rest = spec.partition(":")
    if kind == "strip":
        lo, hi = float_pair(rest)
        return domain.strip_region(grid, lo, hi)
    raise ConfigError(f"unknown region {spec!r}; use full, wing or strip:lo:hi")


def initial_state(band, spec):
    kind, _, arg = spec.partition(":")
    if kind == "random":
        return criteria.random_band_vector(band, int(arg or 0))
    if kind == "eigen":
        j = int(arg or 0)
        if not 0 <= j < band.count:
            raise ConfigError(f"u0 eigen index {j} outside band of {band.count}")
        return band.vectors[:, j]
    raise ConfigError(f"unknown u0 {spec!r}; use random:SEED or eigen:J")


def _write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _emit(**kv):
    print("\t".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in kv.items()))


# ----------------------------------------------------------------- commands

def cmd_scan(args):
    params = parse_params(args.param)
    if args.model == "well":
        params.setdefault("power", args.power)
        hs = [2.0 ** -e for e in int_range(args.h_exp)]
    else:
        hs = resolvent.modes_to_h(int_range(args.modes, dyadic=True))
    model = resolvent.ModelSpec(args.model, params)
    if args.z is not None:
        zpol = args.z
    elif args.z_grid:
        lo, hi, k = args.z_grid.split(":")
        zpol = np.linspace(float(lo), float(hi), int(k))
    else:
        zpol = None
    scan = resolvent.scan_h(model, hs, zpol, with_cutoff=None if args.cutoff else False,
                            workers=args.workers, cache=args.cache)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    resolvent.write_scan_csv(scan, out)
    _emit(command="scan", model=scan.model, rows=len(scan.points), out=str(out),
          failures=len(scan.diagnostics["failures"]))
    return 3 if scan.diagnostics["failures"] else 0


def _fit_criteria(scan, fits):
    crit = {}
    if scan.params.get("kind") == "hyperbolic" and "log" in fits and "power" in fits:
        fl, fp = fits["log"], fits["power"]
        crit["hyperbolic_log_law"] = bool(fl.constants["C"] > 0 and fl.r2 >= 0.95 and fp.rss_log > fl.rss_log)
        r = resolvent.sqrt_log_gap(scan)
        if np.all(np.isfinite(r)):
            crit["cutoff_gap"] = bool(r.max() / r.min() <= 10)
    if scan.params.get("kind") == "well" and "power" in fits:
        p = int(scan.params.get("power", 1))
        target = criteria.WELL_EXPONENTS.get(p)
        if target is not None:
            crit[f"well_exponent_p{p}"] = bool(abs(fits["power"].constants["alpha"] - target) <= 0.15)
    return crit


def cmd_fit(args):
    path = Path(args.scan)
    if not path.exists():
        raise ConfigError(f"scan file {path} not found")
    scan = resolvent.read_scan_csv(path)
    laws = resolvent.LAWS if args.law == "all" else (args.law,)
    fits = {law: resolvent.fit_scaling(scan, law) for law in laws}
    data = {"kind": f"fit:{scan.model}", "model": scan.model, "scan": str(path),
            "fits": {k: v.to_dict() for k, v in fits.items()}, "criteria": _fit_criteria(scan, fits)}
    if scan.params.get("kind") == "hyperbolic":
        data["cutoff_gap"] = resolvent.sqrt_log_gap(scan).tolist()
    _write_json(args.out, data)
    for law, f in fits.items():
        _emit(law=law, r2=f.r2, rss_log=f.rss_log, **f.constants)
    return 0


def cmd_observe(args):
    exp = args.experiment
    if exp == "stadium":
        rep = observability.stadium_wing_scan(args.lam_max, args.n_per_unit, cache=args.cache)
        s = rep.summary
        rep.summary["criteria"] = {"stadium_wing_mass": bool(s["min_ratio"] >= 0.005 and s["slope"] >= -0.05)}
    elif exp == "geodesic":
        rep = observability.geodesic_concentration_scan(int_range(args.modes, dyadic=True), args.delta, cache=args.cache)
        s = rep.summary
        rep.summary["criteria"] = {"geodesic_concentration": bool(
            not s["skipped"] and s.get("max_over_min", np.inf) <= 10 and s.get("spearman_mu", 0) <= -0.9)}
    elif exp == "permode":
        zs = observability.default_permode_z_grid(args.kmax, args.a, args.z_count)
        rep = observability.permode_scan(range(1, args.kmax + 1), zs, args.a, float_pair(args.omega_x),
                                         seed=args.seed)
        c, k = rep.column("constant"), rep.column("k")
        low = float(c[k <= 5].max())
        rep.summary["max_k_le_5"] = low
        rep.summary["criteria"] = {"permode_uniformity": bool(np.all(np.isfinite(c)) and c.max() <= 2 * low)}
    else:
        grid = domain.build_rectangle(args.nx, args.ny, args.a)
        band = spectra.compute_band(sparsela.assemble_laplacian(grid), float_pair(args.band), cache=args.cache)
        G = observability.gramian(band, region_for(grid, args.omega), args.T)
        rep = observability.observability_report(G, args.omega)
    rep.summary["kind"] = f"observe:{exp}"
    out = Path(args.out or f"observe_{exp}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    rep.write(out)
    _emit(command="observe", experiment=exp, records=len(rep.records), out=str(out))
    return 0


def cmd_control(args):
    if args.domain == "rectangle":
        grid = domain.build_rectangle(args.nx, args.ny, args.a)
    else:
        grid = domain.build_stadium(args.n_per_unit)
    band = spectra.compute_band(sparsela.assemble_laplacian(grid), float_pair(args.band), cache=args.cache)
    reg = region_for(grid, args.omega)
    sol = control.hum_control(band, reg, args.T, initial_state(band, args.u0))
    chk = control.verify_null_control(sol, steps=args.steps)
    data = {"kind": "control", "domain": args.domain, "omega": args.omega, "T": args.T, "u0": args.u0,
            "band": list(float_pair(args.band)), "band_count": band.count,
            "eigenvalues": band.values.tolist(), "rho": sol.residual, "rho_quad": chk.rho_quad,
            "quad_difference": chk.difference, "cost": sol.cost, "duality_gap": sol.duality_gap(),
            "cg_iterations": sol.cg_iterations, "dual": [[z.real, z.imag] for z in sol.dual],
            "criteria": {"null_control": bool(sol.residual <= 1e-8 and chk.difference <= 1e-6)}}
    _write_json(args.out, data)
    if args.g_csv:
        with open(args.g_csv, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "g_norm"])
            for t, g in sol.sample_control(np.linspace(0, args.T, args.samples)):
                wr.writerow([repr(t), repr(g)])
    _emit(command="control", rho=sol.residual, rho_quad=chk.rho_quad, cost=sol.cost, out=args.out)
    return 0


def cmd_pipeline(args):
    path = Path(args.scan)
    if not path.exists():
        raise DependencyError(f"scan file {path} not found; run `specctrl scan` first")
    scan = resolvent.read_scan_csv(path)
    modes = int_range(args.modes, dyadic=True)
    window = float_pair(args.window)
    chk = control.resolvent_observability_pipeline(scan, modes, K=args.K, window=window, omega=args.omega, cache=args.cache)
    data = {"kind": f"pipeline:K={args.K:g}", "K": chk.K, "C0": chk.C0, "min_over_median": chk.min_over_median,
            "passed": chk.passed, "records": chk.records, "summary": chk.summary,
            "criteria": {f"resolvent_to_observability_K{args.K:g}": chk.passed}}
    if args.sweep:
        data["sweep"] = control.pipeline_sweep(scan, modes, [float(k) for k in args.sweep.split(",")],
                                               window=window, omega=args.omega, cache=args.cache)
    _write_json(args.out, data)
    if args.csv:
        _write_records_csv(args.csv, chk.records)
    _emit(command="pipeline", K=chk.K, min_over_median=chk.min_over_median, passed=chk.passed)
    return 0


def _write_records_csv(path, records):
    keys = list(records[0]) if records else []
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(keys)
        for r in records:
            wr.writerow([observability._cell(r[k]) for k in keys])


def cmd_quasimode(args):
    grid = domain.build_stadium(args.n_per_unit)
    op = sparsela.assemble_laplacian(grid)
    ms = int_range(args.m)
    rows = [{"m": m, "k": args.k, "error": control.quasimode_error(grid, m, args.k, args.eps, op=op)}
            for m in ms]
    e = np.array([r["error"] for r in rows])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_records_csv(out, rows)
    _write_json(out.with_suffix(".json"), {
        "kind": "quasimode", "min": float(e.min()), "max": float(e.max()),
        "criteria": {"quasimode_band": bool(e.min() > 0 and e.max() <= 5 * e.min())}})
    _emit(command="quasimode", min=float(e.min()), max=float(e.max()), out=str(out))
    return 0


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _numeric(rows):
    try:
        return [[float(v) for v in r] for r in rows]
    except ValueError:
        return None


def cmd_report(args):
    report = {"kind": "report", "artifacts": {}, "criteria": {}, "columns": {}, "figures": []}
    for name in args.artifacts:
        path = Path(name)
        if not path.exists():
            raise ConfigError(f"artifact {path} not found")
        if path.suffix == ".json":
            data = json.loads(path.read_text())
            key = data.get("kind") or data.get("experiment") or path.stem
            if key in report["artifacts"] and report["artifacts"][key] != data:
                raise ConfigError(f"conflicting artifacts for key {key!r}")
            report["artifacts"][key] = data
            crit = data.get("criteria") or data.get("summary", {}).get("criteria") or {}
            for ck, cv in crit.items():
                if ck in report["criteria"] and report["criteria"][ck] != cv:
                    raise ConfigError(f"conflicting pass flags for {ck!r}")
                report["criteria"][ck] = cv
        elif path.suffix == ".csv":
            header, rows = _read_csv(path)
            num = _numeric(rows)
            dat = path.with_suffix(".dat")
            with open(dat, "w") as fh:
                fh.write("# " + " ".join(header) + "\n")
                for r in rows:
                    fh.write(" ".join(r) + "\n")
            report["columns"][path.stem] = str(dat)
            if args.figures and num:
                from . import figures
                png = path.with_suffix(".png")
                if header[: len(resolvent.SCAN_COLUMNS)] == resolvent.SCAN_COLUMNS:
                    scan = resolvent.read_scan_csv(path)
                    fits = [resolvent.fit_scaling(scan, law) for law in ("log", "power")] if len(scan.points) >= 4 else []
                    figures.plot_scan(scan, png, fits)
                else:
                    figures.plot_columns(header, num, png)
                report["figures"].append(str(png))
        else:
            raise ConfigError(f"unsupported artifact type {path.suffix!r}")
    report["all_passed"] = all(report["criteria"].values()) if report["criteria"] else None
    _write_json(args.out, report)
    for ck, cv in sorted(report["criteria"].items()):
        _emit(criterion=ck, passed=cv)
    return 0


def cmd_selftest(args):
    if args.criterion == "all":
        nums = sorted(criteria.REGISTRY)
    elif args.criterion == "quick":
        nums = [11]
    else:
        nums = int_range(args.criterion)
    ok = True
    results = {}
    scan = None
    for n in nums:
        if n not in criteria.REGISTRY:
            raise ConfigError(f"no check numbered {n}")
        fn = criteria.REGISTRY[n]
        kw = {}
        if n in (4, 5):
            scan = scan or criteria.hyperbolic_scan(workers=args.workers, cache=args.cache)
            kw["scan"] = scan
        elif n in (6,):
            kw = {"workers": args.workers, "cache": args.cache}
        chk = fn(**kw)
        print(chk.line())
        results[n] = {"name": chk.name, "passed": chk.passed,
                      "metrics": {k: v for k, v in chk.metrics.items() if np.isscalar(v)}}
        ok &= chk.passed
    if args.out:
        _write_json(args.out, {"kind": "selftest", "results": results,
                               "criteria": {f"check_{n}": r["passed"] for n, r in results.items()}})
    return 0 if ok else 3


def cmd_run(args):
    try:
        cfg = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config {args.config} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    ns = config_namespace(cfg, args)
    return ns.func(ns)


def config_namespace(cfg, base=None):
    """Validate a config dict and turn it into the namespace of its experiment."""
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected an object")
    extra = set(cfg) - CONFIG_KEYS
    if extra:
        raise ConfigError(f"config.{sorted(extra)[0]}: unknown field")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: expected {SCHEMA_VERSION}")
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"config.experiment: expected one of {list(EXPERIMENTS)}")
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("config.params: expected an object")
    parser, subs = build_parser()
    ns = subs[exp].parse_args([])
    for key, val in params.items():
        attr = key.replace("-", "_")
        if attr in ("func", "command") or not hasattr(ns, attr):
            raise ConfigError(f"config.params.{key}: unknown field")
        default = getattr(ns, attr)
        if default is not None and not _type_ok(default, val):
            raise ConfigError(f"config.params.{key}: expected {type(default).__name__}")
        setattr(ns, attr, val)
    if "seed" in cfg and exp == "control":
        if not isinstance(cfg["seed"], int):
            raise ConfigError("config.seed: expected int")
        ns.u0 = f"random:{cfg['seed']}"
    elif "seed" in cfg:
        if not hasattr(ns, "seed"):
            raise ConfigError(f"config.seed: experiment {exp!r} takes no seed")
        ns.seed = cfg["seed"]
    for key, default in (("cache", None), ("workers", 1)):
        val = cfg.get(key, getattr(base, key, default) if base is not None else default)
        setattr(ns, key, val)
    if "cache" in cfg and not isinstance(cfg["cache"], bool):
        raise ConfigError("config.cache: expected bool")
    if "workers" in cfg and (not isinstance(cfg["workers"], int) or cfg["workers"] < 1):
        raise ConfigError("config.workers: expected a positive integer")
    return ns


def _type_ok(default, val):
    if isinstance(default, bool):
        return isinstance(val, bool)
    if isinstance(default, float):
        return isinstance(val, (int, float)) and not isinstance(val, bool)
    if isinstance(default, list):
        return isinstance(val, list)
    return isinstance(val, type(default))


# ------------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="specctrl", description="Resolvent, observability and control experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--no-cache", dest="cache", action="store_false", default=None,
                   help="ignore the eigenband and scan caches")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker processes for scans")
    sub = p.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help_):
        sp_ = sub.add_parser(name, help=help_)
        sp_.set_defaults(func=func)
        subs[name] = sp_
        return sp_

    s = add("scan", cmd_scan, "resolvent norms over h")
    s.add_argument("--model", choices=["hyperbolic", "well"], default="hyperbolic")
    s.add_argument("--modes", default="16:1024", help="angular modes (dyadic range or list)")
    s.add_argument("--h-exp", default="4:10", help="well scans: h = 2^-e for e in this range")
    s.add_argument("--power", type=int, default=1, help="well power")
    s.add_argument("--z", type=float, default=None, help="fixed real z")
    s.add_argument("--z-grid", default=None, help="lo:hi:count grid to maximize over")
    s.add_argument("--param", action="append", default=[], help="model parameter KEY=VALUE")
    s.add_argument("--no-cutoff", dest="cutoff", action="store_false", default=True)
    s.add_argument("--out", default="scan.csv")

    s = add("fit", cmd_fit, "fit scaling laws to a scan")
    s.add_argument("--scan", default="scan.csv")
    s.add_argument("--law", choices=list(resolvent.LAWS) + ["all"], default="all")
    s.add_argument("--out", default="fit.json")

    s = add("observe", cmd_observe, "observability experiments")
    s.add_argument("--experiment", choices=["stadium", "geodesic", "permode", "gramian"], default="stadium")
    s.add_argument("--lam-max", type=float, default=2000.0)
    s.add_argument("--n-per-unit", type=int, default=128)
    s.add_argument("--modes", default="8:512")
    s.add_argument("--delta", type=float, default=0.5)
    s.add_argument("--kmax", type=int, default=50)
    s.add_argument("--z-count", type=int, default=21)
    s.add_argument("--omega-x", default="0.1:0.3")
    s.add_argument("--a", type=float, default=1.0)
    s.add_argument("--nx", type=int, default=255)
    s.add_argument("--ny", type=int, default=127)
    s.add_argument("--band", default="0:60")
    s.add_argument("--omega", default="strip:0.4:0.6")
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)

    s = add("control", cmd_control, "HUM null control on a band")
    s.add_argument("--domain", choices=["rectangle", "stadium"], default="rectangle")
    s.add_argument("--nx", type=int, default=255)
    s.add_argument("--ny", type=int, default=127)
    s.add_argument("--a", type=float, default=1.0)
    s.add_argument("--n-per-unit", type=int, default=64)
    s.add_argument("--omega", default="strip:0.4:0.6")
    s.add_argument("--band", default="0:60")
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--u0", default="random:0")
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--samples", type=int, default=101)
    s.add_argument("--g-csv", default=None)
    s.add_argument("--out", default="control.json")

    s = add("pipeline", cmd_pipeline, "resolvent-to-observability check from a scan")
    s.add_argument("--scan", default="scan.csv")
    s.add_argument("--K", type=float, default=100.0)
    s.add_argument("--modes", default="16:256")
    s.add_argument("--window", default="0.5:2")
    s.add_argument("--omega", choices=["cap", "full"], default="cap")
    s.add_argument("--sweep", default=None, help="comma list of K values")
    s.add_argument("--csv", default=None)
    s.add_argument("--out", default="pipeline.json")

    s = add("quasimode", cmd_quasimode, "truncated bouncing-ball residuals on the stadium")
    s.add_argument("--n-per-unit", type=int, default=256)
    s.add_argument("--m", default="5:40")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--eps", type=float, default=0.2)
    s.add_argument("--out", default="quasimode.csv")

    s = add("report", cmd_report, "merge artifacts, write columns and figures")
    s.add_argument("artifacts", nargs="*", default=[])
    s.add_argument("--no-figures", dest="figures", action="store_false", default=True)
    s.add_argument("--out", default="report.json")

    s = add("selftest", cmd_selftest, "run numbered end-to-end checks")
    s.add_argument("--criterion", default="quick", help="quick, all, or numbers like 1,4 or 1:11")
    s.add_argument("--out", default=None)

    s = add("run", cmd_run, "run an experiment from a JSON config")
    s.add_argument("config")
    return p, subs


def main(argv=None):
    parser, _ = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument, DependencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceFailure, SingularShiftError, IllPosedError, DataError) as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
