"""Command line: derive drifter covariates, interpolate, simulate, fit, predict, score.

Every output file gets a ``<name>.json`` provenance sidecar. Exit codes: 0 on
success, 2 for usage errors, 3 for bad input data, 4 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, DriftHurdleError, FitError, ParseError, UsageError
from .geo import Region, project
from .gpfield import MaternParams, fit_kriging, krige_predict
from .grid import GridField, read_samples, sha256_of, write_samples, write_sidecar
from .hurdle.data import aggregate_time, read_dataset, write_dataset
from .hurdle.fit import HurdleFit, fit_hurdle
from .hurdle.model import HurdleModelSpec
from .hurdle.predict import PredictionTargets, predict, time_average
from .hurdle.simulate import matern_covariate, simulate_hurdle
from .metrics import SCORE_COLUMNS, score
from .nig import SENSITIVITY_COLUMNS, NigParams, sensitivity_experiment, simulate_matern_nig
from .occupancy import (DJF, CellGrid, CircleGrid, drifter_density, mass_flux, residence_time,
                        surface_speed_samples)
from .spectral import rolling_ef
from .trajectory import ingest, segment_all

PRODUCTS = ("speed", "ef", "residence", "flux", "density")
SECONDS_PER_YEAR = 365.25 * 86400.0


# parameter files -----------------------------------------------------------

def _hurdle_defaults():
    d = {f.name: getattr(HurdleModelSpec(), f.name) for f in dc_fields(HurdleModelSpec)}
    d.update(n=100, T=10, cov_rho=0.2)
    return d


NIG_DEFAULTS = {"n": 1000, "m": 10, "nu": 1.0, "kappa": 10.0, "sigma_eps": 0.01, "beta0": 0.0,
                "delta": 0.0, "mu": 0.0, "sigma": 1.0, "nu_nig": 10.0}


def parse_params(path, defaults: dict) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment. Values take the default's type."""
    out = dict(defaults)
    if path is None:
        return out
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected key=value", line=lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in defaults:
                raise UsageError(f"unknown parameter {key!r}; valid keys: {', '.join(sorted(defaults))}")
            ref = defaults[key]
            try:
                if isinstance(ref, tuple):
                    out[key] = tuple(float(v) for v in value.split(","))
                elif isinstance(ref, int) and not isinstance(ref, bool):
                    out[key] = int(value)
                else:
                    out[key] = float(value)
            except ValueError:
                raise ParseError(f"bad value for {key!r}: {value!r}", line=lineno) from None
    return out


def _jsonable(v):
    if isinstance(v, Path):
        return v.name
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _params(args, skip=("func", "out")):
    """Arguments recorded in sidecars; input paths are reduced to file names."""
    return {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in skip}


def _warn(msg):
    print(f"drifthurdle: warning: {msg}", file=sys.stderr)


# derive --------------------------------------------------------------------

def cmd_derive(args):
    region = Region.parse(args.region)
    records = ingest(args.input, args.dt)
    segments, report = segment_all(records, region, args.dt)
    digest = sha256_of(args.input)
    params = _params(args)
    meta = {"command": "derive", "params": params, "input_sha256": digest}
    product = args.product
    if product == "density":
        cells = CellGrid.from_region(region, args.res, args.res)
        values = drifter_density(records.values(), cells, args.dt)
        grid = GridField(region, args.res, values, "drifter_density", "hours km-2")
        grid.write(args.out, **meta)
        if not np.any(values > 0):
            _warn("no fixes inside the region; density grid is all zero")
        return 0
    if product == "speed":
        months = _months(args.months)
        lon, lat, val = surface_speed_samples(segments, months)
        variable, units = "surface_speed", "m s-1"
    elif product == "ef":
        rows = [w for s in segments for w in rolling_ef(s, args.window, args.overlap, args.nw)]
        lon = np.array([w.lon for w in rows])
        lat = np.array([w.lat for w in rows])
        val = np.array([w.ef for w in rows])
        variable, units = "expected_frequency", "rad day-1"
    else:
        circles = CircleGrid.from_region(region, args.nx, args.ny, args.radius)
        lon, lat = circles.lonlat
        if product == "residence":
            if segments:
                val = residence_time(segments, circles)
            else:
                val = np.full(len(circles), np.nan)
            variable, units = "residence_time", "min"
        else:
            period = args.period_years or _span_years(records)
            if not period > 0:
                raise DataError("cannot infer the observation period; pass --period-years")
            val = mass_flux(segments, circles, period)
            variable, units = "mass_flux", "runs year-1 km-2"
    if len(lon) == 0:
        _warn(f"no {product} samples produced; writing an empty file")
    write_samples(args.out, lon, lat, val, variable, units, region, **meta)
    return 0


def _months(text):
    if text.strip().lower() in ("all", ""):
        return ()
    try:
        return tuple(int(m) for m in text.split(","))
    except ValueError:
        raise UsageError(f"--months expects comma-separated month numbers or 'all', got {text!r}") from None


def _span_years(records):
    times = [r.time for r in records.values() if len(r)]
    if not times:
        return 0.0
    t = np.concatenate(times)
    return float(t.max() - t.min()) / SECONDS_PER_YEAR


# interpolate ---------------------------------------------------------------

def cmd_interpolate(args):
    region = Region.parse(args.region)
    lon, lat, val = read_samples(args.samples)
    ok = np.isfinite(val)
    lon, lat, val = lon[ok], lat[ok], val[ok]
    if len(val) < 10:
        raise DataError(f"interpolation needs at least 10 finite samples, got {len(val)}")
    rng = np.random.default_rng(args.seed)
    if len(val) > args.max_samples:
        keep = np.sort(rng.choice(len(val), args.max_samples, replace=False))
        lon, lat, val = lon[keep], lat[keep], val[keep]
    origin = region.centroid
    xy = np.column_stack(project(lon, lat, origin))
    cells = CellGrid.from_region(region, args.res, args.res)
    clon, clat = cells.centres
    glon, glat = np.meshgrid(clon, clat)
    targets = np.column_stack(project(glon.ravel(), glat.ravel(), origin))
    digest = sha256_of(args.samples)
    params = _params(args)
    variable = read_sidecar_variable(args.samples)
    out = Path(args.out)
    sd_out = out.with_name(f"{out.stem}_sd{out.suffix}")
    model_info = {}
    if np.ptp(val) == 0:
        mean = np.full(len(targets), val[0])
        sd = np.zeros(len(targets))
        model_info = {"constant": float(val[0])}
    else:
        try:
            model = fit_kriging(xy, val, nu=args.nu)
        except FitError as exc:
            diag = {"error": str(exc), "command": "interpolate", "params": params,
                    "input_sha256": digest}
            if exc.best is not None:
                diag["best"] = exc.best.to_dict()
            with open(out.with_name(f"{out.stem}_diagnostics.json"), "w", encoding="utf-8") as fh:
                json.dump(diag, fh, indent=2, sort_keys=True)
                fh.write("\n")
            raise
        mean, sd = krige_predict(model, targets)
        model_info = model.to_dict()
    meta = {"command": "interpolate", "params": params, "input_sha256": digest}
    GridField(region, args.res, mean, variable, "").write(out, **meta)
    GridField(region, args.res, sd, f"{variable}_sd", "").write(sd_out, **meta)
    with open(out.with_name(f"{out.stem}_model.json"), "w", encoding="utf-8") as fh:
        json.dump({"model": model_info, **meta}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def read_sidecar_variable(path):
    try:
        with open(Path(path).with_name(Path(path).name + ".json"), encoding="utf-8") as fh:
            return json.load(fh).get("variable", "value")
    except (OSError, ValueError):
        return "value"


# simulate ------------------------------------------------------------------

def cmd_simulate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.study == "st-hurdle":
        p = parse_params(args.params, _hurdle_defaults())
        spec_kw = {f.name: p[f.name] for f in dc_fields(HurdleModelSpec)}
        spec = HurdleModelSpec(**spec_kw)
        rho = p["cov_rho"]
        data, truth = simulate_hurdle(
            spec, T=p["T"], n=p["n"], seed=args.seed,
            covariates=lambda s, T, rng: matern_covariate(s, T, rng, rho=rho, nu=spec.nu))
        meta = {"command": "simulate", "params": {**_params(args), "model": _plain(p)},
                "input_sha256": None}
        write_dataset(data, out / "dataset.csv")
        write_sidecar(out / "dataset.csv", "hurdle_dataset", **meta)
        with open(out / "truth.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["site_id", "lon", "lat", "t", "psi", "xi", "pi", "mu"])
            for i, sid in enumerate(data.site_ids):
                for j, t in enumerate(data.times):
                    w.writerow([sid, repr(float(data.coords[i, 0])), repr(float(data.coords[i, 1])),
                                int(t)] + [repr(float(a[i, j])) for a in
                                           (truth.psi, truth.xi, truth.pi, truth.mu)])
        write_sidecar(out / "truth.csv", "latent_truth", **meta)
        theta = truth.time_averaged_mean()
        with open(out / "truth_sites.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["site_id", "lon", "lat", "value"])
            for i, sid in enumerate(data.site_ids):
                w.writerow([sid, repr(float(data.coords[i, 0])), repr(float(data.coords[i, 1])),
                            repr(float(theta[i]))])
        write_sidecar(out / "truth_sites.csv", "time_averaged_mean", **meta)
        return 0
    p = parse_params(args.params, NIG_DEFAULTS)
    sim = simulate_matern_nig(p["n"], MaternParams(p["nu"], p["kappa"], 1.0),
                              NigParams(p["delta"], p["mu"], p["sigma"], p["nu_nig"]),
                              p["sigma_eps"], p["m"], p["beta0"], seed=args.seed)
    meta = {"command": "simulate", "params": {**_params(args), "model": _plain(p)},
            "input_sha256": None}
    for name, arr, var in (("observations.csv", sim.observations, "value"),
                           ("truth.csv", sim.fields, "field")):
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "site", "x", "y", var])
            for r in range(arr.shape[0]):
                for i in range(arr.shape[1]):
                    w.writerow([r + 1, i + 1, repr(float(sim.locations[i, 0])),
                                repr(float(sim.locations[i, 1])), repr(float(arr[r, i]))])
        write_sidecar(out / name, f"nig_{var}", **meta)
    return 0


def _plain(p):
    return {k: _jsonable(v) for k, v in sorted(p.items())}


# fit / predict -------------------------------------------------------------

def _prepare(data, standardize, structure, transform=None):
    if standardize and data.n_covariates:
        data = data.standardized(transform)
    aggregated = structure == "spatial" and data.n_times > 1
    if aggregated:
        data = aggregate_time(data)
    return data, aggregated


def cmd_fit(args):
    digest = sha256_of(args.data)
    data, aggregated = _prepare(read_dataset(args.data), args.standardize, args.structure)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_hurdle(data, args.structure, n_starts=args.starts, metric=args.metric,
                         seed=args.seed)
    for w in caught:
        _warn(str(w.message))
    d = fit.to_dict()
    d.update(input_sha256=digest, standardized=bool(args.standardize),
             aggregated=aggregated, requested_structure=args.structure)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_sidecar(args.out, "hurdle_fit", command="fit", params=_params(args), input_sha256=digest)
    return 0


def _read_targets(path, p):
    """Targets CSV ``site_id,lon,lat,t,cov_1..cov_p`` on a full site-by-time panel."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != ["site_id", "lon", "lat", "t"]:
            raise ParseError("targets header must start with site_id,lon,lat,t", line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields", line=lineno)
            try:
                rows.append((row[0], float(row[1]), float(row[2]), int(row[3]),
                             [float(c) for c in row[4:]]))
            except ValueError as exc:
                raise ParseError(f"malformed value ({exc})", line=lineno) from None
    if len(header) - 4 != p:
        raise UsageError(f"targets carry {len(header) - 4} covariates, model expects {p}")
    sites = list(dict.fromkeys(r[0] for r in rows))
    times = sorted({r[3] for r in rows})
    coords = {r[0]: (r[1], r[2]) for r in rows}
    cov = np.full((len(sites), len(times), p), np.nan)
    si = {s: i for i, s in enumerate(sites)}
    ti = {t: j for j, t in enumerate(times)}
    for sid, _a, _b, t, c in rows:
        cov[si[sid], ti[t]] = c
    if np.isnan(cov).any():
        raise DataError("targets must give every site at every listed time")
    return PredictionTargets(sites, np.array([coords[s] for s in sites]), np.array(times), cov)


def cmd_predict(args):
    with open(args.fit, encoding="utf-8") as fh:
        fd = json.load(fh)
    fit = HurdleFit.from_dict(fd)
    digest = sha256_of(args.data)
    if fd.get("input_sha256") and fd["input_sha256"] != digest:
        raise DataError("training data differ from the data the model was fitted on")
    data, _ = _prepare(read_dataset(args.data), fd.get("standardized", False),
                       fd.get("requested_structure", fit.structure), fit.transform)
    targets = None
    if args.targets:
        targets = _read_targets(args.targets, len(fit.beta_z) - 1)
        if fit.structure == "spatial" and fd.get("aggregated"):
            targets = PredictionTargets(targets.site_ids, targets.coords, data.times,
                                        targets.covariates.mean(axis=1, keepdims=True))
    summary = predict(fit, data, targets, n_samples=args.n_samples, seed=args.seed,
                      joint=not args.per_location, mask_sd=args.mask_sd,
                      keep_samples=args.time_average)
    meta = dict(command="predict", params=_params(args), input_sha256=digest)
    if args.time_average:
        est, lo, hi = time_average(summary)
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["site_id", "lon", "lat", "mean", "q025", "q975"])
            for i, sid in enumerate(summary.site_ids):
                w.writerow([sid, repr(float(summary.coords[i, 0])), repr(float(summary.coords[i, 1])),
                            repr(float(est[i])), repr(float(lo[i])), repr(float(hi[i]))])
        write_sidecar(args.out, "time_averaged_hurdle_mean", **meta)
    else:
        summary.write_csv(args.out)
        write_sidecar(args.out, "posterior_summary", **meta,
                      masked=int(summary.mask.sum()))
    return 0


# score / sensitivity -------------------------------------------------------

def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return reader.fieldnames or [], list(reader)


def _col(rows, name, path):
    try:
        return np.array([math.nan if r[name] in ("NA", "") else float(r[name]) for r in rows])
    except KeyError:
        raise UsageError(f"{path}: no column {name!r}") from None
    except ValueError as exc:
        raise DataError(f"{path}: bad number in column {name!r} ({exc})") from None


def cmd_score(args):
    tcols, trows = _read_table(args.truth)
    pcols, prows = _read_table(args.pred)
    keys = [k for k in ("site_id", "t") if k in tcols and k in pcols]
    if not keys:
        raise DataError("truth and predictions share no site_id column")
    index = {tuple(r[k] for k in keys): r for r in prows}
    missing = [tuple(r[k] for k in keys) for r in trows if tuple(r[k] for k in keys) not in index]
    if missing:
        raise DataError(f"no prediction for {len(missing)} truth rows, e.g. {missing[0]}")
    matched = [index[tuple(r[k] for k in keys)] for r in trows]
    truth = _col(trows, args.truth_col, args.truth)
    mean = _col(matched, args.mean_col, args.pred)
    lo = _col(matched, args.lo_col, args.pred)
    hi = _col(matched, args.hi_col, args.pred)
    report = score(truth, mean, lo, hi, percentage="omit" if args.omit_percentage else "error")
    label = {"model": args.label} if args.label else {}
    text = report.to_json(**label) + "\n" if args.format == "json" else report.to_csv(**label)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    write_sidecar(args.out, "score", command="score", params=_params(args),
                  input_sha256=sha256_of(args.pred), truth_sha256=sha256_of(args.truth),
                  columns=list(SCORE_COLUMNS))
    return 0


def cmd_sensitivity(args):
    try:
        sizes = tuple(int(s) for s in args.sizes.split(","))
    except ValueError:
        raise UsageError(f"--sizes expects comma-separated integers, got {args.sizes!r}") from None
    rows = sensitivity_experiment(sizes, seed=args.seed, m=args.m, sd_method=args.sd_method,
                                  n_boot=args.n_boot)
    cols = list(SENSITIVITY_COLUMNS) + (["error"] if any("error" in r for r in rows) else [])
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in cols])
    write_sidecar(args.out, "matern_sensitivity", command="sensitivity", params=_params(args))
    return 0


def _cell(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


# parser --------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="drifthurdle", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("derive", help="covariate samples or grids from drifter trajectories")
    d.add_argument("--input", type=Path, required=True, help="trajectory CSV id,time,lon,lat[,u,v]")
    d.add_argument("--region", required=True, help="lon_min,lon_max,lat_min,lat_max")
    d.add_argument("--product", choices=PRODUCTS, required=True)
    d.add_argument("--out", type=Path, required=True)
    d.add_argument("--dt", type=float, default=3600.0, help="sampling interval, s")
    d.add_argument("--res", type=float, default=0.25, help="density cell size, degrees")
    d.add_argument("--window", type=int, default=121, help="EF window length, fixes")
    d.add_argument("--overlap", type=int, default=60, help="EF window overlap, fixes")
    d.add_argument("--nw", type=float, default=4.0, help="taper time-bandwidth product")
    d.add_argument("--radius", type=float, default=50.0, help="circle radius, km")
    d.add_argument("--nx", type=int, default=20)
    d.add_argument("--ny", type=int, default=25)
    d.add_argument("--months", default=",".join(str(m) for m in DJF),
                   help="months kept for speed, or 'all'")
    d.add_argument("--period-years", type=float, default=None,
                   help="flux observation period; default is the data time span")
    d.set_defaults(func=cmd_derive)

    i = sub.add_parser("interpolate", help="krige scattered samples onto a lon/lat grid")
    i.add_argument("--samples", type=Path, required=True)
    i.add_argument("--region", required=True)
    i.add_argument("--res", type=float, default=0.01)
    i.add_argument("--out", type=Path, required=True)
    i.add_argument("--nu", type=float, default=1.0)
    i.add_argument("--max-samples", type=int, default=2000,
                   help="random subsample size for the dense fit")
    i.add_argument("--seed", type=int, default=1)
    i.set_defaults(func=cmd_interpolate)

    s = sub.add_parser("simulate", help="simulate a study dataset")
    s.add_argument("--study", choices=("st-hurdle", "nig"), required=True)
    s.add_argument("--params", type=Path, default=None, help="key=value overrides")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", type=Path, required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit the hurdle-Gamma model")
    f.add_argument("--data", type=Path, required=True)
    f.add_argument("--structure", choices=("st", "spatial"), default="st")
    f.add_argument("--out", type=Path, required=True)
    f.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True)
    f.add_argument("--metric", choices=("planar", "geographic"), default="planar")
    f.add_argument("--starts", type=int, default=3)
    f.add_argument("--seed", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("predict", help="posterior summaries from a fitted model")
    r.add_argument("--fit", type=Path, required=True)
    r.add_argument("--data", type=Path, required=True, help="the training dataset")
    r.add_argument("--targets", type=Path, default=None)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--n-samples", type=int, default=500)
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--mask-sd", type=float, default=3.0)
    r.add_argument("--per-location", action="store_true",
                   help="independent conditional draws per new site")
    r.add_argument("--time-average", action="store_true",
                   help="write per-site time-averaged hurdle means")
    r.set_defaults(func=cmd_predict)

    c = sub.add_parser("score", help="six-metric score of predictions against truth")
    c.add_argument("--truth", type=Path, required=True)
    c.add_argument("--pred", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--truth-col", default="value")
    c.add_argument("--mean-col", default="mean")
    c.add_argument("--lo-col", default="q025")
    c.add_argument("--hi-col", default="q975")
    c.add_argument("--label", default="")
    c.add_argument("--format", choices=("csv", "json"), default="csv")
    c.add_argument("--omit-percentage", action="store_true",
                   help="report NA percentage metrics instead of failing on zero truth")
    c.set_defaults(func=cmd_score)

    e = sub.add_parser("sensitivity", help="Gaussian Matern fits to NIG-noise fields")
    e.add_argument("--sizes", default="50,100,500,1000")
    e.add_argument("--seed", type=int, default=1)
    e.add_argument("--m", type=int, default=10)
    e.add_argument("--sd-method", choices=("bootstrap", "hessian"), default="bootstrap")
    e.add_argument("--n-boot", type=int, default=200)
    e.add_argument("--out", type=Path, required=True)
    e.set_defaults(func=cmd_sensitivity)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except DriftHurdleError as exc:
        print(f"drifthurdle {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"drifthurdle {args.command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
