"""Command line driver: config ingestion, sweeps, CSV artifacts and a run manifest.

Usage::

    dampwave <verb> --config run.yaml [--out DIR] [--jobs N] [--tol TOL]

Verbs: check-assumptions, zones, solve, verify-bounds, decay-fit, wkb-check, report.
The output root is, in order of precedence, ``--out``, ``$DAMPWAVE_OUT`` and
``output.dir`` from the config.  Exit status is 0 on success, 2 for usage or
config errors and 1 when a stage fails (its traceback goes to ``logs/<verb>.log``).
A check that runs but does not pass is recorded in the CSVs, not in the exit status.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from . import assumptions, bounds, coeffs, propagator, wkb, zones

VERBS = ("check-assumptions", "zones", "solve", "verify-bounds", "decay-fit", "wkb-check", "report")
OUT_ENV = "DAMPWAVE_OUT"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config schema

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_range = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_grid = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "start": {"type": "number", "minimum": 0},
        "stop": _pos,
        "num": {"type": "integer", "minimum": 1},
        "spacing": {"enum": ["linear", "log"]},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family"],
    "properties": {
        "family": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "params"],
            "properties": {
                "kind": {"enum": ["polynomial", "exponential", "superexponential"]},
                "params": {"type": "object", "additionalProperties": _num},
                "M": {"type": "integer", "minimum": 2},
                "J": {"type": "integer", "minimum": 0},
                "strict": {"type": "boolean"},
            },
        },
        "zones": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "number", "minimum": 1},
                "eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
                "d0": _pos,
                "t0": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "auto"}]},
            },
        },
        "horizon": _pos,
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"t": _grid, "xi": _grid},
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ode": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-3},
                "quad": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-3},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["gaussian", "power_gaussian", "ball"]},
                "c0": _num,
                "c1": _num,
                "a": {"type": "number", "minimum": 0},
                "n": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string", "minLength": 1}},
        },
        "jobs": {"type": "integer", "minimum": 1},
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kinds": {"type": "array", "items": {"enum": [k.value for k in bounds.BoundKind]}},
                "n": {"type": "integer", "minimum": 8},
                "seed": {"type": "integer", "minimum": 0},
                "windows": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {"t_range": _range, "xi_range": _range, "d0": _pos},
                    },
                },
            },
        },
        "decay": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_range": _range,
                "num": {"type": "integer", "minimum": 8},
                "sigma": {"type": "number", "minimum": 0},
                "m": {"type": "number", "minimum": 1, "maximum": 2},
                "npts": {"type": "integer", "minimum": 16},
                "window": {"oneOf": [{"type": "null"}, _range]},
            },
        },
        "wkb": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "symbols": {"type": "array", "items": {"type": "string"}},
                "n": {"type": "integer", "minimum": 4},
                "t_range": _range,
                "peano_baker": {"type": "array", "items": {"type": "array", "items": _num,
                                                             "minItems": 3, "maxItems": 3}},
            },
        },
    },
}

DEFAULTS = {
    "zones": {"N": 4.0, "eps": 0.2, "d0": 1.0, "t0": "auto"},
    "horizon": 200.0,
    "grids": {"t": {"start": 0.0, "stop": 50.0, "num": 51, "spacing": "linear"},
              "xi": {"start": 1e-3, "stop": 5.0, "num": 25, "spacing": "log"}},
    "tolerances": {"ode": 1e-9, "quad": 1e-10},
    "data": {"kind": "gaussian", "c0": 1.0, "c1": 1.0, "a": 0.0, "n": 2},
    "output": {"dir": "dampwave_out"},
    "jobs": 1,
    "bounds": {"kinds": None, "n": 200, "seed": 0, "windows": {}},
    "decay": {"t_range": [10.0, 2000.0], "num": 60, "sigma": 0.0, "m": 1.0, "npts": 400,
              "window": None},
    "wkb": {"symbols": ["bracket", "rho_omega", "R0_12", "hypR1_12", "N1_12", "R1_12"], "n": 50,
            "t_range": None, "peano_baker": [[1.0, 1.5, 3.0], [2.0, 4.0, 3.0]]},
}

# in-zone sampling windows that resolve each bound for the decreasing-eta example
DEFAULT_WINDOWS = {
    "HypZone": ((0, 20), (0.1, 5)),
    "OscZone": ((0, 40), (0.01, 5)),
    "RedZone": ((0, 200), (0.01, 1)),
    "EllRefined": ((0, 200), (1e-3, 1)),
    "EllUnrefined": ((0, 200), (1e-3, 1)),
    "DissZone": ((0, 200), (1e-4, 1)),
    "GluedCase11": ((0, 200), (1e-4, 1)),
    "GluedCase12": ((0, 200), (1e-3, 0.5)),
    "GluedCase13Full": ((0, 100), (1e-2, 1)),
    "GluedCase13Reduced": ((0, 100), (1e-3, 1)),
    "GluedCase2Large": ((0, 20), (0.5, 5)),
    "GluedCase22": ((0, 50), (0.3, 5)),
    "KernelLarge": ((0, 30), (1e-2, 5)),
    "KernelSmall": ((0, 100), (1e-3, 1)),
    "KernelDiss": ((0, 200), (1e-4, 1)),
    "TheoremRate": ((1, 2000), (1e-3, 10)),
}

_FIELD_NAMES = {"zones": "ZoneConfig", "family": "CoefficientFamily", "data": "DataProfile"}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _field_path(path):
    parts = [str(p) for p in path]
    text = ".".join(parts) if parts else "<root>"
    if parts and parts[0] in _FIELD_NAMES and len(parts) > 1:
        text += f" ({_FIELD_NAMES[parts[0]]}.{'.'.join(parts[1:])})"
    return text


def validate_config(raw):
    """Check ``raw`` against the schema and fill defaults; raises ``UsageError``."""
    if not isinstance(raw, dict):
        raise UsageError("config error at <root>: expected a mapping")
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(SCHEMA).iter_errors(raw))
    if err is not None:
        raise UsageError(f"config error at {_field_path(err.absolute_path)}: {err.message}")
    cfg = _merge(DEFAULTS, raw)
    for g in ("t", "xi"):
        grid = cfg["grids"][g]
        if grid["stop"] < grid["start"]:
            raise UsageError(f"config error at grids.{g}.stop: must not be below grids.{g}.start")
        if g == "xi" and grid["start"] <= 0:
            raise UsageError("config error at grids.xi.start: frequencies must be positive")
    lo, hi = cfg["decay"]["t_range"]
    if not 0 < lo < hi:
        raise UsageError("config error at decay.t_range: need 0 < start < stop")
    try:
        build_family(cfg)
    except coeffs.ParameterDomainError as e:
        raise UsageError(f"config error at family.params (CoefficientFamily): {e}") from None
    except TypeError as e:
        raise UsageError(f"config error at family.params: {e}") from None
    try:
        propagator.DataProfile(**cfg["data"])
    except ValueError as e:
        raise UsageError(f"config error at data (DataProfile): {e}") from None
    return cfg


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from None
    try:
        raw = yaml.safe_load(text)  # JSON is a subset of YAML
    except yaml.YAMLError as e:
        raise UsageError(f"config {path} is not valid YAML/JSON: {e}") from None
    return validate_config(raw)


def config_hash(cfg):
    """Hash of the canonical config; output location and parallelism do not enter it."""
    core = {k: v for k, v in cfg.items() if k not in ("output", "jobs")}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# building objects from a config


def build_family(cfg):
    f = cfg["family"]
    make = {"polynomial": coeffs.make_polynomial_family,
            "exponential": coeffs.make_exponential_family,
            "superexponential": coeffs.make_superexponential_family}[f["kind"]]
    return make(**f["params"], M=f.get("M", 2), J=f.get("J", 0), strict=f.get("strict", True))


def build_zone_config(cfg, fam=None, **over):
    z = dict(cfg["zones"], **over)
    t0 = z["t0"]
    if t0 == "auto":
        fam = fam or build_family(cfg)
        t0 = coeffs.detect_t0(fam, z["eps"], cfg["horizon"])
        if not math.isfinite(t0):
            t0 = cfg["horizon"]
    try:
        return zones.ZoneConfig(N=z["N"], eps=z["eps"], d0=z["d0"], t0=float(t0))
    except zones.ConfigError as e:
        raise UsageError(f"config error at zones: {e}") from None


def make_grid(g):
    if g["spacing"] == "log":
        start = g["start"] if g["start"] > 0 else min(1e-3, g["stop"])
        return np.geomspace(start, g["stop"], g["num"])
    return np.linspace(g["start"], g["stop"], g["num"])


# ---------------------------------------------------------------------------
# CSV output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if v is None:
        return ""
    return str(v)


class Artifacts:
    """Writes stamped CSVs under one output directory and records them."""

    def __init__(self, root: Path, chash: str):
        self.root = Path(root)
        self.chash = chash
        self.written = []
        self.root.mkdir(parents=True, exist_ok=True)

    def csv(self, name, columns, rows, units):
        buf = io.StringIO()
        unit_text = ", ".join(f"{c}={units.get(c, '1')}" for c in columns)
        buf.write(f"# dampwave {__version__}; config_hash={self.chash}; units: {unit_text}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        path = self.root / name
        path.write_text(buf.getvalue())
        self.written.append(name)
        return path

    def text(self, name, lines):
        path = self.root / name
        path.write_text(f"# dampwave {__version__}; config_hash={self.chash}\n" + "".join(l + "\n" for l in lines))
        self.written.append(name)
        return path


def read_csv(path):
    """Rows of a stamped CSV as dicts (comment lines skipped)."""
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


# ---------------------------------------------------------------------------
# parallel helpers (workers rebuild objects from the config, so only plain data crosses)


def _pmap(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def _chunks(arr, k):
    """Interleaved split so that cheap and expensive frequencies mix in every chunk."""
    arr = np.asarray(arr)
    k = max(1, min(k, len(arr)))
    return [arr[i::k] for i in range(k)]


def _unchunk(parts, k):
    """Inverse of ``_chunks`` for joined kernel tables."""
    n = sum(p["K0"].shape[0] for p in parts)
    out = {}
    for key in ("K0", "dK0", "K1", "dK1"):
        arr = np.empty((n,) + parts[0][key].shape[1:], dtype=parts[0][key].dtype)
        for i, p in enumerate(parts):
            arr[i::k] = p[key]
        out[key] = arr
    out["steps"] = max(p["steps"] for p in parts)
    return out


def _kernel_chunk(task):
    cfg, times, xis, tol = task
    fam = build_family(cfg)
    zc = build_zone_config(cfg, fam)
    return propagator.kernel_table(fam, zc, times, xis, tol)


def _data_kernel_chunk(task):
    cfg, times, xis, tol = task
    fam = build_family(cfg)
    zc = build_zone_config(cfg, fam)
    data = propagator.DataProfile(**cfg["data"])
    return propagator.data_kernel_table(fam, zc, data, times, xis, tol)


def _bound_task(task):
    cfg, kind_name, tol = task
    fam = build_family(cfg)
    kind = bounds.BoundKind(kind_name)
    win = cfg["bounds"]["windows"].get(kind_name, {})
    t_range, xi_range = DEFAULT_WINDOWS[kind_name]
    t_range = tuple(win.get("t_range", t_range))
    xi_range = tuple(win.get("xi_range", xi_range))
    over = {"d0": win["d0"]} if "d0" in win else {}
    zc = build_zone_config(cfg, fam, **over)
    spec = bounds.SampleSpec(cfg["bounds"]["n"], t_range, xi_range, cfg["bounds"]["seed"])
    data = propagator.DataProfile(**cfg["data"])
    try:
        rep = bounds.verify_bound(fam, zc, kind, spec, tol=tol, data=data,
                                  sigma=cfg["decay"]["sigma"], n_dim=data.n, m=cfg["decay"]["m"])
    except (wkb.ApplicabilityError, RuntimeError) as e:
        return kind_name, None, f"{type(e).__name__}: {e}"
    return kind_name, rep, ""


def _symbol_task(task):
    cfg, name = task
    fam = build_family(cfg)
    zc = build_zone_config(cfg, fam)
    parts = name.split("*")
    zone, m1, m2, l = wkb.CATALOG[parts[0]]
    zone = "hyp" if zone == "any" else zone
    t_range = cfg["wkb"]["t_range"]
    if t_range is None:
        t_range = (zc.t0, zc.t0 + 50.0) if zone == "ell" else (0.0, 30.0)
    try:
        return wkb.symbol_check(fam, zc, name, m1, m2, l, zone, n=cfg["wkb"]["n"],
                                t_range=tuple(t_range)), ""
    except (RuntimeError, ValueError) as e:
        return None, f"{type(e).__name__}: {e}"


# ---------------------------------------------------------------------------
# verbs


def verb_check_assumptions(cfg, art, jobs, tol, clock):
    fam = build_family(cfg)
    rep = assumptions.check_all(fam, cfg["horizon"])
    clock("check_all")
    rows = []
    for cid in assumptions.CONDITIONS:
        r = rep[cid]
        wt, wv = (None, None) if r.witness is None else r.witness
        for name, val in r.constants.items():
            rows.append((cid, r.status, name, float(val), wt, wv, r.note))
        if not r.constants:
            rows.append((cid, r.status, "", math.nan, wt, wv, r.note))
    art.csv("assumptions.csv", ["condition", "status", "constant", "value", "witness_t", "witness_value", "note"],
            rows, {"witness_t": "time"})
    srows = []
    for cid in assumptions.CONDITIONS:
        samp = rep.samples.get(cid)
        if samp is None:
            continue
        tt, vv = samp
        srows.extend((cid, float(a), float(b)) for a, b in zip(np.ravel(tt), np.ravel(vv)))
    art.csv("assumption_samples.csv", ["condition", "t", "ratio"], srows, {"t": "time"})
    art.text("assumptions.txt", list(rep.lines()))
    return {"passed": rep.passed, "failed": rep.failed()}


def verb_zones(cfg, art, jobs, tol, clock):
    fam = build_family(cfg)
    zc = build_zone_config(cfg, fam)
    tg = make_grid(cfg["grids"]["t"])
    xg = make_grid(cfg["grids"]["xi"])
    T, X = np.meshgrid(tg, xg, indexing="ij")
    codes = zones.zone_codes(fam, zc, T, X)
    clock("raster")
    names = zones.TAG_NAMES
    art.csv("zones_raster.csv", ["t", "xi", "tag"],
            ((float(a), float(b), names[zones.Tag(int(c))])
             for a, b, c in zip(T.ravel(), X.ravel(), codes.ravel())),
            {"t": "time", "xi": "1/length"})
    counts = np.bincount(codes.ravel().astype(int), minlength=len(zones.Tag))
    art.csv("zones_summary.csv", ["tag", "count", "fraction"],
            ((names[tag], int(counts[tag]), counts[tag] / codes.size) for tag in zones.Tag), {})
    srows = []
    for xi in xg:
        st = zones.separating_times(fam, zc, float(xi), cfg["horizon"])
        srows.append((float(xi), st.t_diss, st.t_ell, st.t_red, st.t_osc, st.t_xi))
    clock("separating_times")
    art.csv("separating_times.csv", ["xi", "t_diss", "t_ell", "t_red", "t_osc", "t_xi"], srows,
            {"xi": "1/length", "t_diss": "time", "t_ell": "time", "t_red": "time", "t_osc": "time",
             "t_xi": "time"})
    art.csv("zone_config.csv", ["N", "eps", "d0", "t0"], [(zc.N, zc.eps, zc.d0, zc.t0)], {"t0": "time"})
    return {"uncovered_fraction": float(counts[zones.Tag.UNCOVERED] / codes.size)}


def _cached_table(cfg, art, times, xis, tol, jobs):
    """Raw kernels on the grid, reusing a binary cache keyed by family, kind, s, t, xi and tol."""
    key_src = json.dumps({"family": cfg["family"], "zones": cfg["zones"], "kind": "raw", "s": 0.0,
                          "t": [float(x) for x in times], "xi": [float(x) for x in xis], "tol": tol},
                         sort_keys=True)
    key = hashlib.sha256(key_src.encode()).hexdigest()[:24]
    cache = art.root / "cache" / f"fundamental_{key}.npz"
    if cache.exists():
        with np.load(cache) as z:
            return {k: z[k] for k in ("K0", "dK0", "K1", "dK1")} | {"steps": int(z["steps"])}, True
    chunks = _chunks(xis, jobs)
    parts = _pmap(_kernel_chunk, [(cfg, times, c, tol) for c in chunks], jobs)
    tab = _unchunk(parts, len(chunks))
    cache.parent.mkdir(parents=True, exist_ok=True)
    np.savez(cache, **{k: tab[k] for k in ("K0", "dK0", "K1", "dK1")}, steps=tab["steps"])
    return tab, False


def verb_solve(cfg, art, jobs, tol, clock):
    times = make_grid(cfg["grids"]["t"])
    xis = make_grid(cfg["grids"]["xi"])
    tab, hit = _cached_table(cfg, art, times, xis, tol, jobs)
    clock("kernels")
    rows = []
    for i, xi in enumerate(xis):
        for k, t in enumerate(times):
            E = np.array([[tab["K0"][i, k], tab["K1"][i, k]], [tab["dK0"][i, k], tab["dK1"][i, k]]])
            rows.append((float(t), float(xi),
                         *(f(tab[n][i, k]) for n in ("K0", "dK0", "K1", "dK1") for f in (np.real, np.imag)),
                         float(np.linalg.norm(E, 2))))
    cols = ["t", "xi"] + [f"{n}_{p}" for n in ("K0", "dK0", "K1", "dK1") for p in ("re", "im")] + ["norm2"]
    units = {"t": "time", "xi": "1/length", "dK0_re": "1/time", "dK0_im": "1/time", "K1_re": "time",
             "K1_im": "time"}
    art.csv("kernels.csv", cols, rows, units)
    return {"cache_hit": hit, "steps": tab["steps"]}


def verb_verify_bounds(cfg, art, jobs, tol, clock):
    fam = build_family(cfg)
    kinds = cfg["bounds"]["kinds"] or [k.value for k in bounds.BoundKind]
    results = _pmap(_bound_task, [(cfg, k, tol) for k in kinds], jobs)
    clock("verify")
    srows, rows = [], []
    for name, rep, err in results:
        if rep is None:
            srows.append((name, "not-applicable", math.nan, math.nan, math.nan, None, None, err))
            continue
        srows.append((name, "pass" if rep.passed else "fail", rep.sup_ratio, rep.sup_ratio_doubled,
                      rep.growth, rep.constant, rep.constant_doubled, ""))
        for i, s, t, xi, entry, lo, lp, lr in rep.rows():
            rows.append((name, i, s, t, xi, entry, math.exp(lo) if math.isfinite(lo) else 0.0,
                         math.exp(lp) if math.isfinite(lp) else math.inf, math.exp(lr)))
    art.csv("bounds_summary.csv", ["kind", "status", "sup_ratio", "sup_ratio_doubled", "growth", "constant",
                                   "constant_doubled", "note"], srows, {})
    art.csv("bounds_samples.csv", ["kind", "sample", "s", "t", "xi", "entry", "observed", "predicted", "ratio"],
            rows, {"s": "time", "t": "time", "xi": "1/length"})
    ell = _ell_aux_rows(fam, cfg)
    art.csv("ell_aux.csv", ["t", "xi", "relative_excess", "holds"], ell, {"t": "time", "xi": "1/length"})
    clock("ell_aux")
    return {"failed": [r[0] for r in srows if r[1] == "fail"]}


def _ell_aux_rows(fam, cfg):
    zc = build_zone_config(cfg, fam)
    lo = zc.t0
    ts, xs = zones.sample_zone(fam, zc, zones.Tag.ELL, cfg["bounds"]["n"], (lo, lo + 200.0),
                               seed=cfg["bounds"]["seed"])
    rows = []
    for t, xi in zip(ts, xs):
        one = bounds.ell_aux_check(fam, zc, [t], [xi])
        rows.append((float(t), float(xi), one.max_excess, one.holds))
    return rows


def verb_decay_fit(cfg, art, jobs, tol, clock):
    fam = build_family(cfg)
    zc = build_zone_config(cfg, fam)
    d = cfg["decay"]
    data = propagator.DataProfile(**cfg["data"])
    times = np.geomspace(d["t_range"][0], d["t_range"][1], d["num"])
    xis = propagator.xi_grid(fam, zc, float(times[-1]), d["npts"], data)
    chunks = _chunks(xis, jobs)
    parts = _pmap(_data_kernel_chunk, [(cfg, times, c, tol) for c in chunks], jobs)
    ns = propagator.norms_from_table(fam, data, xis, _unchunk(parts, len(chunks)), times, d["sigma"], data.n)
    clock("norms")
    art.csv("decay_series.csv", ["t", "u", "ut", "lam_grad_u"],
            zip(times, ns.u, ns.ut, ns.grad), {"t": "time"})
    axes = bounds.decay_axes(fam)
    window = tuple(d["window"]) if d["window"] else None
    rows, out = [], {}
    for qname, series, l in (("u", ns.u, 0), ("ut", ns.ut, 1)):
        pred = bounds.closed_form_exponent(fam, d["sigma"], data.n, d["m"], l)
        rep = bounds.fit_decay(times, series, axes=axes, predicted=pred, window=window)
        rows.append((qname, rep.slope, rep.intercept, rep.residual, rep.n, rep.axes, rep.predicted,
                     rep.deviation))
        out[qname] = rep.slope
    art.csv("decay_fit.csv", ["quantity", "slope", "intercept", "residual", "n", "axes", "predicted",
                              "deviation"], rows, {})
    clock("fit")
    return out


def verb_wkb_check(cfg, art, jobs, tol, clock):
    fam = build_family(cfg)
    zc = build_zone_config(cfg, fam)
    names = cfg["wkb"]["symbols"]
    for nm in names:
        for p in nm.split("*"):
            if p not in wkb.CATALOG:
                raise UsageError(f"config error at wkb.symbols: unknown catalog entry {p!r}")
    results = _pmap(_symbol_task, [(cfg, nm) for nm in names], jobs)
    clock("symbols")
    rows = []
    for nm, (sc, err) in zip(names, results):
        if sc is None:
            rows.append((nm, "", "", "", "", "", "", "", "error", err))
            continue
        for k, c in enumerate(sc.C):
            cd = None if sc.C_double is None else sc.C_double[k]
            rows.append((nm, sc.zone, sc.m1, sc.m2, k, c, cd, sc.n, "pass" if sc.passed else "fail", ""))
    art.csv("symbol_checks.csv", ["name", "zone", "m1", "m2", "order", "C", "C_doubled", "n", "status", "note"],
            rows, {})
    prow = []
    for s, t, xi in cfg["wkb"]["peano_baker"]:
        try:
            r = wkb.peano_baker(fam, zc, s, t, xi, tol=1e-12)
            prow.append((s, t, xi, r.terms, r.tail, r.residual, r.r_l1, "ok", ""))
        except (wkb.ApplicabilityError, wkb.BudgetError, ValueError) as e:
            prow.append((s, t, xi, 0, math.nan, math.nan, math.nan, "skipped", f"{type(e).__name__}: {e}"))
    art.csv("peano_baker.csv", ["s", "t", "xi", "terms", "tail_bound", "oracle_residual", "R_l1", "status",
                                "note"], prow, {"s": "time", "t": "time", "xi": "1/length"})
    clock("peano_baker")
    return {}


# summary rows pulled from each verb's outputs: (file, key column, metric columns, status column)
_REPORT_SOURCES = (
    ("check-assumptions", "assumptions.csv", ("condition", "constant"), ("value",), "status"),
    ("zones", "zones_summary.csv", ("tag",), ("count", "fraction"), None),
    ("verify-bounds", "bounds_summary.csv", ("kind",), ("sup_ratio", "sup_ratio_doubled", "growth", "constant"),
     "status"),
    ("decay-fit", "decay_fit.csv", ("quantity",), ("slope", "predicted", "deviation"), None),
    ("wkb-check", "symbol_checks.csv", ("name", "order"), ("C", "C_doubled"), "status"),
    ("wkb-check", "peano_baker.csv", ("s", "t", "xi"), ("terms", "oracle_residual"), "status"),
)


def verb_report(cfg, art, jobs, tol, clock):
    rows = []
    found = 0
    for verb, fname, keys, metrics, status in _REPORT_SOURCES:
        path = art.root / fname
        if not path.exists():
            continue
        found += 1
        for rec in read_csv(path):
            item = "/".join(rec[k] for k in keys if rec.get(k))
            for m in metrics:
                rows.append((verb, fname, item, m, rec.get(m, ""), rec.get(status, "") if status else ""))
    if found == 0:
        raise RuntimeError(f"no verb outputs found in {art.root}; run the other verbs first")
    art.csv("summary.csv", ["verb", "source", "item", "metric", "value", "status"], rows, {})
    if (art.root / "decay_series.csv").exists():
        long = []
        for rec in read_csv(art.root / "decay_series.csv"):
            long.extend((rec["t"], q, rec[q]) for q in ("u", "ut", "lam_grad_u"))
        art.csv("plot_decay.csv", ["t", "quantity", "norm"], long, {"t": "time"})
    if (art.root / "bounds_samples.csv").exists():
        best = {}
        for rec in read_csv(art.root / "bounds_samples.csv"):
            key = (rec["kind"], int(rec["sample"]))
            r = float(rec["ratio"])
            if key not in best or r > best[key][3]:
                best[key] = (rec["kind"], float(rec["t"]), float(rec["xi"]), r)
        art.csv("plot_bounds.csv", ["kind", "t", "xi", "max_entry_ratio"],
                [best[k] for k in sorted(best)], {"t": "time", "xi": "1/length"})
    clock("aggregate")
    return {"sources": found}


_VERB_FUNCS = {
    "check-assumptions": verb_check_assumptions,
    "zones": verb_zones,
    "solve": verb_solve,
    "verify-bounds": verb_verify_bounds,
    "decay-fit": verb_decay_fit,
    "wkb-check": verb_wkb_check,
    "report": verb_report,
}


# ---------------------------------------------------------------------------
# manifest and entry points


def _update_manifest(root, chash, verb, outputs, stages, status, info):
    path = Path(root) / "manifest.json"
    man = {}
    if path.exists():
        try:
            man = json.loads(path.read_text())
        except json.JSONDecodeError:
            man = {}
    if man.get("config_hash") != chash:
        man = {"config_hash": chash, "toolkit_version": __version__, "verbs": {}}
    man["verbs"][verb] = {"status": status, "outputs": sorted(outputs),
                          "wall_clock_s": {k: round(v, 3) for k, v in stages.items()},
                          "result": info}
    path.write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")
    return man


def output_root(cfg, out=None):
    return Path(out or os.environ.get(OUT_ENV) or cfg["output"]["dir"])


def run(verb, config_path, out=None, jobs=None, tol=None):
    """Run one verb; returns ``(exit_status, output_dir)``.  Raises ``UsageError`` for bad input."""
    if verb not in VERBS:
        raise UsageError(f"unknown verb {verb!r}; choose from {', '.join(VERBS)}")
    cfg = load_config(config_path)
    if tol is not None:
        if not 0 < tol <= 1e-3:
            raise UsageError("--tol must lie in (0, 1e-3]")
        cfg["tolerances"]["ode"] = float(tol)
    if jobs is not None:
        if jobs < 1:
            raise UsageError("--jobs must be at least 1")
        cfg["jobs"] = int(jobs)
    chash = config_hash(cfg)
    root = output_root(cfg, out)
    art = Artifacts(root, chash)
    stages = {}
    mark = [time.perf_counter()]

    def clock(stage):
        now = time.perf_counter()
        stages[stage] = now - mark[0]
        mark[0] = now

    try:
        info = _VERB_FUNCS[verb](cfg, art, cfg["jobs"], cfg["tolerances"]["ode"], clock)
    except UsageError:
        raise
    except Exception:
        log = root / "logs" / f"{verb}.log"
        log.parent.mkdir(parents=True, exist_ok=True)
        log.write_text(traceback.format_exc())
        _update_manifest(root, chash, verb, art.written, stages, "failed", {"log": str(log)})
        sys.stderr.write(f"stage {verb} failed; see {log}\n")
        return 1, root
    _update_manifest(root, chash, verb, art.written, stages, "ok", info)
    return 0, root


def build_parser():
    p = argparse.ArgumentParser(prog="dampwave", description="Energy-decay experiments for damped waves.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", required=True, help="YAML or JSON experiment config")
    p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and output.dir)")
    p.add_argument("--jobs", type=int, help="worker processes for sweeps")
    p.add_argument("--tol", type=float, help="ODE tolerance (overrides tolerances.ode)")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        status, root = run(args.verb, args.config, args.out, args.jobs, args.tol)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"dampwave: error: {e}\n")
        return 2
    if status == 0:
        print(f"{args.verb}: outputs in {root}")
    return status


if __name__ == "__main__":
    sys.exit(main())
