"""Experiment runner: scenario files in, CSV/JSON reports out.

Subcommands ``whitney``, ``truncate``, ``solve``, ``verify`` and ``scan`` read a
JSON or TOML scenario, run the corresponding module pipeline and write their
artifacts into the output directory.  Every CSV row carries the hash of the
canonical JSON form of the scenario.  Exit codes: 0 success, 1 a stability
check failed, 2 malformed scenario or flags, 3 a module error.
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
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

OUT_ENV = "SOLENTRUNC_OUT"
MASKS = ("box", "ball", "L-shape")
FAMILIES = ("singular", "manufactured", "zero")
MODELS = ("p-laplacian", "linear-at-infinity")

DEFAULTS = {
    "name": "scenario",
    "seed": 0,
    "output": None,
    "domain": {"mask": "box", "n": 16, "length": 1.0, "radius": 0.45},
    "model": {"kind": "p-laplacian", "p": 2.0, "nu": 1.0, "nu0": 2.0, "delta_tilde": None},
    "forcing": {"family": "singular", "center": [0.5, 0.5, 0.5], "a": 1.55, "strength": 1.0, "q": 1.9},
    "solver": {"navier_stokes": False, "tol": 1e-10, "max_iter": 60, "deltas": [1e-2, 1e-3, 1e-4]},
    "ladders": {
        "h": [1 / 16, 1 / 24, 1 / 32],
        "k": [2.0**j for j in range(9)],
        "lambda": list(range(11)),
        "q": None,
    },
    "estimates": {"factor": 2.0, "beta_fractions": [0.6, 0.4], "layer_cake_nodes": 400},
    "whitney": {"random_sets": 4},
    "truncation": {"spike": [0.08, 20.0], "q_list": [1.0, 1.5]},
}


class ScenarioError(ValueError):
    """Malformed scenario; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"scenario field '{field}': {message}")
        self.field = field


# -- scenario parsing ---------------------------------------------------------------

def _number(v, field, positive=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(field, f"expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ScenarioError(field, "must be finite")
    if integer and int(v) != v:
        raise ScenarioError(field, f"expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ScenarioError(field, f"must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _numbers(v, field, **kw):
    if not isinstance(v, list) or not v:
        raise ScenarioError(field, "expected a non-empty list")
    return [_number(x, f"{field}[{i}]", **kw) for i, x in enumerate(v)]


def _section(raw, name):
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ScenarioError(name, "expected a table")
    unknown = set(sec) - set(DEFAULTS[name])
    if unknown:
        raise ScenarioError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    out = copy.deepcopy(DEFAULTS[name])
    out.update(sec)
    return out


@dataclass
class Scenario:
    name: str
    seed: int
    output: str | None
    domain: dict
    model: dict
    forcing: dict
    solver: dict
    ladders: dict
    estimates: dict
    whitney: dict
    truncation: dict

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ScenarioError("<root>", "expected a table")
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise ScenarioError(sorted(unknown)[0], "unknown key")
        name = raw.get("name", DEFAULTS["name"])
        if not isinstance(name, str) or not name:
            raise ScenarioError("name", "expected a non-empty string")
        seed = _number(raw.get("seed", 0), "seed", integer=True)
        output = raw.get("output")
        if output is not None and not isinstance(output, str):
            raise ScenarioError("output", "expected a path string")

        dom = _section(raw, "domain")
        if dom["mask"] not in MASKS:
            raise ScenarioError("domain.mask", f"expected one of {', '.join(MASKS)}, got {dom['mask']!r}")
        dom["n"] = _number(dom["n"], "domain.n", positive=True, integer=True)
        if dom["n"] < 6:
            raise ScenarioError("domain.n", "needs at least 6 cells per axis")
        dom["length"] = _number(dom["length"], "domain.length", positive=True)
        dom["radius"] = _number(dom["radius"], "domain.radius", positive=True)
        if dom["radius"] > dom["length"] / 2:
            raise ScenarioError("domain.radius", "ball does not fit in the box")

        mod = _section(raw, "model")
        if mod["kind"] not in MODELS:
            raise ScenarioError("model.kind", f"expected one of {', '.join(MODELS)}, got {mod['kind']!r}")
        mod["p"] = _number(mod["p"], "model.p")
        if not mod["p"] > 1:
            raise ScenarioError("model.p", f"needs p > 1, got {mod['p']}")
        if mod["kind"] == "linear-at-infinity" and mod["p"] != 2:
            raise ScenarioError("model.p", "linear-at-infinity laws have p = 2")
        mod["nu"] = _number(mod["nu"], "model.nu", positive=True)
        mod["nu0"] = _number(mod["nu0"], "model.nu0", positive=True)
        if mod["delta_tilde"] is not None:
            mod["delta_tilde"] = _number(mod["delta_tilde"], "model.delta_tilde", positive=True)
        pd = mod["p"] / (mod["p"] - 1)

        frc = _section(raw, "forcing")
        if frc["family"] not in FAMILIES:
            raise ScenarioError("forcing.family", f"expected one of {', '.join(FAMILIES)}, got {frc['family']!r}")
        frc["center"] = _numbers(frc["center"], "forcing.center")
        if len(frc["center"]) != 3:
            raise ScenarioError("forcing.center", "expected three coordinates")
        frc["a"] = _number(frc["a"], "forcing.a", positive=True)
        frc["strength"] = _number(frc["strength"], "forcing.strength")
        frc["q"] = _number(frc["q"], "forcing.q")
        if not 1 < frc["q"] <= pd + 1e-12:
            raise ScenarioError("forcing.q", f"needs 1 < q <= p' = {pd!r}, got {frc['q']}")
        if frc["family"] == "singular" and frc["a"] * frc["q"] >= 3:
            raise ScenarioError("forcing.a", f"a*q = {frc['a'] * frc['q']!r} >= 3: f is not in L^q")

        sol = _section(raw, "solver")
        if not isinstance(sol["navier_stokes"], bool):
            raise ScenarioError("solver.navier_stokes", "expected true or false")
        sol["tol"] = _number(sol["tol"], "solver.tol", positive=True)
        sol["max_iter"] = _number(sol["max_iter"], "solver.max_iter", positive=True, integer=True)
        sol["deltas"] = _numbers(sol["deltas"], "solver.deltas", positive=True)
        if sol["navier_stokes"] and mod["kind"] == "p-laplacian" and mod["p"] < 2:
            raise ScenarioError("solver.navier_stokes", "Navier-Stokes needs p >= 2")

        lad = _section(raw, "ladders")
        lad["h"] = _numbers(lad["h"], "ladders.h", positive=True)
        for i, h in enumerate(lad["h"]):
            n = dom["length"] / h
            if abs(n - round(n)) > 1e-9 * n or round(n) < 6:
                raise ScenarioError(f"ladders.h[{i}]", f"length/h = {n!r} is not a grid size >= 6")
        lad["k"] = _numbers(lad["k"], "ladders.k", positive=True)
        lad["lambda"] = _numbers(lad["lambda"], "ladders.lambda", integer=True)
        # the q ladder defaults to the forcing exponent alone
        lad["q"] = [frc["q"]] if lad["q"] is None else _numbers(lad["q"], "ladders.q")
        for i, q in enumerate(lad["q"]):
            if not 1 < q <= pd + 1e-12:
                raise ScenarioError(f"ladders.q[{i}]", f"needs 1 < q <= p' = {pd!r}, got {q}")

        est = _section(raw, "estimates")
        est["factor"] = _number(est["factor"], "estimates.factor", positive=True)
        est["beta_fractions"] = _numbers(est["beta_fractions"], "estimates.beta_fractions", positive=True)
        if max(est["beta_fractions"]) >= 1:
            raise ScenarioError("estimates.beta_fractions", "fractions of the tail mass must be below 1")
        est["layer_cake_nodes"] = _number(est["layer_cake_nodes"], "estimates.layer_cake_nodes", positive=True, integer=True)

        wh = _section(raw, "whitney")
        wh["random_sets"] = _number(wh["random_sets"], "whitney.random_sets", integer=True)
        if wh["random_sets"] < 0:
            raise ScenarioError("whitney.random_sets", "must be non-negative")

        tr = _section(raw, "truncation")
        if tr["spike"] is not None:
            tr["spike"] = _numbers(tr["spike"], "truncation.spike")
            if len(tr["spike"]) != 2:
                raise ScenarioError("truncation.spike", "expected [radius, amplitude]")
        tr["q_list"] = _numbers(tr["q_list"], "truncation.q_list", positive=True)
        return cls(name, seed, output, dom, mod, frc, sol, lad, est, wh, tr)

    def to_dict(self):
        return {
            "name": self.name,
            "seed": self.seed,
            "output": self.output,
            "domain": dict(self.domain),
            "model": dict(self.model),
            "forcing": dict(self.forcing),
            "solver": dict(self.solver),
            "ladders": dict(self.ladders),
            "estimates": dict(self.estimates),
            "whitney": dict(self.whitney),
            "truncation": dict(self.truncation),
        }

    def canonical_json(self):
        # output location is not part of the experiment
        d = self.to_dict()
        d.pop("output")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    # -- builders
    def build_domain(self, n=None):
        from .grid import GridDomain

        d = self.domain
        n = d["n"] if n is None else n
        if d["mask"] == "ball":
            c = (d["length"] / 2,) * 3
            return GridDomain.ball(n, d["radius"], center=c, length=d["length"])
        return GridDomain.from_spec(d["mask"], n, length=d["length"])

    def grid_sizes(self):
        return [int(round(self.domain["length"] / h)) for h in self.ladders["h"]]

    def build_model(self):
        from .solver import StressModel

        m = self.model
        if m["kind"] == "linear-at-infinity":
            return StressModel.linear_at_infinity(m["nu"], m["nu0"], m["delta_tilde"])
        return StressModel.p_laplacian(m["p"])

    def build_forcing(self, dom):
        from . import solver

        fr = self.forcing
        if fr["family"] == "singular":
            return solver.singular_forcing(dom, fr["center"], fr["a"], fr["strength"], q=fr["q"]).f
        if fr["family"] == "manufactured":
            return fr["strength"] * solver.manufactured_stokes(dom)[2]
        return np.zeros((3, 3) + dom.dims)

    def build_config(self):
        from .solver import SolverConfig

        s = self.solver
        return SolverConfig(tol=s["tol"], max_iter=s["max_iter"], deltas=tuple(s["deltas"]))


def _load_toml(text):
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(text)


def bundled_scenarios():
    return sorted(p.name for p in resources.files("solentrunc").joinpath("scenarios").iterdir() if p.name.endswith((".json", ".toml")))


def read_scenario(path):
    """Parse a JSON or TOML file; bundled scenario names are accepted as well."""
    p = Path(path)
    if not p.exists():
        bundled = resources.files("solentrunc").joinpath("scenarios", str(path))
        if not bundled.is_file():
            raise ScenarioError("<file>", f"no such scenario file {str(path)!r}")
        text, suffix = bundled.read_text(), Path(str(path)).suffix
    else:
        text, suffix = p.read_text(), p.suffix
    try:
        raw = _load_toml(text) if suffix == ".toml" else json.loads(text)
    except ValueError as err:
        raise ScenarioError("<file>", f"cannot parse {path}: {err}") from None
    return Scenario.from_dict(raw)


def apply_overrides(sc, overrides, seed=None):
    """``--ladder-override name=v1,v2,...`` and ``--seed`` on a parsed scenario (re-validated)."""
    raw = sc.to_dict()
    for ov in overrides or ():
        name, sep, vals = ov.partition("=")
        if not sep or name not in DEFAULTS["ladders"]:
            raise ScenarioError(f"ladders.{name}", f"bad override {ov!r}; expected one of h,k,lambda,q as NAME=v1,v2")
        try:
            raw["ladders"][name] = [json.loads(v) for v in vals.split(",")]
        except ValueError:
            raise ScenarioError(f"ladders.{name}", f"override values {vals!r} are not numbers") from None
    if seed is not None:
        raw["seed"] = seed
    return Scenario.from_dict(raw)


# -- output helpers ------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path, header, rows, scenario_hash):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header) + ["scenario_hash"])
        for r in rows:
            w.writerow([_fmt(v) for v in r] + [scenario_hash])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_plot(out, stem, title, series, xlabel, logx=True):
    """Gnuplot data + script for ratio-vs-ladder curves; nothing is rendered."""
    dat = out / f"{stem}.dat"
    with open(dat, "w") as fh:
        for name, pts in series.items():
            fh.write(f"# {name}\n")
            for x, y in pts:
                fh.write(f"{_fmt(float(x))} {_fmt(float(y))}\n")
            fh.write("\n\n")
    plots = ", ".join(f"'{dat.name}' index {i} with linespoints title '{name}'" for i, name in enumerate(series))
    script = [
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        "set ylabel 'ratio'",
        "set logscale x" if logx else "unset logscale x",
        "set key outside",
        f"set terminal pngcairo size 900,600; set output '{stem}.png'",
        f"plot {plots}",
    ]
    (out / f"{stem}.gp").write_text("\n".join(script) + "\n")


def _pool_map(fn, jobs, threads):
    """Run jobs on a worker pool; results come back in job order."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, jobs))


# -- subcommands -------------------------------------------------------------------

def run_whitney(sc, out, threads):
    from . import whitney

    rng = np.random.default_rng(sc.seed)
    n = sc.domain["n"]
    sets = [("domain", sc.build_domain().interior_mask)]
    sets += [(f"random_{i}", whitney.random_open_set(n, rng)) for i in range(sc.whitney["random_sets"])]

    def job(item):
        name, O = item
        cover = whitney.decompose(O)
        return name, whitney.validate(cover)

    results = _pool_map(job, sets, threads)
    keys = [k for k in results[0][1]]
    rows = [[name] + [rep[k] for k in keys] for name, rep in results]
    write_csv(out / "whitney.csv", ["set"] + keys, rows, sc.hash)
    ok = all(rep["all_pass"] for _, rep in results)
    write_json(out / "whitney.json", {"scenario_hash": sc.hash, "all_pass": ok, "sets": dict(results)})
    return ok


def run_truncate(sc, out, threads):
    from . import curlpot, truncation

    dom = sc.build_domain()
    rng = np.random.default_rng(sc.seed)
    spike = sc.truncation["spike"]
    c = tuple(x * sc.domain["length"] for x in (0.5, 0.5, 0.5))
    u = curlpot.random_solenoidal_field(dom, rng, spike=None if spike is None else (c, spike[0], spike[1]))
    pot = curlpot.inverse_curl(u, dom)
    lu = truncation.lambda_unit(pot)
    lambdas = [lu * 2.0**j for j in sc.ladders["lambda"]]
    q_list = tuple(sc.truncation["q_list"])
    rows, sup = truncation.verify_truncation(u, dom, lambdas, p=sc.model["p"], q_list=q_list, pot=pot)
    buf = io.StringIO()
    truncation.write_report_csv(rows, sup, q_list, buf)
    lines = buf.getvalue().splitlines()
    text = [lines[0] + ",scenario_hash"] + [ln + "," + sc.hash for ln in lines[1:]]
    (out / "truncation.csv").write_text("\n".join(text) + "\n")
    ok = bool(sup["identity_off_set"] and sup["div_max"] <= 1e-10)
    write_json(out / "truncation.json", {"scenario_hash": sc.hash, "lambda_unit": lu, "sup": sup, "all_pass": ok})
    series = {"linf_ratio": [(r["lambda"] / lu, r["linf_ratio"]) for r in rows]}
    series["bad_measure_ratio"] = [(r["lambda"] / lu, r["bad_measure_ratio"]) for r in rows]
    write_plot(out, "truncation_ratios", "Lipschitz truncation ratios", series, "lambda / lambda_unit")
    return ok


def run_solve(sc, out, threads, vtk=False):
    from . import solver
    from .grid import save_snapshot, write_vtk

    dom = sc.build_domain()
    model = sc.build_model()
    f = sc.build_forcing(dom)
    if sc.solver["navier_stokes"]:
        sol = solver.solve_navier_stokes(model, f, dom, sc.build_config())
    else:
        sol = solver.solve_stokes(model, f, dom, sc.build_config())
    save_snapshot(out / "velocity.bin", sol.u, dom)
    save_snapshot(out / "pressure.bin", sol.pi, dom)
    if vtk:
        write_vtk(out / "solution.vtk", {"velocity": sol.u, "pressure": sol.pi}, dom)
    diag = {k: v for k, v in sol.diagnostics.items() if not k.startswith("_") and k not in ("history", "picard_history")}
    rows = [[k, json.dumps(_jsonable(v), sort_keys=True) if isinstance(v, (dict, list)) else v] for k, v in sorted(diag.items())]
    write_csv(out / "solve.csv", ["quantity", "value"], rows, sc.hash)
    write_json(out / "solve.json", {"scenario_hash": sc.hash, "diagnostics": diag, "model": model.to_dict()})
    return True


def _verify_job(sc, n):
    """All reports for one grid size; independent of every other job."""
    from . import maxweight, solver
    from . import verify as V
    from .grid import magnitude, sym_gradient

    dom = sc.build_domain(n)
    model = sc.build_model()
    config = sc.build_config()
    p, q = model.p, sc.forcing["q"]
    fam = {"a": sc.forcing["a"]} if sc.forcing["family"] == "singular" else {}
    f = sc.build_forcing(dom)
    full = solver.solve_stokes(model, f, dom, config)
    reps = [V.verify_mt1(full, f, p, q, dom, k="inf", **fam), V.verify_mt2(full, f, p, q, dom, k="inf", **fam)]
    for k in sc.ladders["k"]:
        fk = solver.approximate_forcing(f, k)
        sk = solver.solve_stokes(model, fk, dom, config)
        reps += [V.verify_mt1(sk, fk, p, q, dom, k=k, **fam), V.verify_mt2(sk, fk, p, q, dom, k=k, **fam)]
    eps = p / (p - 1) - q
    if eps > 0:
        base = np.where(dom.interior_mask, magnitude(f), 0.0) + 1.0
        Mg = maxweight.maximal(base, dom, restrict=False)
        strain = magnitude(sym_gradient(full.u, dom))
        reps.append(V.layer_cake_identity(strain, Mg, eps, dom, p=p, nodes=sc.estimates["layer_cake_nodes"]))
    if sc.solver["navier_stokes"]:
        if model.kind == "linear-at-infinity":
            w = V.forcing_weight(f, 2.0, q, dom)
            total = solver.tail_mass(f, np.finfo(float).tiny, q, dom, w)
            for frac in sc.estimates["beta_fractions"]:
                rep, _, _ = V.ns2_pipeline(model, f, dom, q, frac * total, config)
                rep.extra["beta_fraction"] = frac
                reps.append(rep)
        else:
            ns = solver.solve_navier_stokes(model, f, dom, config)
            reps.append(V.verify_ns_estimate(ns, f, p, q, dom, model=model, k="inf", **fam))
    return reps


def _verify_checks(sc, by_n):
    """Stability checks over the h ladder and the f_k ladder."""
    from . import verify as V

    factor = sc.estimates["factor"]
    checks = []
    for est in ("mt1", "mt2"):
        vals = [next(r.ratio for r in reps if r.estimate == est and r.params.get("k") == "inf") for reps in by_n.values()]
        checks.append({"check": f"{est}_h_ladder", "values": vals, "pass": V.stable_within(vals, factor)})
        for n, reps in by_n.items():
            ref = next(r.ratio for r in reps if r.estimate == est and r.params.get("k") == "inf")
            lad = [r.ratio for r in reps if r.estimate == est and r.params.get("k") != "inf"]
            checks.append({"check": f"{est}_k_ladder_n{n}", "values": lad, "reference": ref, "pass": V.bounded_by_reference(lad, ref, factor)})
    lc = [r.extra["discrepancy"] for reps in by_n.values() for r in reps if r.estimate == "layer-cake"]
    if lc:
        checks.append({"check": "layer_cake", "values": lc, "pass": bool(max(lc) <= 1e-6)})
    for est in ("ns-p", "ns-2"):
        vals = [r.ratio for reps in by_n.values() for r in reps if r.estimate == est]
        if vals:
            if est == "ns-2":
                fr = sc.estimates["beta_fractions"]
                tails_ok = all(r.extra["tail"] > 0 for reps in by_n.values() for r in reps if r.estimate == est)
                # one series per beta fraction along the h ladder
                ok = tails_ok and all(V.stable_within(vals[i :: len(fr)], factor) for i in range(len(fr)))
            else:
                ok = V.stable_within(vals, factor)
            checks.append({"check": f"{est}_h_ladder", "values": vals, "pass": ok})
    return checks


def run_verify(sc, out, threads):
    from . import verify as V

    ns = sc.grid_sizes()
    results = _pool_map(lambda n: _verify_job(sc, n), ns, threads)
    by_n = dict(zip(ns, results))
    reports = [r for reps in results for r in reps]
    buf = io.StringIO()
    V.write_reports_csv(reports, buf, {"scenario_hash": sc.hash})
    (out / "verify.csv").write_text(buf.getvalue())
    checks = _verify_checks(sc, by_n)
    ok = all(c["pass"] for c in checks)
    write_json(out / "verify.json", {"scenario_hash": sc.hash, "checks": checks, "all_pass": ok})
    series = {}
    for est in ("mt1", "mt2"):
        for n, reps in by_n.items():
            series[f"{est} n={n}"] = [(r.params["k"], r.ratio) for r in reps if r.estimate == est and r.params.get("k") != "inf"]
    write_plot(out, "verify_ratios", "estimate ratios along the forcing ladder", series, "clamp level k")
    return ok


def run_scan(sc, out, threads):
    from . import verify as V

    dom = sc.build_domain()
    fam = {"center": sc.forcing["center"], "a": sc.forcing["a"], "strength": sc.forcing["strength"]}
    res = V.scan_epsilon0(sc.build_model(), dom, fam, sc.ladders["q"], tuple(sc.ladders["k"]), sc.build_config(), sc.estimates["factor"])
    keys = list(res["rows"][0])
    write_csv(out / "scan.csv", keys, [[r[k] for k in keys] for r in res["rows"]], sc.hash)
    write_json(out / "scan.json", {"scenario_hash": sc.hash, **res})
    series = {"mt1_max/ref": [(r["q"], r["mt1_max"] / r["mt1_ref"]) for r in res["rows"]]}
    series["mt2_max/ref"] = [(r["q"], r["mt2_max"] / r["mt2_ref"]) for r in res["rows"]]
    write_plot(out, "scan_ratios", "ladder growth against q", series, "q", logx=False)
    # the scan reports eps_0; a row without stability is a finding, not a failure
    return True


COMMANDS = {"whitney": run_whitney, "truncate": run_truncate, "solve": run_solve, "verify": run_verify, "scan": run_scan}


def build_parser():
    ap = argparse.ArgumentParser(prog="solentrunc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--scenario", required=True, help="JSON/TOML scenario file or bundled scenario name")
        sp.add_argument("--out", help=f"output directory (default: scenario output, else ${OUT_ENV}/<name>)")
        sp.add_argument("--threads", type=int, default=1, help="worker pool size for ladder points")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--ladder-override", action="append", metavar="K=V1,V2", help="replace a ladder (h, k, lambda, q)")
        if name == "solve":
            sp.add_argument("--vtk", action="store_true", help="also write a legacy VTK file")
    sub.add_parser("list", help="list bundled scenarios")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print("\n".join(bundled_scenarios()))
        return 0
    if args.threads < 1:
        print("solentrunc: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        sc = apply_overrides(read_scenario(args.scenario), args.ladder_override, args.seed)
    except ScenarioError as err:
        print(f"solentrunc: {err}", file=sys.stderr)
        return 2
    out = Path(args.out or sc.output or Path(os.environ.get(OUT_ENV, "out")) / sc.name)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.json").write_text(json.dumps(sc.to_dict(), indent=2, sort_keys=True) + "\n")
    kw = {"vtk": args.vtk} if args.command == "solve" else {}
    try:
        ok = COMMANDS[args.command](sc, out, args.threads, **kw)
    except (ValueError, ArithmeticError, RuntimeError) as err:
        print(f"solentrunc {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 3
    print(f"{args.command}: {'pass' if ok else 'FAIL'} ({out})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
