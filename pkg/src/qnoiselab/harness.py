"""Declarative experiment runner: TOML configs in, keyed per-cell reports out."""
from __future__ import annotations

import csv
import itertools
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import tomli

from . import __version__
from . import channels as ch
from . import circuits as cl
from . import leaks as lk
from . import states as st
from . import sync as sy

CONFIG_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1
DEFAULT_CAP_N = 12


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


@dataclass
class Suite:
    name: str
    summary: str
    quantities: tuple
    defaults: dict
    n_params: tuple
    hard_caps: dict
    run: Callable
    choices: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# named states and channels used by the suites

def make_state(name: str, n: int, rng) -> st.PureState:
    if name == "bell":
        return st.bell_state()
    if name == "ghz":
        return st.ghz_state(n)
    if name == "w":
        v = np.zeros(2**n)
        v[[2**k for k in range(n)]] = 1
        return st.PureState.from_vector(v, normalize=True)
    if name == "product":
        return st.random_product_state(n, rng)
    if name == "random-pure":
        return st.random_pure_state(n, rng)
    raise ConfigError("grid.state", f"unknown state {name!r}")


def make_noise(name: str, n: int, t: float, rng) -> ch.QuantumChannel:
    reg = st.QubitRegister.of(n)
    if name == "identity":
        return ch.identity_channel(reg)
    if name == "iid":
        return ch.iid_depolarizing(reg, t)
    if name == "sync":
        return ch.simple_error_channel(ch.ErrorMaskDistribution.all_or_nothing(n, t), reg)
    if name == "sync-background":
        table = (1 - t) * ch.ErrorMaskDistribution.product([t / 4] * n).table
        table = table + t * ch.ErrorMaskDistribution.all_or_nothing(n, 1.0).table
        return ch.simple_error_channel(ch.ErrorMaskDistribution(table), reg)
    if name == "random-product":
        factors = []
        for lab in reg.labels:
            d = rng.dirichlet(np.ones(2))
            u = st.haar_unitary(2, rng)
            ops = [np.sqrt(d[0]) * np.eye(2), np.sqrt(d[1]) * u]
            factors.append(((lab,), ch.QuantumChannel(1, ops)))
        return ch.ProductChannel(reg, factors, {"constructor": "random_product"})
    if name == "haar":
        return ch.unitary_channel(st.haar_unitary(2**n, rng), reg)
    raise ConfigError("grid.noise", f"unknown noise {name!r}")


# ---------------------------------------------------------------------------
# suite bodies; each takes (params, seed) and returns (values, verdict)

def _run_conjA(p, seed):
    rng = np.random.default_rng(seed)
    state_name = p["state"]
    n = 2 if state_name == "bell" else int(p["n"])
    rho = make_state(state_name, n, rng)
    channel = make_noise(p["noise"], n, float(p["t"]), rng)
    a, b = 0, 1
    taus = [st.PureState.basis([0] * n)] + [st.random_product_state(n, rng) for _ in range(int(p["taus"]))]
    cells = []
    ee = None
    for i, tau in enumerate(taus):
        cell = lk.conjectureA_evaluate(channel, rho, tau, a, b, ee_seed=seed) if i == 0 else None
        if i == 0:
            ee = cell.EE
            cells.append(cell)
            continue
        out = ch.apply(channel, tau)
        la, lb, lab = lk._leaks_from_output(out, a, b)
        el = la + lb - lab
        ent = cells[0].ENT
        verdict = lk.classify_cell(la, lb, el, ent)
        plain = el / ent if ent >= lk.VACUITY_THRESHOLD else None
        scaled = plain / min(la, lb) ** 2 if plain is not None and min(la, lb) >= lk.LEAK_THRESHOLD else None
        cells.append(lk.ConjectureACell(la, lb, el, ent, ee, plain, scaled, verdict, cells[0].thresholds))
    els = [c.EL for c in cells]
    scaled = [c.ratio_scaled for c in cells if c.ratio_scaled is not None]
    verdicts = [c.verdict for c in cells]
    if "violates positivity of K" in verdicts:
        verdict = "violates positivity of K"
    elif all(v == "vacuous" for v in verdicts):
        verdict = "vacuous"
    else:
        verdict = "consistent"
    values = {
        "L_a": cells[0].L_a,
        "L_b": cells[0].L_b,
        "EL": cells[0].EL,
        "ENT": cells[0].ENT,
        "EE": ee,
        "ratio_plain": cells[0].ratio_plain,
        "ratio_scaled": cells[0].ratio_scaled,
        "EL_min": min(els),
        "EL_max": max(els),
        "ratio_scaled_min": min(scaled) if scaled else None,
        "per_tau_EL": els,
        "thresholds": cells[0].thresholds,
    }
    return values, verdict


def _run_sync(p, seed):
    rng = np.random.default_rng(seed)
    n, t = int(p["n"]), float(p["t"])
    channel = make_noise(p["noise"], n, t, rng)
    spectrum = ch.pauli_weight_spectrum(channel)
    params = sy.SyncParams(
        float(p["epsilon"]), float(p["factor"]), float(p["delta"]), float(p["substantial"]), int(p["min_weight"])
    )
    verdict = sy.classify(spectrum, params)
    values = {
        "rate": spectrum.rate,
        "mean_weight": spectrum.mean_weight,
        "spectrum": spectrum.f.tolist(),
        "tails": verdict.evidence["tails"],
        "thresholds": verdict.evidence["thresholds"],
        "params": verdict.params,
    }
    dist = getattr(channel, "mask_distribution", None)
    if dist is not None:
        mask_verdict = sy.classify(ch.mask_weight_spectrum(dist), params)
        values["mask_spectrum"] = ch.mask_weight_spectrum(dist).f.tolist()
        values["mask_grade"] = mask_verdict.grade
    return values, verdict.grade


def _run_censorship(p, seed):
    rng = np.random.default_rng(seed)
    n = 2 if p["state"] == "bell" else int(p["n"])
    rho = make_state(p["state"], n, rng)
    comp = lk.max_entropy_completion(rho)
    values = {
        "ENT": comp.value, "S_star": comp.entropy, "residual": comp.residual, "iterations": comp.iterations,
        "thresholds": {"completion_residual": lk.COMPLETION_TOL},
    }
    if n <= 4:
        values["tilde_ENT"] = lk.tilde_ent(rho)
    return values, "recorded"


def _run_commutator(p, seed):
    rng = np.random.default_rng(seed)
    n = 2 if p["state"] == "bell" else int(p["n"])
    rho = make_state(p["state"], n, rng).density()
    t = float(p["t"])
    family = {name: make_noise(name, n, t, rng) for name in p["family"]}
    rep = cl.stabilizer_commutation_sweep(rho, family, seed=seed, samples=int(p["samples"]), alpha=float(p["alpha"]))
    values = {"bound": rep["bound"], "alpha": rep["alpha"], "thresholds": {"bound": rep["bound"]}}
    for name, r in rep["channels"].items():
        values[f"{name}.max"] = r["max"]
        values[f"{name}.mean"] = r["mean"]
        values[f"{name}.within_bound"] = r["within_bound"]
    verdict = "within bound" if all(r["within_bound"] for r in rep["channels"].values()) else "exceeds bound"
    return values, verdict


def _rate_noise(p):
    t = float(p["t"])
    kind = p["noise"]
    if kind == "iid":
        return cl.NoiseModel.iid(t)
    if kind == "sync":
        return cl.NoiseModel.profile(ch.CollapseProfile.all_or_nothing(t))
    if kind == "identity":
        return cl.NoiseModel("none")
    raise ConfigError("grid.noise", f"rate suite supports iid, sync, identity; got {kind!r}")


def _run_rate(p, seed):
    rep = cl.rate_scaling_experiment(
        list(p["n_values"]), _rate_noise(p), int(p["depth"]), seed,
        float(p["entangling_fraction"]), bool(p["gates"]),
    )
    values = {
        "n_values": [r["n"] for r in rep["rows"]],
        "mean_increment": [r["mean_increment"] for r in rep["rows"]],
        "first_increment": [r["first_increment"] for r in rep["rows"]],
        "fit": rep["fit"],
        "thresholds": {"increasing": "strict increase of mean increment with n"},
    }
    incs = values["mean_increment"]
    verdict = "increasing" if all(b > a for a, b in zip(incs, incs[1:])) else "not increasing"
    return values, verdict


def _run_lemma1(p, seed):
    n, t = int(p["n"]), float(p["t"])
    s = float(p["s"]) if "s" in p and p["s"] is not None else float(p["s_factor"]) * t
    in_regime = t < 1 / 20 and s > 4 * t
    res = sy.lemma1_lp_oracle(n, t, s, enforce_regime=False)
    values = res.to_dict()
    values["in_regime"] = in_regime
    values["thresholds"] = {"bound": res.bound, "slack": 1e-9}
    try:
        ext = sy.extremal_distribution(n, t, s).summary()
        values["extremal"] = ext
    except ValueError as exc:
        values["extremal"] = {"error": str(exc)}
    if res.optimum is None:
        verdict = "infeasible"
    elif res.holds:
        verdict = "bound holds"
    else:
        verdict = "bound fails" if in_regime else "below bound (outside regime)"
    return values, verdict


def _run_logdepth(p, seed):
    rep = cl.logdepth_repetition_experiment(int(p["depth"]), float(p["t"]), int(p["repetitions"]), int(p["trials"]), seed)
    rep = dict(rep, thresholds={"z_max": 3.0})
    return rep, "agrees" if rep["within_3sd"] else "disagrees"


SUITES: dict[str, Suite] = {
    "conjA": Suite(
        "conjA",
        "pairwise leak correlation against entanglement for sampled product reference states",
        ("L(a), L(b): leaks of single qubits", "EL(a,b) = L(a) + L(b) - L({a,b})",
         "ENT(rho; a,b)", "EE(rho; a,b) emergent entanglement lower bound",
         "EL/ENT and EL/(ENT min(L)^2) ratios", "worst case over sampled tau"),
        {"state": "bell", "n": 2, "noise": "iid", "t": 0.1, "taus": 32},
        ("n",), {"n": 4},
        _run_conjA,
        {"state": ("bell", "ghz", "w", "product", "random-pure"),
         "noise": ("identity", "iid", "sync", "sync-background", "random-product")},
    ),
    "sync": Suite(
        "sync",
        "Pauli weight spectra and synchronization grades",
        ("f(w) Pauli weight spectrum", "error rate a", "tail masses f(>= w)", "grade"),
        {"n": 8, "noise": "iid", "t": 0.1, "epsilon": 0.1, "factor": 10.0, "delta": 0.1, "substantial": 0.01, "min_weight": 2},
        ("n",), {"n": 10},
        _run_sync,
        {"noise": ("identity", "iid", "sync", "sync-background", "haar", "random-product")},
    ),
    "censorship": Suite(
        "censorship",
        "max-entropy completion gap ENT(rho; A) and its subset sum",
        ("ENT(rho; A) = S(rho*) - S(rho)", "tilde-ENT sum over subsets"),
        {"state": "ghz", "n": 3},
        ("n",), {"n": 5},
        _run_censorship,
        {"state": ("bell", "ghz", "w", "product", "random-pure")},
    ),
    "commutator": Suite(
        "commutator",
        "commutator of noise superoperators with unitaries stabilizing the ideal state",
        ("||E U - U E||_HS per stabilizing unitary", "max against (1 - alpha) sqrt(2)"),
        {"state": "ghz", "n": 2, "t": 0.1, "family": ["iid", "sync"], "samples": 20, "alpha": 0.1},
        ("n",), {"n": 4},
        _run_commutator,
        {"state": ("bell", "ghz", "w", "product", "random-pure")},
    ),
    "rate": Suite(
        "rate",
        "per-layer noise displacement in trace distance versus register size",
        ("increment d(N(sigma), sigma) per layer", "linear fit slope, intercept, R^2"),
        {"noise": "iid", "t": 0.05, "depth": 4, "n_values": [1, 2, 3, 4], "entangling_fraction": 0.5, "gates": True},
        ("n_values",), {"n_values": 10},
        _run_rate,
        {"noise": ("identity", "iid", "sync")},
    ),
    "lemma1": Suite(
        "lemma1",
        "LP minimum of the high-weight tail under rate and pairwise-correlation constraints",
        ("LP optimum of Prob(sum x > sn/2)", "bound st/4", "extremal mixtures: rates, correlations, tails"),
        {"n": 10, "t": 0.04, "s": 0.2},
        ("n",), {"n": 200},
        _run_lemma1,
    ),
    "logdepth": Suite(
        "logdepth",
        "repeated runs under all-or-nothing collapse",
        ("frequency of >= 1 clean run", "analytic 1 - (1 - (1-t)^d)^R", "binomial z-score"),
        {"depth": 10, "t": 0.1, "repetitions": 50, "trials": 10_000},
        (), {},
        _run_logdepth,
    ),
}


# ---------------------------------------------------------------------------
# configs

@dataclass
class ExperimentConfig:
    suite: str
    grid: dict
    params: dict
    seeds: list
    cap_n: int = DEFAULT_CAP_N
    output: str | None = None
    schema_version: int = CONFIG_SCHEMA_VERSION

    def cells(self) -> list[dict]:
        suite = SUITES[self.suite]
        keys = sorted(self.grid)
        out = []
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            params = dict(suite.defaults)
            params.update(self.params)
            params.update(dict(zip(keys, combo)))
            for seed in self.seeds:
                out.append({"params": params, "seed": seed, "id": cell_id(self.suite, params, seed)})
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "suite": self.suite,
            "grid": self.grid,
            "params": self.params,
            "seeds": self.seeds,
            "caps": {"n": self.cap_n},
            "output": self.output,
        }


def cell_id(suite: str, params: Mapping, seed) -> str:
    return f"{suite}|" + json.dumps(params, sort_keys=True, separators=(",", ":")) + f"|seed={seed}"


def parse_config(doc: Mapping, *, cap_n: int | None = None, seed: int | None = None) -> ExperimentConfig:
    """Validate a config mapping; raises ConfigError naming the offending field."""
    version = doc.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}")
    suite = doc.get("suite")
    if suite not in SUITES:
        raise ConfigError("suite", f"unknown suite {suite!r}; available: {', '.join(SUITES)}")
    suite_def = SUITES[suite]
    grid = doc.get("grid", {})
    if not isinstance(grid, Mapping) or not grid:
        raise ConfigError("grid", "parameter grid is empty")
    grid = dict(grid)
    for k, v in grid.items():
        if not isinstance(v, list) or not v:
            raise ConfigError(f"grid.{k}", "grid entries must be nonempty lists")
    params = dict(doc.get("params", {}))
    known = set(suite_def.defaults) | ({"s_factor"} if suite == "lemma1" else set())
    for k in list(grid) + list(params):
        if k not in known:
            raise ConfigError(f"grid.{k}" if k in grid else f"params.{k}", f"unknown parameter for suite {suite}")
    seeds = [seed] if seed is not None else doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds", "seed list must be a nonempty list of integers")
    caps = doc.get("caps", {})
    cap = int(cap_n if cap_n is not None else caps.get("n", DEFAULT_CAP_N))
    for name, choices in suite_def.choices.items():
        vals = grid.get(name, [params.get(name, suite_def.defaults.get(name))])
        for v in vals:
            items = v if isinstance(v, list) else [v]
            for item in items:
                if item not in choices:
                    where = f"grid.{name}" if name in grid else f"params.{name}"
                    raise ConfigError(where, f"{item!r} is not one of {list(choices)}")
    for name in suite_def.n_params:
        vals = grid.get(name, [params.get(name, suite_def.defaults.get(name))])
        where = f"grid.{name}" if name in grid else f"params.{name}"
        for v in vals:
            ns = v if isinstance(v, list) else [v]
            for nv in ns:
                if not isinstance(nv, int) or nv < 1:
                    raise ConfigError(where, f"qubit count {nv!r} must be a positive integer")
                if name != "n" or suite != "lemma1":
                    if nv > cap:
                        raise ConfigError(where, f"n={nv} exceeds cap-n={cap}")
                if nv > suite_def.hard_caps.get(name, math.inf):
                    raise ConfigError(where, f"n={nv} exceeds the suite limit {suite_def.hard_caps[name]}")
    return ExperimentConfig(suite, grid, params, list(seeds), cap, doc.get("output"), version)


def load_config(path, **kw) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
    else:
        try:
            doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError("config", f"not valid TOML: {exc}") from None
    return parse_config(doc, **kw)


# ---------------------------------------------------------------------------
# execution

def tolerances() -> dict:
    return {
        "hermitian": st.HERMITIAN_TOL,
        "trace": st.TRACE_TOL,
        "psd": st.PSD_TOL,
        "trace_preserving": ch.TP_TOL,
        "mask_sum": ch.MASK_TOL,
        "vacuity": lk.VACUITY_THRESHOLD,
        "leak": lk.LEAK_THRESHOLD,
        "completion": lk.COMPLETION_TOL,
        "completion_max_iter": lk.COMPLETION_MAX_ITER,
        "ee_components": lk.EE_COMPONENT_CAP,
        "ee_restarts": lk.EE_RESTARTS,
        "ee_budget": lk.EE_BUDGET,
        "sync_defaults": sy.SyncParams().__dict__,
        "state_cap": st.DEFAULT_STATE_CAP,
        "superoperator_cap": ch.SUPEROP_CAP,
    }


def _to_jsonable(x):
    if isinstance(x, Mapping):
        return {str(k): _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _to_jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def run_cell(suite_name: str, cell: dict) -> dict:
    suite = SUITES[suite_name]
    start = time.perf_counter()
    try:
        values, verdict = suite.run(cell["params"], cell["seed"])
        status, error = "ok", None
    except Exception as exc:  # cell isolation: one failure must not kill the sweep
        values, verdict = {}, None
        status, error = "error", "".join(traceback.format_exception_only(type(exc), exc)).strip()
    return _to_jsonable({
        "id": cell["id"],
        "params": cell["params"],
        "seed": cell["seed"],
        "status": status,
        "error": error,
        "verdict": verdict,
        "values": values,
        "runtime_s": time.perf_counter() - start,
    })


def run(config: ExperimentConfig, jobs: int = 1) -> dict:
    cells = config.cells()
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run_cell, [config.suite] * len(cells), cells))
    else:
        records = [run_cell(config.suite, c) for c in cells]
    records.sort(key=lambda r: r["id"])
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool": "qnoiselab",
        "version": __version__,
        "config": _to_jsonable(config.to_dict()),
        "tolerances": _to_jsonable(tolerances()),
        "cells": records,
        "failures": sum(1 for r in records if r["status"] != "ok"),
    }


def rerun(report: Mapping, jobs: int = 1) -> dict:
    """Re-execute a report from its embedded config echo."""
    cfg = dict(report["config"])
    cfg.pop("output", None)
    return run(parse_config(cfg), jobs)


# ---------------------------------------------------------------------------
# output

LEAD_COLUMNS = ("id", "suite", "seed", "status", "verdict")


def _flatten(prefix: str, x, out: dict):
    if isinstance(x, Mapping):
        for k in sorted(x):
            _flatten(f"{prefix}.{k}" if prefix else str(k), x[k], out)
    elif isinstance(x, list):
        return
    else:
        out[prefix] = x


def csv_rows(report: Mapping) -> tuple[list[str], list[dict]]:
    rows = []
    suite = report["config"]["suite"]
    for rec in report["cells"]:
        row = {"id": rec["id"], "suite": suite, "seed": rec["seed"], "status": rec["status"], "verdict": rec["verdict"]}
        _flatten("param", rec["params"], row)
        _flatten("value", rec["values"], row)
        rows.append(row)
    extra = sorted({k for r in rows for k in r} - set(LEAD_COLUMNS))
    return list(LEAD_COLUMNS) + extra, rows


def _plot_series(report: Mapping) -> dict[str, list[tuple]]:
    suite = report["config"]["suite"]
    series: dict[str, list[tuple]] = {}
    for i, rec in enumerate(report["cells"]):
        v = rec["values"]
        if rec["status"] != "ok":
            continue
        tag = f"{suite}_cell{i:03d}"
        if suite == "sync":
            series[f"{tag}_spectrum"] = list(enumerate(v["spectrum"]))
        elif suite == "rate":
            series[f"{tag}_rate"] = list(zip(v["n_values"], v["mean_increment"]))
        elif suite == "conjA":
            series[f"{tag}_EL"] = list(enumerate(v["per_tau_EL"]))
    if suite == "lemma1":
        series["lemma1_optimum"] = [
            (r["values"]["n"], r["values"]["optimum"], r["values"]["bound"])
            for r in report["cells"] if r["status"] == "ok" and r["values"]["optimum"] is not None
        ]
    elif suite == "logdepth":
        series["logdepth"] = [
            (r["values"]["depth"], r["values"]["frequency"], r["values"]["analytic"])
            for r in report["cells"] if r["status"] == "ok"
        ]
    elif suite == "censorship":
        series["censorship"] = [
            (r["params"].get("n", 2), r["values"]["ENT"]) for r in report["cells"] if r["status"] == "ok"
        ]
    elif suite == "commutator":
        series["commutator"] = [
            (i, max(val for key, val in r["values"].items() if key.endswith(".max")))
            for i, r in enumerate(report["cells"]) if r["status"] == "ok"
        ]
    return series


def emit(report: Mapping, fmt: str, out_dir) -> list[Path]:
    """Write ``report`` as json, csv or plotdata files under ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    if fmt == "json":
        path = out / "report.json"
        path.write_text(json.dumps(report, indent=2, sort_keys=True))
        return [path]
    if fmt == "csv":
        cols, rows = csv_rows(report)
        path = out / "cells.csv"
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in rows:
                w.writerow(r)
        return [path]
    if fmt == "plotdata":
        paths = []
        for name, rows in _plot_series(report).items():
            path = out / f"{name}.dat"
            path.write_text("".join(" ".join(repr(float(x)) for x in row) + "\n" for row in rows))
            paths.append(path)
        return paths
    raise ValueError(f"unknown output format {fmt!r}")


def describe(suite_name: str) -> str:
    suite = SUITES[suite_name]
    lines = [f"suite: {suite.name}", f"  {suite.summary}", "  quantities:"]
    lines += [f"    - {q}" for q in suite.quantities]
    lines.append("  parameters (defaults):")
    for k, v in suite.defaults.items():
        choice = f"  one of {list(suite.choices[k])}" if k in suite.choices else ""
        lines.append(f"    {k} = {v!r}{choice}")
    if suite.hard_caps:
        lines.append("  limits: " + ", ".join(f"{k} <= {v}" for k, v in suite.hard_caps.items()))
    return "\n".join(lines)
