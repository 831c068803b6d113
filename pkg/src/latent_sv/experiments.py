"""Built-in experiment specs, the binomial oracle and report emission."""
from __future__ import annotations

import csv
import io
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from latent_sv.lsm import (
    DEFAULT_PATHS, ExerciseRule, PriceEstimate, attach_features, lsm_price, revalue_with_rule,
)
from latent_sv.filter import DEFAULT_PARTICLES_PRICING
from latent_sv.model import OptionContract, SVParams, simulate_paths
from latent_sv.rng import derive_seed

ALL_METHODS = ("A", "B", "C", "D", "C_grid")

# (rho, alpha, sigma_bar, gamma, lambda), (K, T, r, S0, sigma0); beta = log(sigma_bar)
TABLE = {
    1: ((-0.055, 3.30, 0.55, 0.50, -0.10), (23, 10, 0.055, 20, 0.50)),
    2: ((-0.035, 0.25, 0.20, 2.10, -1.0), (17, 20, 0.0255, 15, 0.35)),
    3: ((-0.09, 0.95, 0.25, 3.95, -0.025), (16, 14, 0.0325, 15, 0.30)),
    4: ((-0.01, 0.020, 0.25, 2.95, -0.0215), (27, 50, 0.03, 25, 0.50)),
    5: ((-0.03, 0.015, 0.35, 3.00, -0.02), (100, 50, 0.0225, 90, 0.35)),
    6: ((-0.017, 0.0195, 0.70, 2.50, -0.0155), (95, 55, 0.0325, 85, 0.75)),
    7: ((-0.075, 0.015, 0.75, 6.25, 0.0), (16, 17, 0.0325, 15, 0.35)),
    8: ((-0.025, 0.035, 0.15, 5.075, -0.015), (18, 15, 0.055, 20, 0.20)),
    9: ((-0.05, 0.025, 0.25, 4.50, -0.015), (19, 25, 0.025, 17, 0.35)),
}


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    params: SVParams
    contract: OptionContract
    methods: tuple = ("A", "B", "C", "D")
    M: int = DEFAULT_PATHS
    m: int = DEFAULT_PARTICLES_PRICING
    scheme: str = "exact"
    seed: Optional[int] = 0
    scaling: str = "standardize"

    def __post_init__(self):
        bad = set(self.methods) - set(ALL_METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.scheme not in ("exact", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def with_(self, **changes) -> "ExperimentSpec":
        return replace(self, **changes)


def builtin_spec(number: int, **overrides) -> ExperimentSpec:
    (rho, alpha, sbar, gamma, lam), (K, T, r, S0, sig0) = TABLE[int(number)]
    params = SVParams(rho=rho, alpha=alpha, beta=math.log(sbar), gamma=gamma, lam=lam, r=r)
    contract = OptionContract(strike=K, steps=T, s0=S0, sigma0=sig0)
    return ExperimentSpec(id=str(number), params=params, contract=contract).with_(**overrides)


BUILTIN = {str(k): builtin_spec(k) for k in TABLE}


@dataclass
class ReportRow:
    experiment: str
    method: str
    scheme: str
    kind: str              # "in_sample" or "revalued"
    seed: Optional[int]
    price: float
    std_error: float
    n_paths: int
    n_rejected: int
    runtime: float = 0.0


REPORT_COLUMNS = ("experiment", "method", "scheme", "kind", "seed", "price", "std_error", "n_paths", "n_rejected")


def _row(spec: ExperimentSpec, est: PriceEstimate, kind: str, method: str, seed) -> ReportRow:
    return ReportRow(spec.id, method, spec.scheme, kind, seed, est.price, est.std_error,
                     est.n_paths, est.n_rejected, est.runtime)


@dataclass
class SeedRun:
    """In-sample results and frozen rules of one seed, plus the raw paths."""

    rows: list
    rules: dict
    panels: dict


def run_seed(spec: ExperimentSpec, seed: Optional[int], keep_panels: bool = False) -> SeedRun:
    """Price every LSM method on one shared set of simulated share paths."""
    rows, rules, panels = [], {}, {}
    lsm_methods = [m for m in spec.methods if m != "C_grid"]
    if lsm_methods:
        t0 = time.perf_counter()
        paths = simulate_paths(spec.params, spec.contract, spec.M, scheme=spec.scheme, seed=seed)
        sim_time = time.perf_counter() - t0
        for method in lsm_methods:
            t0 = time.perf_counter()
            panel = attach_features(paths, method, spec.params, spec.contract, spec.m, seed)
            est, rule = lsm_price(panel, spec.contract, spec.params, scaling=spec.scaling)
            est.runtime = sim_time + time.perf_counter() - t0
            rows.append(_row(spec, est, "in_sample", method, seed))
            rules[method] = rule
            if keep_panels:
                panels[method] = panel
    if "C_grid" in spec.methods:
        from latent_sv.grid import grid_dp

        res = grid_dp(spec.params, spec.contract, seed=seed)
        rows.append(ReportRow(spec.id, "C_grid", spec.scheme, "in_sample", seed, res.price,
                              float("nan"), 0, 0, res.runtime))
    return SeedRun(rows, rules, panels)


def run_experiment(spec: ExperimentSpec, revalue: bool = False) -> list:
    """One row per method; with ``revalue`` a second row per LSM method
    prices that method's frozen rule on an independent panel."""
    first = run_seed(spec, spec.seed)
    rows = list(first.rows)
    if revalue and first.rules:
        fresh_seed = derive_seed(spec.seed, 1)
        fresh = simulate_paths(spec.params, spec.contract, spec.M, scheme=spec.scheme, seed=fresh_seed)
        for method, rule in first.rules.items():
            t0 = time.perf_counter()
            panel = attach_features(fresh, method, spec.params, spec.contract, spec.m, fresh_seed)
            est = revalue_with_rule(rule, panel, spec.contract, spec.params)
            est.runtime = time.perf_counter() - t0
            rows.append(_row(spec, est, "revalued", method, fresh_seed))
    return rows


def run_seeds(spec: ExperimentSpec, seeds: Sequence[int], revalue: bool = True) -> list:
    """Several seeds; the rule fitted on seed i is revalued on seed i+1's
    panel (cyclically), which is independent of the paths it was fitted on."""
    runs = [run_seed(spec, s, keep_panels=revalue) for s in seeds]
    rows = [r for run in runs for r in run.rows]
    if revalue and len(seeds) > 1:
        for i, run in enumerate(runs):
            nxt = runs[(i + 1) % len(runs)]
            for method, rule in run.rules.items():
                est = revalue_with_rule(rule, nxt.panels[method], spec.contract, spec.params)
                rows.append(_row(spec, est, "revalued", method, seeds[(i + 1) % len(seeds)]))
    return rows


def seed_average(rows: Iterable[ReportRow]) -> dict:
    """(method, kind) -> (mean price, standard error of the mean, n seeds).

    The standard error combines the per-seed standard errors, which are the
    natural scale for independent seeds of equal size.
    """
    acc: dict = {}
    for r in rows:
        acc.setdefault((r.method, r.kind), []).append((r.price, r.std_error))
    out = {}
    for key, vals in acc.items():
        p = np.array([v[0] for v in vals])
        se = np.array([v[1] for v in vals])
        out[key] = (float(p.mean()), float(np.sqrt(np.sum(se ** 2)) / len(vals)), len(vals))
    return out


# ------------------------------------------------------------------- oracle

def binomial_oracle(
    contract: OptionContract,
    r: float,
    sigma: float,
    n_tree_steps: int = 2000,
    delta: float = 1.0 / 252.0,
    style: str = "american",
) -> float:
    """Cox-Ross-Rubinstein put price.

    ``style`` is ``american`` (exercise at every tree node), ``bermudan``
    (only at tree nodes falling on the contract's observation dates, plus
    time 0) or ``european``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if n_tree_steps < 1:
        raise ValueError("n_tree_steps must be >= 1")
    n = int(n_tree_steps)
    dt = contract.steps * delta / n
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    disc = math.exp(-r * dt)
    p = (math.exp(r * dt) - d) / (u - d)
    if not 0.0 < p < 1.0:
        raise ValueError("tree is not arbitrage-free; use more steps")
    if style == "american":
        allowed = np.ones(n + 1, dtype=bool)
    elif style == "bermudan":
        allowed = np.zeros(n + 1, dtype=bool)
        allowed[np.round(np.arange(contract.steps + 1) * n / contract.steps).astype(int)] = True
    elif style == "european":
        allowed = np.zeros(n + 1, dtype=bool)
    else:
        raise ValueError(f"unknown style {style!r}")
    j = np.arange(n + 1)
    s = contract.s0 * u ** (n - 2 * j)
    v = contract.payoff(s)
    for k in range(n - 1, -1, -1):
        v = disc * (p * v[:-1] + (1.0 - p) * v[1:])
        if allowed[k]:
            s = contract.s0 * u ** (k - 2 * np.arange(k + 1))
            v = np.maximum(v, contract.payoff(s))
    return float(v[0])


# ------------------------------------------------------------------ reports

def build_id() -> str:
    """Short git hash of the working tree, or ``unknown`` outside git."""
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def report_csv(rows: Sequence[ReportRow], seeds: Sequence = (), build: Optional[str] = None) -> str:
    """CSV text with a commented header; wall-times are left out so the
    payload is reproducible byte for byte."""
    buf = io.StringIO()
    buf.write(f"# seeds: {' '.join(str(s) for s in seeds)}\n")
    buf.write(f"# build: {build if build is not None else build_id()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def report_table(rows: Sequence[ReportRow]) -> str:
    head = f"{'exp':>4} {'method':>7} {'scheme':>6} {'kind':>9} {'price':>10} {'se':>9} {'M':>6} {'sec':>7}"
    lines = [head]
    for r in rows:
        lines.append(f"{r.experiment:>4} {r.method:>7} {r.scheme:>6} {r.kind:>9} {r.price:>10.4f} "
                     f"{r.std_error:>9.5f} {r.n_paths:>6d} {r.runtime:>7.1f}")
    return "\n".join(lines) + "\n"


def emit_report(rows: Sequence[ReportRow], path, fmt: str = "csv", seeds: Sequence = (),
                build: Optional[str] = None) -> Path:
    """Write ``rows`` as CSV (plus a ``.timing.csv`` sidecar) or as a table."""
    path = Path(path)
    if fmt == "csv":
        path.write_text(report_csv(rows, seeds, build))
        timing = path.with_suffix(".timing.csv")
        with timing.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["experiment", "method", "kind", "seed", "runtime_sec"])
            for r in rows:
                w.writerow([r.experiment, r.method, r.kind, _fmt(r.seed), f"{r.runtime:.3f}"])
    elif fmt == "table":
        path.write_text(report_table(rows))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def parse_report(text: str) -> list:
    """Inverse of ``report_csv`` (timings come back as 0)."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = []
    for d in csv.DictReader(lines):
        out.append(ReportRow(
            experiment=d["experiment"], method=d["method"], scheme=d["scheme"], kind=d["kind"],
            seed=int(d["seed"]) if d["seed"] else None, price=float(d["price"]),
            std_error=float(d["std_error"]), n_paths=int(d["n_paths"]), n_rejected=int(d["n_rejected"]),
        ))
    return out
