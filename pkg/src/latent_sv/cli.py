"""Command-line entry point.

Every subcommand writes CSV, to ``--out`` or stdout.  Failures exit nonzero
with a one-line JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from latent_sv.model import OptionContract, SVParams

EXIT_ERROR = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    pass


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    text = Path(path).read_text()
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError("config must be a key-value mapping")
    return data


def _floats(text: str, n: Optional[int] = None) -> list:
    vals = [float(v) for v in str(text).split(",") if v.strip()]
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _write_csv(header, rows, out: Optional[str], comments=()) -> None:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    if out:
        Path(out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _spec(args, config: dict):
    """Experiment spec from --experiment or from params/contract in the config."""
    from latent_sv.experiments import ExperimentSpec, builtin_spec

    if config.get("params") and config.get("contract"):
        p = dict(config["params"])
        if "sigma_bar" in p:
            p["beta"] = math.log(p.pop("sigma_bar"))
        spec = ExperimentSpec(id=str(config.get("id", "custom")), params=SVParams(**p),
                              contract=OptionContract(**config["contract"]))
    else:
        spec = builtin_spec(args.experiment)
    changes = {"seed": args.seed}
    for key in ("M", "m", "scheme", "scaling"):
        v = getattr(args, key, None)
        if v is not None:
            changes[key] = v
    return spec.with_(**changes)


# ---------------------------------------------------------------- commands

def cmd_simulate(args, config):
    from latent_sv.model import simulate_paths

    spec = _spec(args, config)
    panel = simulate_paths(spec.params, spec.contract, args.paths, scheme=spec.scheme, seed=args.seed)
    rows = ((i, t, panel.s[i, t], panel.y[i, t], int(panel.valid[i]))
            for i in range(panel.n_paths) for t in range(panel.s.shape[1]))
    _write_csv(["path", "t", "s", "y", "valid"], rows, args.out, [f"seed: {args.seed}"])


def cmd_filter(args, config):
    from latent_sv.filter import dump_particles, filter_run
    from latent_sv.model import simulate_paths

    spec = _spec(args, config)
    if args.shares:
        from latent_sv.data import ingest_shares

        returns = ingest_shares(args.shares).log_returns
    else:
        returns = simulate_paths(spec.params, spec.contract, 1, seed=args.seed).log_returns[0]
    history = filter_run(returns, spec.params, m=args.particles, init=args.init,
                         sigma0=spec.contract.sigma0, seed=args.seed)
    rows = ((st.t, q.mu, q.zeta, st.ess) for st, q in history)
    _write_csv(["t", "mu", "zeta", "ess"], rows, args.out, [f"seed: {args.seed}"])
    if args.dump_particles:
        dump_particles(history, args.dump_particles)


def cmd_price(args, config):
    from latent_sv.experiments import _row, run_seed
    from latent_sv.lsm import ExerciseRule, revalue_with_rule, simulate_augmented_paths

    spec = _spec(args, config).with_(methods=(args.method,))
    if args.rule_in:
        rule = ExerciseRule.load(args.rule_in)
        panel = simulate_augmented_paths(spec.params, spec.contract, rule.method, M=spec.M,
                                         m_particles=spec.m, scheme=spec.scheme, seed=args.seed)
        rows = [_row(spec, revalue_with_rule(rule, panel, spec.contract, spec.params), "revalued",
                     rule.method, args.seed)]
    else:
        run = run_seed(spec, args.seed)
        rows = run.rows
        if args.rule_out and args.method in run.rules:
            run.rules[args.method].save(args.rule_out)
    _emit(rows, args)


def _emit(rows, args):
    from latent_sv.experiments import emit_report, report_csv

    if args.out:
        emit_report(rows, args.out, fmt=args.format, seeds=[args.seed])
    else:
        sys.stdout.write(report_csv(rows, [args.seed]))


def cmd_experiment(args, config):
    from latent_sv.experiments import BUILTIN, run_experiment, run_seeds

    ids = list(BUILTIN) if args.experiments == "all" else [e.strip() for e in args.experiments.split(",")]
    methods = tuple(m for m in args.methods.split(",") if m) if args.methods else ()
    seeds = [args.seed + k for k in range(args.n_seeds)]
    rows = []
    for e in ids:
        args.experiment = int(e)
        spec = _spec(args, config).with_(methods=methods)
        if not methods:
            continue
        if args.n_seeds > 1:
            rows += run_seeds(spec, seeds, revalue=args.revalue)
        else:
            rows += run_experiment(spec, revalue=args.revalue)
    if args.out:
        from latent_sv.experiments import emit_report

        emit_report(rows, args.out, fmt=args.format, seeds=seeds)
    else:
        from latent_sv.experiments import report_csv

        sys.stdout.write(report_csv(rows, seeds))


def cmd_estimate(args, config):
    from latent_sv.data import ingest_shares
    from latent_sv.estimation import PARAM_NAMES, mcmc_run

    returns = ingest_shares(args.shares).log_returns
    trace = mcmc_run(returns, m=args.particles, B=args.draws, burn_in=args.burn_in,
                     init=_floats(args.init, 4), seed=args.seed, jacobian=args.jacobian)
    if args.trace_out:
        trace.to_csv(args.trace_out)
    ci = trace.credible_interval()
    point = trace.posterior_mean() if args.summary == "mean" else trace.posterior_median()
    rows = [(name, point[k], ci[k, 0], ci[k, 1]) for k, name in enumerate(PARAM_NAMES)]
    _write_csv(["parameter", args.summary, "ci_lo", "ci_hi"], rows, args.out,
               [f"seed: {args.seed}", f"acceptance_rate: {trace.acceptance_rate!r}", f"drift: {trace.drift!r}"])


def cmd_risk_premium(args, config):
    from latent_sv.data import load_market
    from latent_sv.estimation import PricingConfig, lambda_grid, lambda_posterior

    market = load_market(args.equity, args.shares, args.options, rate=args.rate)
    rho, alpha, beta, gamma = _floats(args.theta, 4)
    theta = SVParams(rho=rho, alpha=alpha, beta=beta, gamma=gamma, r=args.rate)
    lo, hi = _floats(args.grid, 2)
    grid = lambda_grid((lo + hi) / 2.0, (hi - lo) / 2.0, args.delta_g)
    post = lambda_posterior(theta, market.quotes(window=args.window), grid,
                            PricingConfig(M=args.paths, m=args.particles, seed=args.seed))
    if args.grid_out:
        post.to_csv(args.grid_out)
    rows = [(post.lambda_star, post.v_star, post.ci95[0], post.ci95[1], post.L, post.delta_g)]
    _write_csv(["lambda_star", "v_star", "ci_lo", "ci_hi", "L", "delta_g"], rows, args.out,
               [f"seed: {args.seed}"])


def cmd_oracle(args, config):
    from latent_sv.experiments import binomial_oracle

    c = OptionContract(strike=args.strike, steps=args.steps, s0=args.s0)
    price = binomial_oracle(c, args.rate, args.sigma, args.tree_steps, style=args.style)
    _write_csv(["strike", "steps", "s0", "rate", "sigma", "tree_steps", "style", "price"],
               [(args.strike, args.steps, args.s0, args.rate, args.sigma, args.tree_steps, args.style, price)],
               args.out)


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latent-sv", description="American puts under latent stochastic volatility")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--config", help="JSON or YAML file of option defaults")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, paths=True):
        sp.add_argument("--experiment", type=int, default=1, help="built-in experiment number")
        sp.add_argument("--scheme", choices=("exact", "euler"), default=None)
        sp.add_argument("--out")
        if paths:
            sp.add_argument("--M", type=int, default=None, help="LSM paths")
            sp.add_argument("--m", type=int, default=None, help="particles for method C")
            sp.add_argument("--scaling", choices=("standardize", "none"), default=None)
            sp.add_argument("--format", choices=("csv", "table"), default="csv")

    sp = sub.add_parser("simulate", help="simulate (S, Y) paths")
    common(sp, paths=False)
    sp.add_argument("--paths", type=int, default=10)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", help="run the particle filter on a return series")
    common(sp, paths=False)
    sp.add_argument("--shares", help="CSV of date,close; default: one simulated path")
    sp.add_argument("--particles", type=int, default=1000)
    sp.add_argument("--init", choices=("point", "stationary"), default="point")
    sp.add_argument("--dump-particles")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("price", help="price one method on one experiment")
    common(sp)
    sp.add_argument("--method", choices=("A", "B", "C", "D", "C_grid"), default="C")
    sp.add_argument("--rule-out", help="save the fitted exercise rule as JSON")
    sp.add_argument("--rule-in", help="revalue a saved rule on fresh paths")
    sp.set_defaults(func=cmd_price)

    sp = sub.add_parser("experiment", help="reproduce the built-in experiments")
    common(sp)
    sp.add_argument("--experiments", default="all", help="comma list or 'all'")
    sp.add_argument("--methods", default="A,B,C,D")
    sp.add_argument("--n-seeds", type=int, default=1)
    sp.add_argument("--revalue", action="store_true")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("estimate", help="MCMC for (rho, alpha, beta, gamma) from share prices")
    sp.add_argument("--shares", required=True)
    sp.add_argument("--particles", type=int, default=500)
    sp.add_argument("--draws", type=int, default=50_000)
    sp.add_argument("--burn-in", type=int, default=5_000)
    sp.add_argument("--init", default="0,1,0,1", help="rho,alpha,beta,gamma")
    sp.add_argument("--jacobian", action="store_true")
    sp.add_argument("--summary", choices=("mean", "median"), default="mean")
    sp.add_argument("--trace-out")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("risk-premium", help="posterior of lambda from option quotes")
    sp.add_argument("--equity", default="equity")
    sp.add_argument("--shares", required=True)
    sp.add_argument("--options", required=True)
    sp.add_argument("--rate", type=float, default=0.0)
    sp.add_argument("--theta", required=True, help="rho,alpha,beta,gamma")
    sp.add_argument("--grid", default="-1,1", help="lo,hi of the lambda grid")
    sp.add_argument("--delta-g", type=float, default=0.05)
    sp.add_argument("--window", type=int, default=10)
    sp.add_argument("--paths", type=int, default=15_000)
    sp.add_argument("--particles", type=int, default=1000)
    sp.add_argument("--grid-out")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_risk_premium)

    sp = sub.add_parser("oracle", help="CRR binomial put price")
    sp.add_argument("--strike", type=float, required=True)
    sp.add_argument("--steps", type=int, required=True, help="option life in trading days")
    sp.add_argument("--s0", type=float, required=True)
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--rate", type=float, default=0.0)
    sp.add_argument("--tree-steps", type=int, default=2000)
    sp.add_argument("--style", choices=("american", "bermudan", "european"), default="american")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_oracle)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv, config: dict):
    """Config keys become defaults; explicit flags still win."""
    flat = {k.replace("-", "_"): v for k, v in config.items() if k not in ("params", "contract", "id")}
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in flat.items() if k in known})
    known = {a.dest for a in parser._actions}
    parser.set_defaults(**{k: v for k, v in flat.items() if k in known})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        cfg_parser = argparse.ArgumentParser(add_help=False)
        cfg_parser.add_argument("--config")
        cfg_path = cfg_parser.parse_known_args(argv)[0].config
        config = _load_config(cfg_path)
        args = _apply_config(parser, argv, config)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        _report_error(exc)
        return EXIT_USAGE
    try:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
        args.func(args, config)
    except Exception as exc:  # noqa: BLE001
        _report_error(exc)
        return EXIT_ERROR
    return 0


def _report_error(exc: BaseException) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
