"""Coverage of the MCMC credible intervals on simulated share data, and
recovery of lambda from synthetic option quotes.
"""
import argparse
import math
from dataclasses import dataclass

import numpy as np

from latent_sv.estimation import PricingConfig, lambda_grid, lambda_posterior, mcmc_run, synthetic_quotes
from latent_sv.model import OptionContract, SVParams, simulate_paths


@dataclass
class CoverageConfig:
    theta: tuple = (-0.5, 3.0, -1.0, 1.0)
    n: int = 1000
    m: int = 500
    B: int = 20000
    burn_in: int = 5000
    reps: int = 10


@dataclass
class LambdaConfig:
    lam_true: float = 1.0
    noise_sd: float = 0.05
    M: int = 2000
    m: int = 50
    half_width: float = 4.0
    delta_g: float = 0.5
    reps: int = 10


def simulated_returns(params, n, seed):
    paths = simulate_paths(params, OptionContract(strike=100.0, steps=n, s0=100.0), 1, seed=seed)
    return paths.log_returns[0]


def coverage(cfg: CoverageConfig):
    rho, alpha, beta, gamma = cfg.theta
    p = SVParams(rho=rho, alpha=alpha, beta=beta, gamma=gamma, r=0.05)
    hits = np.zeros(4, dtype=int)
    for rep in range(cfg.reps):
        trace = mcmc_run(simulated_returns(p, cfg.n, 1000 + rep), m=cfg.m, B=cfg.B, burn_in=cfg.burn_in, seed=rep)
        ci = trace.credible_interval()
        inside = (ci[:, 0] <= cfg.theta) & (np.asarray(cfg.theta) <= ci[:, 1])
        hits += inside
        print(f"rep {rep}  acc {trace.acceptance_rate:.3f}  mean {np.round(trace.posterior_mean(), 3)}  "
              f"covered {inside.astype(int).tolist()}", flush=True)
    print("coverage", hits.tolist(), "of", cfg.reps)


def lambda_recovery(cfg: LambdaConfig):
    theta = SVParams(rho=-0.5, alpha=5.0, beta=math.log(0.3), gamma=1.0, r=0.03)
    contracts = [(k, T, 30.0, 0.3, 0.03) for k in (28.0, 30.0, 32.0, 34.0) for T in (20, 40)]
    covered = 0
    for seed in range(cfg.reps):
        pc = PricingConfig(M=cfg.M, m=cfg.m, seed=seed)
        quotes = synthetic_quotes(theta, cfg.lam_true, contracts, cfg.noise_sd, pc, seed=seed)
        post = lambda_posterior(theta, quotes, lambda_grid(0.0, cfg.half_width, cfg.delta_g), pc)
        hit = post.ci95[0] <= cfg.lam_true <= post.ci95[1]
        covered += hit
        print(f"seed {seed}  lambda* {post.lambda_star:+.2f}  CI ({post.ci95[0]:+.3f}, {post.ci95[1]:+.3f})  {hit}",
              flush=True)
    print(f"covered {covered}/{cfg.reps}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("what", choices=("coverage", "lambda"))
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--draws", type=int, default=20000)
    ap.add_argument("--burn-in", type=int, default=5000)
    a = ap.parse_args()
    if a.what == "coverage":
        coverage(CoverageConfig(reps=a.reps, B=a.draws, burn_in=a.burn_in))
    else:
        lambda_recovery(LambdaConfig(reps=a.reps))


if __name__ == "__main__":
    main()
