"""Grid DP against Method C and, for gamma = 0, against the CRR tree.

Useful for choosing axis sizes: prints the grid price for each size next
to the reference.
"""
import argparse
import math
from dataclasses import dataclass

from latent_sv.experiments import BUILTIN, binomial_oracle
from latent_sv.grid import grid_dp
from latent_sv.lsm import lsm_price, simulate_augmented_paths


@dataclass
class GridCheck:
    experiment: str = "3"
    sizes: tuple = ((101, 21, 11), (201, 41, 21))
    n_inner: int = 256
    m: int = 200
    M: int = 15000
    seed: int = 0
    constant_vol: bool = False


def reference(cfg: GridCheck, params, contract):
    if cfg.constant_vol:
        sigma = math.exp(params.beta)
        return binomial_oracle(contract, params.r, sigma, 2000, style="bermudan"), 0.0
    panel = simulate_augmented_paths(params, contract, "C", M=cfg.M, m_particles=cfg.m, seed=cfg.seed)
    est, _ = lsm_price(panel, contract, params)
    return est.price, est.std_error


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--experiment", default="3")
    ap.add_argument("--sizes", default="101x21x11,201x41x21", help="comma-separated n_s x n_mu x n_zeta")
    ap.add_argument("--n-inner", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--constant-vol", action="store_true", help="set gamma = 0 and compare with CRR")
    a = ap.parse_args()
    cfg = GridCheck(experiment=a.experiment, n_inner=a.n_inner, seed=a.seed, constant_vol=a.constant_vol,
                    sizes=tuple(tuple(int(v) for v in s.split("x")) for s in a.sizes.split(",")))
    spec = BUILTIN[cfg.experiment]
    params, contract = spec.params, spec.contract
    if cfg.constant_vol:
        sigma = contract.sigma0 or math.exp(params.beta)
        params = params.with_(gamma=0.0, beta=math.log(sigma), allow_degenerate=True)
        contract = contract.__class__(strike=contract.strike, steps=contract.steps, s0=contract.s0, sigma0=sigma)
    ref, se = reference(cfg, params, contract)
    print(f"reference {ref:.4f} (se {se:.4f})")
    for sizes in cfg.sizes:
        res = grid_dp(params, contract, axis_sizes=sizes, m=cfg.m, n_inner=cfg.n_inner, seed=cfg.seed)
        print(f"{'x'.join(map(str, sizes)):>12s}  {res.price:.4f}  gap {res.price - ref:+.4f}  {res.runtime:.1f}s")


if __name__ == "__main__":
    main()
