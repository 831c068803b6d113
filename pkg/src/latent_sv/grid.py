"""Grid dynamic programming over (share price, filter mean, filter sd).

The filtering distribution is approximated by N(mu, zeta^2).  At each node the
continuation value is estimated by simulating one step ahead from that
Gaussian cloud, refiltering against the simulated return, and reading the next
slice's value table by trilinear interpolation.
"""
from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import special
from scipy.stats import qmc

from latent_sv import _grid_kernels
from latent_sv.filter import ParticleDegeneracyError, default_conditional
from latent_sv.model import OptionContract, SVParams, payoff, stationary_initial
from latent_sv.rng import generator

DEFAULT_AXIS_SIZES = (201, 41, 21)
DEFAULT_INNER = 256
DEFAULT_GRID_PARTICLES = 200
DEFAULT_BUDGET = 1e11  # see grid_cost
AXIS_NAMES = ("s", "mu", "zeta")


class GridBudgetError(RuntimeError):
    pass


@dataclass
class ValueGrid:
    """Value and exercise tables on a fixed (s, mu, zeta) lattice at time t."""

    axes: tuple
    values: np.ndarray
    decisions: np.ndarray  # True where exercising
    t: int

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        if len(self.axes) != 3:
            raise ValueError("a value grid has exactly three axes")
        for name, a in zip(AXIS_NAMES, self.axes):
            if a.ndim != 1 or a.size < 1 or np.any(np.diff(a) <= 0):
                raise ValueError(f"axis {name} must be strictly increasing")
        shape = tuple(a.size for a in self.axes)
        self.values = np.ascontiguousarray(self.values, dtype=float)
        self.decisions = np.asarray(self.decisions, dtype=bool)
        if self.values.shape != shape or self.decisions.shape != shape:
            raise ValueError(f"tables must have shape {shape}")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def nodes(self) -> np.ndarray:
        """All nodes as an (n, 3) array in C order of the value table."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def save_npz(self, path) -> Path:
        path = Path(path)
        np.savez(path, s=self.axes[0], mu=self.axes[1], zeta=self.axes[2],
                 values=self.values, decisions=self.decisions, t=self.t)
        return path

    @classmethod
    def load_npz(cls, path) -> "ValueGrid":
        with np.load(path) as d:
            return cls((d["s"], d["mu"], d["zeta"]), d["values"], d["decisions"], int(d["t"]))

    def save_csv(self, path) -> Path:
        """One row per node: t, s, mu, zeta, value, exercise."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s", "mu", "zeta", "value", "exercise"])
            for node, v, d in zip(self.nodes(), self.values.ravel(), self.decisions.ravel()):
                w.writerow([self.t, *(repr(float(x)) for x in node), repr(float(v)), int(d)])
        return path


def _axis(lo: float, hi: float, n: int, pad: float = 0.05, floor: float = -np.inf) -> np.ndarray:
    span = hi - lo
    if not span > 1e-12 * max(1.0, abs(lo)):
        return np.array([lo])
    return np.linspace(max(floor, lo - pad * span), hi + pad * span, n)


def build_grid(
    params: SVParams,
    contract: OptionContract,
    axis_sizes: Sequence[int] = DEFAULT_AXIS_SIZES,
    coverage: tuple = (0.001, 0.999),
    m_pilot: int = 1000,
    m_particles: int = DEFAULT_GRID_PARTICLES,
    seed: Optional[int] = 0,
) -> tuple:
    """Axes spanning a pilot panel of Method C features.

    An axis whose pilot values are all equal collapses to a single node, and
    interpolation along it is pinned.
    """
    from latent_sv.lsm import simulate_augmented_paths

    if any(n < 2 for n in axis_sizes) or len(axis_sizes) != 3:
        raise ValueError("axis_sizes must be three integers >= 2")
    pilot = simulate_augmented_paths(params, contract, "C", M=m_pilot, m_particles=m_particles,
                                     seed=None if seed is None else seed + 1_000_003)
    q_lo, q_hi = coverage
    s = pilot.s.ravel()
    lo, hi = np.quantile(s, [q_lo, q_hi])
    s_axis = _axis(lo, hi, axis_sizes[0])
    s_lo = min(s_axis[0], 0.5 * min(contract.s0, contract.strike))
    s_hi = max(s_axis[-1], 1.5 * max(contract.s0, contract.strike))
    s_axis = np.linspace(s_lo, s_hi, axis_sizes[0])
    out = [s_axis]
    for k, n in zip(range(2), axis_sizes[1:]):
        v = pilot.features[:, :, k].ravel()
        lo, hi = np.quantile(v, [q_lo, q_hi])
        out.append(_axis(lo, hi, n, floor=0.0 if k == 1 else -np.inf))
    return tuple(out)


def interpolate(grid: ValueGrid, points) -> np.ndarray | float:
    """Trilinear interpolation; points outside the box are clamped to it."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(pts.shape[0])
    a0, a1, a2 = grid.axes
    _grid_kernels.trilinear_many(a0, a1, a2, grid.values, np.ascontiguousarray(pts), out)
    return out if np.ndim(points) > 1 else float(out[0])


@dataclass
class SliceDraws:
    """Random numbers shared by every node of one time slice."""

    eps: np.ndarray    # (m,) standard normals for the cloud
    idx: np.ndarray    # (n_inner,) particle index per inner draw
    z1: np.ndarray     # (n_inner,)
    z2: np.ndarray     # (n_inner,)
    pz: np.ndarray     # (n_inner, m) propagation noise of the inner filter
    expo: np.ndarray   # (n_inner, m + 1) exponentials for resampling

    @classmethod
    def draw(cls, m: int, n_inner: int, rng: np.random.Generator, sampler: str = "sobol") -> "SliceDraws":
        """``mc`` draws everything iid.  ``sobol`` stratifies the cloud and
        takes (U, z1, z2) from a scrambled Sobol sequence; the inner filter
        noise stays iid either way."""
        if m < 2 or n_inner < 1:
            raise ValueError("need m >= 2 and n_inner >= 1")
        if sampler == "mc":
            eps = rng.standard_normal(m)
            idx = rng.integers(0, m, n_inner)
            z1 = rng.standard_normal(n_inner)
            z2 = rng.standard_normal(n_inner)
        elif sampler == "sobol":
            eps = special.ndtri((np.arange(m) + rng.random(m)) / m)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)  # balance warning for n not a power of 2
                u = qmc.Sobol(d=3, scramble=True, seed=rng).random(n_inner)
            idx = np.minimum((u[:, 0] * m).astype(np.int64), m - 1)
            z1 = special.ndtri(u[:, 1])
            z2 = special.ndtri(u[:, 2])
        else:
            raise ValueError(f"unknown sampler {sampler!r}")
        return cls(eps=eps, idx=idx, z1=z1, z2=z2,
                   pz=rng.standard_normal((n_inner, m)),
                   expo=rng.standard_exponential((n_inner, m + 1)))


def _continuation_lattice(s_nodes, mu_nodes, zeta_nodes, draws: SliceDraws, next_grid: ValueGrid,
                          params: SVParams, conditional: bool) -> np.ndarray:
    """Discounted continuation on the product lattice of the given nodes."""
    s_nodes, mu_nodes, zeta_nodes = (np.ascontiguousarray(np.atleast_1d(a), dtype=float)
                                     for a in (s_nodes, mu_nodes, zeta_nodes))
    out = np.empty((s_nodes.size, mu_nodes.size, zeta_nodes.size))
    failed = np.zeros((mu_nodes.size, zeta_nodes.size), dtype=np.int64)
    a0, a1, a2 = next_grid.axes
    _grid_kernels.slice_continuation(
        s_nodes, mu_nodes, zeta_nodes, draws.eps, draws.idx, draws.z1, draws.z2, draws.pz, draws.expo,
        params.beta_star, params.decay, params.vol_step_sd, params.rho, params.r, params.delta,
        conditional, a0, a1, a2, next_grid.values, out, failed,
    )
    if failed.any():
        i, k = np.argwhere(failed > 0)[0]
        raise ParticleDegeneracyError(next_grid.t, f"inner filter at mu={mu_nodes[i]}, zeta={zeta_nodes[k]}")
    return np.exp(-params.r * params.delta) * out


def estimate_continuation(
    s_t: float,
    q_t,
    next_grid: ValueGrid,
    params: SVParams,
    m: int = DEFAULT_GRID_PARTICLES,
    n_inner: int = DEFAULT_INNER,
    seed: Optional[int] = 0,
    conditional: Optional[bool] = None,
    sampler: str = "sobol",
) -> float:
    """Discounted expected next-slice value from (s_t, N(mu_t, zeta_t^2))."""
    mu, zeta = (q_t.mu, q_t.zeta) if hasattr(q_t, "mu") else q_t
    cond = default_conditional(params) if conditional is None else conditional
    draws = SliceDraws.draw(m, n_inner, generator(seed), sampler)
    return float(_continuation_lattice(s_t, mu, zeta, draws, next_grid, params, cond)[0, 0, 0])


def grid_cost(axes, m: int, n_inner: int, steps: int) -> float:
    """Work units for a solve: one inner filter per (mu, zeta) column and draw,
    plus one interpolation per price node."""
    ns, nmu, nz = (len(a) for a in axes)
    return float(nmu * nz) * n_inner * (m + ns) * steps


@dataclass
class GridResult:
    price: float
    interpolated_price: float
    q0: tuple
    grids: list
    runtime: float
    seed: Optional[int]


def initial_summary(params: SVParams, contract: OptionContract) -> tuple:
    if contract.sigma0 is not None:
        return float(np.log(contract.sigma0)), 0.0
    mean, var = stationary_initial(params)
    return float(mean), float(np.sqrt(var))


def grid_dp(
    params: SVParams,
    contract: OptionContract,
    axes: Optional[tuple] = None,
    axis_sizes: Sequence[int] = DEFAULT_AXIS_SIZES,
    m: int = DEFAULT_GRID_PARTICLES,
    n_inner: int = DEFAULT_INNER,
    seed: Optional[int] = 0,
    conditional: Optional[bool] = None,
    budget: float = DEFAULT_BUDGET,
    sampler: str = "sobol",
) -> GridResult:
    """Backward induction on the grid.

    The reported price evaluates max(g(s0), continuation) at (s0, q0)
    directly with the t=0 slice's draws; the interpolated t=0 table value is
    returned alongside.
    """
    t_start = time.perf_counter()
    if axes is None:
        axes = build_grid(params, contract, axis_sizes, m_particles=m, seed=seed)
    T = contract.steps
    cost = grid_cost(axes, m, n_inner, T)
    if cost > budget:
        raise GridBudgetError(f"grid of shape {tuple(len(a) for a in axes)} with {n_inner} inner draws, "
                              f"{m} particles and {T} steps needs {cost:.3g} work units, over the budget {budget:.3g}")
    cond = default_conditional(params) if conditional is None else conditional
    shape = tuple(len(a) for a in axes)
    g = np.broadcast_to(payoff(np.asarray(axes[0]), contract)[:, None, None], shape).copy()
    grid = ValueGrid(axes, g, g > 0, T)
    grids = [grid]
    q0 = initial_summary(params, contract)
    g0 = float(payoff(contract.s0, contract))
    cont0 = None
    for t in range(T - 1, -1, -1):
        draws = SliceDraws.draw(m, n_inner, generator(seed, t), sampler)
        cont = _continuation_lattice(*axes, draws, grid, params, cond)
        if t == 0:
            cont0 = float(_continuation_lattice(contract.s0, *q0, draws, grid, params, cond)[0, 0, 0])
        ex = (g >= cont) & (g > 0)
        grid = ValueGrid(axes, np.where(ex, g, cont), ex, t)
        grids.append(grid)
    grids.reverse()
    price = max(g0, cont0)
    interp = interpolate(grids[0], (contract.s0, *q0))
    return GridResult(price=price, interpolated_price=interp, q0=q0, grids=grids,
                      runtime=time.perf_counter() - t_start, seed=seed)
