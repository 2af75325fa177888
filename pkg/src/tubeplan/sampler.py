"""Bayesian active subregion sampling.

The workspace is partitioned into Voronoi cells around jittered lattice
generators. Each cell carries a Beta(alpha, beta) posterior over its
sampling-expansion success probability, seeded from the cell's Monte-Carlo
obstacle density. Thompson sampling picks the cell to draw from, mixed with
global uniform draws and a goal point-mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .env import EnvironmentMap, Workspace, estimate_density


@dataclass
class SamplerConfig:
    K: int = 27
    kappa_p: float = 10.0
    epsilon_u: float = 0.2
    p_g: float = 0.2
    density_samples: int = 500
    cell_reject_budget: int = 1000

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.kappa_p <= 0:
            raise ValueError("kappa_p must be positive")


@dataclass
class SubRegion:
    """A Voronoi cell with Beta posterior state and estimated obstacle density."""

    generator: np.ndarray
    alpha: float
    beta: float
    rho_obs: float
    bounds_lo: np.ndarray = field(default=None, repr=False)
    bounds_hi: np.ndarray = field(default=None, repr=False)

    @property
    def posterior_mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass
class SampleDraw:
    point: np.ndarray
    selected_region: int | None
    thompson: bool = False  # True only when the region came from Thompson selection


def beta_prior(kappa_p: float, rho_obs: float) -> tuple[float, float]:
    """Prior (alpha, beta) = (1 + kappa*(1-rho), 1 + kappa*rho)."""
    return 1.0 + kappa_p * (1.0 - rho_obs), 1.0 + kappa_p * rho_obs


def _lattice_dims(K: int, extent: np.ndarray) -> tuple[int, int, int]:
    """Near-cubic lattice dimensions with product >= K, cells close to cubes."""
    best = None
    for nx in range(1, K + 1):
        for ny in range(1, K + 1):
            nz = int(np.ceil(K / (nx * ny)))
            cells = np.array([extent[0] / nx, extent[1] / ny, extent[2] / nz])
            # prefer exact product, then near-cubic cells
            score = (nx * ny * nz - K, float(cells.max() / cells.min()))
            if best is None or score < best[0]:
                best = (score, (nx, ny, nz))
    return best[1]


def membership(points, generators: np.ndarray) -> np.ndarray | int:
    """Voronoi membership: argmin distance to generators, lowest index on ties."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    d2 = ((pts[:, None, :] - generators[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    return int(idx[0]) if single else idx


def _cell_bounds(generators: np.ndarray, k: int, ws: Workspace):
    """Exact AABB of Voronoi cell k (clipped to the workspace) via 6 tiny LPs.

    The cell is the polytope {xi : (r_j - r_k).xi <= (|r_j|^2 - |r_k|^2)/2}
    intersected with the workspace box.
    """
    others = np.delete(np.arange(len(generators)), k)
    if len(others) == 0:
        return ws.min_corner.copy(), ws.max_corner.copy()
    A = generators[others] - generators[k]
    b = 0.5 * ((generators[others] ** 2).sum(axis=1) - (generators[k] ** 2).sum())
    bounds = list(zip(ws.min_corner, ws.max_corner))
    lo = np.empty(3)
    hi = np.empty(3)
    for axis in range(3):
        c = np.zeros(3)
        c[axis] = 1.0
        res_lo = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        res_hi = linprog(-c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if not (res_lo.success and res_hi.success):
            return ws.min_corner.copy(), ws.max_corner.copy()
        lo[axis] = res_lo.x[axis]
        hi[axis] = res_hi.x[axis]
    return lo, hi


def build_partition(
    envmap: EnvironmentMap, cfg: SamplerConfig, rng: np.random.Generator
) -> list[SubRegion]:
    """Place K jittered lattice generators and fit Beta priors from density."""
    ws = envmap.workspace
    nx, ny, nz = _lattice_dims(cfg.K, ws.extent)
    cell = ws.extent / np.array([nx, ny, nz], dtype=float)
    centers = []
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                centers.append(ws.min_corner + cell * (np.array([ix, iy, iz]) + 0.5))
    centers = np.array(centers[: cfg.K])
    jitter = rng.uniform(-0.25, 0.25, size=centers.shape) * cell
    generators = centers + jitter

    regions = []
    for k in range(cfg.K):
        lo, hi = _cell_bounds(generators, k, ws)
        rho = estimate_density(
            envmap,
            lambda pts, k=k: membership(pts, generators) == k,
            cfg.density_samples,
            rng,
            within=(lo, hi),
        )
        alpha, beta = beta_prior(cfg.kappa_p, rho)
        regions.append(SubRegion(generators[k], alpha, beta, rho, lo, hi))
    return regions


def thompson_select(regions: list[SubRegion], rng: np.random.Generator) -> int:
    """Draw theta_k ~ Beta(alpha_k, beta_k) per region, return the argmax."""
    if not regions:
        raise ValueError("regions must be non-empty")
    alphas = np.array([r.alpha for r in regions])
    betas = np.array([r.beta for r in regions])
    draws = rng.beta(alphas, betas)
    return int(np.argmax(draws))


def sample_in_region(
    regions: list[SubRegion],
    k: int,
    rng: np.random.Generator,
    budget: int = 1000,
) -> np.ndarray | None:
    """Uniform draw from cell k via rejection from its bounding box."""
    generators = np.array([r.generator for r in regions])
    lo, hi = regions[k].bounds_lo, regions[k].bounds_hi
    for _ in range(budget):
        p = rng.uniform(lo, hi)
        if membership(p, generators) == k:
            return p
    return None


def draw_sample(
    regions: list[SubRegion],
    goal,
    workspace: Workspace,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> SampleDraw:
    """Mixed sampling: uniform with prob epsilon_u, else goal point-mass with
    prob p_g, else uniform over the Thompson-selected Voronoi cell.

    Goal draws are credited to the goal's own cell so their feedback updates
    that posterior. A cell whose rejection budget is exhausted falls back to
    a global uniform draw with no region selected.
    """
    goal = np.asarray(goal, dtype=float)
    if rng.uniform() < cfg.epsilon_u:
        return SampleDraw(workspace.sample(rng), None)
    if rng.uniform() < cfg.p_g:
        generators = np.array([r.generator for r in regions])
        return SampleDraw(goal.copy(), membership(goal, generators), thompson=False)
    k = thompson_select(regions, rng)
    p = sample_in_region(regions, k, rng, budget=cfg.cell_reject_budget)
    if p is None:
        return SampleDraw(workspace.sample(rng), None)
    return SampleDraw(p, k, thompson=True)


def posterior_update(region: SubRegion, y: int) -> None:
    """Online Beta update: alpha += y, beta += (1 - y)."""
    if y not in (0, 1):
        raise ValueError("y must be 0 or 1")
    region.alpha += y
    region.beta += 1 - y
