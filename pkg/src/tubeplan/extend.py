"""Adaptive potential-guided tree expansion.

Expansion direction blends the random sample direction with a potential
field built from superquadric obstacle repulsion, goal attraction, and a
lateral line-damping term; the blend weight adapts to obstacle proximity
and field strength. The step size fuses a turn-angle shrink with a
density-driven stretch through a soft-min.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import EnvironmentMap, Obstacle, superquadric_value


class DegenerateInputError(ValueError):
    """Zero displacement where a direction was required."""


class DegenerateFieldError(RuntimeError):
    """Total potential force vanished; caller should fall back to u_rand."""


class SingularDensityError(ValueError):
    """Mean obstacle density of 1 leaves no free space to scale against."""


@dataclass
class PotentialConfig:
    K_rep: float = 1.0
    K_att: float = 1.0
    K_line: float = 0.5
    A: float = 1.0
    eta: float = 1.0
    d0: float = 3.0
    F0: float = 1.0
    p_e: float = 0.2


@dataclass
class StepConfig:
    epsilon_0: float = 3.0
    beta: float = 2.5
    tau: float = 0.3
    alpha_soft: float = 8.0
    k_lambda: float = 1.0
    S_lambda_max: float = 0.5


@dataclass
class ExtendContext:
    """Local expansion state around the nearest node.

    `xi_target` is the point the expansion is heading for (the sampled
    point); the line-damping force measures lateral deviation of the
    intended move from the previous expansion direction, so it needs the
    target, not the origin (at the origin the lateral offset is zero by
    construction).
    """

    xi_near: np.ndarray
    xi_parent: np.ndarray | None
    region_density: float
    mean_density: float
    d_obs: float
    xi_target: np.ndarray | None = None


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise DegenerateInputError("zero-length direction")
    return v / n


def rand_direction(xi_near, xi_rand) -> np.ndarray:
    """Unit direction from the nearest node toward the sampled point."""
    return _unit(np.asarray(xi_rand, float) - np.asarray(xi_near, float))


def repulsive_potential(envmap: EnvironmentMap, p, cfg: PotentialConfig,
                        active: list[Obstacle] | None = None) -> float:
    """U(p) = sum over active obstacles of A*exp(-eta*C)/C, C > 0 outside."""
    obstacles = envmap.obstacles if active is None else active
    total = 0.0
    for obs in obstacles:
        c = superquadric_value(obs, p)
        if c > 0.0:
            total += cfg.A * np.exp(-cfg.eta * c) / c
    return total


def _active_obstacles(envmap: EnvironmentMap, p, cfg: PotentialConfig) -> list[Obstacle]:
    """Obstacles whose box surface is within d0 of p and with C(p) > 0."""
    if not envmap.obstacles:
        return []
    pts = np.asarray(p, float)
    delta = np.abs(pts[None, :] - envmap._centers) - envmap._half
    per = np.linalg.norm(np.maximum(delta, 0.0), axis=1)
    out = []
    for i, obs in enumerate(envmap.obstacles):
        if per[i] <= cfg.d0 and superquadric_value(obs, pts) > 0.0:
            out.append(obs)
    return out


def repulsion_gradient(envmap: EnvironmentMap, p, cfg: PotentialConfig,
                       h: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of U, active set frozen at p."""
    p = np.asarray(p, float)
    active = _active_obstacles(envmap, p, cfg)
    grad = np.zeros(3)
    if not active:
        return grad
    for axis in range(3):
        dp = np.zeros(3)
        dp[axis] = h
        up = repulsive_potential(envmap, p + dp, cfg, active)
        um = repulsive_potential(envmap, p - dp, cfg, active)
        grad[axis] = (up - um) / (2 * h)
    return grad


def line_force(v: np.ndarray, ell: np.ndarray, gain: float) -> np.ndarray:
    """Damping -gain*(v - (v.ell) ell): removes the component of v lateral
    to the previous expansion direction ell."""
    return -gain * (v - np.dot(v, ell) * ell)


def potential_direction(
    ctx: ExtendContext, goal, envmap: EnvironmentMap, cfg: PotentialConfig
) -> tuple[np.ndarray, float]:
    """Potential-field direction and magnitude at the expansion origin.

    F_tot = K_att (goal - xi) - K_rep grad U(xi) + F_line, evaluated at
    xi = ctx.xi_near. Raises DegenerateFieldError when the total vanishes.
    """
    xi = np.asarray(ctx.xi_near, float)
    goal = np.asarray(goal, float)
    f_att = cfg.K_att * (goal - xi)
    f_rep = -cfg.K_rep * repulsion_gradient(envmap, xi, cfg)
    if ctx.xi_parent is not None and ctx.xi_target is not None:
        parent = np.asarray(ctx.xi_parent, float)
        ell = _unit(xi - parent)
        f_line = line_force(np.asarray(ctx.xi_target, float) - parent, ell, cfg.K_line)
    else:
        f_line = np.zeros(3)
    f_tot = f_att + f_rep + f_line
    norm = float(np.linalg.norm(f_tot))
    if norm < 1e-15:
        raise DegenerateFieldError("total potential force is zero")
    return f_tot / norm, norm


def fusion_weight(ctx: ExtendContext, f_norm: float, cfg: PotentialConfig) -> float:
    """alpha = clamp01((d0 - d_obs)/d0) * F/(F + F0), in [0, 1]."""
    prox = np.clip((cfg.d0 - ctx.d_obs) / cfg.d0, 0.0, 1.0)
    return float(prox * f_norm / (f_norm + cfg.F0))


def choose_direction(
    u_rand: np.ndarray,
    u_f: np.ndarray,
    alpha_weight: float,
    p_e: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Blend directions, falling back to u_rand with probability p_e."""
    if rng.uniform() <= p_e:
        return u_rand
    blend = alpha_weight * u_f + (1.0 - alpha_weight) * u_rand
    n = float(np.linalg.norm(blend))
    if n < 1e-12:
        return u_rand
    return blend / n


def step_angle(eps0: float, theta: float, cfg: StepConfig) -> float:
    """Turn-angle step eps0*(tau + (1-tau)*exp(-beta*theta/pi))."""
    return eps0 * (cfg.tau + (1.0 - cfg.tau) * np.exp(-cfg.beta * theta / np.pi))


def step_density(eps0: float, rho_k: float, rho_mean: float, cfg: StepConfig) -> float:
    """Density step eps0*(1 + clip(k_lambda*(rho_mean - rho_k)/(1 - rho_mean)))."""
    if rho_mean >= 1.0:
        raise SingularDensityError("mean obstacle density must be < 1")
    s = cfg.k_lambda * (rho_mean - rho_k) / (1.0 - rho_mean)
    s = float(np.clip(s, -cfg.S_lambda_max, cfg.S_lambda_max))
    return eps0 * (1.0 + s)


def softmin(e1: float, e2: float, alpha_soft: float) -> float:
    """Smooth minimum, within log(2)/alpha below min(e1, e2)."""
    em = min(e1, e2)
    return em - np.log(np.exp(-alpha_soft * (e1 - em)) + np.exp(-alpha_soft * (e2 - em))) / alpha_soft


def turn_angle(u_in: np.ndarray, u_out: np.ndarray) -> float:
    return float(np.arccos(np.clip(np.dot(u_in, u_out), -1.0, 1.0)))


def extend(
    ctx: ExtendContext,
    xi_rand,
    goal,
    envmap: EnvironmentMap,
    pcfg: PotentialConfig,
    scfg: StepConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One adaptive expansion: fused direction, soft-min step, clamped to
    the workspace."""
    u_rand = rand_direction(ctx.xi_near, xi_rand)
    if ctx.xi_target is None:
        ctx = ExtendContext(ctx.xi_near, ctx.xi_parent, ctx.region_density,
                            ctx.mean_density, ctx.d_obs, np.asarray(xi_rand, float))
    try:
        u_f, f_norm = potential_direction(ctx, goal, envmap, pcfg)
        alpha = fusion_weight(ctx, f_norm, pcfg)
    except DegenerateFieldError:
        u_f, alpha = u_rand, 0.0
    d = choose_direction(u_rand, u_f, alpha, pcfg.p_e, rng)
    if ctx.xi_parent is not None:
        theta = turn_angle(_unit(ctx.xi_near - np.asarray(ctx.xi_parent, float)), d)
    else:
        theta = 0.0
    e1 = step_angle(scfg.epsilon_0, theta, scfg)
    e2 = step_density(scfg.epsilon_0, ctx.region_density, ctx.mean_density, scfg)
    eps = softmin(e1, e2, scfg.alpha_soft)
    return envmap.workspace.clamp(np.asarray(ctx.xi_near, float) + eps * d)
