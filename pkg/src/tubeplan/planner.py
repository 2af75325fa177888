"""Enhanced Tube-RRT* planner with ablation variants.

Each admitted node carries its maximum collision-free radius, so the final
path defines a virtual tube wide enough for the whole transport formation
(admission requires clearance > r_min at nodes and along edges). Edge costs
combine normalized length with a turning-acceleration energy penalty, so
parent selection and rewiring favor smooth, executable paths.

Variants share the loop and differ only in the two strategy slots:
  enhanced  Bayesian active sampling + adaptive potential-guided extension
  stube     Bayesian active sampling + fixed-step random extension
  aetube    uniform/goal-biased sampling + adaptive extension
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .env import EnvironmentMap, default_resolution
from .extend import (
    DegenerateInputError,
    ExtendContext,
    PotentialConfig,
    StepConfig,
    extend as extend_step,
    turn_angle,
)
from .sampler import (
    SampleDraw,
    SamplerConfig,
    build_partition,
    draw_sample,
    membership,
    posterior_update,
)

VARIANTS = ("enhanced", "stube", "aetube")

_ZETA3 = 4.0 * np.pi / 3.0  # unit-ball volume in R^3


class InfeasibleInputError(ValueError):
    """Start or goal violates the tube-clearance precondition."""


@dataclass
class PlannerConfig:
    max_iters: int = 3000
    r_min: float = 1.1
    gamma: float | None = None  # None -> connectivity default from eps_u and p_l
    goal_tol: float | None = None  # None -> base step size
    w_L: float = 1.0
    w_A: float = 1.0
    d_ref: float = 2.3
    v_ref: float = 1.0
    dt: float = 0.01
    variant: str = "enhanced"
    p_l: float = 0.5  # assumed minimum extension success probability
    resolution: float | None = None  # edge sampling step; None -> min(0.25, r_min/2)

    def __post_init__(self):
        if self.r_min <= 0:
            raise ValueError("r_min must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class Node:
    id: int
    position: np.ndarray
    parent: int | None
    cost: float
    clearance_r: float
    cum_turning: float


@dataclass
class PathResult:
    waypoints: np.ndarray
    length: float
    turning_sum: float
    min_clearance: float
    cost: float
    t_first: float
    collision_checks: int
    effective_samples: int
    total_samples: int
    clearance_radii: np.ndarray
    precompute_time: float = 0.0
    checks_total: int = 0


def turn_accel_energy(u_in: np.ndarray, u_out: np.ndarray, v_ref: float, dt: float) -> float:
    """Energy of the turning acceleration v_ref*(u_out - u_in)/dt over dt."""
    a = v_ref * (u_out - u_in) / dt
    return float(a @ a) * dt


def edge_cost(xi_pp, xi_p, xi_new, cfg: PlannerConfig) -> float:
    """Composite edge cost w_L*len/d_ref + w_A*A_e (A_e = 0 on root edges)."""
    p = np.asarray(xi_p, float)
    q = np.asarray(xi_new, float)
    d = float(np.linalg.norm(q - p))
    if d < 1e-12:
        raise DegenerateInputError("coincident edge endpoints")
    u_out = (q - p) / d
    if xi_pp is None:
        ae = 0.0
    else:
        pp = np.asarray(xi_pp, float)
        din = float(np.linalg.norm(p - pp))
        if din < 1e-12:
            raise DegenerateInputError("coincident parent positions")
        ae = turn_accel_energy((p - pp) / din, u_out, cfg.v_ref, cfg.dt)
    return cfg.w_L * d / cfg.d_ref + cfg.w_A * ae


def default_gamma(epsilon_u: float, p_l: float) -> float:
    """Neighborhood constant matching the RRT* connectivity radius when the
    effective sampling density is eps_u*p_l/mu(X_free)."""
    return (8.0 / 3.0) * epsilon_u * p_l / _ZETA3


def neighborhood_radius(n: int, gamma: float, rho_eff: float, epsilon: float) -> float:
    """Density-corrected radius min{(gamma*log(n)/(rho_eff*n))^(1/3), 3*eps}."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return float(min((gamma * np.log(n) / (rho_eff * n)) ** (1.0 / 3.0), 3.0 * epsilon))


class _KDIndex:
    """Exact nearest/radius queries over a growing point set.

    A cKDTree covers a prefix of the points and is rebuilt geometrically;
    the unindexed tail is scanned vectorized, so queries stay exact.
    """

    def __init__(self, rebuild_factor: float = 0.25, min_tail: int = 64):
        self._pts = np.empty((256, 3))
        self.size = 0
        self._tree = None
        self._indexed = 0
        self._factor = rebuild_factor
        self._min_tail = min_tail

    def add(self, p: np.ndarray) -> None:
        if self.size == self._pts.shape[0]:
            grown = np.empty((2 * self.size, 3))
            grown[: self.size] = self._pts
            self._pts = grown
        self._pts[self.size] = p
        self.size += 1
        tail = self.size - self._indexed
        if tail > max(self._min_tail, int(self._factor * self._indexed)):
            self._tree = cKDTree(self._pts[: self.size])
            self._indexed = self.size

    def nearest(self, p: np.ndarray) -> tuple[int, float]:
        best_i, best_d = -1, np.inf
        if self._indexed:
            d, i = self._tree.query(p)
            best_i, best_d = int(i), float(d)
        if self.size > self._indexed:
            tail = self._pts[self._indexed : self.size]
            d2 = ((tail - p) ** 2).sum(axis=1)
            j = int(np.argmin(d2))
            dj = float(np.sqrt(d2[j]))
            if dj < best_d:
                best_i, best_d = self._indexed + j, dj
        return best_i, best_d

    def near(self, p: np.ndarray, r: float) -> list[int]:
        ids: list[int] = []
        if self._indexed:
            ids.extend(int(i) for i in self._tree.query_ball_point(p, r))
        if self.size > self._indexed:
            tail = self._pts[self._indexed : self.size]
            d2 = ((tail - p) ** 2).sum(axis=1)
            ids.extend(int(self._indexed + j) for j in np.flatnonzero(d2 <= r * r))
        return ids


class Tree:
    """Search tree over parallel per-node arrays; node 0 is the root."""

    def __init__(self, root_pos: np.ndarray, root_clearance: float):
        self.pos: list[np.ndarray] = [np.asarray(root_pos, float)]
        self.parent: list[int | None] = [None]
        self.cost: list[float] = [0.0]
        self.clearance_r: list[float] = [root_clearance]
        self.cum_turning: list[float] = [0.0]
        self.children: list[list[int]] = [[]]
        self.incoming: list[np.ndarray | None] = [None]  # unit dir parent -> node
        self.edge_cost_in: list[float] = [0.0]
        self.turn_in: list[float] = [0.0]
        self.region: list[int] = [-1]

    def __len__(self) -> int:
        return len(self.pos)

    def add(self, pos, parent: int, cost: float, clearance: float,
            incoming: np.ndarray, edge_c: float, turn: float, region: int = -1) -> int:
        i = len(self.pos)
        self.pos.append(np.asarray(pos, float))
        self.parent.append(parent)
        self.cost.append(cost)
        self.clearance_r.append(clearance)
        self.cum_turning.append(self.cum_turning[parent] + turn)
        self.children.append([])
        self.children[parent].append(i)
        self.incoming.append(incoming)
        self.edge_cost_in.append(edge_c)
        self.turn_in.append(turn)
        self.region.append(region)
        return i

    def node(self, i: int) -> Node:
        return Node(i, self.pos[i], self.parent[i], self.cost[i],
                    self.clearance_r[i], self.cum_turning[i])

    def nodes(self):
        return [self.node(i) for i in range(len(self.pos))]


class Planner:
    """One planning run; single-threaded, all randomness from the given rng."""

    def __init__(
        self,
        envmap: EnvironmentMap,
        start,
        goal,
        sampler_cfg: SamplerConfig | None = None,
        potential_cfg: PotentialConfig | None = None,
        step_cfg: StepConfig | None = None,
        cfg: PlannerConfig | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.envmap = envmap
        self.start = np.asarray(start, float)
        self.goal = np.asarray(goal, float)
        self.sampler_cfg = sampler_cfg or SamplerConfig()
        self.potential_cfg = potential_cfg or PotentialConfig()
        self.step_cfg = step_cfg or StepConfig()
        self.cfg = cfg or PlannerConfig()
        self.rng = rng if rng is not None else np.random.default_rng()

        ws = envmap.workspace
        if not (ws.contains(self.start) and ws.contains(self.goal)):
            raise InfeasibleInputError("start/goal outside workspace")
        self._start_clearance = envmap.clearance(self.start)
        self._goal_clearance = envmap.clearance(self.goal)
        if self._start_clearance <= self.cfg.r_min:
            raise InfeasibleInputError("start clearance below minimum tube radius")
        if self._goal_clearance <= self.cfg.r_min:
            raise InfeasibleInputError("goal clearance below minimum tube radius")

        self.tree: Tree | None = None
        self.regions = None
        self.posterior_log: list[tuple[int, int, int, float, float]] = []
        self.collision_checks = 0
        self.checks_total = 0
        self.effective_samples = 0
        self.total_samples = 0
        self.t_first = None
        self.precompute_time = 0.0
        self.track_rewires = False
        self.rewire_cost_log: list[tuple[float, float]] = []

    # -- collision bookkeeping ---------------------------------------------

    def _point_clearance(self, p) -> float:
        self.checks_total += 1
        return float(self.envmap.clearance_many(np.asarray(p, float)[None, :])[0])

    def _segment_ok(self, p0, p1) -> bool:
        pts = self.envmap.segment_points(p0, p1, self._resolution)
        self.checks_total += pts.shape[0]
        return bool(np.all(self.envmap.clearance_many(pts) >= self.cfg.r_min))

    # -- variant strategy slots ----------------------------------------------

    def _draw(self) -> SampleDraw:
        if self.cfg.variant == "aetube":
            ws = self.envmap.workspace
            if self.rng.uniform() < self.sampler_cfg.epsilon_u:
                return SampleDraw(ws.sample(self.rng), None)
            if self.rng.uniform() < self.sampler_cfg.p_g:
                return SampleDraw(self.goal.copy(), None)
            return SampleDraw(ws.sample(self.rng), None)
        return draw_sample(self.regions, self.goal, self.envmap.workspace,
                           self.sampler_cfg, self.rng)

    def _extend(self, near_id: int, xi_rand: np.ndarray) -> np.ndarray | None:
        tree = self.tree
        xi_near = tree.pos[near_id]
        if self.cfg.variant == "stube":
            delta = xi_rand - xi_near
            d = float(np.linalg.norm(delta))
            if d < 1e-12:
                return None
            return self.envmap.workspace.clamp(
                xi_near + self.step_cfg.epsilon_0 * delta / d
            )
        parent = tree.parent[near_id]
        ctx = ExtendContext(
            xi_near=xi_near,
            xi_parent=None if parent is None else tree.pos[parent],
            region_density=self._region_rho[tree.region[near_id]],
            mean_density=self._rho_mean,
            d_obs=tree.clearance_r[near_id],
        )
        try:
            return extend_step(ctx, xi_rand, self.goal, self.envmap,
                              self.potential_cfg, self.step_cfg, self.rng)
        except DegenerateInputError:
            return None

    # -- main loop -----------------------------------------------------------

    def plan(self) -> PathResult | None:
        cfg = self.cfg
        eps0 = self.step_cfg.epsilon_0
        goal_tol = cfg.goal_tol if cfg.goal_tol is not None else eps0
        self._resolution = (
            cfg.resolution if cfg.resolution is not None else default_resolution(cfg.r_min)
        )

        t_pre = time.perf_counter()
        self.regions = build_partition(self.envmap, self.sampler_cfg, self.rng)
        self._generators = np.array([r.generator for r in self.regions])
        self._region_rho = np.array([r.rho_obs for r in self.regions])
        self._rho_mean = float(self._region_rho.mean())
        self.precompute_time = time.perf_counter() - t_pre

        mu_free = self.envmap.workspace.volume * max(1.0 - self._rho_mean, 1e-9)
        rho_eff = self.sampler_cfg.epsilon_u * cfg.p_l / mu_free
        gamma = cfg.gamma if cfg.gamma is not None else default_gamma(
            self.sampler_cfg.epsilon_u, cfg.p_l
        )

        tree = self.tree = Tree(self.start, self._start_clearance)
        tree.region[0] = int(membership(self.start, self._generators))
        index = _KDIndex()
        index.add(self.start)

        self.collision_checks = 0
        self.checks_total = 0
        self.effective_samples = 0
        self.total_samples = cfg.max_iters
        self.t_first = None
        self._checks_at_first = None
        goal_ids: list[int] = []

        t0 = time.perf_counter()
        # the root itself may already reach the goal
        if np.linalg.norm(self.start - self.goal) <= goal_tol and self._segment_ok(
            self.start, self.goal
        ):
            goal_ids.append(0)
            self.t_first = time.perf_counter() - t0
            self._checks_at_first = self.checks_total

        for it in range(cfg.max_iters):
            draw = self._draw()
            y = self._attempt(draw, index, gamma, rho_eff, eps0, goal_tol, goal_ids, t0)
            self.effective_samples += int(y)
            if self.cfg.variant != "aetube" and draw.selected_region is not None:
                region = self.regions[draw.selected_region]
                posterior_update(region, int(y))
                self.posterior_log.append(
                    (it, draw.selected_region, int(y), region.alpha, region.beta)
                )

        self.collision_checks = (
            self._checks_at_first if self._checks_at_first is not None else self.checks_total
        )
        return self._extract(goal_ids, goal_tol)

    def _attempt(self, draw, index, gamma, rho_eff, eps0, goal_tol, goal_ids, t0) -> bool:
        tree = self.tree
        cfg = self.cfg
        near_id, near_d = index.nearest(draw.point)
        if near_d < 1e-12:
            return False
        xi_new = self._extend(near_id, draw.point)
        if xi_new is None:
            return False
        if float(np.linalg.norm(xi_new - tree.pos[near_id])) < 1e-12:
            return False

        r_new = self._point_clearance(xi_new)
        if r_new <= cfg.r_min:
            return False

        n = len(tree)
        r_n = neighborhood_radius(n, gamma, rho_eff, eps0) if n >= 2 else 3.0 * eps0
        near_ids = set(index.near(xi_new, r_n))
        near_ids.add(near_id)

        cands = []
        for i in near_ids:
            d = float(np.linalg.norm(xi_new - tree.pos[i]))
            if d < 1e-12:
                continue
            u_out = (xi_new - tree.pos[i]) / d
            if tree.incoming[i] is None:
                ae = 0.0
            else:
                ae = turn_accel_energy(tree.incoming[i], u_out, cfg.v_ref, cfg.dt)
            ec = cfg.w_L * d / cfg.d_ref + cfg.w_A * ae
            cands.append((tree.cost[i] + ec, i, ec, u_out))
        cands.sort(key=lambda t: (t[0], t[1]))

        chosen = None
        for total, i, ec, u_out in cands:
            if self._segment_ok(tree.pos[i], xi_new):
                chosen = (total, i, ec, u_out)
                break
        if chosen is None:
            return False

        total, pid, ec, u_out = chosen
        turn = 0.0 if tree.incoming[pid] is None else turn_angle(tree.incoming[pid], u_out)
        new_id = tree.add(xi_new, pid, total, r_new, u_out, ec, turn,
                          region=int(membership(xi_new, self._generators)))
        index.add(xi_new)

        dg = float(np.linalg.norm(xi_new - self.goal))
        if dg <= goal_tol and self._segment_ok(xi_new, self.goal):
            goal_ids.append(new_id)
            if self.t_first is None:
                self.t_first = time.perf_counter() - t0
                self._checks_at_first = self.checks_total

        self._rewire(new_id, near_ids)
        return True

    def _rewire(self, new_id: int, near_ids: set[int]) -> None:
        tree = self.tree
        cfg = self.cfg
        pid = tree.parent[new_id]
        for i in sorted(near_ids):
            if i in (0, pid, new_id):
                continue
            d = float(np.linalg.norm(tree.pos[i] - tree.pos[new_id]))
            if d < 1e-12:
                continue
            u_out = (tree.pos[i] - tree.pos[new_id]) / d
            ae = turn_accel_energy(tree.incoming[new_id], u_out, cfg.v_ref, cfg.dt)
            ec = cfg.w_L * d / cfg.d_ref + cfg.w_A * ae
            cand = tree.cost[new_id] + ec
            if cand < tree.cost[i] and self._segment_ok(tree.pos[new_id], tree.pos[i]):
                if self.track_rewires:
                    before = sum(tree.cost)
                self._reparent(i, new_id, ec, u_out)
                if self.track_rewires:
                    self.rewire_cost_log.append((before, sum(tree.cost)))

    def _reparent(self, i: int, new_parent: int, ec: float, u_out: np.ndarray) -> None:
        tree = self.tree
        tree.children[tree.parent[i]].remove(i)
        tree.parent[i] = new_parent
        tree.children[new_parent].append(i)
        tree.incoming[i] = u_out
        tree.edge_cost_in[i] = ec
        tree.turn_in[i] = turn_angle(tree.incoming[new_parent], u_out)
        # children of i keep their incoming directions, but the turning term of
        # their inbound edges depends on i's (changed) incoming direction
        cfg = self.cfg
        for c in tree.children[i]:
            ae = turn_accel_energy(tree.incoming[i], tree.incoming[c], cfg.v_ref, cfg.dt)
            d = float(np.linalg.norm(tree.pos[c] - tree.pos[i]))
            tree.edge_cost_in[c] = cfg.w_L * d / cfg.d_ref + cfg.w_A * ae
            tree.turn_in[c] = turn_angle(tree.incoming[i], tree.incoming[c])
        # refresh cost-to-come and turning sums down the affected subtree
        stack = [i]
        while stack:
            v = stack.pop()
            p = tree.parent[v]
            tree.cost[v] = tree.cost[p] + tree.edge_cost_in[v]
            tree.cum_turning[v] = tree.cum_turning[p] + tree.turn_in[v]
            stack.extend(tree.children[v])

    # -- path extraction -----------------------------------------------------

    def _extract(self, goal_ids: list[int], goal_tol: float) -> PathResult | None:
        if not goal_ids:
            return None
        tree = self.tree
        cfg = self.cfg
        best = None
        for g in goal_ids:
            dg = float(np.linalg.norm(self.goal - tree.pos[g]))
            if dg < 1e-12:
                total = tree.cost[g]
            else:
                u_out = (self.goal - tree.pos[g]) / dg
                if tree.incoming[g] is None:
                    ae = 0.0
                else:
                    ae = turn_accel_energy(tree.incoming[g], u_out, cfg.v_ref, cfg.dt)
                total = tree.cost[g] + cfg.w_L * dg / cfg.d_ref + cfg.w_A * ae
            if best is None or total < best[0]:
                best = (total, g, dg)

        total, g, dg = best
        chain = []
        v = g
        while v is not None:
            chain.append(v)
            v = tree.parent[v]
        chain.reverse()
        waypoints = [tree.pos[v] for v in chain]
        radii = [tree.clearance_r[v] for v in chain]
        if dg >= 1e-12:
            waypoints.append(self.goal.copy())
            radii.append(self._goal_clearance)
        waypoints = np.array(waypoints)
        radii = np.array(radii)

        diffs = np.diff(waypoints, axis=0)
        seg_len = np.linalg.norm(diffs, axis=1)
        length = float(seg_len.sum())
        turning = 0.0
        for a, b in zip(diffs[:-1], diffs[1:]):
            turning += turn_angle(a / np.linalg.norm(a), b / np.linalg.norm(b))

        return PathResult(
            waypoints=waypoints,
            length=length,
            turning_sum=turning,
            min_clearance=float(radii.min()),
            cost=float(total),
            t_first=float(self.t_first),
            collision_checks=self.collision_checks,
            effective_samples=self.effective_samples,
            total_samples=self.total_samples,
            clearance_radii=radii,
            precompute_time=self.precompute_time,
            checks_total=self.checks_total,
        )


def plan(envmap, start, goal, sampler_cfg=None, potential_cfg=None, step_cfg=None,
         cfg=None, rng=None) -> PathResult | None:
    """Convenience wrapper: build a Planner and run one search."""
    return Planner(envmap, start, goal, sampler_cfg, potential_cfg, step_cfg,
                   cfg, rng).plan()


# -- exports ------------------------------------------------------------------

def path_to_dict(path: PathResult) -> dict:
    return {
        "waypoints": path.waypoints.tolist(),
        "clearance_radii": path.clearance_radii.tolist(),
        "metrics": {
            "length_m": path.length,
            "turning_sum_rad": path.turning_sum,
            "min_clearance_m": path.min_clearance,
            "cost": path.cost,
            "t_first_s": path.t_first,
            "collision_checks": path.collision_checks,
            "collision_checks_total": path.checks_total,
            "effective_samples": path.effective_samples,
            "total_samples": path.total_samples,
            "precompute_time_s": path.precompute_time,
        },
    }


def save_path_json(path: PathResult, file) -> None:
    with open(file, "w") as fh:
        json.dump(path_to_dict(path), fh, indent=2)
        fh.write("\n")


def load_waypoints_json(file) -> np.ndarray:
    with open(file) as fh:
        return np.asarray(json.load(fh)["waypoints"], dtype=float)


def tree_to_csv(tree: Tree, file) -> None:
    with open(file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "z", "parent", "cost", "clearance_r",
                         "cum_turning"])
        for i in range(len(tree)):
            p = tree.pos[i]
            writer.writerow([
                i, repr(p[0]), repr(p[1]), repr(p[2]),
                "" if tree.parent[i] is None else tree.parent[i],
                repr(tree.cost[i]), repr(tree.clearance_r[i]),
                repr(tree.cum_turning[i]),
            ])
