"""Multi-seed ablation benchmark harness.

Runs the planner variants over a common seeded trial set, scores failures
with the penalized-metric rule (failed trials get 1.1x the worst successful
value so rankings include them), aggregates per-variant summaries, and
generates seeded box-field environments.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .env import EnvironmentMap, Obstacle, Workspace, environment_from_dict, \
    environment_to_dict, save_environment
from .extend import PotentialConfig, StepConfig
from .planner import InfeasibleInputError, Planner, PlannerConfig, VARIANTS
from .sampler import SamplerConfig


class GenerationError(RuntimeError):
    """Obstacle field generation could not reach the requested density."""


@dataclass
class TrialRecord:
    seed: int
    variant: str
    success: bool
    t_first: float | None
    turning_sum: float | None
    path_length: float | None
    effective_ratio: float
    collision_checks: int
    checks_total: int = 0
    min_clearance: float | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "variant": self.variant,
            "success": self.success,
            "t_first_s": self.t_first,
            "turning_sum_rad": self.turning_sum,
            "path_length_m": self.path_length,
            "effective_ratio": self.effective_ratio,
            "collision_checks": self.collision_checks,
            "collision_checks_total": self.checks_total,
            "min_clearance_m": self.min_clearance,
        }


@dataclass
class RunSettings:
    """Everything a trial needs besides its variant and seed."""

    start: np.ndarray
    goal: np.ndarray
    sampler_cfg: SamplerConfig = field(default_factory=SamplerConfig)
    potential_cfg: PotentialConfig = field(default_factory=PotentialConfig)
    step_cfg: StepConfig = field(default_factory=StepConfig)
    planner_cfg: PlannerConfig = field(default_factory=PlannerConfig)

    def __post_init__(self):
        self.start = np.asarray(self.start, float)
        self.goal = np.asarray(self.goal, float)


@dataclass
class BenchConfig:
    seeds: int = 50
    variants: tuple = VARIANTS
    workers: int | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")


def run_trial(variant: str, seed: int, envmap: EnvironmentMap,
              settings: RunSettings) -> TrialRecord | None:
    """One seeded planning run; None when the instance itself is invalid."""
    rng = np.random.default_rng(seed)
    cfg = replace(settings.planner_cfg, variant=variant)
    try:
        planner = Planner(envmap, settings.start, settings.goal,
                          settings.sampler_cfg, settings.potential_cfg,
                          settings.step_cfg, cfg, rng)
    except InfeasibleInputError as exc:
        warnings.warn(f"trial (variant={variant}, seed={seed}) invalid: {exc}")
        return None
    result = planner.plan()
    ratio = planner.effective_samples / max(planner.total_samples, 1)
    if result is None:
        return TrialRecord(seed, variant, False, None, None, None, ratio,
                           planner.collision_checks, planner.checks_total)
    return TrialRecord(seed, variant, True, result.t_first, result.turning_sum,
                       result.length, ratio, result.collision_checks,
                       result.checks_total, result.min_clearance)


def _trial_worker(args):
    variant, seed, env_dict, settings = args
    envmap = environment_from_dict(env_dict)
    record = run_trial(variant, seed, envmap, settings)
    return (variant, seed, record)


def run_bench(envmap: EnvironmentMap, settings: RunSettings, cfg: BenchConfig,
              seeds: list[int] | None = None) -> list[TrialRecord]:
    """Run every (variant, seed) trial, in parallel when workers > 1."""
    if seeds is None:
        seeds = list(range(cfg.seeds))
    jobs = [(v, s) for v in cfg.variants for s in seeds]
    workers = cfg.workers if cfg.workers is not None else (os.cpu_count() or 1)
    records: dict[tuple, TrialRecord | None] = {}
    if workers <= 1 or len(jobs) == 1:
        for v, s in jobs:
            records[(v, s)] = run_trial(v, s, envmap, settings)
    else:
        env_dict = environment_to_dict(envmap)
        args = [(v, s, env_dict, settings) for v, s in jobs]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for variant, seed, record in pool.map(_trial_worker, args):
                records[(variant, seed)] = record
    ordered = [records[key] for key in sorted(records, key=lambda k: (k[0], k[1]))]
    return [r for r in ordered if r is not None]


# -- penalized metrics -----------------------------------------------------------

METRICS = {
    "turning_sum": lambda r: r.turning_sum,
    "path_length": lambda r: r.path_length,
    "t_first": lambda r: r.t_first,
}


def penalize(records: list[TrialRecord], metric: str,
             pool_across_variants: bool = False) -> dict[str, np.ndarray | None]:
    """Per-variant penalized metric vectors: successes keep their value,
    failures get 1.1x the max over the success pool of that variant (or of
    all variants pooled when `pool_across_variants`).

    A variant whose success pool is empty has an undefined penalty and maps
    to None.
    """
    get = METRICS[metric]
    variants = sorted({r.variant for r in records})
    pooled_max = None
    if pool_across_variants:
        vals = [get(r) for r in records if r.success]
        pooled_max = max(vals) if vals else None
    out = {}
    for v in variants:
        rows = [r for r in records if r.variant == v]
        succ = [get(r) for r in rows if r.success]
        if pool_across_variants:
            cap = pooled_max
        else:
            cap = max(succ) if succ else None
        if cap is None and any(not r.success for r in rows):
            out[v] = None
            continue
        out[v] = np.array([get(r) if r.success else 1.1 * cap for r in rows])
    return out


def aggregate(records: list[TrialRecord],
              pool_across_variants: bool = False) -> dict:
    """Per-variant summary table (permutation-invariant in trial order)."""
    records = sorted(records, key=lambda r: (r.variant, r.seed))
    variants = sorted({r.variant for r in records})
    penalized = {
        metric: penalize(records, metric, pool_across_variants)
        for metric in ("turning_sum", "path_length")
    }
    table = {}
    for v in variants:
        rows = [r for r in records if r.variant == v]
        succ = [r for r in rows if r.success]
        entry = {
            "trials": len(rows),
            "successes": len(succ),
            "success_rate_pct": 100.0 * len(succ) / len(rows),
            "mean_effective_ratio": float(np.mean([r.effective_ratio for r in rows])),
            "mean_collision_checks": float(np.mean([r.collision_checks for r in rows])),
            "mean_t_first_s": float(np.mean([r.t_first for r in succ])) if succ else None,
        }
        for metric, key in (("turning_sum", "turning_sum_rad"),
                            ("path_length", "path_length_m")):
            vals = [METRICS[metric](r) for r in succ]
            entry[f"mean_{key}"] = float(np.mean(vals)) if vals else None
            entry[f"median_{key}"] = float(np.median(vals)) if vals else None
            pen = penalized[metric].get(v)
            if pen is None:
                entry[f"mean_penalized_{key}"] = None
                entry[f"median_penalized_{key}"] = None
            else:
                entry[f"mean_penalized_{key}"] = float(np.mean(pen))
                entry[f"median_penalized_{key}"] = float(np.median(pen))
        table[v] = entry
    return table


def write_records(records: list[TrialRecord], out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    rows = [r.to_dict() for r in records]
    with open(os.path.join(out_dir, "records.json"), "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
    if rows:
        with open(os.path.join(out_dir, "records.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)


def write_summary(summary: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    variants = sorted(summary)
    if not variants:
        return
    fields = ["variant"] + list(summary[variants[0]].keys())
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for v in variants:
            writer.writerow([v] + [summary[v][k] for k in fields[1:]])


# -- environment generation -------------------------------------------------------

def _boxes_intersect(c1, h1, c2, h2, gap: float = 0.0) -> bool:
    return bool(np.all(np.abs(c1 - c2) < h1 + h2 + gap))


def _box_point_distance(center, half, p) -> float:
    return float(np.linalg.norm(np.maximum(np.abs(p - center) - half, 0.0)))


def _make_walls(ws, rng, walls, door_width, wall_thickness, keep_clear, exps,
                fake_doors=2, fake_width=1.6):
    """Floor-to-ceiling dividing walls, alternating between x- and y-normal
    orientations across the arena.

    Each wall gets one true door of `door_width` plus `fake_doors` decoy
    slots of `fake_width`; decoys are meant to be narrower than the tube
    diameter, so they look open to a point sampler but reject the
    formation."""
    out = []
    for w in range(walls):
        axis = w % 2  # wall normal: x, then y, ...
        other = 1 - axis
        frac = (w + 1) / (walls + 1)
        coord = ws.min_corner[axis] + frac * ws.extent[axis] + rng.uniform(-2.0, 2.0)
        lo = ws.min_corner[other]
        hi = ws.max_corner[other]
        span = hi - lo
        widths = [door_width] + [fake_width] * fake_doors
        rng.shuffle(widths)
        cuts = []
        for i, width in enumerate(widths):
            a = lo + (i + rng.uniform(0.15, 0.85)) * span / len(widths) - width / 2
            a = float(np.clip(a, lo + 1.0, hi - 1.0 - width))
            cuts.append((a, a + width))
        cuts.sort()
        segments = []
        cursor = lo
        for a, b in cuts:
            if a - cursor > 0.2:
                segments.append((cursor, a))
            cursor = max(cursor, b)
        if hi - cursor > 0.2:
            segments.append((cursor, hi))
        for a, b in segments:
            half = np.empty(3)
            center = np.empty(3)
            half[axis] = wall_thickness / 2.0
            center[axis] = coord
            half[other] = (b - a) / 2.0
            center[other] = (a + b) / 2.0
            half[2] = ws.extent[2] / 2.0
            center[2] = ws.center[2]
            if any(_box_point_distance(center, half, np.asarray(p, float)) <= r
                   for p, r in keep_clear):
                continue
            out.append(Obstacle(center, half, a=exps[0], b=exps[1]))
    return out


def generate_env(
    density: float,
    seed: int,
    arena=((0.0, 0.0, 0.0), (50.0, 50.0, 15.0)),
    size_range=(0.75, 2.0),
    keep_clear=(),
    shape_exponents=(2.0, 2.0),
    max_attempts: int = 20000,
    gap: float = 0.25,
    full_height: bool = False,
    walls: int = 0,
    door_width: float = 3.2,
    wall_thickness: float = 0.8,
    clusters: int = 0,
    cluster_sigma: float = 5.0,
    background_fraction: float = 0.0,
    lanes: int = 0,
    lane_radius: float = 2.0,
    lane_endpoints=None,
    slalom: int = 0,
    corridor_width: float = 2.6,
) -> EnvironmentMap:
    """Seeded random non-overlapping box field of a target volume fraction.

    `keep_clear` is a list of (point, radius) pairs that every box must
    stay strictly farther than `radius` from. `gap` is the minimum box-box
    separation, which sets the corridor width of the field. With
    `full_height` the boxes become floor-to-ceiling pillars (the xy
    footprint is drawn from `size_range`). `walls` adds that many
    floor-to-ceiling dividing walls across the arena, each pierced by two
    randomly placed doors of `door_width`; wall volume counts toward the
    density target. Non-overlapping boxes make the volume fraction exact by
    construction; a Monte-Carlo audit then agrees up to sampling noise.
    """
    ws = Workspace(*[np.asarray(c, float) for c in arena])
    if density < 0 or density >= 0.8:
        raise ValueError("density must be in [0, 0.8)")
    rng = np.random.default_rng(seed)
    target_vol = density * ws.volume
    boxes: list[Obstacle] = []
    vol = 0.0
    attempts = 0
    for wall in _make_walls(ws, rng, walls, door_width, wall_thickness,
                            keep_clear, shape_exponents):
        boxes.append(wall)
        vol += float(np.prod(2 * wall.half_extents))
    anchors = ws.min_corner + rng.uniform(0.1, 0.9, size=(clusters, 3)) * ws.extent
    lane_pts = _make_lanes(ws, rng, lanes, lane_endpoints)
    if slalom > 0:
        slab_boxes, corridor_pts = _make_slalom(ws, rng, slalom, corridor_width,
                                                keep_clear, shape_exponents)
        for box in slab_boxes:
            boxes.append(box)
            vol += float(np.prod(2 * box.half_extents))
        lane_pts = (corridor_pts if lane_pts is None
                    else np.vstack([lane_pts, corridor_pts]))
        lane_radius = max(lane_radius, corridor_width / 2.0 + 0.3)
    while vol < target_vol:
        if attempts >= max_attempts:
            raise GenerationError(
                f"could not reach density {density} after {max_attempts} attempts"
            )
        attempts += 1
        half = rng.uniform(size_range[0], size_range[1], size=3)
        if full_height:
            half[2] = ws.extent[2] / 2.0
        lo = ws.min_corner + half
        hi = ws.max_corner - half
        if clusters > 0 and rng.uniform() >= background_fraction:
            anchor = anchors[int(rng.integers(clusters))]
            center = anchor + rng.normal(0.0, cluster_sigma, size=3)
            center = np.clip(center, lo, np.maximum(lo, hi))
        else:
            center = np.empty(3)
            for axis in range(3):
                center[axis] = (
                    rng.uniform(lo[axis], hi[axis]) if lo[axis] < hi[axis]
                    else ws.center[axis]
                )
        if any(_box_point_distance(center, half, np.asarray(p, float)) <= r
               for p, r in keep_clear):
            continue
        if lane_pts is not None and np.any(
            np.linalg.norm(np.maximum(np.abs(lane_pts - center) - half, 0.0), axis=1)
            <= lane_radius
        ):
            continue
        if any(_boxes_intersect(center, half, o.center, o.half_extents, gap)
               for o in boxes):
            continue
        boxes.append(Obstacle(center, half, a=shape_exponents[0], b=shape_exponents[1]))
        vol += float(np.prod(2 * half))
    return EnvironmentMap(ws, boxes)


def _make_slalom(ws, rng, n_slabs, width, keep_clear, exps):
    """Thick full-height slabs, each pierced by one Z-shaped corridor of the
    given width: enter along x, jog sideways along y inside the slab, exit
    along x. The jog makes the only route through each slab long and bent,
    so it can only be threaded by a chain of short, centered extensions.

    Returns (boxes, corridor_points); the points trace the corridor
    centerlines so the random fill can be kept out of them.
    """
    boxes = []
    pts = []
    lo, hi = ws.min_corner, ws.max_corner
    zc, zh = ws.center[2], ws.extent[2] / 2.0
    for i in range(n_slabs):
        frac = (i + 1) / (n_slabs + 1)
        thick = rng.uniform(4.0, 6.5)
        x0 = lo[0] + frac * ws.extent[0] - thick / 2 + rng.uniform(-1.5, 1.5)
        x1 = x0 + thick
        xm = x0 + rng.uniform(0.3, 0.7) * (thick - width)
        y1 = rng.uniform(lo[1] + 3.0, hi[1] - 3.0 - width)
        jog = rng.uniform(5.0, 10.0) * rng.choice([-1.0, 1.0])
        y2 = float(np.clip(y1 + jog, lo[1] + 3.0, hi[1] - 3.0 - width))
        ylo, yhi = min(y1, y2), max(y1, y2)

        def add_box(xa, xb, ya, yb):
            if xb - xa < 0.15 or yb - ya < 0.15:
                return
            center = np.array([(xa + xb) / 2, (ya + yb) / 2, zc])
            half = np.array([(xb - xa) / 2, (yb - ya) / 2, zh])
            if any(_box_point_distance(center, half, np.asarray(p, float)) <= r
                   for p, r in keep_clear):
                return
            boxes.append(Obstacle(center, half, a=exps[0], b=exps[1]))

        add_box(x0, xm, lo[1], y1)
        add_box(x0, xm, y1 + width, hi[1])
        add_box(xm + width, x1, lo[1], y2)
        add_box(xm + width, x1, y2 + width, hi[1])
        add_box(xm, xm + width, lo[1], ylo)
        add_box(xm, xm + width, yhi + width, hi[1])

        # corridor centerline: entry leg, jog, exit leg
        zmid = zc
        legs = [
            (np.array([x0 - 1.0, y1 + width / 2, zmid]),
             np.array([xm + width / 2, y1 + width / 2, zmid])),
            (np.array([xm + width / 2, y1 + width / 2, zmid]),
             np.array([xm + width / 2, y2 + width / 2, zmid])),
            (np.array([xm + width / 2, y2 + width / 2, zmid]),
             np.array([x1 + 1.0, y2 + width / 2, zmid])),
        ]
        for p0, p1 in legs:
            k = max(2, int(np.linalg.norm(p1 - p0) / 0.4))
            for t in np.linspace(0.0, 1.0, k):
                pts.append(p0 + t * (p1 - p0))
    return boxes, np.array(pts)


def _make_lanes(ws, rng, lanes, endpoints):
    """Dense point samples along seeded winding polylines; boxes must keep
    clear of them, which carves guaranteed-traversable lanes."""
    if lanes <= 0:
        return None
    if endpoints is None:
        a = ws.min_corner + np.array([0.1, 0.05, 0.5]) * ws.extent
        b = ws.min_corner + np.array([0.85, 0.85, 0.35]) * ws.extent
    else:
        a, b = (np.asarray(p, float) for p in endpoints)
    pts = []
    for _ in range(lanes):
        mids = [
            a + (b - a) * f + rng.uniform(-0.35, 0.35, size=3) * ws.extent
            for f in (0.22, 0.45, 0.65, 0.85)
        ]
        knots = [a] + [ws.clamp(m) for m in mids] + [b]
        for p0, p1 in zip(knots[:-1], knots[1:]):
            n = max(2, int(np.linalg.norm(p1 - p0) / 0.5))
            for t in np.linspace(0.0, 1.0, n):
                pts.append(p0 + t * (p1 - p0))
    return np.array(pts)


def generate_env_file(path, **kwargs) -> EnvironmentMap:
    envmap = generate_env(**kwargs)
    save_environment(envmap, path)
    return envmap
