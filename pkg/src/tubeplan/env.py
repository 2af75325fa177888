"""Workspace geometry, axis-aligned box obstacles, and clearance queries.

Obstacles are axis-aligned boxes for all distance/collision computations.
Each obstacle additionally carries superquadric shape exponents (a, b) used
by the repulsive potential; the superquadric scale constants are the box
half extents, so the implicit surface hugs the box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class OutsideWorkspaceError(ValueError):
    """Query point lies outside the workspace bounds."""


class DensityEstimationError(RuntimeError):
    """Rejection sampling produced no accepted points for a region."""


def _vec3(p) -> np.ndarray:
    q = np.asarray(p, dtype=float)
    if q.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {q.shape}")
    return q


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned bounded workspace [min_corner, max_corner]."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min_corner", _vec3(self.min_corner))
        object.__setattr__(self, "max_corner", _vec3(self.max_corner))
        if not np.all(self.min_corner < self.max_corner):
            raise ValueError("workspace requires min_corner < max_corner componentwise")

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    def contains(self, points, atol: float = 0.0) -> np.ndarray | bool:
        pts = np.asarray(points, dtype=float)
        inside = np.all(
            (pts >= self.min_corner - atol) & (pts <= self.max_corner + atol), axis=-1
        )
        return bool(inside) if pts.ndim == 1 else inside

    def clamp(self, p) -> np.ndarray:
        return np.clip(np.asarray(p, dtype=float), self.min_corner, self.max_corner)

    def face_distance(self, p) -> float:
        """Distance from an interior point to the nearest workspace face."""
        p = _vec3(p)
        return float(min(np.min(p - self.min_corner), np.min(self.max_corner - p)))

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        size = 3 if n is None else (n, 3)
        return rng.uniform(self.min_corner, self.max_corner, size=size)


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned box with superquadric exponents for the smooth potential."""

    center: np.ndarray
    half_extents: np.ndarray
    a: float = 4.0
    b: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        object.__setattr__(self, "half_extents", _vec3(self.half_extents))
        if not np.all(self.half_extents > 0):
            raise ValueError("obstacle half_extents must be positive")
        if self.a < 1.0 or self.b < 1.0:
            raise ValueError("superquadric exponents a, b must be >= 1")

    @property
    def min_corner(self) -> np.ndarray:
        return self.center - self.half_extents

    @property
    def max_corner(self) -> np.ndarray:
        return self.center + self.half_extents


def superquadric_value(obs: Obstacle, p) -> float:
    """Implicit superquadric C(xi) in the obstacle's local frame.

    C < 0 strictly inside, C = 0 on the surface, C > 0 outside. The scale
    constants are the box half extents.
    """
    xi = _vec3(p) - obs.center
    f = obs.half_extents
    a, b = obs.a, obs.b
    planar = (abs(xi[0] / f[0]) ** (2 * b) + abs(xi[1] / f[1]) ** (2 * b)) ** (a / b)
    return float(planar + abs(xi[2] / f[2]) ** (2 * a) - 1.0)


class EnvironmentMap:
    """Immutable workspace + obstacle set answering clearance queries."""

    def __init__(self, workspace: Workspace, obstacles: list[Obstacle] | None = None):
        self.workspace = workspace
        self.obstacles = list(obstacles or [])
        for obs in self.obstacles:
            if not workspace.contains(obs.center):
                raise ValueError(f"obstacle center {obs.center} outside workspace")
        if self.obstacles:
            self._centers = np.array([o.center for o in self.obstacles])
            self._half = np.array([o.half_extents for o in self.obstacles])
        else:
            self._centers = np.zeros((0, 3))
            self._half = np.zeros((0, 3))

    # -- distance queries ---------------------------------------------------

    def obstacle_distance(self, points) -> np.ndarray | float:
        """Distance to the nearest obstacle surface (0 inside, +inf if none).

        Works for points anywhere, including outside the workspace; no
        boundary fallback is applied.
        """
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if not self.obstacles:
            d = np.full(pts.shape[0], np.inf)
        else:
            delta = np.abs(pts[:, None, :] - self._centers[None, :, :]) - self._half
            d = np.linalg.norm(np.maximum(delta, 0.0), axis=2).min(axis=1)
        return float(d[0]) if single else d

    def clearance(self, p) -> float:
        """Maximum collision-free radius at p (0 if inside an obstacle).

        With an empty obstacle list, falls back to the distance to the
        nearest workspace face so the radius is always finite.
        """
        p = _vec3(p)
        if not self.workspace.contains(p):
            raise OutsideWorkspaceError(f"point {p} outside workspace")
        if not self.obstacles:
            return self.workspace.face_distance(p)
        return float(self.obstacle_distance(p))

    def clearance_many(self, points) -> np.ndarray:
        """Vectorized clearance for points known to be inside the workspace."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.obstacles:
            return np.minimum(
                (pts - self.workspace.min_corner).min(axis=1),
                (self.workspace.max_corner - pts).min(axis=1),
            )
        return self.obstacle_distance(pts)

    def inside_any(self, points) -> np.ndarray:
        """Boolean mask of points lying inside at least one obstacle."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.obstacles:
            return np.zeros(pts.shape[0], dtype=bool)
        delta = np.abs(pts[:, None, :] - self._centers[None, :, :]) - self._half
        return np.any(np.all(delta <= 0.0, axis=2), axis=1)

    # -- segment queries ----------------------------------------------------

    def segment_points(self, p0, p1, resolution: float) -> np.ndarray:
        """Sample points along [p0, p1] spaced <= resolution, endpoints included."""
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        p0 = _vec3(p0)
        p1 = _vec3(p1)
        length = float(np.linalg.norm(p1 - p0))
        n = max(1, int(np.ceil(length / resolution)))
        ts = np.linspace(0.0, 1.0, n + 1)
        return p0[None, :] + ts[:, None] * (p1 - p0)[None, :]

    def segment_clear(self, p0, p1, r_min: float, resolution: float | None = None) -> bool:
        """True iff clearance >= r_min at every sample along [p0, p1].

        Default spacing min(0.25 m, r_min/2) guarantees no obstacle thinner
        than r_min slips between samples.
        """
        if resolution is None:
            resolution = default_resolution(r_min)
        pts = self.segment_points(p0, p1, resolution)
        return bool(np.all(self.clearance_many(pts) >= r_min))


def default_resolution(r_min: float) -> float:
    return min(0.25, r_min / 2.0) if r_min > 0 else 0.25


def estimate_density(
    envmap: EnvironmentMap,
    region_membership,
    n_samples: int,
    rng: np.random.Generator,
    within: tuple[np.ndarray, np.ndarray] | None = None,
    max_tries_factor: int = 100,
) -> float:
    """Monte-Carlo obstacle density of a region.

    Draws uniform points (from `within` bounds if given, else the workspace),
    keeps those accepted by the vectorized `region_membership(points)`
    predicate, and returns the fraction lying inside any obstacle.
    Deterministic for a fixed rng state.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    lo, hi = within if within is not None else (
        envmap.workspace.min_corner,
        envmap.workspace.max_corner,
    )
    accepted = 0
    hits = 0
    tries = 0
    budget = max_tries_factor * n_samples
    batch = max(64, n_samples)
    while accepted < n_samples and tries < budget:
        take = min(batch, budget - tries)
        pts = rng.uniform(lo, hi, size=(take, 3))
        tries += take
        mask = np.asarray(region_membership(pts), dtype=bool)
        kept = pts[mask]
        if kept.shape[0] == 0:
            continue
        room = n_samples - accepted
        kept = kept[:room]
        accepted += kept.shape[0]
        hits += int(np.count_nonzero(envmap.inside_any(kept)))
    if accepted == 0:
        raise DensityEstimationError("no accepted samples within rejection budget")
    return hits / accepted


# -- environment file I/O ---------------------------------------------------

def environment_to_dict(envmap: EnvironmentMap) -> dict:
    return {
        "workspace": {
            "min": envmap.workspace.min_corner.tolist(),
            "max": envmap.workspace.max_corner.tolist(),
        },
        "obstacles": [
            {
                "center": o.center.tolist(),
                "half_extents": o.half_extents.tolist(),
                "a": o.a,
                "b": o.b,
            }
            for o in envmap.obstacles
        ],
    }


def environment_from_dict(data: dict) -> EnvironmentMap:
    ws = Workspace(data["workspace"]["min"], data["workspace"]["max"])
    obstacles = [
        Obstacle(
            item["center"],
            item["half_extents"],
            a=float(item.get("a", 4.0)),
            b=float(item.get("b", 4.0)),
        )
        for item in data.get("obstacles", [])
    ]
    return EnvironmentMap(ws, obstacles)


def save_environment(envmap: EnvironmentMap, path) -> None:
    with open(path, "w") as fh:
        json.dump(environment_to_dict(envmap), fh, indent=2)
        fh.write("\n")


def load_environment(path) -> EnvironmentMap:
    with open(path) as fh:
        return environment_from_dict(json.load(fh))
