"""Procedurally generated 2-D arenas with rectangular obstacles."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

MAX_OBSTACLES = 5
MAX_PLACEMENT_ATTEMPTS = 10_000

# Direction components below this are nudged to avoid division by zero
_AXIS_EPS = 1e-12


class ArenaGenerationError(RuntimeError):
    """Placement gave up after MAX_PLACEMENT_ATTEMPTS tries."""


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned box, corners in metres."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (
            self.xmin - margin <= x <= self.xmax + margin
            and self.ymin - margin <= y <= self.ymax + margin
        )

    def overlaps(self, other: Obstacle, gap: float = 0.0) -> bool:
        return not (
            self.xmax + gap <= other.xmin
            or other.xmax + gap <= self.xmin
            or self.ymax + gap <= other.ymin
            or other.ymax + gap <= self.ymin
        )


@dataclass(frozen=True)
class ArenaSpec:
    width_m: float = 25.0
    height_m: float = 25.0
    obstacle_count: int = 3  # 0 gives a free arena; task configs default to [1, MAX_OBSTACLES]
    seed: int = 0
    min_obstacle_m: float = 1.0
    max_obstacle_m: float = 4.0
    clearance_m: float = 0.5  # minimum gap between obstacles

    def __post_init__(self) -> None:
        if not (self.width_m > 0 and self.height_m > 0):
            raise ValueError(f"arena size must be positive, got {self.width_m}x{self.height_m}")
        if not 0 <= self.obstacle_count <= MAX_OBSTACLES:
            raise ValueError(f"obstacle_count {self.obstacle_count} outside [0, {MAX_OBSTACLES}]")
        if not 0 < self.min_obstacle_m <= self.max_obstacle_m:
            raise ValueError("obstacle size range must satisfy 0 < min <= max")

    @property
    def diagonal_m(self) -> float:
        return math.hypot(self.width_m, self.height_m)


@dataclass(frozen=True)
class Arena:
    spec: ArenaSpec
    obstacles: tuple[Obstacle, ...]

    @property
    def width(self) -> float:
        return self.spec.width_m

    @property
    def height(self) -> float:
        return self.spec.height_m

    def inside(self, x: float, y: float, margin: float = 0.0) -> bool:
        return margin <= x <= self.width - margin and margin <= y <= self.height - margin

    def is_free(self, x: float, y: float, margin: float = 0.0) -> bool:
        if not self.inside(x, y, margin):
            return False
        return not any(o.contains(x, y, margin) for o in self.obstacles)

    def sample_free_point(
        self,
        rng: np.random.Generator,
        margin: float = 0.0,
        near: tuple[float, float] | None = None,
        min_dist: float = 0.0,
        max_dist: float = math.inf,
    ) -> tuple[float, float]:
        """Uniform point outside every obstacle, optionally in a distance band around ``near``."""
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            x = float(rng.uniform(0.0, self.width))
            y = float(rng.uniform(0.0, self.height))
            if not self.is_free(x, y, margin):
                continue
            if near is not None:
                d = math.hypot(x - near[0], y - near[1])
                if d < min_dist or d > max_dist:
                    continue
            return x, y
        raise ArenaGenerationError(f"no free point found after {MAX_PLACEMENT_ATTEMPTS} attempts")

    def cast_rays(self, x: float, y: float, angles: np.ndarray) -> np.ndarray:
        """Distance from (x, y) to the first wall or obstacle along each angle (unclipped)."""
        angles = np.asarray(angles, dtype=np.float64)
        dx = np.cos(angles)
        dy = np.sin(angles)
        dx = np.where(np.abs(dx) < _AXIS_EPS, np.copysign(_AXIS_EPS, dx), dx)
        dy = np.where(np.abs(dy) < _AXIS_EPS, np.copysign(_AXIS_EPS, dy), dy)

        tx = np.where(dx > 0, (self.width - x) / dx, -x / dx)
        ty = np.where(dy > 0, (self.height - y) / dy, -y / dy)
        dist = np.maximum(np.minimum(tx, ty), 0.0)

        for o in self.obstacles:
            x1, x2 = (o.xmin - x) / dx, (o.xmax - x) / dx
            y1, y2 = (o.ymin - y) / dy, (o.ymax - y) / dy
            t_near = np.maximum(np.minimum(x1, x2), np.minimum(y1, y2))
            t_far = np.minimum(np.maximum(x1, x2), np.maximum(y1, y2))
            hit = (t_near <= t_far) & (t_far >= 0)
            dist = np.minimum(dist, np.where(hit, np.maximum(t_near, 0.0), np.inf))
        return dist

    def to_json(self) -> str:
        data = {"spec": asdict(self.spec), "obstacles": [asdict(o) for o in self.obstacles]}
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> Arena:
        data = json.loads(text)
        return cls(ArenaSpec(**data["spec"]), tuple(Obstacle(**o) for o in data["obstacles"]))


def generate_env(spec: ArenaSpec) -> Arena:
    """Place ``spec.obstacle_count`` non-overlapping boxes; same seed, same arena.

    Raises:
        ArenaGenerationError: Obstacles do not fit after MAX_PLACEMENT_ATTEMPTS draws
    """
    if spec.min_obstacle_m > min(spec.width_m, spec.height_m):
        raise ArenaGenerationError("obstacles are larger than the arena")
    rng = np.random.default_rng(spec.seed)
    obstacles: list[Obstacle] = []
    attempts = 0
    while len(obstacles) < spec.obstacle_count:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise ArenaGenerationError(
                f"placed {len(obstacles)} of {spec.obstacle_count} obstacles in {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
        w = float(rng.uniform(spec.min_obstacle_m, min(spec.max_obstacle_m, spec.width_m)))
        h = float(rng.uniform(spec.min_obstacle_m, min(spec.max_obstacle_m, spec.height_m)))
        x0 = float(rng.uniform(0.0, spec.width_m - w))
        y0 = float(rng.uniform(0.0, spec.height_m - h))
        candidate = Obstacle(x0, y0, x0 + w, y0 + h)
        if any(candidate.overlaps(o, spec.clearance_m) for o in obstacles):
            continue
        obstacles.append(candidate)
    return Arena(spec, tuple(obstacles))
