"""Discrete action set, reward and one-step dynamics of the navigation task."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .arena import Arena

# Episode length cap (steps)
STEP_LIMIT = 750

# Action magnitudes
FORWARD_SPEEDS_MPS = tuple(float(v) for v in np.linspace(1.0, 5.0, 10))
BACKWARD_SPEEDS_MPS = tuple(-float(v) for v in np.linspace(1.0, 5.0, 5))
YAW_RIGHT_DEG = (108.0, 54.0, 27.0, 13.5, 6.75)
YAW_LEFT_DEG = (-216.0, -108.0, -54.0, -27.0, -13.5)

# Starts keep this far from walls and obstacles
START_MARGIN_M = 0.5


class ActionError(ValueError):
    """Action index outside the action table."""


class EpisodeFinishedError(RuntimeError):
    """Step requested after the episode's step budget."""


class Outcome(Enum):
    RUNNING = "running"
    GOAL = "goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Action:
    kind: str  # forward, backward or yaw
    velocity_mps: float = 0.0
    yaw_deg: float = 0.0  # positive turns right (clockwise)


@dataclass(frozen=True)
class ActionTable:
    actions: tuple[Action, ...]
    t_max_s: float = 1.0

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def default(cls) -> ActionTable:
        """25 actions: 10 forward, 5 backward, 5 yaw-right, 5 yaw-left."""
        actions = (
            [Action("forward", v) for v in FORWARD_SPEEDS_MPS]
            + [Action("backward", v) for v in BACKWARD_SPEEDS_MPS]
            + [Action("yaw", yaw_deg=d) for d in YAW_RIGHT_DEG]
            + [Action("yaw", yaw_deg=d) for d in YAW_LEFT_DEG]
        )
        return cls(tuple(actions))


@dataclass(frozen=True)
class RewardParams:
    goal_bonus: float = 1000.0
    crash_penalty: float = 100.0
    step_penalty: float = 1.0
    delta: float = 1.0  # weight of the slow-motion term
    goal_radius_m: float = 1.0
    v_max_mps: float = 2.5  # speed at which the slow-motion term vanishes


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float  # radians, counter-clockwise from +x
    speed: float  # signed velocity of the last action
    goal_x: float
    goal_y: float
    step_index: int = 0

    @property
    def goal_distance(self) -> float:
        return math.hypot(self.goal_x - self.x, self.goal_y - self.y)

    @property
    def goal_bearing(self) -> float:
        """Goal direction relative to the heading, wrapped to [-pi, pi)."""
        return wrap_angle(math.atan2(self.goal_y - self.y, self.goal_x - self.x) - self.heading)


@dataclass(frozen=True)
class StepResult:
    state: AgentState
    reward: float
    done: bool
    outcome: Outcome


def wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


def reward(
    alpha: float | np.ndarray,
    beta: float | np.ndarray,
    d_goal: float | np.ndarray,
    v_now: float | np.ndarray,
    params: RewardParams = RewardParams(),
    t_max: float = 1.0,
) -> float | np.ndarray:
    """goal_bonus*alpha - crash_penalty*beta - d_goal - delta*d_slow - step_penalty.

    ``d_slow = (v_max - min(|v_now|, v_max)) * t_max`` penalizes moving slower
    than v_max. Works elementwise on arrays.
    """
    v = np.minimum(np.abs(v_now), params.v_max_mps)
    d_slow = (params.v_max_mps - v) * t_max
    r = (
        params.goal_bonus * np.asarray(alpha, dtype=np.float64)
        - params.crash_penalty * np.asarray(beta, dtype=np.float64)
        - d_goal
        - params.delta * d_slow
        - params.step_penalty
    )
    return float(r) if np.ndim(r) == 0 else r


def _goal_entry(state: AgentState, dx: float, dy: float, radius: float) -> float | None:
    """Earliest segment parameter in [0, 1] inside the goal disc, if any."""
    px, py = state.x - state.goal_x, state.y - state.goal_y
    a = dx * dx + dy * dy
    b = 2 * (dx * px + dy * py)
    c = px * px + py * py - radius * radius
    if c <= 0:
        return 0.0
    disc = b * b - 4 * a * c
    if a == 0 or disc < 0:
        return None
    t = (-b - math.sqrt(disc)) / (2 * a)
    return t if 0.0 <= t <= 1.0 else None


def step(
    arena: Arena,
    state: AgentState,
    action: int,
    table: ActionTable | None = None,
    params: RewardParams = RewardParams(),
) -> StepResult:
    """Apply one action for ``t_max`` seconds.

    Yaw actions rotate in place. Velocity actions move along the heading; the
    path is checked for the goal disc and for walls/obstacles, whichever comes
    first ends the episode. The agent stops at a collision point. The goal
    distance term is zero on the step that reaches the goal.

    Raises:
        ActionError: Unknown action index
        EpisodeFinishedError: Step budget already used
    """
    table = table or DEFAULT_ACTIONS
    if not 0 <= action < len(table):
        raise ActionError(f"action {action} outside [0, {len(table)})")
    if state.step_index >= STEP_LIMIT:
        raise EpisodeFinishedError(f"episode already ran {STEP_LIMIT} steps")

    act = table.actions[action]
    x, y, heading = state.x, state.y, state.heading
    reached = crashed = False
    if act.kind == "yaw":
        heading = wrap_angle(heading - math.radians(act.yaw_deg))
        velocity = 0.0
    else:
        velocity = act.velocity_mps
        length = abs(velocity) * table.t_max_s
        direction = heading if velocity >= 0 else heading + math.pi
        dx, dy = length * math.cos(direction), length * math.sin(direction)
        hit = float(arena.cast_rays(x, y, np.array([direction]))[0])
        t_hit = hit / length if hit < length else None
        t_goal = _goal_entry(state, dx, dy, params.goal_radius_m)
        if t_goal is not None and (t_hit is None or t_goal <= t_hit):
            reached = True
            x, y = x + t_goal * dx, y + t_goal * dy
        elif t_hit is not None:
            crashed = True
            x, y = x + t_hit * dx, y + t_hit * dy
        else:
            x, y = x + dx, y + dy

    nxt = replace(state, x=x, y=y, heading=heading, speed=velocity, step_index=state.step_index + 1)
    if reached:
        outcome = Outcome.GOAL
    elif crashed:
        outcome = Outcome.COLLISION
    elif nxt.step_index >= STEP_LIMIT:
        outcome = Outcome.TIMEOUT
    else:
        outcome = Outcome.RUNNING

    alpha = 1.0 if outcome is Outcome.GOAL else 0.0
    beta = 1.0 if outcome in (Outcome.COLLISION, Outcome.TIMEOUT) else 0.0
    d_goal = 0.0 if reached else nxt.goal_distance
    r = reward(alpha, beta, d_goal, velocity, params, table.t_max_s)
    return StepResult(nxt, r, outcome is not Outcome.RUNNING, outcome)


def reset_episode(
    arena: Arena,
    rng: np.random.Generator,
    zone: int | None = None,
    zones: int = 4,
    params: RewardParams = RewardParams(),
) -> AgentState:
    """Random start and goal in free space.

    With ``zone`` k of ``zones``, the goal lies within (k+1)/zones of the arena
    diagonal from the start; ``None`` places it anywhere.
    """
    start = arena.sample_free_point(rng, margin=START_MARGIN_M)
    max_dist = arena.spec.diagonal_m
    if zone is not None:
        max_dist *= (zone + 1) / zones
    goal = arena.sample_free_point(rng, near=start, min_dist=2 * params.goal_radius_m, max_dist=max_dist)
    heading = float(rng.uniform(-math.pi, math.pi))
    return AgentState(start[0], start[1], heading, 0.0, goal[0], goal[1], 0)


DEFAULT_ACTIONS = ActionTable.default()
