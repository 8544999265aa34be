"""Policy evaluation over freshly generated arenas."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ..quantnet import NetworkSpec, WeightSet
from .arena import Arena, ArenaSpec, generate_env
from .dynamics import (
    DEFAULT_ACTIONS,
    ActionTable,
    AgentState,
    STEP_LIMIT,
    Outcome,
    RewardParams,
    reset_episode,
    step,
    wrap_angle,
)
from .sensors import sense

# policy(observation, state, arena) -> action index
Policy = Callable[[np.ndarray, AgentState, Arena], int]


@dataclass(frozen=True)
class EvaluationReport:
    episodes: int
    successes: int
    collisions: int
    timeouts: int
    mean_reward: float
    mean_steps: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0

    def to_dict(self) -> dict:
        data = dict(self.__dict__)
        data["success_rate"] = self.success_rate
        return data


def episode_arena(arena_spec: ArenaSpec, seed: int, episode: int, obstacle_range: tuple[int, int] | None = None) -> Arena:
    """Arena for one episode; obstacle count drawn from ``obstacle_range`` when given."""
    rng = np.random.default_rng([seed, episode])
    count = arena_spec.obstacle_count
    if obstacle_range is not None:
        count = int(rng.integers(obstacle_range[0], obstacle_range[1] + 1))
    return generate_env(replace(arena_spec, obstacle_count=count, seed=int(rng.integers(2**31))))


def arena_factory(
    arena_spec: ArenaSpec, seed: int, obstacle_range: tuple[int, int] | None = None
) -> Callable[[int], Arena]:
    def factory(episode: int) -> Arena:
        return episode_arena(arena_spec, seed, episode, obstacle_range)

    return factory


def evaluate_policy(
    policy: Policy,
    arena_spec: ArenaSpec,
    episodes: int = 100,
    seed: int = 0,
    obstacle_range: tuple[int, int] | None = None,
    table: ActionTable = DEFAULT_ACTIONS,
    rewards: RewardParams = RewardParams(),
) -> EvaluationReport:
    """Run ``episodes`` full episodes with goals anywhere in the arena."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    successes = collisions = timeouts = 0
    total_reward = 0.0
    total_steps = 0
    for k in range(episodes):
        arena = episode_arena(arena_spec, seed, k, obstacle_range)
        rng = np.random.default_rng([seed, k, 1])
        state = reset_episode(arena, rng, None, 1, rewards)
        while True:
            result = step(arena, state, policy(sense(arena, state), state, arena), table, rewards)
            total_reward += result.reward
            state = result.state
            if result.done:
                break
        total_steps += state.step_index
        if result.outcome is Outcome.GOAL:
            successes += 1
        elif result.outcome is Outcome.COLLISION:
            collisions += 1
        else:
            timeouts += 1
    return EvaluationReport(
        episodes=episodes,
        successes=successes,
        collisions=collisions,
        timeouts=timeouts,
        mean_reward=total_reward / episodes,
        mean_steps=total_steps / episodes,
    )


def greedy_policy(spec: NetworkSpec, weights: WeightSet) -> Policy:
    """Argmax of the network's Q-values (lowest index on ties)."""
    weights.check(spec)
    layers = list(zip(weights.weights, weights.biases, (l.activation for l in spec.layers)))

    def policy(obs: np.ndarray, state: AgentState, arena: Arena) -> int:
        h = obs
        for w, b, activation in layers:
            h = w @ h + b
            if activation == "relu":
                h = np.maximum(h, 0)
        return int(np.argmax(h))

    return policy


def toward_goal_policy(table: ActionTable = DEFAULT_ACTIONS) -> Policy:
    """Scripted oracle: turn toward the goal, then fly straight at it.

    Forward steps never overshoot the goal distance or the free distance ahead.
    """
    yaws = [(i, math.radians(a.yaw_deg)) for i, a in enumerate(table.actions) if a.kind == "yaw"]
    forwards = sorted((a.velocity_mps, i) for i, a in enumerate(table.actions) if a.kind == "forward")

    def policy(obs: np.ndarray, state: AgentState, arena: Arena) -> int:
        bearing = state.goal_bearing
        best, best_err = None, abs(bearing)
        for i, yaw in yaws:
            err = abs(wrap_angle(bearing + yaw))
            if err < best_err - 1e-9:
                best, best_err = i, err
        if best is not None:
            return best
        reach = min(state.goal_distance, float(arena.cast_rays(state.x, state.y, np.array([state.heading]))[0]))
        choice = forwards[0][1]
        for velocity, i in forwards:
            if velocity * table.t_max_s <= reach:
                choice = i
        return choice

    return policy


def random_policy(seed: int = 0, table: ActionTable = DEFAULT_ACTIONS) -> Policy:
    rng = np.random.default_rng(seed)

    def policy(obs: np.ndarray, state: AgentState, arena: Arena) -> int:
        return int(rng.integers(len(table)))

    return policy


def evaluate(
    weights: WeightSet,
    spec: NetworkSpec,
    arena_spec: ArenaSpec,
    episodes: int = 100,
    seed: int = 0,
    obstacle_range: tuple[int, int] | None = None,
) -> EvaluationReport:
    """Success rate of the greedy policy defined by ``weights``."""
    return evaluate_policy(greedy_policy(spec, weights), arena_spec, episodes, seed, obstacle_range)


def sample_observations(
    arena_spec: ArenaSpec,
    count: int,
    seed: int = 0,
    obstacle_range: tuple[int, int] | None = None,
    table: ActionTable = DEFAULT_ACTIONS,
) -> np.ndarray:
    """Observations from random states, used to calibrate activation scales."""
    rng = np.random.default_rng([seed, 2])
    rows = []
    for k in range(count):
        arena = episode_arena(arena_spec, seed, k, obstacle_range)
        state = reset_episode(arena, rng)
        action = table.actions[int(rng.integers(len(table)))]
        state = replace(state, speed=action.velocity_mps, step_index=int(rng.integers(0, STEP_LIMIT)))
        rows.append(sense(arena, state))
    return np.array(rows)
