"""Deep Q-learning with experience replay, a target network and a zone curriculum."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from ..log import get_stage_logger
from ..quantnet import NetworkSpec, ShapeError, WeightSet
from .arena import Arena
from .dynamics import (
    DEFAULT_ACTIONS,
    ActionTable,
    AgentState,
    Outcome,
    RewardParams,
    StepResult,
    reset_episode,
    step,
)
from .sensors import OBSERVATION_DIM, sense

ArenaFactory = Callable[[int], Arena]

LOG_COLUMNS = ("episode", "reward", "cumulative_reward", "epsilon", "zone", "success")


class DivergenceError(RuntimeError):
    """Training loss became NaN or infinite."""


@dataclass(frozen=True)
class DQNHyper:
    total_steps: int = 200_000
    gamma: float = 0.99
    replay_size: int = 50_000
    batch_size: int = 32
    target_sync_steps: int = 1_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.3  # of total_steps
    learning_rate: float = 1e-4
    learning_starts: int = 1_000
    train_every: int = 1
    reward_scale: float = 0.01  # applied to stored transitions only
    progress_shaping: float = 10.0  # reward per metre of goal progress, stored transitions only
    double_q: bool = True  # online net picks the next action, target net scores it
    grad_clip: float = 10.0
    zones: int = 4
    zone_threshold: float = 0.5
    zone_window: int = 100

    def __post_init__(self) -> None:
        if self.total_steps < 1 or self.batch_size < 1 or self.replay_size < self.batch_size:
            raise ValueError("need total_steps >= 1 and replay_size >= batch_size >= 1")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma {self.gamma} outside [0, 1]")
        if self.learning_rate < 0 or self.progress_shaping < 0:
            raise ValueError("learning_rate and progress_shaping must be >= 0")
        if self.zones < 1 or self.zone_window < 1:
            raise ValueError("zones and zone_window must be >= 1")

    def epsilon(self, step_index: int) -> float:
        """Linear decay from eps_start to eps_end over the first eps_decay_fraction of steps."""
        horizon = max(1, int(self.total_steps * self.eps_decay_fraction))
        frac = min(step_index / horizon, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def to_dict(self) -> dict:
        return asdict(self)


class ReplayBuffer:
    """Fixed-size ring buffer of transitions."""

    def __init__(self, capacity: int, obs_dim: int) -> None:
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.terminal = np.zeros(capacity, dtype=np.float32)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, obs: np.ndarray, action: int, reward: float, next_obs: np.ndarray, terminal: bool) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminal[i] = float(terminal)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch_size: int) -> tuple[np.ndarray, ...]:
        idx = rng.integers(0, self._size, size=batch_size)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.terminal[idx]


class ZoneCurriculum:
    """Advances to the next goal-distance zone once recent success clears a threshold."""

    def __init__(self, zones: int, threshold: float, window: int) -> None:
        self.zones = zones
        self.threshold = threshold
        self.window = window
        self.zone = 0
        self._recent: deque[bool] = deque(maxlen=window)

    def record(self, success: bool) -> bool:
        """Record an episode outcome; returns True when the zone advanced."""
        self._recent.append(success)
        if self.zone >= self.zones - 1 or len(self._recent) < self.window:
            return False
        if sum(self._recent) / len(self._recent) >= self.threshold:
            self.zone += 1
            self._recent.clear()
            return True
        return False


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    reward: float
    cumulative_reward: float
    epsilon: float
    zone: int
    success: bool


@dataclass
class TrainingLog:
    records: list[EpisodeRecord] = field(default_factory=list)

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(LOG_COLUMNS)
            for r in self.records:
                writer.writerow(
                    [r.episode, f"{r.reward:.4f}", f"{r.cumulative_reward:.4f}", f"{r.epsilon:.4f}", r.zone, int(r.success)]
                )

    @classmethod
    def read_csv(cls, path: Path) -> TrainingLog:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        return cls(
            [
                EpisodeRecord(
                    int(row["episode"]),
                    float(row["reward"]),
                    float(row["cumulative_reward"]),
                    float(row["epsilon"]),
                    int(row["zone"]),
                    row["success"] == "1",
                )
                for row in rows
            ]
        )

    def cumulative_reward_trend(self) -> float:
        """Least-squares slope of cumulative reward against episode index."""
        if len(self.records) < 2:
            return 0.0
        x = np.array([r.episode for r in self.records], dtype=np.float64)
        y = np.array([r.cumulative_reward for r in self.records], dtype=np.float64)
        slope, _ = np.polyfit(x, y, 1)
        return float(slope)

    def success_rate(self, last: int = 100) -> float:
        tail = self.records[-last:]
        return sum(r.success for r in tail) / len(tail) if tail else 0.0


# =============================================================================
# Network conversion
# =============================================================================


def build_q_network(spec: NetworkSpec) -> nn.Sequential:
    modules: list[nn.Module] = []
    for layer in spec.layers:
        modules.append(nn.Linear(layer.in_dim, layer.out_dim))
        if layer.activation == "relu":
            modules.append(nn.ReLU())
    return nn.Sequential(*modules)


def _linears(model: nn.Sequential) -> list[nn.Linear]:
    return [m for m in model if isinstance(m, nn.Linear)]


def weights_from_module(model: nn.Sequential) -> WeightSet:
    linears = _linears(model)
    return WeightSet(
        tuple(m.weight.detach().cpu().double().numpy().copy() for m in linears),
        tuple(m.bias.detach().cpu().double().numpy().copy() for m in linears),
    )


def module_from_weights(spec: NetworkSpec, weights: WeightSet) -> nn.Sequential:
    weights.check(spec)
    model = build_q_network(spec)
    with torch.no_grad():
        for linear, w, b in zip(_linears(model), weights.weights, weights.biases):
            linear.weight.copy_(torch.from_numpy(w))
            linear.bias.copy_(torch.from_numpy(b))
    return model


# =============================================================================
# Trainer
# =============================================================================


class DQNTrainer:
    """Single-instance DQN trainer; everything random derives from ``seed``."""

    def __init__(
        self,
        spec: NetworkSpec,
        hyper: DQNHyper,
        arena_factory: ArenaFactory,
        seed: int = 0,
        rewards: RewardParams = RewardParams(),
        table: ActionTable = DEFAULT_ACTIONS,
    ) -> None:
        if spec.input_dim != OBSERVATION_DIM or spec.output_dim != len(table):
            raise ShapeError(
                f"policy must map {OBSERVATION_DIM} observations to {len(table)} actions, got "
                f"{spec.input_dim}->{spec.output_dim}"
            )
        self.spec = spec
        self.hyper = hyper
        self.arena_factory = arena_factory
        self.seed = seed
        self.rewards = rewards
        self.table = table
        self.rng = np.random.default_rng(seed)
        torch.manual_seed(seed)
        self.online = build_q_network(spec)
        self.target = build_q_network(spec)
        self.sync_target()
        self.optimizer = torch.optim.Adam(self.online.parameters(), lr=hyper.learning_rate)
        self.buffer = ReplayBuffer(hyper.replay_size, OBSERVATION_DIM)
        self.curriculum = ZoneCurriculum(hyper.zones, hyper.zone_threshold, hyper.zone_window)
        self.last_sync_step = 0
        self.log = get_stage_logger("train", f"seed{seed}")

    def sync_target(self) -> None:
        self.target.load_state_dict(self.online.state_dict())

    def act(self, obs: np.ndarray) -> int:
        with torch.no_grad():
            q = self.online(torch.as_tensor(obs, dtype=torch.float32).unsqueeze(0))
        return int(torch.argmax(q, dim=1).item())

    def progress_bonus(self, before: AgentState, result: StepResult) -> float:
        """Potential-based shaping gamma*phi(s') - phi(s) with phi = -k * goal distance.

        The distance after a goal-reaching step counts as zero, matching the
        reward's goal term. Only stored transitions see this; logs keep raw rewards.
        """
        k = self.hyper.progress_shaping
        if k == 0:
            return 0.0
        after = 0.0 if result.outcome is Outcome.GOAL else result.state.goal_distance
        return k * (before.goal_distance - self.hyper.gamma * after)

    def learn(self) -> float:
        obs, actions, rewards, next_obs, terminal = self.buffer.sample(self.rng, self.hyper.batch_size)
        obs_t = torch.from_numpy(obs)
        next_t = torch.from_numpy(next_obs)
        q = self.online(obs_t).gather(1, torch.from_numpy(actions).unsqueeze(1)).squeeze(1)
        with torch.no_grad():
            if self.hyper.double_q:
                next_actions = self.online(next_t).argmax(dim=1, keepdim=True)
                best_next = self.target(next_t).gather(1, next_actions).squeeze(1)
            else:
                best_next = self.target(next_t).max(dim=1).values
            target = torch.from_numpy(rewards) + self.hyper.gamma * (1.0 - torch.from_numpy(terminal)) * best_next
        loss = nn.functional.mse_loss(q, target)
        value = float(loss.item())
        if not math.isfinite(value):
            raise DivergenceError(f"loss became {value}")
        self.optimizer.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(self.online.parameters(), self.hyper.grad_clip)
        self.optimizer.step()
        return value

    def _new_episode(self, episode: int) -> tuple[Arena, AgentState, np.ndarray]:
        arena = self.arena_factory(episode)
        state = reset_episode(arena, self.rng, self.curriculum.zone, self.hyper.zones, self.rewards)
        return arena, state, sense(arena, state)

    def train(self) -> tuple[WeightSet, TrainingLog]:
        hyper = self.hyper
        log = TrainingLog()
        episode = 0
        cumulative = 0.0
        episode_reward = 0.0
        arena, state, obs = self._new_episode(episode)

        for t in range(hyper.total_steps):
            eps = hyper.epsilon(t)
            if self.rng.random() < eps:
                action = int(self.rng.integers(len(self.table)))
            else:
                action = self.act(obs)
            result = step(arena, state, action, self.table, self.rewards)
            next_obs = sense(arena, result.state)
            terminal = result.outcome in (Outcome.GOAL, Outcome.COLLISION)
            stored = result.reward + self.progress_bonus(state, result)
            self.buffer.add(obs, action, stored * hyper.reward_scale, next_obs, terminal)
            episode_reward += result.reward
            state, obs = result.state, next_obs

            if t >= hyper.learning_starts and t % hyper.train_every == 0 and len(self.buffer) >= hyper.batch_size:
                self.learn()
            if (t + 1) % hyper.target_sync_steps == 0:
                self.sync_target()
                self.last_sync_step = t + 1

            if result.done:
                success = result.outcome is Outcome.GOAL
                cumulative += episode_reward
                log.records.append(EpisodeRecord(episode, episode_reward, cumulative, eps, self.curriculum.zone, success))
                if self.curriculum.record(success):
                    self.log.info(f"episode {episode}: advancing to zone {self.curriculum.zone}")
                episode += 1
                episode_reward = 0.0
                arena, state, obs = self._new_episode(episode)

        self.log.info(
            f"trained {hyper.total_steps} steps, {episode} episodes, "
            f"success(last 100)={log.success_rate():.2f}, zone={self.curriculum.zone}"
        )
        return weights_from_module(self.online), log


def dqn_train(
    arena_factory: ArenaFactory,
    spec: NetworkSpec,
    hyper: DQNHyper,
    seed: int = 0,
    rewards: RewardParams = RewardParams(),
) -> tuple[WeightSet, TrainingLog]:
    """Train one policy instance.

    Raises:
        DivergenceError: Loss turned non-finite
        ShapeError: ``spec`` does not map observations to actions
    """
    return DQNTrainer(spec, hyper, arena_factory, seed, rewards).train()
