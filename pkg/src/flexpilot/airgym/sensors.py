"""Observation vector: depth fan plus kinematic and goal features."""

from __future__ import annotations

import math

import numpy as np

from .arena import Arena
from .dynamics import FORWARD_SPEEDS_MPS, STEP_LIMIT, AgentState

NUM_RAYS = 152
FIELD_OF_VIEW = math.pi  # 180 degree fan centred on the heading
MAX_RANGE_M = 20.0

KINEMATIC_FEATURES = 4  # vx, vy, sin(heading), cos(heading)
GOAL_FEATURES = 4  # distance, sin/cos bearing, remaining steps
OBSERVATION_DIM = NUM_RAYS + KINEMATIC_FEATURES + GOAL_FEATURES

_SPEED_NORM = max(FORWARD_SPEEDS_MPS)
_RAY_OFFSETS = np.linspace(-FIELD_OF_VIEW / 2, FIELD_OF_VIEW / 2, NUM_RAYS)


def ray_angles(heading: float) -> np.ndarray:
    """World-frame angles of the depth rays, right edge first."""
    return heading + _RAY_OFFSETS


def sense(arena: Arena, state: AgentState) -> np.ndarray:
    """160-element observation with every component in [-1, 1].

    Depths are clipped at MAX_RANGE_M and scaled to [0, 1].
    """
    depth = np.minimum(arena.cast_rays(state.x, state.y, ray_angles(state.heading)), MAX_RANGE_M) / MAX_RANGE_M
    speed = state.speed / _SPEED_NORM
    bearing = state.goal_bearing
    features = np.array(
        [
            speed * math.cos(state.heading),
            speed * math.sin(state.heading),
            math.sin(state.heading),
            math.cos(state.heading),
            min(state.goal_distance / arena.spec.diagonal_m, 1.0),
            math.sin(bearing),
            math.cos(bearing),
            max(STEP_LIMIT - state.step_index, 0) / STEP_LIMIT,
        ]
    )
    return np.concatenate([depth, features])
