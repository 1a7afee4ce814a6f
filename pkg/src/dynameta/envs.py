"""Classic-control environments: MountainCar and Acrobot.

Both come in an ``original`` flavour (the usual textbook parameters) and a
``modified`` flavour used as the held-out "real world": MountainCar gets
steeper gravity and a goal relocated to the left hilltop, Acrobot gets heavier
gravity and asymmetric links.

The dynamics are exposed as pure functions of ``(config, state, action)`` so
that repeated calls are bit-identical and instances can be used freely across
parallel runs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np


class EnvKind(enum.Enum):
    MOUNTAIN_CAR = "mountain_car"
    ACROBOT = "acrobot"


# MountainCar state bounds (fixed, not configurable).
MC_POSITION_MIN = -1.2
MC_POSITION_MAX = 0.6
MC_VELOCITY_MAX = 0.07

# Acrobot angular-velocity bounds.
ACRO_MAX_VEL_1 = 4.0 * math.pi
ACRO_MAX_VEL_2 = 9.0 * math.pi

ACTION_COUNT = 3


class ContractViolation(ValueError):
    """Raised when a caller breaks an operation precondition."""


@dataclass(frozen=True)
class EnvConfig:
    """Physical parameters of one environment variant.

    MountainCar uses ``gravity``, ``force`` and ``goal_position``; Acrobot
    uses ``gravity``, the link fields and ``dt``. Link centers sit at half
    the link length and both inertias are 1.0 for the original parameters;
    neither is touched by the modified variant, which applies only the
    published parameter deltas.
    """

    kind: EnvKind
    variant: str  # "original" | "modified"
    gravity: float
    goal_position: float = 0.5
    force: float = 0.001
    link1_length: float = 1.0
    link1_mass: float = 1.0
    link2_length: float = 1.0
    link2_mass: float = 1.0
    link1_center: float = 0.5
    link2_center: float = 0.5
    link1_inertia: float = 1.0
    link2_inertia: float = 1.0
    dt: float = 0.2
    episode_cap: int = 200
    action_count: int = ACTION_COUNT

    @property
    def obs_dim(self) -> int:
        return 2 if self.kind is EnvKind.MOUNTAIN_CAR else 6

    def observation_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(low, high) arrays used to clip model-predicted observations."""
        if self.kind is EnvKind.MOUNTAIN_CAR:
            low = np.array([MC_POSITION_MIN, -MC_VELOCITY_MAX])
            high = np.array([MC_POSITION_MAX, MC_VELOCITY_MAX])
        else:
            low = np.array([-1.0, -1.0, -1.0, -1.0, -ACRO_MAX_VEL_1, -ACRO_MAX_VEL_2])
            high = np.array([1.0, 1.0, 1.0, 1.0, ACRO_MAX_VEL_1, ACRO_MAX_VEL_2])
        return low, high

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "variant": self.variant,
            "gravity": self.gravity,
            "goal_position": self.goal_position,
            "force": self.force,
            "link1_length": self.link1_length,
            "link1_mass": self.link1_mass,
            "link2_length": self.link2_length,
            "link2_mass": self.link2_mass,
            "dt": self.dt,
            "episode_cap": self.episode_cap,
        }

    @staticmethod
    def from_json(doc: dict) -> "EnvConfig":
        base = make_env(EnvKind(doc["kind"]), doc["variant"])
        overrides = {k: v for k, v in doc.items() if k not in ("kind", "variant")}
        return replace(base, **overrides)


@dataclass
class EnvState:
    """Dynamical state plus the step counter within the current episode.

    ``internal`` holds (position, velocity) for MountainCar and
    (theta1, theta2, dtheta1, dtheta2) for Acrobot.
    """

    internal: np.ndarray
    step_count: int = 0

    def copy(self) -> "EnvState":
        return EnvState(self.internal.copy(), self.step_count)


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    truncated: bool = False  # true only when terminal came from the episode cap


def make_env(kind: EnvKind, variant: str) -> EnvConfig:
    """Canonical parameter set for an environment variant.

    ``modified`` applies exactly the published deltas to the original
    parameters: MountainCar gravity 0.0025 -> 0.003 and goal 0.5 -> -1.1;
    Acrobot gravity 9.8 -> 12.0, l1/m1 1.0 -> 1.2, l2/m2 1.0 -> 0.8.
    """
    if variant not in ("original", "modified"):
        raise ContractViolation(f"unknown variant {variant!r}")
    if kind is EnvKind.MOUNTAIN_CAR:
        cfg = EnvConfig(
            kind=kind, variant=variant, gravity=0.0025, goal_position=0.5,
            force=0.001, episode_cap=200,
        )
        if variant == "modified":
            cfg = replace(cfg, gravity=0.003, goal_position=-1.1)
        return cfg
    cfg = EnvConfig(
        kind=kind, variant=variant, gravity=9.8, episode_cap=500,
    )
    if variant == "modified":
        cfg = replace(
            cfg, gravity=12.0,
            link1_length=1.2, link1_mass=1.2,
            link2_length=0.8, link2_mass=0.8,
        )
    return cfg


def env_reset(cfg: EnvConfig, rng: np.random.Generator) -> EnvState:
    if cfg.kind is EnvKind.MOUNTAIN_CAR:
        position = rng.uniform(-0.6, -0.4)
        return EnvState(np.array([position, 0.0]))
    return EnvState(rng.uniform(-0.1, 0.1, size=4))


def observe(cfg: EnvConfig, s: EnvState) -> np.ndarray:
    """Observation vector exposed to the agent and the world model."""
    if cfg.kind is EnvKind.MOUNTAIN_CAR:
        return s.internal.copy()
    th1, th2, dth1, dth2 = s.internal
    return np.array([math.cos(th1), math.sin(th1), math.cos(th2), math.sin(th2), dth1, dth2])


def is_goal(cfg: EnvConfig, s: EnvState) -> bool:
    if cfg.kind is EnvKind.MOUNTAIN_CAR:
        x = s.internal[0]
        # A goal left of the start region (the modified variant's -1.1) means
        # "reach the left hilltop", so the predicate direction flips.
        if cfg.goal_position < -0.6:
            return bool(x <= cfg.goal_position)
        return bool(x >= cfg.goal_position)
    th1, th2 = s.internal[0], s.internal[1]
    return bool(-math.cos(th1) - math.cos(th1 + th2) > 1.0)


def env_step(cfg: EnvConfig, s: EnvState, a: int) -> tuple[EnvState, float, bool, bool]:
    """Advance one step. Returns ``(next_state, reward, terminal, truncated)``.

    ``terminal`` is true both at the goal and at the episode cap; ``truncated``
    distinguishes the cap so that value bootstrapping can pass through it.
    Reward is -1 on every step, terminal ones included.
    """
    if a not in (0, 1, 2):
        raise ContractViolation(f"action index {a!r} outside [0, {ACTION_COUNT})")
    if cfg.kind is EnvKind.MOUNTAIN_CAR:
        nxt = _mountain_car_step(cfg, s, a)
    else:
        nxt = _acrobot_step(cfg, s, a)
    nxt.step_count = s.step_count + 1
    goal = is_goal(cfg, nxt)
    truncated = not goal and nxt.step_count >= cfg.episode_cap
    return nxt, -1.0, goal or truncated, truncated


def _mountain_car_step(cfg: EnvConfig, s: EnvState, a: int) -> EnvState:
    x, v = s.internal
    v = v + cfg.force * (a - 1) - cfg.gravity * math.cos(3.0 * x)
    v = min(max(v, -MC_VELOCITY_MAX), MC_VELOCITY_MAX)
    x = x + v
    x = min(max(x, MC_POSITION_MIN), MC_POSITION_MAX)
    if x <= MC_POSITION_MIN and v < 0.0:
        v = 0.0  # inelastic left wall
    return EnvState(np.array([x, v]))


def _acrobot_dynamics(cfg: EnvConfig, y: np.ndarray, torque: float) -> np.ndarray:
    """Time derivative of (theta1, theta2, dtheta1, dtheta2); torque on joint 2."""
    m1, m2 = cfg.link1_mass, cfg.link2_mass
    l1 = cfg.link1_length
    lc1, lc2 = cfg.link1_center, cfg.link2_center
    i1, i2 = cfg.link1_inertia, cfg.link2_inertia
    g = cfg.gravity
    th1, th2, dth1, dth2 = y

    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2.0 * l1 * lc2 * math.cos(th2)) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(th2)) + i2
    phi2 = m2 * lc2 * g * math.cos(th1 + th2 - math.pi / 2.0)
    phi1 = (
        -m2 * l1 * lc2 * dth2**2 * math.sin(th2)
        - 2.0 * m2 * l1 * lc2 * dth2 * dth1 * math.sin(th2)
        + (m1 * lc1 + m2 * l1) * g * math.cos(th1 - math.pi / 2.0)
        + phi2
    )
    ddth2 = (
        torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dth1**2 * math.sin(th2) - phi2
    ) / (m2 * lc2**2 + i2 - d2**2 / d1)
    ddth1 = -(d2 * ddth2 + phi1) / d1
    return np.array([dth1, dth2, ddth1, ddth2])


def _wrap_angle(x: float) -> float:
    """Wrap into (-pi, pi]."""
    return math.pi - (math.pi - x) % (2.0 * math.pi)


def _acrobot_step(cfg: EnvConfig, s: EnvState, a: int) -> EnvState:
    torque = float(a - 1)
    y = s.internal
    dt = cfg.dt
    # one classical RK4 step over the full control interval
    k1 = _acrobot_dynamics(cfg, y, torque)
    k2 = _acrobot_dynamics(cfg, y + 0.5 * dt * k1, torque)
    k3 = _acrobot_dynamics(cfg, y + 0.5 * dt * k2, torque)
    k4 = _acrobot_dynamics(cfg, y + dt * k3, torque)
    y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    th1 = _wrap_angle(y[0])
    th2 = _wrap_angle(y[1])
    dth1 = min(max(y[2], -ACRO_MAX_VEL_1), ACRO_MAX_VEL_1)
    dth2 = min(max(y[3], -ACRO_MAX_VEL_2), ACRO_MAX_VEL_2)
    return EnvState(np.array([th1, th2, dth1, dth2]))
