"""The meta-MDP over rollout-length adjustments.

One Dyna training run is one meta episode: every phase boundary the
controller sees five normalized features of the learning process and picks
Up / Down / NoOp, which rescales the rollout length multiplicatively. The
meta reward is the change in average return between consecutive decisions,
so the undiscounted sum telescopes to (final policy quality - initial
quality) and the metareasoner is paid exactly for improving the final
policy.

Heuristic controllers (static K and the linear Inc / Dec / Inc-Dec
schedules) share the same interface so every approach runs through the
identical training loop.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import dqn
from .dqn import DqnAgent, EpsilonSchedule, ReplayBuffer, epsilon_at
from .envs import Transition

K_MAX_DEFAULT = 32

META_HIDDEN = (64, 32)
META_LR = 0.0001
META_GAMMA = 0.99
META_BATCH = 32
META_OBS_DIM = 5
META_UPDATES_PER_TRANSITION = 10
META_TARGET_SYNC_EPISODES = 10
META_EPSILON = EpsilonSchedule(start=1.0, end=0.15, warmup_steps=25, anneal_steps=25)


class MetaAction(enum.IntEnum):
    UP = 0
    DOWN = 1
    NOOP = 2


@dataclass(frozen=True)
class MetaObservation:
    """Five features, each kept O(1) by normalization.

    ``remaining`` is the unspent fraction of the interaction budget,
    ``k_norm`` the current rollout length over its cap, ``quality`` the
    latest average return over the episode cap (so it lies in [-1, 0]), and
    the two error features are the signed model errors on the same scale.
    """

    remaining: float
    k_norm: float
    quality: float
    return_error_norm: float
    length_error_norm: float

    def to_vector(self) -> np.ndarray:
        return np.array([
            self.remaining, self.k_norm, self.quality,
            self.return_error_norm, self.length_error_norm,
        ])


@dataclass
class MetaTransition:
    obs: MetaObservation
    action: MetaAction | None  # None when a heuristic controller drove K
    reward: float
    next_obs: MetaObservation
    terminal: bool


def apply_meta_action(k: int, a: MetaAction, k_max: int = K_MAX_DEFAULT) -> int:
    """Up: ceil(1.5K) (1 from zero); Down: floor(K/2) (0 from one); NoOp: K.

    Down is deliberately more aggressive than Up, so a random walk drifts
    the rollout length toward zero. The result is clamped to [0, k_max].
    """
    if not 0 <= k <= k_max:
        raise ValueError(f"k={k} outside [0, {k_max}]")
    if a == MetaAction.UP:
        k = (3 * k + 1) // 2 if k > 0 else 1  # integer ceil(1.5k)
    elif a == MetaAction.DOWN:
        k = k // 2 if k > 1 else 0
    return min(k, k_max)


def schedule_k(kind: str, j: int, horizon: int, k_max: int = K_MAX_DEFAULT) -> int:
    """Linear heuristic schedules, indexed by decision j in [1, horizon].

    ``inc`` ramps 0 -> k_max, ``dec`` ramps k_max -> 0, ``inc_dec`` is the
    triangle peaking at k_max mid-run.
    """
    if not 1 <= j <= horizon:
        raise ValueError(f"decision index {j} outside [1, {horizon}]")
    if kind == "inc":
        return round(k_max * (j - 1) / (horizon - 1)) if horizon > 1 else 0
    if kind == "dec":
        return round(k_max * (horizon - j) / (horizon - 1)) if horizon > 1 else k_max
    if kind == "inc_dec":
        peak = (horizon + 1) // 2
        if j <= peak:
            return round(k_max * (j - 1) / (peak - 1)) if peak > 1 else k_max
        return round(k_max * (horizon - j) / (horizon - peak))
    raise ValueError(f"unknown schedule kind {kind!r}")


def build_observation(quality: float, return_error: float, length_error: float,
                      k_current: int, t: int, total_steps: int,
                      k_max: int, episode_cap: int) -> MetaObservation:
    """Normalize the raw phase statistics into the five meta features."""
    return MetaObservation(
        remaining=(total_steps - t) / total_steps,
        k_norm=k_current / k_max,
        quality=quality / episode_cap,
        return_error_norm=return_error / episode_cap,
        length_error_norm=length_error / episode_cap,
    )


def meta_reward(j_next: float, j_prev: float) -> float:
    return j_next - j_prev


@dataclass
class DecisionContext:
    """Everything a controller may look at when adjusting K."""

    obs: MetaObservation
    phase: int  # 1-based decision index
    horizon: int
    k_current: int
    k_max: int
    rng: np.random.Generator


class RolloutController:
    """Chooses the rollout length at each phase boundary."""

    label = "controller"

    def decide(self, ctx: DecisionContext) -> int:
        raise NotImplementedError

    def last_action(self) -> MetaAction | None:
        """Meta action behind the most recent decide(), when there was one."""
        return None

    def observe(self, tr: MetaTransition) -> None:
        """Called once per completed meta transition; training hooks only."""


class StaticController(RolloutController):
    def __init__(self, k: int, k_max: int = K_MAX_DEFAULT):
        if not 0 <= k <= k_max:
            raise ValueError(f"static K={k} outside [0, {k_max}]")
        self.k = k
        self.label = f"K{k}"

    def decide(self, ctx: DecisionContext) -> int:
        return self.k


class ScheduleController(RolloutController):
    def __init__(self, kind: str):
        if kind not in ("inc", "dec", "inc_dec"):
            raise ValueError(f"unknown schedule kind {kind!r}")
        self.kind = kind
        self.label = {"inc": "Inc", "dec": "Dec", "inc_dec": "IncDec"}[kind]

    def decide(self, ctx: DecisionContext) -> int:
        return schedule_k(self.kind, ctx.phase, ctx.horizon, ctx.k_max)


class ScriptedController(RolloutController):
    """Fixed list of K values, one per decision; for deterministic tests."""

    label = "Scripted"

    def __init__(self, ks: list[int]):
        self.ks = list(ks)

    def decide(self, ctx: DecisionContext) -> int:
        return self.ks[(ctx.phase - 1) % len(self.ks)]


class MetaController(RolloutController):
    """Epsilon-greedy metareasoner around a DQN agent.

    With ``on_transition`` set (training mode) every completed meta
    transition is pushed to the hook, which owns replay and updates.
    """

    label = "Meta"

    def __init__(self, agent: DqnAgent, epsilon: float = 0.0, on_transition=None):
        self.agent = agent
        self.epsilon = epsilon
        self.on_transition = on_transition
        self._last: MetaAction | None = None

    def decide(self, ctx: DecisionContext) -> int:
        a = MetaAction(dqn.select_action(
            self.agent, ctx.obs.to_vector(), self.epsilon, ctx.rng))
        self._last = a
        return apply_meta_action(ctx.k_current, a, ctx.k_max)

    def last_action(self) -> MetaAction | None:
        return self._last

    def observe(self, tr: MetaTransition) -> None:
        if self.on_transition is not None:
            self.on_transition(tr)


def make_meta_agent(rng: np.random.Generator) -> DqnAgent:
    # target syncs are driven per meta episode, not per gradient update
    return dqn.make_agent(
        META_OBS_DIM, len(MetaAction), META_HIDDEN, META_LR, rng,
        gamma=META_GAMMA, target_sync_period=None,
    )


def meta_transition_to_arrays(tr: MetaTransition) -> Transition:
    """Adapter so meta transitions can live in the shared ReplayBuffer."""
    return Transition(
        tr.obs.to_vector(), int(tr.action), tr.reward,
        tr.next_obs.to_vector(), tr.terminal, truncated=False,
    )


@dataclass
class MetaTrainStats:
    episodes: int
    transitions_recorded: int
    updates_attempted: int
    scores: list[float] = field(default_factory=list)


@dataclass
class MetaEpisodeRow:
    meta_episode: int
    score: float
    epsilon: float
    mean_k_chosen: float


def train_metareasoner(
    run_cfg,
    episodes: int,
    master_seed: int,
    agent: DqnAgent | None = None,
    buffer: ReplayBuffer | None = None,
    start_episode: int = 1,
    rng_state: dict | None = None,
    updates_per_transition: int = META_UPDATES_PER_TRANSITION,
    target_sync_episodes: int = META_TARGET_SYNC_EPISODES,
    epsilon_schedule: EpsilonSchedule = META_EPSILON,
    on_episode_end=None,
) -> tuple[DqnAgent, MetaTrainStats, list[MetaEpisodeRow]]:
    """Train the metareasoner over full Dyna runs on the original variant.

    Each meta episode runs one complete training run seeded from
    ``(master_seed, episode index)``; after every completed meta transition
    the agent takes ``updates_per_transition`` gradient updates, and the
    target network is refreshed every ``target_sync_episodes`` episodes.
    ``agent`` / ``buffer`` / ``start_episode`` allow resuming mid-training.
    """
    from .dyna import DivergenceError, run_training
    from .seeding import META_STREAM, META_TRAIN_NAMESPACE, component_rng, derive_seed

    if run_cfg.env.variant != "original":
        raise ValueError("metareasoner training runs on the original variant")
    rng = component_rng(master_seed, META_STREAM)
    if agent is None:
        agent = make_meta_agent(rng)
    if buffer is None:
        buffer = ReplayBuffer(META_OBS_DIM)
    if rng_state:
        rng.bit_generator.state = rng_state  # exact resume of the update stream

    stats = MetaTrainStats(episodes=0, transitions_recorded=0, updates_attempted=0)
    rows: list[MetaEpisodeRow] = []

    for episode in range(start_episode, episodes + 1):
        eps = epsilon_at(epsilon_schedule, episode)

        def on_transition(tr: MetaTransition):
            buffer.add(meta_transition_to_arrays(tr))
            stats.transitions_recorded += 1
            for _ in range(updates_per_transition):
                stats.updates_attempted += 1
                dqn.dqn_update(agent, buffer, rng)

        controller = MetaController(agent, epsilon=eps, on_transition=on_transition)
        episode_cfg = run_cfg.with_seed(derive_seed(master_seed, META_TRAIN_NAMESPACE, episode))
        try:
            result = run_training(episode_cfg, controller)
        except DivergenceError as exc:
            # the offending run is dropped; training continues
            import logging
            logging.getLogger(__name__).warning(
                "meta episode %d diverged and was skipped: %s", episode, exc)
            continue
        stats.episodes += 1
        stats.scores.append(result.final_score)
        row = MetaEpisodeRow(
            meta_episode=episode,
            score=result.final_score,
            epsilon=eps,
            mean_k_chosen=float(np.mean(result.k_trace)),
        )
        rows.append(row)
        if episode % target_sync_episodes == 0:
            dqn.sync_target(agent)
        if on_episode_end is not None:
            on_episode_end(episode, agent, buffer, rows, rng.bit_generator.state)
    return agent, stats, rows


def evaluate_metareasoner(agent: DqnAgent, run_cfg, runs: int, master_seed: int):
    """Score a trained metareasoner: greedy meta-policy over fresh runs.

    Returns ``(mean, stderr, scores)`` where each score is a run's final
    greedy evaluation; stderr is None for a single run.
    """
    from .dyna import run_training
    from .seeding import META_EVAL_NAMESPACE, derive_seed

    scores = []
    for i in range(runs):
        controller = MetaController(agent, epsilon=0.0)
        seed = derive_seed(master_seed, META_EVAL_NAMESPACE, i)
        result = run_training(run_cfg.with_seed(seed), controller)
        scores.append(result.final_score)
    mean = float(np.mean(scores))
    stderr = float(np.std(scores, ddof=1) / np.sqrt(runs)) if runs > 1 else None
    return mean, stderr, scores
