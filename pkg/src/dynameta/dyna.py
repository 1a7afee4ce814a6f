"""The integrated acting / learning / planning loop.

Training runs for a fixed budget of environment steps, split into phases of
``phase_length`` steps. Acting and model-free learning are continuous: every
environment step stores a transition in the real buffer and takes one
gradient update from it. At each phase boundary the world model is refit on
everything collected so far, the rollout-length controller is consulted, the
synthetic buffer is emptied, and ``phase_length // K`` model rollouts are
generated, each followed by one gradient update per synthetic transition.

Per-phase statistics (average return, signed model errors, the chosen K and
a greedy evaluation sample) feed the meta-level and the exported artifacts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .dqn import (
    EpsilonSchedule, ReplayBuffer, dqn_update, epsilon_at, make_agent,
    select_action,
)
from .envs import EnvConfig, Transition, env_reset, env_step, observe
from .meta import (
    DecisionContext, MetaObservation, MetaTransition, RolloutController,
    build_observation, meta_reward,
)
from .seeding import (
    AGENT_STREAM, CURVE_STREAM, ENV_STREAM, EVAL_STREAM, META_DECIDE_STREAM,
    MODEL_ERROR_STREAM, MODEL_STREAM, ROLLOUT_STREAM, component_rng,
)
from .world_model import FitReport, model_errors, model_fit, model_rollout

ACTING_EPSILON = EpsilonSchedule(start=1.0, end=0.1, warmup_steps=10_000, anneal_steps=10_000)


class DivergenceError(RuntimeError):
    """A gradient update or model fit produced a non-finite loss."""


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    total_steps: int
    phase_length: int = 10_000
    k_max: int = 32
    gamma: float = 0.99
    agent_hidden: tuple[int, int] = (64, 32)
    agent_lr: float = 1e-4
    target_sync_period: int = 2000
    acting_epsilon: EpsilonSchedule = ACTING_EPSILON
    rollout_epsilon: float = 0.1
    final_eval_episodes: int = 100
    curve_eval_episodes: int = 20
    model_epoch_cap: int = 200
    min_fit_size: int = 50
    record_timing: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.total_steps % self.phase_length != 0:
            raise ValueError("total_steps must be a multiple of phase_length")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")

    @property
    def horizon(self) -> int:
        return self.total_steps // self.phase_length

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)

    def to_json(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "phase_length": self.phase_length,
            "k_max": self.k_max,
            "gamma": self.gamma,
            "agent_hidden": list(self.agent_hidden),
            "agent_lr": self.agent_lr,
            "target_sync_period": self.target_sync_period,
            "acting_epsilon": vars(self.acting_epsilon),
            "rollout_epsilon": self.rollout_epsilon,
            "final_eval_episodes": self.final_eval_episodes,
            "curve_eval_episodes": self.curve_eval_episodes,
            "model_epoch_cap": self.model_epoch_cap,
            "min_fit_size": self.min_fit_size,
            "record_timing": self.record_timing,
            "seed": self.seed,
        }


@dataclass
class PhaseStats:
    phase: int  # 1-based
    k_before: int  # K entering the decision
    k: int  # K chosen at this boundary
    quality: float  # mean return of episodes completed in the phase (J)
    episodes: int
    return_error: float
    length_error: float
    eval_score: float
    rollouts: int
    synthetic_steps: int
    wall_ms: int
    fit: FitReport | None

    def to_json(self) -> dict:
        doc = {k: v for k, v in vars(self).items() if k != "fit"}
        doc["fit"] = None if self.fit is None else self.fit.to_json()
        return doc


@dataclass
class RunResult:
    label: str
    seed: int
    env: EnvConfig
    config: RunConfig
    phases: list[PhaseStats]
    final_score: float
    k_trace: list[int]
    meta_transitions: list[MetaTransition] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "kind": "run_result",
            "schema_version": 1,
            "label": self.label,
            "seed": self.seed,
            "env": self.env.to_json(),
            "run": self.config.to_json(),
            "phases": [p.to_json() for p in self.phases],
            "final_score": self.final_score,
            "k_trace": list(self.k_trace),
            "meta_transitions": [
                {
                    "obs": tr.obs.to_vector().tolist(),
                    "action": None if tr.action is None else int(tr.action),
                    "reward": tr.reward,
                    "next_obs": tr.next_obs.to_vector().tolist(),
                    "terminal": tr.terminal,
                }
                for tr in self.meta_transitions
            ],
        }


def phase_quality(episode_returns: list[float], previous: float) -> float:
    """Mean completed-episode return; carries ``previous`` forward when the
    phase completed no episodes."""
    if not episode_returns:
        return previous
    return float(np.mean(episode_returns))


def evaluate_policy(env_cfg: EnvConfig, policy, episodes: int,
                    rng: np.random.Generator) -> float:
    """Mean return of greedy episodes on a fresh environment instance."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = []
    for _ in range(episodes):
        state = env_reset(env_cfg, rng)
        obs = observe(env_cfg, state)
        total = 0.0
        while True:
            state, reward, terminal, _ = env_step(env_cfg, state, policy(obs))
            obs = observe(env_cfg, state)
            total += reward
            if terminal:
                break
        returns.append(total)
    return float(np.mean(returns))


def run_training(cfg: RunConfig, controller: RolloutController) -> RunResult:
    """Execute one full training run under a rollout-length controller."""
    env_cfg = cfg.env
    obs_dim = env_cfg.obs_dim
    cap = env_cfg.episode_cap
    horizon = cfg.horizon

    env_rng = component_rng(cfg.seed, ENV_STREAM)
    agent_rng = component_rng(cfg.seed, AGENT_STREAM)
    model_rng = component_rng(cfg.seed, MODEL_STREAM)
    rollout_rng = component_rng(cfg.seed, ROLLOUT_STREAM)
    eval_rng = component_rng(cfg.seed, EVAL_STREAM)
    curve_rng = component_rng(cfg.seed, CURVE_STREAM)
    model_err_rng = component_rng(cfg.seed, MODEL_ERROR_STREAM)
    meta_rng = component_rng(cfg.seed, META_DECIDE_STREAM)

    agent = make_agent(obs_dim, env_cfg.action_count, cfg.agent_hidden,
                       cfg.agent_lr, agent_rng, gamma=cfg.gamma,
                       target_sync_period=cfg.target_sync_period)
    d_real = ReplayBuffer(obs_dim)
    d_synth = ReplayBuffer(obs_dim)
    obs_low, obs_high = env_cfg.observation_bounds()

    def greedy(obs_vec):
        return select_action(agent, obs_vec, 0.0, agent_rng)

    def rollout_policy(obs_vec, rng):
        return select_action(agent, obs_vec, cfg.rollout_epsilon, rng)

    k = 0  # no model use before the first fit
    model = None
    quality_prev = 0.0
    ret_err_prev, len_err_prev = 0.0, 0.0
    qualities: list[float] = []
    phases: list[PhaseStats] = []
    k_trace: list[int] = []
    meta_transitions: list[MetaTransition] = []
    pending: tuple[MetaObservation, object] | None = None

    state = env_reset(env_cfg, env_rng)
    obs = observe(env_cfg, state)
    episode_start = obs.copy()
    episode_return = 0.0
    episode_length = 0
    phase_episodes: list[tuple[np.ndarray, float, int]] = []
    phase_t0 = time.perf_counter()

    for t in range(cfg.total_steps):
        eps = epsilon_at(cfg.acting_epsilon, t)
        action = select_action(agent, obs, eps, agent_rng)
        next_state, reward, terminal, truncated = env_step(env_cfg, state, action)
        next_obs = observe(env_cfg, next_state)
        d_real.add(Transition(obs, action, reward, next_obs, terminal, truncated))
        episode_return += reward
        episode_length += 1
        if terminal:
            phase_episodes.append((episode_start, episode_return, episode_length))
            state = env_reset(env_cfg, env_rng)
            obs = observe(env_cfg, state)
            episode_start = obs.copy()
            episode_return = 0.0
            episode_length = 0
        else:
            state, obs = next_state, next_obs

        try:
            dqn_update(agent, d_real, agent_rng)
        except nn.NonFiniteLoss as exc:
            raise DivergenceError(f"real-data update diverged at step {t}") from exc

        if (t + 1) % cfg.phase_length != 0:
            continue

        # ---- phase boundary ----
        j = (t + 1) // cfg.phase_length
        t_now = t + 1
        quality = phase_quality([r for (_, r, _) in phase_episodes], quality_prev)
        qualities.append(quality)

        fit_report = None
        if len(d_real) >= cfg.min_fit_size:
            try:
                model, fit_report = model_fit(
                    d_real, obs_low, obs_high, model_rng, cfg.model_epoch_cap)
            except nn.NonFiniteLoss as exc:
                raise DivergenceError(f"model fit diverged at phase {j}") from exc

        if model is not None and phase_episodes:
            eps_now = epsilon_at(cfg.acting_epsilon, t_now)

            def error_policy(obs_vec, rng):
                return select_action(agent, obs_vec, eps_now, rng)

            ret_err, len_err = model_errors(
                model, error_policy, phase_episodes, cap, model_err_rng)
        else:
            ret_err, len_err = ret_err_prev, len_err_prev

        meta_obs = build_observation(quality, ret_err, len_err, k, t_now,
                                     cfg.total_steps, cfg.k_max, cap)
        if pending is not None:
            prev_obs, prev_action = pending
            tr = MetaTransition(prev_obs, prev_action,
                                meta_reward(qualities[-1], qualities[-2]),
                                meta_obs, False)
            meta_transitions.append(tr)
            controller.observe(tr)

        k_before = k
        ctx = DecisionContext(meta_obs, j, horizon, k, cfg.k_max, meta_rng)
        k = int(controller.decide(ctx))
        if not 0 <= k <= cfg.k_max:
            raise ValueError(f"controller returned K={k} outside [0, {cfg.k_max}]")
        pending = (meta_obs, controller.last_action())
        k_trace.append(k)

        d_synth.clear()
        rollouts = 0
        synthetic_steps = 0
        if model is not None and k >= 1:
            for _ in range(cfg.phase_length // k):
                start = d_real.sample_states(1, rollout_rng)[0]
                transitions = model_rollout(model, start, rollout_policy, k, rollout_rng)
                rollouts += 1
                for tr in transitions:
                    d_synth.add(tr)
                    synthetic_steps += 1
                    try:
                        dqn_update(agent, d_synth, agent_rng)
                    except nn.NonFiniteLoss as exc:
                        raise DivergenceError(
                            f"synthetic-data update diverged at phase {j}") from exc

        eval_score = evaluate_policy(env_cfg, greedy, cfg.curve_eval_episodes, curve_rng)
        wall_ms = int((time.perf_counter() - phase_t0) * 1000) if cfg.record_timing else 0
        phases.append(PhaseStats(
            phase=j, k_before=k_before, k=k, quality=quality,
            episodes=len(phase_episodes), return_error=ret_err,
            length_error=len_err, eval_score=eval_score,
            rollouts=rollouts, synthetic_steps=synthetic_steps,
            wall_ms=wall_ms, fit=fit_report,
        ))

        quality_prev = quality
        ret_err_prev, len_err_prev = ret_err, len_err
        phase_episodes = []
        phase_t0 = time.perf_counter()
        # a partial episode at the budget end is abandoned: its transitions
        # stay in the buffer but it never enters any phase's J

    final_score = evaluate_policy(env_cfg, greedy, cfg.final_eval_episodes, eval_rng)

    if pending is not None:
        # the final decision is rewarded against the final greedy evaluation,
        # so the undiscounted sum of meta rewards telescopes to
        # final_score - J_1
        prev_obs, prev_action = pending
        terminal_obs = build_observation(
            qualities[-1], ret_err_prev, len_err_prev, k,
            cfg.total_steps, cfg.total_steps, cfg.k_max, cap)
        tr = MetaTransition(prev_obs, prev_action,
                            meta_reward(final_score, qualities[-1]), terminal_obs, True)
        meta_transitions.append(tr)
        controller.observe(tr)

    return RunResult(
        label=controller.label, seed=cfg.seed, env=env_cfg, config=cfg,
        phases=phases, final_score=final_score, k_trace=k_trace,
        meta_transitions=meta_transitions,
    )
