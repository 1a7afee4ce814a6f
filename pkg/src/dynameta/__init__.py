"""Dyna-style model-based RL with metareasoning-controlled rollout lengths."""

from .dqn import DqnAgent, EpsilonSchedule, ReplayBuffer, epsilon_at
from .dyna import RunConfig, RunResult, evaluate_policy, run_training
from .envs import EnvConfig, EnvKind, Transition, env_reset, env_step, make_env
from .meta import (
    MetaAction, MetaController, MetaObservation, RolloutController,
    ScheduleController, ScriptedController, StaticController,
    apply_meta_action, meta_reward, schedule_k,
)
from .world_model import WorldModel, model_errors, model_fit, model_predict, model_rollout

__version__ = "0.1.0"
