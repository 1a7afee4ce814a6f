"""Learned deterministic forward model of the environment.

Three independent subnetworks map (observation, one-hot action) to a
next-state delta, a reward, and a terminal logit. Each is trained with Adam
on an 80/20 train/validation split and stops as soon as the validation loss
rises above the previous epoch's value, restoring the best parameters seen.

Inputs and delta targets are standardized per feature with statistics from
the training split; predictions are clipped to the environment's observation
bounds so rollouts cannot wander out of the valid domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .dqn import ReplayBuffer
from .envs import Transition

TRANSITION_HIDDEN = (32, 16)
REWARD_HIDDEN = (64, 32)
TERMINAL_HIDDEN = (32, 16)
MODEL_LR = 0.001
MODEL_BATCH = 32
VALIDATION_FRACTION = 0.2
DEFAULT_EPOCH_CAP = 200
MIN_FIT_SIZE = 50


class InsufficientData(ValueError):
    pass


class NonFinitePrediction(FloatingPointError):
    """A model output stopped being finite; rollouts abort on this."""


@dataclass
class SubnetReport:
    epochs: int
    train_loss: float
    val_loss: float
    stop_reason: str  # "val_increase" | "epoch_cap"


@dataclass
class FitReport:
    transition: SubnetReport
    reward: SubnetReport
    terminal: SubnetReport

    def to_json(self) -> dict:
        return {
            name: vars(getattr(self, name))
            for name in ("transition", "reward", "terminal")
        }


@dataclass
class WorldModel:
    transition_net: nn.Mlp
    reward_net: nn.Mlp
    terminal_net: nn.Mlp
    input_mean: np.ndarray
    input_std: np.ndarray
    delta_mean: np.ndarray
    delta_std: np.ndarray
    obs_low: np.ndarray
    obs_high: np.ndarray
    action_count: int = 3


def _standardize_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-8] = 1.0  # constant features pass through unscaled
    return mean, std


def fit_subnetwork(net: nn.Mlp, opt: nn.AdamState, run_epoch, val_loss,
                   epoch_cap: int = DEFAULT_EPOCH_CAP) -> SubnetReport:
    """Early-stopping driver shared by the three subnetworks.

    ``run_epoch()`` performs one pass of minibatch training and returns the
    mean training loss; ``val_loss()`` evaluates the current parameters on
    the validation split. Training stops when validation loss exceeds the
    previous epoch's value (or at the cap) and the parameters with the best
    validation loss are restored onto ``net``.
    """
    best_val = np.inf
    best_params = None
    prev_val = None
    train_loss = np.nan
    stop_reason = "epoch_cap"
    epochs = 0
    for _ in range(epoch_cap):
        train_loss = run_epoch()
        epochs += 1
        v = val_loss()
        if v < best_val:
            best_val = v
            best_params = nn.copy_params(net)
        if prev_val is not None and v > prev_val:
            stop_reason = "val_increase"
            break
        prev_val = v
    if best_params is not None:
        nn.assign_params(net, best_params)
    return SubnetReport(epochs, float(train_loss), float(best_val), stop_reason)


def _train_one(net, x_train, y_train, x_val, y_val, loss_kind, rng, epoch_cap):
    opt = nn.adam_init(net, MODEL_LR)

    def run_epoch() -> float:
        order = rng.permutation(len(x_train))
        xs, ys = x_train[order], y_train[order]  # minibatches become views
        total, count = 0.0, 0
        for lo in range(0, len(order), MODEL_BATCH):
            xb = xs[lo: lo + MODEL_BATCH]
            loss, grads = nn.backward(net, xb, nn.LossSpec(loss_kind, ys[lo: lo + MODEL_BATCH]))
            nn.adam_step(opt, net, grads)
            total += loss * len(xb)
            count += len(xb)
        return total / count

    def val_loss() -> float:
        return nn.loss_value(loss_kind, nn.forward(net, x_val), y_val)

    return fit_subnetwork(net, opt, run_epoch, val_loss, epoch_cap)


def model_fit(data: ReplayBuffer, obs_low: np.ndarray, obs_high: np.ndarray,
              rng: np.random.Generator,
              epoch_cap: int = DEFAULT_EPOCH_CAP) -> tuple[WorldModel, FitReport]:
    """Supervised fit of all three subnetworks on the full buffer."""
    n = len(data)
    if n < MIN_FIT_SIZE:
        raise InsufficientData(f"need at least {MIN_FIT_SIZE} transitions, have {n}")

    obs, actions, rewards_col, next_obs, goal_terminal = data.columns()
    rewards = rewards_col.reshape(-1, 1)
    # cap truncations are not real absorbing states, so they are not
    # terminal examples for the model
    terminal = goal_terminal.astype(np.float64).reshape(-1, 1)

    order = rng.permutation(n)  # shuffled once, then split
    n_val = max(1, int(round(n * VALIDATION_FRACTION)))
    val_idx, train_idx = order[:n_val], order[n_val:]

    obs_dim = obs.shape[1]
    action_count = 3
    one_hot = np.zeros((n, action_count))
    one_hot[np.arange(n), actions] = 1.0
    x_raw = np.hstack([obs, one_hot])
    delta_raw = next_obs - obs

    input_mean, input_std = _standardize_stats(x_raw[train_idx])
    delta_mean, delta_std = _standardize_stats(delta_raw[train_idx])
    x = (x_raw - input_mean) / input_std
    delta = (delta_raw - delta_mean) / delta_std

    in_dim = obs_dim + action_count
    t_net = nn.mlp_init([in_dim, *TRANSITION_HIDDEN, obs_dim], layer_norm=True, rng=rng)
    r_net = nn.mlp_init([in_dim, *REWARD_HIDDEN, 1], layer_norm=True, rng=rng)
    d_net = nn.mlp_init([in_dim, *TERMINAL_HIDDEN, 1], layer_norm=True, rng=rng)

    report = FitReport(
        transition=_train_one(t_net, x[train_idx], delta[train_idx],
                              x[val_idx], delta[val_idx], nn.MSE, rng, epoch_cap),
        reward=_train_one(r_net, x[train_idx], rewards[train_idx],
                          x[val_idx], rewards[val_idx], nn.MSE, rng, epoch_cap),
        terminal=_train_one(d_net, x[train_idx], terminal[train_idx],
                            x[val_idx], terminal[val_idx], nn.BCE_WITH_LOGITS, rng, epoch_cap),
    )
    model = WorldModel(
        t_net, r_net, d_net,
        input_mean, input_std, delta_mean, delta_std,
        np.asarray(obs_low, dtype=np.float64), np.asarray(obs_high, dtype=np.float64),
        action_count,
    )
    return model, report


def model_predict(m: WorldModel, obs: np.ndarray, a: int):
    """Deterministic one-step prediction: (next_obs, reward, terminal)."""
    x = np.zeros((1, obs.shape[0] + m.action_count))
    x[0, : obs.shape[0]] = obs
    x[0, obs.shape[0] + a] = 1.0
    x -= m.input_mean
    x /= m.input_std
    delta = nn.forward(m.transition_net, x)[0] * m.delta_std + m.delta_mean
    reward = float(nn.forward(m.reward_net, x)[0, 0])
    logit = float(nn.forward(m.terminal_net, x)[0, 0])
    next_obs = np.clip(obs + delta, m.obs_low, m.obs_high)
    if not (np.all(np.isfinite(next_obs)) and np.isfinite(reward) and np.isfinite(logit)):
        raise NonFinitePrediction("model produced a non-finite prediction")
    return next_obs, reward, logit > 0.0  # sigmoid(logit) > 0.5


def model_rollout(m: WorldModel, start_obs: np.ndarray, policy, k: int,
                  rng: np.random.Generator) -> list[Transition]:
    """Up to ``k`` model steps from ``start_obs`` under ``policy(obs, rng)``.

    Stops early on a predicted terminal; a non-finite prediction aborts the
    rollout and returns the prefix generated so far.
    """
    out: list[Transition] = []
    obs = np.asarray(start_obs, dtype=np.float64)
    for _ in range(k):
        a = policy(obs, rng)
        try:
            next_obs, reward, terminal = model_predict(m, obs, a)
        except NonFinitePrediction:
            break
        out.append(Transition(obs.copy(), a, reward, next_obs.copy(), terminal))
        if terminal:
            break
        obs = next_obs
    return out


def model_errors(m: WorldModel, policy,
                 episode_refs: list[tuple[np.ndarray, float, int]],
                 episode_cap: int,
                 rng: np.random.Generator) -> tuple[float, float]:
    """Signed model error on episode returns and lengths.

    For each reference episode (initial observation, environment return,
    environment length) one model episode is simulated from the same start
    under the same policy. Positive return error means the model is
    optimistic: it predicts higher returns than the environment delivered.
    """
    if not episode_refs:
        raise ValueError("episode_refs must be non-empty")
    return_errs, length_errs = [], []
    for start_obs, env_return, env_length in episode_refs:
        obs = np.asarray(start_obs, dtype=np.float64)
        model_return, model_length = 0.0, 0
        for _ in range(episode_cap):
            a = policy(obs, rng)
            try:
                obs, reward, terminal = model_predict(m, obs, a)
            except NonFinitePrediction:
                break
            model_return += reward
            model_length += 1
            if terminal:
                break
        return_errs.append(model_return - env_return)
        length_errs.append(model_length - env_length)
    return float(np.mean(return_errs)), float(np.mean(length_errs))
