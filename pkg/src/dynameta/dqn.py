"""DQN with experience replay, a target network and the double-Q update.

The same agent type serves two roles: the base learner inside the Dyna loop
(trained on real and model-synthesized experience) and the metareasoner that
adjusts the rollout length. Only the hyperparameters differ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .envs import Transition


class ReplayBuffer:
    """Uniform-sampling transition store, unlimited capacity by default.

    Columns are kept as growing numpy arrays so minibatch assembly is a
    single fancy-indexing gather.
    """

    def __init__(self, obs_dim: int, capacity: int | None = None):
        self.obs_dim = obs_dim
        self.capacity = capacity
        self._n = 0
        self._start = 0  # ring offset, used only when capacity is bounded
        cap0 = 256 if capacity is None else capacity
        self._s = np.empty((cap0, obs_dim))
        self._a = np.empty(cap0, dtype=np.int64)
        self._r = np.empty(cap0)
        self._s2 = np.empty((cap0, obs_dim))
        self._goal_terminal = np.empty(cap0, dtype=bool)
        self._truncated = np.empty(cap0, dtype=bool)

    def __len__(self) -> int:
        return self._n

    def _grow(self):
        new_cap = self._s.shape[0] * 2
        for name in ("_s", "_a", "_r", "_s2", "_goal_terminal", "_truncated"):
            old = getattr(self, name)
            shape = (new_cap,) + old.shape[1:]
            buf = np.empty(shape, dtype=old.dtype)
            buf[: self._n] = old[: self._n]
            setattr(self, name, buf)

    def add(self, tr: Transition) -> None:
        if self.capacity is not None and self._n == self.capacity:
            i = self._start
            self._start = (self._start + 1) % self.capacity
        else:
            if self._n == self._s.shape[0]:
                self._grow()
            i = self._n
            self._n += 1
        self._s[i] = tr.state
        self._a[i] = tr.action
        self._r[i] = tr.reward
        self._s2[i] = tr.next_state
        self._goal_terminal[i] = tr.terminal and not tr.truncated
        self._truncated[i] = tr.truncated

    def get(self, i: int) -> Transition:
        if not 0 <= i < self._n:
            raise IndexError(i)
        return Transition(
            self._s[i].copy(), int(self._a[i]), float(self._r[i]),
            self._s2[i].copy(),
            bool(self._goal_terminal[i] or self._truncated[i]),
            bool(self._truncated[i]),
        )

    def clear(self) -> None:
        self._n = 0
        self._start = 0

    def sample_batch(self, batch_size: int, rng: np.random.Generator):
        """(states, actions, rewards, next_states, goal_terminal) arrays."""
        idx = rng.integers(0, self._n, size=batch_size)
        return (
            self._s[idx], self._a[idx], self._r[idx],
            self._s2[idx], self._goal_terminal[idx],
        )

    def sample_states(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Uniformly sampled stored states, used as rollout start points."""
        idx = rng.integers(0, self._n, size=count)
        return self._s[idx].copy()

    def columns(self):
        """Views of (states, actions, rewards, next_states, goal_terminal)."""
        n = self._n
        return self._s[:n], self._a[:n], self._r[:n], self._s2[:n], self._goal_terminal[:n]


@dataclass
class EpsilonSchedule:
    start: float
    end: float
    warmup_steps: int
    anneal_steps: int


def epsilon_at(sched: EpsilonSchedule, t: int) -> float:
    if t < sched.warmup_steps:
        return sched.start
    if sched.anneal_steps <= 0 or t >= sched.warmup_steps + sched.anneal_steps:
        return sched.end
    frac = (t - sched.warmup_steps) / sched.anneal_steps
    return sched.start + (sched.end - sched.start) * frac


@dataclass
class DqnAgent:
    online: nn.Mlp
    target: nn.Mlp
    opt: nn.AdamState
    gamma: float = 0.99
    batch_size: int = 32
    target_sync_period: int | None = 2000  # None: caller syncs explicitly
    update_count: int = 0

    @property
    def action_count(self) -> int:
        return self.online.layer_sizes[-1]


def make_agent(
    obs_dim: int,
    action_count: int,
    hidden: tuple[int, int],
    learning_rate: float,
    rng: np.random.Generator,
    gamma: float = 0.99,
    target_sync_period: int | None = 2000,
) -> DqnAgent:
    sizes = [obs_dim, *hidden, action_count]
    online = nn.mlp_init(sizes, layer_norm=False, rng=rng)
    target = nn.copy_params(online)
    opt = nn.adam_init(online, learning_rate)
    return DqnAgent(online, target, opt, gamma=gamma,
                    target_sync_period=target_sync_period)


def select_action(agent: DqnAgent, obs: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(0, agent.action_count))
    q = nn.forward(agent.online, obs.reshape(1, -1))[0]
    return int(np.argmax(q))  # argmax takes the lowest index on ties


def agent_greedy_policy(agent: DqnAgent):
    def policy(obs: np.ndarray) -> int:
        q = nn.forward(agent.online, obs.reshape(1, -1))[0]
        return int(np.argmax(q))
    return policy


def sync_target(agent: DqnAgent) -> None:
    agent.target = nn.copy_params(agent.online)


def dqn_update(agent: DqnAgent, buffer: ReplayBuffer,
               rng: np.random.Generator) -> float | None:
    """One double-Q gradient step from a uniform minibatch.

    Returns the mean squared TD error, or None while the buffer is still
    below one batch (warmup: the update is skipped, not queued). Transitions
    that terminated at the goal do not bootstrap; cap-truncated ones do.
    """
    if len(buffer) < agent.batch_size:
        return None
    s, a, r, s2, goal_terminal = buffer.sample_batch(agent.batch_size, rng)

    q_next_online = nn.forward(agent.online, s2)
    best_next = np.argmax(q_next_online, axis=1)
    q_next_target = nn.forward(agent.target, s2)
    bootstrap = q_next_target[np.arange(len(best_next)), best_next]
    y = r + agent.gamma * bootstrap * ~goal_terminal

    pred, cache = nn.forward_cached(agent.online, s)
    target_matrix = pred.copy()
    target_matrix[np.arange(len(a)), a] = y
    loss, grads = nn.backward_from(agent.online, cache, pred,
                                   nn.LossSpec(nn.MSE, target_matrix))
    # the substituted-target trick averages over all action columns; rescale
    # so the loss and step correspond to the TD error on the taken actions
    m = agent.action_count
    loss *= m
    grads *= m
    nn.adam_step(agent.opt, agent.online, grads)

    agent.update_count += 1
    if agent.target_sync_period and agent.update_count % agent.target_sync_period == 0:
        sync_target(agent)
    return loss


def agent_to_json(agent: DqnAgent) -> dict:
    return {
        "online": nn.mlp_to_json(agent.online),
        "target": nn.mlp_to_json(agent.target),
        "meta": {
            "gamma": agent.gamma,
            "target_sync_period": agent.target_sync_period,
            "update_counter": agent.update_count,
        },
    }


def agent_from_json(doc: dict, learning_rate: float) -> DqnAgent:
    online = nn.mlp_from_json(doc["online"])
    target = nn.mlp_from_json(doc["target"])
    meta = doc["meta"]
    agent = DqnAgent(
        online, target, nn.adam_init(online, learning_rate),
        gamma=meta["gamma"],
        target_sync_period=meta["target_sync_period"],
        update_count=meta["update_counter"],
    )
    return agent
