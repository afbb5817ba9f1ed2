"""Dense deep Q-learning baseline with replay and a target network."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ConfigurationError, DivergenceError
from ..neural import Adam, Mlp
from ..staterep import StateNormalizers
from .bundle import PolicyBundle, TrainLogRow


@dataclass(frozen=True)
class DqnConfig:
    learning_rate: float = 1e-4
    replay_capacity: int = 50_000
    batch_size: int = 64
    target_sync_interval: int = 1000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 20_000
    gamma: float = 0.99
    total_timesteps: int = 100_000
    hidden_sizes: tuple = (64, 64)
    activation: str = "relu"
    log_interval_steps: int = 200

    def __post_init__(self) -> None:
        if self.replay_capacity < self.batch_size:
            raise ConfigurationError("replay capacity must be at least the batch size")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in (0, 1)")
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise ConfigurationError("epsilon schedule must satisfy 0 <= end <= start <= 1")
        if self.epsilon_decay_steps < 1 or self.target_sync_interval < 1:
            raise ConfigurationError("decay steps and sync interval must be positive")
        if self.log_interval_steps < 1:
            raise ConfigurationError("log interval must be positive")


def epsilon_at(cfg: DqnConfig, step: int) -> float:
    """Linear exploration schedule from start to end over the decay steps."""
    frac = min(max(step, 0) / cfg.epsilon_decay_steps, 1.0)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


class ReplayBuffer:
    """Circular transition store; uniform sampling with replacement."""

    def __init__(self, capacity: int, obs_dim: int) -> None:
        if capacity < 1:
            raise ConfigurationError("replay capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float64)
        self._size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self._size

    def add(self, obs, action: int, reward: float, next_obs) -> None:
        p = self._pos
        self.obs[p] = obs
        self.actions[p] = action
        self.rewards[p] = reward
        self.next_obs[p] = next_obs
        self._pos = (p + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self._size, size=batch_size)
        return (self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx])


@dataclass
class DqnResult:
    bundle: PolicyBundle
    log: list
    cycle_records: list = field(default_factory=list)


def train_dqn(env_factory: Callable[[int], object], cfg: DqnConfig = DqnConfig(),
              seed: int = 0) -> DqnResult:
    """Replay + target-network Q-learning over the environment's actions.

    The task is continuing, so targets always bootstrap from the target
    network (no terminal masking).  Updates start once the replay holds one
    batch; earlier steps only explore.  Deterministic for a fixed (seed,
    config) pair.
    """
    env = env_factory(seed)
    ss = np.random.SeedSequence(seed)
    s_net, s_explore, s_sample = ss.spawn(3)
    q_net = Mlp([env.obs_dim, *cfg.hidden_sizes, env.n_actions],
                cfg.activation, seed=s_net)
    target_net = q_net.copy()
    opt = Adam(q_net.parameters(), cfg.learning_rate)
    explore_rng = np.random.Generator(np.random.PCG64(s_explore))
    sample_rng = np.random.Generator(np.random.PCG64(s_sample))
    replay = ReplayBuffer(cfg.replay_capacity, env.obs_dim)

    log: list[TrainLogRow] = []
    all_records: list = []
    window_rewards: list = []
    window_losses: list = []
    window_records: list = []
    obs = env.reset()
    step_count = 0
    rows = np.arange(cfg.batch_size)
    while env.clock_s < cfg.total_timesteps:
        eps = epsilon_at(cfg, step_count)
        if explore_rng.random() < eps:
            action = int(explore_rng.integers(env.n_actions))
        else:
            action = int(np.argmax(q_net.predict(obs)))
        next_obs, reward, info = env.step(action)
        replay.add(obs, action, reward, next_obs)
        obs = next_obs
        window_rewards.append(reward)
        new_records = list(info.get("cycles", ()))
        window_records.extend(new_records)
        all_records.extend(new_records)

        if len(replay) >= cfg.batch_size:
            b_obs, b_act, b_rew, b_next = replay.sample(cfg.batch_size, sample_rng)
            targets = b_rew + cfg.gamma * target_net.predict(b_next).max(axis=1)
            q_values = q_net.forward(b_obs)
            err = q_values[rows, b_act] - targets
            loss = float(np.mean(err * err))
            if not np.isfinite(loss):
                raise DivergenceError(f"Q-learning loss diverged at step {step_count}")
            upstream = np.zeros_like(q_values)
            upstream[rows, b_act] = (2.0 / cfg.batch_size) * err
            grads, _ = q_net.backward(upstream)
            opt.step(q_net.gradient_arrays(grads))
            window_losses.append(loss)

        step_count += 1
        if step_count % cfg.target_sync_interval == 0:
            target_net = q_net.copy()
        if step_count % cfg.log_interval_steps == 0:
            q_vals = [r.q_cycle for r in window_records]
            log.append(TrainLogRow(
                rollout_idx=len(log),
                sim_time_s=float(env.clock_s),
                mean_reward=float(np.mean(window_rewards)),
                mean_q_cycle=(float(np.mean(q_vals)) if q_vals else None),
                policy_entropy=eps,
                value_loss=(float(np.mean(window_losses)) if window_losses else 0.0),
            ))
            window_rewards = []
            window_losses = []
            window_records = []

    observation = getattr(env, "observation", None)
    reward_spec = getattr(env, "reward_spec", None)
    bundle = PolicyBundle(
        algo="dqn",
        repr_kind=getattr(observation, "kind", "custom"),
        reward_kind=getattr(reward_spec, "kind", "custom"),
        policy=q_net,
        value=None,
        norms=getattr(observation, "norms", StateNormalizers()),
        seed=seed,
    )
    return DqnResult(bundle=bundle, log=log, cycle_records=all_records)
