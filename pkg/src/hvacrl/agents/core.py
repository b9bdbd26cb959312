"""The four control-learning algorithms and their training loops.

All agents share the same skeleton: twin critics trained on the one-step
bootstrap target r + gamma * (1 - terminal) * min(Q1', Q2'), an actor
updated against the learned critics, and polyak-averaged target networks.
They differ only in how the next action is chosen for the target, how the
actor objective is shaped, and whether an entropy temperature is tuned.

Everything is deterministic given the config seed: network init, batch
sampling, exploration, and target smoothing all consume one generator.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DivergenceError, SpecError
from ..fingerprint import fingerprint, to_jsonable
from ..neuralsub import tensor as T
from ..neuralsub.checkpoint import load_checkpoint, read_header, save_checkpoint
from ..neuralsub.layers import Module
from ..neuralsub.optim import Adam
from ..neuralsub.tensor import Tensor
from .config import AgentConfig
from .nets import DeterministicActor, GaussianActor, TwinCritic
from .replay import ReplayBuffer, ReplayView, WindowBatch

Q_DIVERGENCE_LIMIT = 1e6


class Agent:
    """Shared machinery: networks, optimizers, target updates, guards."""

    def __init__(self, cfg: AgentConfig, obs_dim: int, act_dim: int):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.rng = np.random.default_rng(cfg.seed)
        self.update_count = 0
        self._build()

    def _build(self):
        raise NotImplementedError

    # -- persistence ---------------------------------------------------

    def _containers(self) -> dict[str, Module]:
        raise NotImplementedError

    def _scalars(self) -> dict[str, Tensor]:
        return {}

    def fingerprint(self) -> str:
        return fingerprint({
            "agent_config": to_jsonable(self.cfg),
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
        })

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, module in self._containers().items():
            for name, arr in module.state_arrays().items():
                out[f"{prefix}.{name}"] = arr
        for name, t in self._scalars().items():
            out[name] = t.data.copy()
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        containers = self._containers()
        buckets: dict[str, dict[str, np.ndarray]] = {k: {} for k in containers}
        scalars = self._scalars()
        for name, arr in arrays.items():
            prefix, _, rest = name.partition(".")
            if prefix in containers and rest:
                buckets[prefix][rest] = arr
            elif name in scalars:
                scalars[name].data[...] = np.asarray(arr, dtype=np.float32)
            else:
                raise SpecError(f"unexpected checkpoint entry {name!r}")
        for prefix, module in containers.items():
            module.load_state_arrays(buckets[prefix])

    def save(self, path, *, epoch: int, step: int, extra_meta: dict | None = None):
        meta = {
            "algo": self.cfg.algo,
            "agent_config": to_jsonable(self.cfg),
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "epoch": epoch,
            "step": step,
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(
            path, self.state_arrays(),
            config_fingerprint=self.fingerprint(),
            seed_record={"seed": self.cfg.seed, "update_count": self.update_count},
            meta=meta)

    # -- acting ---------------------------------------------------------

    def policy_action(self, windows, valid, deterministic: bool = True
                      ) -> np.ndarray:
        """Normalized action from the current policy, no extra noise."""
        raise NotImplementedError

    def explore_action(self, windows, valid) -> np.ndarray:
        """Behavior action for online rollouts (policy plus exploration noise)."""
        a = self.policy_action(windows, valid, deterministic=self._explore_base())
        if self.cfg.explore_noise > 0.0:
            a = a + self.rng.normal(0.0, self.cfg.explore_noise, size=a.shape)
        return np.clip(a, -1.0, 1.0).astype(np.float32)

    def _explore_base(self) -> bool:
        return True  # deterministic base action; stochastic actors override

    # -- learning -------------------------------------------------------

    def update(self, batch: WindowBatch) -> dict:
        self.update_count += 1
        info = self._critic_update(batch)
        info.update(self._policy_update(batch))
        self._update_targets()
        self._assert_finite()
        if info["median_abs_q"] > Q_DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"critic diverged at update {self.update_count}: "
                f"median |Q| = {info['median_abs_q']:.3e}",
                diagnostics={"update": self.update_count, **info})
        return info

    def _critic_update(self, batch: WindowBatch) -> dict:
        target = self._td_target(batch)
        feat = self.critic.features(batch.windows, batch.valid)
        acts = Tensor(batch.actions)
        q1 = self.critic.q1_from(feat, acts)
        q2 = self.critic.q2_from(feat, acts)
        td = T.scale(T.add(T.mse(q1, target), T.mse(q2, target)), 0.5)
        loss, extra = self._critic_penalty(td, feat, batch, (q1, q2))
        self.critic_opt.zero_grad()
        loss.backward()
        self.critic_opt.step()
        info = {
            "critic_loss": float(loss.data),
            "q1_mean": float(q1.data.mean()),
            "median_abs_q": float(np.median(np.abs(q1.data))),
        }
        info.update(extra)
        return info

    def _critic_penalty(self, td, feat, batch, qs):
        return td, {}

    def _td_target(self, batch: WindowBatch) -> np.ndarray:
        raise NotImplementedError

    def _policy_update(self, batch: WindowBatch) -> dict:
        raise NotImplementedError

    def _update_targets(self) -> None:
        raise NotImplementedError

    def _assert_finite(self):
        for prefix, module in self._containers().items():
            for name, p in module.named_parameters():
                if not np.all(np.isfinite(p.data)):
                    raise DivergenceError(
                        f"non-finite parameter {prefix}.{name} "
                        f"after update {self.update_count}")
        for name, t in self._scalars().items():
            if not np.all(np.isfinite(t.data)):
                raise DivergenceError(f"non-finite parameter {name}")

    def q_values(self, windows, valid, actions) -> tuple[np.ndarray, np.ndarray]:
        """Both critic heads as plain arrays (no gradients)."""
        with T.no_grad():
            q1, q2 = self.critic.both(windows, valid, Tensor(
                np.asarray(actions, dtype=np.float32)))
        return q1.data, q2.data


class TD3Agent(Agent):
    """Twin critics, smoothed deterministic targets, delayed actor updates."""

    def _build(self):
        cfg, od, ad = self.cfg, self.obs_dim, self.act_dim
        self.actor = DeterministicActor(cfg, od, ad, self.rng)
        self.actor_target = DeterministicActor(cfg, od, ad, self.rng)
        self.actor_target.copy_from(self.actor)
        self.critic = TwinCritic(cfg, od, ad, self.rng)
        self.critic_target = TwinCritic(cfg, od, ad, self.rng)
        self.critic_target.copy_from(self.critic)
        self.actor_opt = Adam(self.actor.parameters(), lr=cfg.actor_lr)
        self.critic_opt = Adam(self.critic.parameters(), lr=cfg.critic_lr)

    def _containers(self):
        return {"actor": self.actor, "actor_target": self.actor_target,
                "critic": self.critic, "critic_target": self.critic_target}

    def policy_action(self, windows, valid, deterministic: bool = True):
        a = self.actor.act(windows, valid)
        if not deterministic and self.cfg.explore_noise > 0.0:
            a = a + self.rng.normal(0.0, self.cfg.explore_noise, size=a.shape)
        return np.clip(a, -1.0, 1.0).astype(np.float32)

    def _td_target(self, batch: WindowBatch) -> np.ndarray:
        cfg = self.cfg
        with T.no_grad():
            a2 = self.actor_target(batch.next_windows, batch.next_valid).data
            noise = self.rng.normal(0.0, cfg.target_noise, size=a2.shape)
            noise = np.clip(noise, -cfg.target_noise_clip, cfg.target_noise_clip)
            a2 = np.clip(a2 + noise.astype(np.float32), -1.0, 1.0)
            q1t, q2t = self.critic_target.both(
                batch.next_windows, batch.next_valid, Tensor(a2))
            boot = np.minimum(q1t.data, q2t.data)
        return (batch.rewards
                + cfg.gamma * (1.0 - batch.terminals) * boot).astype(np.float32)

    def _actor_loss(self, batch: WindowBatch):
        a = self.actor(batch.windows, batch.valid)
        q1 = self.critic.q1(batch.windows, batch.valid, a)
        return T.scale(T.mean(q1), -1.0), {"actor_q_mean": float(q1.data.mean())}

    def _policy_update(self, batch: WindowBatch) -> dict:
        if self.update_count % self.cfg.policy_delay != 0:
            return {}
        loss, extra = self._actor_loss(batch)
        self.actor_opt.zero_grad()
        loss.backward()
        self.actor_opt.step()
        return {"actor_loss": float(loss.data), **extra}

    def _update_targets(self):
        # targets track the online nets only on actor-update steps
        if self.update_count % self.cfg.policy_delay == 0:
            self.critic_target.polyak_from(self.critic, self.cfg.tau)
            self.actor_target.polyak_from(self.actor, self.cfg.tau)


class TD3BCAgent(TD3Agent):
    """TD3 with a behavior-cloning pull toward the dataset actions.

    Default form scales the critic term by bc_weight / mean|Q1| so the two
    terms stay commensurate as Q magnitudes grow; `literal_bc_bonus`
    instead keeps the raw critic objective and adds a fixed-weight
    squared-distance bonus.
    """

    def _actor_loss(self, batch: WindowBatch):
        a = self.actor(batch.windows, batch.valid)
        q1 = self.critic.q1(batch.windows, batch.valid, a)
        bc_dist = T.mean(T.sum_(T.square(T.sub(a, Tensor(batch.actions))),
                                axis=1))
        if self.cfg.literal_bc_bonus:
            lam = 1.0
            loss = T.add(T.scale(T.mean(q1), -1.0),
                         T.scale(bc_dist, self.cfg.bc_weight))
        else:
            lam = self.cfg.bc_weight / (float(np.abs(q1.data).mean()) + 1e-9)
            loss = T.add(T.scale(T.mean(q1), -lam), bc_dist)
        return loss, {"actor_q_mean": float(q1.data.mean()),
                      "bc_distance": float(bc_dist.data),
                      "bc_lambda": float(lam)}


class SACAgent(Agent):
    """Stochastic tanh-Gaussian actor with tuned entropy temperature."""

    def _build(self):
        cfg, od, ad = self.cfg, self.obs_dim, self.act_dim
        self.actor = GaussianActor(cfg, od, ad, self.rng)
        self.critic = TwinCritic(cfg, od, ad, self.rng)
        self.critic_target = TwinCritic(cfg, od, ad, self.rng)
        self.critic_target.copy_from(self.critic)
        self.log_alpha = T.parameter(np.zeros(()))
        self.target_entropy = -float(ad)
        self.actor_opt = Adam(self.actor.parameters(), lr=cfg.actor_lr)
        self.critic_opt = Adam(self.critic.parameters(), lr=cfg.critic_lr)
        self.alpha_opt = Adam([self.log_alpha], lr=cfg.alpha_lr)

    def _containers(self):
        return {"actor": self.actor, "critic": self.critic,
                "critic_target": self.critic_target}

    def _scalars(self):
        return {"log_alpha": self.log_alpha}

    @property
    def alpha(self) -> float:
        return math.exp(float(self.log_alpha.data))

    def _explore_base(self) -> bool:
        return False

    def policy_action(self, windows, valid, deterministic: bool = True):
        return self.actor.act(windows, valid, rng=self.rng,
                              deterministic=deterministic)

    def _td_target(self, batch: WindowBatch) -> np.ndarray:
        cfg = self.cfg
        with T.no_grad():
            a2, logp2 = self.actor.sample(batch.next_windows, batch.next_valid,
                                          self.rng)
            q1t, q2t = self.critic_target.both(
                batch.next_windows, batch.next_valid, a2)
            boot = np.minimum(q1t.data, q2t.data) - self.alpha * logp2.data
        return (batch.rewards
                + cfg.gamma * (1.0 - batch.terminals) * boot).astype(np.float32)

    def _policy_update(self, batch: WindowBatch) -> dict:
        a, logp = self.actor.sample(batch.windows, batch.valid, self.rng)
        q1, q2 = self.critic.both(batch.windows, batch.valid, a)
        qmin = T.minimum(q1, q2)
        loss = T.mean(T.sub(T.scale(logp, self.alpha), qmin))
        self.actor_opt.zero_grad()
        loss.backward()
        self.actor_opt.step()

        # temperature follows the entropy gap: when entropy falls below the
        # target (log-probs above -target_entropy) alpha rises, and vice versa
        gap = float(np.mean(logp.data)) + self.target_entropy
        alpha_loss = T.scale(self.log_alpha, -gap)
        self.alpha_opt.zero_grad()
        alpha_loss.backward()
        self.alpha_opt.step()
        return {"actor_loss": float(loss.data),
                "entropy_mean": -float(np.mean(logp.data)),
                "alpha": self.alpha}

    def _update_targets(self):
        self.critic_target.polyak_from(self.critic, self.cfg.tau)


class CQLAgent(SACAgent):
    """SAC plus a conservative penalty that pushes policy-action Q values
    down toward the dataset-action Q values.

    With cql_weight == 0 the penalty branch is skipped entirely, so the
    update (including generator consumption) is exactly the SAC update.
    """

    def _policy_samples(self, windows, valid, m: int) -> np.ndarray:
        """m actions per window drawn from the current policy, (B*m, A)."""
        with T.no_grad():
            mean, log_std = self.actor.dist_params(windows, valid)
            wide_mean = Tensor(np.repeat(mean.data, m, axis=0))
            wide_std = Tensor(np.repeat(log_std.data, m, axis=0))
            a_pi, _ = self.actor.sample_from_params(wide_mean, wide_std,
                                                    self.rng)
        return a_pi.data

    def _critic_penalty(self, td, feat, batch, qs):
        cfg = self.cfg
        if cfg.cql_weight == 0.0:
            return td, {}
        q1, q2 = qs
        b = len(batch)
        m = cfg.cql_samples
        a_pi = self._policy_samples(batch.windows, batch.valid, m)
        rep = T.index_select(feat, np.repeat(np.arange(b), m))
        acts = Tensor(a_pi)
        q1_pi = self.critic.q1_from(rep, acts)
        q2_pi = self.critic.q2_from(rep, acts)
        gap = T.sub(T.add(T.mean(q1_pi), T.mean(q2_pi)),
                    T.add(T.mean(q1), T.mean(q2)))
        loss = T.add(td, T.scale(gap, cfg.cql_weight))
        return loss, {"cql_penalty": float(gap.data)}

    def conservative_gap(self, windows, valid, actions,
                         mc_samples: int | None = None) -> float:
        """E[Q at policy actions] - E[Q at the given actions], no gradients.

        This is the quantity the penalty weights: it vanishes when the
        policy's action distribution matches the actions it is compared
        against, and grows when the policy wanders off the data.
        """
        m = mc_samples or self.cfg.cql_samples
        b = windows.shape[0]
        a_pi = self._policy_samples(windows, valid, m)
        with T.no_grad():
            feat = self.critic.features(windows, valid)
            rep = T.index_select(feat, np.repeat(np.arange(b), m))
            q1_pi = self.critic.q1_from(rep, Tensor(a_pi))
            q2_pi = self.critic.q2_from(rep, Tensor(a_pi))
            q1, q2 = self.critic.both_from(feat, Tensor(
                np.asarray(actions, dtype=np.float32)))
        return float(q1_pi.data.mean() + q2_pi.data.mean()
                     - q1.data.mean() - q2.data.mean())


ALGO_CLASSES = {"td3": TD3Agent, "sac": SACAgent,
                "td3bc": TD3BCAgent, "cql": CQLAgent}


def make_agent(cfg: AgentConfig, obs_dim: int, act_dim: int) -> Agent:
    return ALGO_CLASSES[cfg.algo](cfg, obs_dim, act_dim)


def load_agent(path) -> tuple[Agent, dict]:
    """Rebuild an agent from a checkpoint; returns (agent, header)."""
    header = read_header(path)
    meta = header["meta"]
    cfg = AgentConfig(**meta["agent_config"])
    agent = make_agent(cfg, int(meta["obs_dim"]), int(meta["act_dim"]))
    arrays, _ = load_checkpoint(path, expect_fingerprint=agent.fingerprint())
    agent.load_state(arrays)
    return agent, header


def select_action(agent: Agent, window: np.ndarray, valid: np.ndarray,
                  deterministic: bool = True) -> np.ndarray:
    """Single normalized action for one window; accepts (L, D) or (1, L, D)."""
    if window.ndim == 2:
        window = window[None]
        valid = valid[None]
    return agent.policy_action(window, valid, deterministic=deterministic)[0]


class PolicyController:
    """Adapts an agent to the physical-units controller interface.

    Normalizes incoming observations, maintains the rolling history window,
    and denormalizes the policy's action. Call reset() between episodes.
    """

    def __init__(self, agent: "Agent", obs_spec, act_spec,
                 deterministic: bool = True):
        from ..envcore import Action, denormalize_action, normalize_obs
        if agent.obs_dim != obs_spec.size or agent.act_dim != act_spec.size:
            raise SpecError(
                f"policy was built for {agent.obs_dim}/{agent.act_dim} dims, "
                f"environment provides {obs_spec.size}/{act_spec.size}")
        self._normalize_obs = normalize_obs
        self._denormalize = denormalize_action
        self._action_cls = Action
        self.agent = agent
        self.obs_spec = obs_spec
        self.act_spec = act_spec
        self.deterministic = deterministic
        self.window = RolloutWindow(agent.obs_dim, agent.cfg.seq_len)

    def reset(self):
        self.window.reset()

    def normalized_action(self, obs) -> np.ndarray:
        self.window.push(self._normalize_obs(obs, self.obs_spec))
        return self.agent.policy_action(*self.window.arrays(),
                                        deterministic=self.deterministic)[0]

    def __call__(self, obs):
        act_n = self.normalized_action(obs)
        return self._denormalize(
            self._action_cls(values=np.asarray(act_n, dtype=np.float64),
                             normalized=True), self.act_spec)


class RolloutWindow:
    """Rolling left-aligned observation window maintained during a rollout."""

    def __init__(self, obs_dim: int, seq_len: int):
        if seq_len < 1:
            raise SpecError("seq_len must be >= 1")
        self.buf = np.zeros((seq_len, obs_dim), dtype=np.float32)
        self.count = 0

    def reset(self):
        self.buf[...] = 0.0
        self.count = 0

    def push(self, obs_normalized):
        L = self.buf.shape[0]
        if self.count < L:
            self.buf[self.count] = obs_normalized
            self.count += 1
        else:
            self.buf[:-1] = self.buf[1:]
            self.buf[-1] = obs_normalized

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        valid = (np.arange(self.buf.shape[0]) < self.count)[None]
        return self.buf[None], valid


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainSummary:
    """Per-epoch records plus the best evaluation seen (by avg_reward)."""

    records: list = field(default_factory=list)
    checkpoint_paths: list = field(default_factory=list)
    best_epoch: int | None = None
    best_eval: dict | None = None
    buffer: ReplayBuffer | None = None

    def consider(self, epoch: int, eval_metrics: dict | None):
        if not eval_metrics:
            return
        score = eval_metrics.get("avg_reward")
        if score is None:
            return
        if self.best_eval is None or score > self.best_eval["avg_reward"]:
            self.best_epoch = epoch
            self.best_eval = dict(eval_metrics)


def _append_jsonl(path, row: dict):
    if path is None:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(row, sort_keys=True) + "\n")


def _mean_of(rows: list[dict]) -> dict:
    if not rows:
        return {}
    keys = set().union(*rows)
    return {k: float(np.mean([r[k] for r in rows if k in r])) for k in keys}


def _finish_epoch(agent, summary, epoch, step, epoch_infos, eval_fn,
                  checkpoint_dir, log_path, t0, seed):
    eval_metrics = eval_fn(agent, epoch) if eval_fn is not None else None
    if checkpoint_dir is not None:
        ckpt = Path(checkpoint_dir) / f"epoch_{epoch:04d}.ckpt"
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        agent.save(ckpt, epoch=epoch, step=step)
        summary.checkpoint_paths.append(str(ckpt))
    row = {
        "epoch": epoch,
        "step": step,
        "seed": seed,
        "wall_s": round(time.perf_counter() - t0, 3),
        "losses": _mean_of(epoch_infos),
    }
    if eval_metrics is not None:
        row["eval"] = {k: (float(v) if isinstance(v, (int, float))
                           and not isinstance(v, bool) else v)
                       for k, v in eval_metrics.items()}
    summary.records.append(row)
    _append_jsonl(log_path, row)
    summary.consider(epoch, eval_metrics)


def train_offline(agent: Agent, data: ReplayView, *, eval_fn=None,
                  checkpoint_dir=None, log_path=None) -> TrainSummary:
    """Gradient-step training on a fixed dataset.

    Runs cfg.train_steps updates, sampling cfg.batch_size windows per step.
    Every cfg.epoch_steps steps it checkpoints, optionally evaluates, and
    appends one JSON line to the log.  train_steps == 0 just writes the
    initialized policy (epoch 0) so downstream tooling has a checkpoint.
    """
    cfg = agent.cfg
    summary = TrainSummary()
    t0 = time.perf_counter()
    if cfg.train_steps == 0:
        _finish_epoch(agent, summary, 0, 0, [], eval_fn,
                      checkpoint_dir, log_path, t0, cfg.seed)
        return summary
    epoch_infos: list[dict] = []
    try:
        for step in range(1, cfg.train_steps + 1):
            batch = data.sample_batch(cfg.batch_size, cfg.seq_len, agent.rng)
            epoch_infos.append(agent.update(batch))
            if step % cfg.epoch_steps == 0 or step == cfg.train_steps:
                epoch = (step + cfg.epoch_steps - 1) // cfg.epoch_steps
                _finish_epoch(agent, summary, epoch, step, epoch_infos,
                              eval_fn, checkpoint_dir, log_path, t0, cfg.seed)
                epoch_infos = []
    except DivergenceError as e:
        _append_jsonl(log_path, {"error": str(e), "seed": cfg.seed,
                                 "diagnostics": {k: v for k, v in
                                                 e.diagnostics.items()
                                                 if isinstance(v, (int, float))}})
        raise
    return summary


def train_online(agent: Agent, make_env, *, start_steps: int = 1000,
                 buffer_capacity: int = 200_000, eval_fn=None,
                 checkpoint_dir=None, log_path=None) -> TrainSummary:
    """Classic off-policy online training against a live environment.

    `make_env(episode_index)` supplies the environment for each episode, so
    callers can rotate weather conditions between episodes.  Runs
    cfg.train_steps environment steps with one gradient update per step
    once the warmup of uniform-random actions has filled the buffer.
    Episode ends are stored as terminal steps.  Observations are stored
    normalized; actions are stored in the normalized space the policy acts
    in.  The filled replay buffer is returned on the summary.
    """
    from ..envcore import Action, denormalize_action, normalize_obs

    cfg = agent.cfg
    summary = TrainSummary()
    t0 = time.perf_counter()
    env = make_env(0)
    buffer = ReplayBuffer(agent.obs_dim, agent.act_dim,
                          capacity=buffer_capacity)
    summary.buffer = buffer
    window = RolloutWindow(agent.obs_dim, cfg.seq_len)
    episode = 0
    obs_n = normalize_obs(env.reset(seed=cfg.seed * 100_003 + episode),
                          env.obs_spec)
    window.push(obs_n)
    update_after = max(start_steps, cfg.batch_size)
    epoch_infos: list[dict] = []
    try:
        for step in range(1, cfg.train_steps + 1):
            if step <= start_steps:
                act_n = agent.rng.uniform(-1.0, 1.0,
                                          size=agent.act_dim).astype(np.float32)
            else:
                act_n = agent.explore_action(*window.arrays())[0]
            phys = denormalize_action(
                Action(values=np.asarray(act_n, dtype=np.float64),
                       normalized=True), env.act_spec)
            next_obs, reward, done, _ = env.step(phys)
            buffer.add(obs_n, act_n, reward, done)
            if done:
                episode += 1
                env = make_env(episode)
                obs_n = normalize_obs(
                    env.reset(seed=cfg.seed * 100_003 + episode), env.obs_spec)
                window.reset()
            else:
                obs_n = normalize_obs(next_obs, env.obs_spec)
            window.push(obs_n)
            if step > update_after:
                batch = buffer.view().sample_batch(cfg.batch_size, cfg.seq_len,
                                                   agent.rng)
                epoch_infos.append(agent.update(batch))
            if step % cfg.epoch_steps == 0 or step == cfg.train_steps:
                epoch = (step + cfg.epoch_steps - 1) // cfg.epoch_steps
                _finish_epoch(agent, summary, epoch, step, epoch_infos,
                              eval_fn, checkpoint_dir, log_path, t0, cfg.seed)
                epoch_infos = []
    except DivergenceError as e:
        _append_jsonl(log_path, {"error": str(e), "seed": cfg.seed})
        raise
    return summary
