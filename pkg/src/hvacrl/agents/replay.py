"""Episodic transition storage with history-window sampling.

Transitions live in flat column arrays plus a list of episode start
indices.  Sampling assembles fixed-length observation windows whose valid
slots are left-aligned and whose last valid slot is the sampled step, so a
window never reaches across an episode boundary.  With ``seq_len == 1``
the windows collapse to plain flat transitions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, SpecError


@dataclass
class WindowBatch:
    """One sampled minibatch of history windows.

    ``windows[i, j]`` holds an observation for ``j < counts(i)`` and zeros
    afterwards; the last valid slot is the observation at the sampled step.
    ``next_windows`` is the same construction advanced by one step (held in
    place on terminal steps, where it is masked out of the TD target anyway).
    """

    windows: np.ndarray        # (B, L, obs_dim) float32, zero padded
    valid: np.ndarray          # (B, L) bool, left-aligned prefixes
    actions: np.ndarray        # (B, act_dim) float32, normalized
    rewards: np.ndarray        # (B,) float32
    next_windows: np.ndarray   # (B, L, obs_dim) float32
    next_valid: np.ndarray     # (B, L) bool
    terminals: np.ndarray      # (B,) float32, 1.0 on episode-ending steps

    def __len__(self):
        return self.windows.shape[0]


class ReplayView:
    """Read-only window sampler over flat episodic columns."""

    def __init__(self, obs, actions, rewards, terminals, episode_starts):
        obs = np.asarray(obs, dtype=np.float32)
        actions = np.asarray(actions, dtype=np.float32)
        rewards = np.asarray(rewards, dtype=np.float32)
        terminals = np.asarray(terminals, dtype=bool)
        starts = np.asarray(episode_starts, dtype=np.int64)
        n = obs.shape[0]
        if obs.ndim != 2 or actions.ndim != 2:
            raise SpecError("obs and actions must be 2-D column arrays")
        if not (actions.shape[0] == rewards.shape[0] == terminals.shape[0] == n):
            raise SpecError("column lengths disagree")
        if n == 0:
            raise DataError("empty transition store")
        if starts.size == 0 or starts[0] != 0:
            raise DataError("episode starts must begin at index 0")
        if np.any(np.diff(starts) <= 0) or starts[-1] >= n:
            raise DataError("episode starts must be increasing and in range")
        # every episode end except possibly the live tail must be terminal
        ends = np.concatenate([starts[1:] - 1, [n - 1]])
        if not terminals[ends[:-1]].all():
            raise DataError("episode boundary without a terminal step")
        interior = np.ones(n, dtype=bool)
        interior[ends] = False
        if terminals[interior].any():
            raise DataError("terminal step without an episode boundary")

        self.obs = obs
        self.actions = actions
        self.rewards = rewards
        self.terminals = terminals
        self.episode_starts = starts
        lengths = np.diff(np.concatenate([starts, [n]]))
        self._start_of = np.repeat(starts, lengths)
        # the last stored step only has a successor once its episode closed
        self._sampleable = n if terminals[n - 1] else n - 1
        if self._sampleable == 0:
            raise DataError("no sampleable transitions yet")

    def __len__(self):
        return self.obs.shape[0]

    @property
    def obs_dim(self):
        return self.obs.shape[1]

    @property
    def act_dim(self):
        return self.actions.shape[1]

    @property
    def num_episodes(self):
        return len(self.episode_starts)

    def episode_slice(self, i: int) -> slice:
        starts = self.episode_starts
        stop = starts[i + 1] if i + 1 < len(starts) else len(self)
        return slice(int(starts[i]), int(stop))

    def _assemble(self, steps: np.ndarray, seq_len: int):
        """Left-aligned windows whose last valid slot is ``steps``."""
        counts = np.minimum(seq_len, steps - self._start_of[steps] + 1)
        offs = np.arange(seq_len)
        valid = offs[None, :] < counts[:, None]
        idx = steps[:, None] - counts[:, None] + 1 + offs[None, :]
        idx = np.where(valid, idx, 0)
        windows = self.obs[idx] * valid[:, :, None].astype(np.float32)
        return windows, valid

    def window_at(self, step: int, seq_len: int):
        """Window for a single step, mainly for audits and tests."""
        if not 0 <= step < len(self):
            raise SpecError("step out of range")
        w, v = self._assemble(np.asarray([step]), seq_len)
        return w[0], v[0]

    def sample_batch(self, batch_size: int, seq_len: int,
                     rng: np.random.Generator) -> WindowBatch:
        steps = rng.integers(0, self._sampleable, size=batch_size)
        windows, valid = self._assemble(steps, seq_len)
        term = self.terminals[steps]
        nxt = np.where(term, steps, steps + 1)
        next_windows, next_valid = self._assemble(nxt, seq_len)
        return WindowBatch(
            windows=windows,
            valid=valid,
            actions=self.actions[steps],
            rewards=self.rewards[steps],
            next_windows=next_windows,
            next_valid=next_valid,
            terminals=term.astype(np.float32),
        )


class ReplayBuffer:
    """Append-only online buffer; evicts whole oldest episodes at capacity."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int = 200_000):
        if capacity < 2:
            raise SpecError("capacity too small")
        self.capacity = capacity
        self._obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._act = np.zeros((capacity, act_dim), dtype=np.float32)
        self._rew = np.zeros(capacity, dtype=np.float32)
        self._term = np.zeros(capacity, dtype=bool)
        self._starts = [0]
        self._count = 0

    def __len__(self):
        return self._count

    def add(self, obs, action, reward, terminal: bool):
        if self._count == self.capacity:
            self._evict_oldest_episode()
        i = self._count
        self._obs[i] = obs
        self._act[i] = action
        self._rew[i] = reward
        self._term[i] = terminal
        self._count += 1
        if terminal:
            self._starts.append(self._count)

    def _evict_oldest_episode(self):
        if len(self._starts) < 2:
            raise DataError("single episode exceeds buffer capacity")
        drop = self._starts[1]
        keep = self._count - drop
        for col in (self._obs, self._act, self._rew, self._term):
            col[:keep] = col[drop:self._count]
        self._starts = [s - drop for s in self._starts[1:]]
        self._count = keep

    def view(self) -> ReplayView:
        starts = self._starts[:-1] if self._starts[-1] == self._count \
            else self._starts
        return ReplayView(
            self._obs[:self._count],
            self._act[:self._count],
            self._rew[:self._count],
            self._term[:self._count],
            np.asarray(starts, dtype=np.int64),
        )
