"""Actor and critic networks, flat or running on observation windows.

The actor and the critic each own a private window encoder; nothing is
shared between them, and the twin critics share one encoder trunk with two
value heads.  In flat mode the encoder is bypassed entirely and the
feature vector is just the newest observation in the window.
"""
from __future__ import annotations

import numpy as np

from ..errors import SpecError
from ..neuralsub import tensor as T
from ..neuralsub.layers import MLP, EncoderConfig, HistoryEncoder, Module
from ..neuralsub.sampling import sample_tanh_gaussian
from ..neuralsub.tensor import Tensor
from .config import AgentConfig


def _encoder_config(cfg: AgentConfig) -> EncoderConfig:
    return EncoderConfig(
        window=cfg.seq_len,
        feat=cfg.enc_feat,
        blocks=cfg.enc_blocks,
        heads=cfg.enc_heads,
        hidden=cfg.enc_hidden,
    )


class FlatEncoder(Module):
    """Bypass: the feature is the last valid observation of the window."""

    def __init__(self, obs_dim: int):
        super().__init__()
        self.out_dim = obs_dim

    def __call__(self, windows: np.ndarray, valid: np.ndarray) -> Tensor:
        counts = valid.sum(axis=1)
        if windows.shape[1] == 1:
            last = windows[:, 0, :]
        else:
            last = windows[np.arange(windows.shape[0]), counts - 1, :]
        return Tensor(np.ascontiguousarray(last, dtype=np.float32))


def make_encoder(cfg: AgentConfig, obs_dim: int, rng) -> Module:
    if cfg.history:
        return HistoryEncoder(obs_dim, _encoder_config(cfg), rng)
    return FlatEncoder(obs_dim)


class TwinCritic(Module):
    """Two Q heads over a shared window encoder."""

    def __init__(self, cfg: AgentConfig, obs_dim: int, act_dim: int, rng):
        super().__init__()
        self.encoder = make_encoder(cfg, obs_dim, rng)
        width = self.encoder.out_dim
        self.q1_head = MLP([width + act_dim, cfg.hidden, cfg.hidden, 1], rng)
        self.q2_head = MLP([width + act_dim, cfg.hidden, cfg.hidden, 1], rng)

    def features(self, windows, valid) -> Tensor:
        return self.encoder(windows, valid)

    def _head(self, head, feat: Tensor, actions: Tensor) -> Tensor:
        if actions.data.shape[0] != feat.data.shape[0]:
            raise SpecError("feature/action batch mismatch")
        x = T.concat([feat, actions], axis=1)
        return T.reshape(head(x), (-1,))

    def q1_from(self, feat, actions):
        return self._head(self.q1_head, feat, actions)

    def q2_from(self, feat, actions):
        return self._head(self.q2_head, feat, actions)

    def both_from(self, feat, actions):
        return self.q1_from(feat, actions), self.q2_from(feat, actions)

    def q1(self, windows, valid, actions):
        return self.q1_from(self.features(windows, valid), actions)

    def both(self, windows, valid, actions):
        feat = self.features(windows, valid)
        return self.both_from(feat, actions)


class DeterministicActor(Module):
    """tanh-squashed deterministic policy head (TD3 family)."""

    def __init__(self, cfg: AgentConfig, obs_dim: int, act_dim: int, rng):
        super().__init__()
        self.encoder = make_encoder(cfg, obs_dim, rng)
        self.head = MLP([self.encoder.out_dim, cfg.hidden, cfg.hidden, act_dim],
                        rng, final_gain=0.01)
        self.act_dim = act_dim

    def __call__(self, windows, valid) -> Tensor:
        return T.tanh(self.head(self.encoder(windows, valid)))

    def act(self, windows, valid, rng=None, noise_scale: float = 0.0):
        with T.no_grad():
            a = self(windows, valid).data.copy()
        if noise_scale > 0.0:
            a += rng.normal(0.0, noise_scale, size=a.shape).astype(np.float32)
        return np.clip(a, -1.0, 1.0)


class GaussianActor(Module):
    """tanh-Gaussian policy with state-dependent mean and log-std (SAC family)."""

    def __init__(self, cfg: AgentConfig, obs_dim: int, act_dim: int, rng):
        super().__init__()
        self.encoder = make_encoder(cfg, obs_dim, rng)
        self.head = MLP([self.encoder.out_dim, cfg.hidden, cfg.hidden,
                         2 * act_dim], rng, final_gain=0.01)
        self.act_dim = act_dim

    def dist_params(self, windows, valid):
        out = self.head(self.encoder(windows, valid))
        mean = T.narrow(out, 1, 0, self.act_dim)
        log_std = T.narrow(out, 1, self.act_dim, self.act_dim)
        return mean, log_std

    def sample(self, windows, valid, rng, deterministic=False):
        mean, log_std = self.dist_params(windows, valid)
        return sample_tanh_gaussian(mean, log_std, rng, deterministic=deterministic)

    def sample_from_params(self, mean, log_std, rng, deterministic=False):
        return sample_tanh_gaussian(mean, log_std, rng, deterministic=deterministic)

    def act(self, windows, valid, rng=None, noise_scale: float = 0.0,
            deterministic: bool = True):
        with T.no_grad():
            a, _ = self.sample(windows, valid, rng, deterministic=deterministic)
            a = a.data.copy()
        if noise_scale > 0.0:
            a += rng.normal(0.0, noise_scale, size=a.shape).astype(np.float32)
        return np.clip(a, -1.0, 1.0)
