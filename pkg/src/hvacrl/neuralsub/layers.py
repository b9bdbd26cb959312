"""Network building blocks on top of the tape: linears, MLPs, and a small
causal self-attention encoder that summarizes an observation window."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SpecError
from . import tensor as T
from .tensor import Tensor


class Module:
    """Bare-bones parameter container with named flattening."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for key, value in vars(self).items():
            name = f"{prefix}{key}" if not prefix else f"{prefix}.{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(name))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}"))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise SpecError(f"parameter name mismatch: missing={sorted(missing)} "
                            f"extra={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise SpecError(f"shape mismatch for {name}: "
                                f"{arr.shape} vs {p.data.shape}")
            p.data[...] = arr

    def copy_from(self, other: "Module") -> None:
        for (_, dst), (_, src) in zip(self.named_parameters(),
                                      other.named_parameters()):
            dst.data[...] = src.data

    def polyak_from(self, other: "Module", tau: float) -> None:
        """dst <- (1 - tau) * dst + tau * src, in place."""
        for (_, dst), (_, src) in zip(self.named_parameters(),
                                      other.named_parameters()):
            dst.data *= (1.0 - tau)
            dst.data += tau * src.data


class Linear(Module):
    """y = x @ W + b with uniform(-1/sqrt(fan_in)) init."""

    def __init__(self, in_size: int, out_size: int, rng: np.random.Generator,
                 init_gain: float = 1.0):
        k = init_gain / np.sqrt(in_size)
        self.w = T.parameter(rng.uniform(-k, k, size=(in_size, out_size)))
        self.b = T.parameter(np.zeros(out_size))

    def __call__(self, x) -> Tensor:
        return T.affine(x, self.w, self.b)


class MLP(Module):
    """ReLU stack; the last layer is affine (no activation)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator,
                 final_gain: float = 1.0):
        if len(sizes) < 2:
            raise SpecError("MLP needs at least an input and an output size")
        self.layers = [Linear(sizes[i], sizes[i + 1], rng,
                              init_gain=final_gain if i == len(sizes) - 2 else 1.0)
                       for i in range(len(sizes) - 1)]

    def __call__(self, x) -> Tensor:
        h = x
        for layer in self.layers[:-1]:
            h = T.relu(layer(h))
        return self.layers[-1](h)


class LayerNorm(Module):
    def __init__(self, size: int):
        self.gain = T.parameter(np.ones(size))
        self.bias = T.parameter(np.zeros(size))

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class SelfAttention(Module):
    """Multi-head causal self-attention over a (batch, seq, feat) block."""

    def __init__(self, feat: int, heads: int, rng: np.random.Generator):
        if feat % heads != 0:
            raise SpecError(f"feature size {feat} not divisible by {heads} heads")
        self.heads = heads
        self.head_size = feat // heads
        self.wq = Linear(feat, feat, rng)
        self.wk = Linear(feat, feat, rng)
        self.wv = Linear(feat, feat, rng)
        self.wo = Linear(feat, feat, rng)

    def __call__(self, x: Tensor, mask_bias: np.ndarray) -> Tensor:
        b, n, d = x.shape
        h, hs = self.heads, self.head_size

        def split(t: Tensor) -> Tensor:
            # (b, n, d) -> (b*h, n, hs)
            t = T.reshape(t, (b, n, h, hs))
            t = T.swapaxes(t, 1, 2)
            return T.reshape(t, (b * h, n, hs))

        q = split(self.wq(x))
        k = split(self.wk(x))
        v = split(self.wv(x))
        scores = T.scale(T.matmul(q, T.swapaxes(k, 1, 2)), 1.0 / np.sqrt(hs))
        attn = T.softmax(scores, axis=-1, mask_bias=np.repeat(mask_bias, h, axis=0))
        out = T.matmul(attn, v)
        out = T.reshape(out, (b, h, n, hs))
        out = T.swapaxes(out, 1, 2)
        out = T.reshape(out, (b, n, d))
        return self.wo(out)


class EncoderBlock(Module):
    """Attention then feed-forward, each with residual + layer norm after."""

    def __init__(self, feat: int, heads: int, hidden: int,
                 rng: np.random.Generator):
        self.attn = SelfAttention(feat, heads, rng)
        self.norm1 = LayerNorm(feat)
        self.ff1 = Linear(feat, hidden, rng)
        self.ff2 = Linear(hidden, feat, rng)
        self.norm2 = LayerNorm(feat)

    def __call__(self, x: Tensor, mask_bias: np.ndarray) -> Tensor:
        x = self.norm1(T.add(x, self.attn(x, mask_bias)))
        x = self.norm2(T.add(x, self.ff2(T.relu(self.ff1(x)))))
        return x


@dataclass(frozen=True)
class EncoderConfig:
    window: int = 20          # number of observation slots the encoder sees
    feat: int = 100           # embedding width per slot
    blocks: int = 2           # stacked attention blocks
    heads: int = 4            # attention heads per block
    hidden: int = 200         # feed-forward hidden width inside each block

    def __post_init__(self):
        if self.window < 1:
            raise SpecError("encoder window must be >= 1")
        if self.feat % self.heads != 0:
            raise SpecError("encoder feat must be divisible by heads")


class HistoryEncoder(Module):
    """Causal attention encoder that maps an observation window to one vector.

    Windows are left-aligned: valid observations occupy slots 0..n-1 and the
    remaining slots are zero padding. Padding never influences the output
    because the key mask removes invalid slots and the readout is taken at
    the last valid position.
    """

    def __init__(self, obs_size: int, cfg: EncoderConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.out_dim = cfg.feat
        self.embed = Linear(obs_size, cfg.feat, rng)
        self.position = T.parameter(
            rng.normal(0.0, 0.02, size=(cfg.window, cfg.feat)))
        self.blocks = [EncoderBlock(cfg.feat, cfg.heads, cfg.hidden, rng)
                       for _ in range(cfg.blocks)]

    def __call__(self, window: np.ndarray, valid: np.ndarray) -> Tensor:
        """window: (batch, window, obs), valid: (batch, window) bool mask."""
        b, n, _ = window.shape
        if n != self.cfg.window:
            raise SpecError(f"window length {n} != configured {self.cfg.window}")
        counts = valid.sum(axis=1)
        if np.any(counts < 1):
            raise SpecError("every window needs at least one valid slot")
        if not np.array_equal(valid, np.arange(n) < counts[:, None]):
            raise SpecError("valid slots must form a left-aligned prefix")
        x = T.add(self.embed(window), T.reshape(self.position, (1, n, self.cfg.feat)))
        # keys are visible when they are causal (j <= i) and hold real data
        causal = np.tril(np.ones((n, n), dtype=bool))
        visible = causal[None] & valid[:, None, :]
        bias = np.where(visible, 0.0, -1e9).astype(np.float32)
        for block in self.blocks:
            x = block(x, bias)
        return T.take_per_row(x, counts - 1)
