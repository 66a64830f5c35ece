"""Network building blocks: dense/conv layers, normalization, dropout,
SE channel attention, patch embedding, and transformer components.

Layers own named Parameters and an optional dict of non-trainable buffers
(batch-norm running statistics).  Forward passes thread an explicit
Context carrying the train/infer mode and the Rng that feeds dropout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, StateError
from .rng import Rng
from .tensor import Parameter, Tensor


@dataclass
class Context:
    mode: str = "infer"        # "train" or "infer"
    rng: Rng | None = None


def glorot_uniform(rng: Rng, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    """Glorot/Xavier uniform draw from a derived numpy stream (fast + seeded)."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    stream = np.random.default_rng(rng.next_u64())
    return stream.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base layer; subclasses implement forward(x, ctx)."""

    def __init__(self, name: str):
        self.name = name

    def parameters(self) -> list[Parameter]:
        return [v for v in vars(self).values() if isinstance(v, Parameter)]

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, x: Tensor, ctx: Context) -> Tensor:
        raise NotImplementedError


class Chain(Layer):
    """Sequential composition of layers."""

    def __init__(self, name: str, layers: list[Layer]):
        super().__init__(name)
        self.layers = layers

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def buffers(self):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def forward(self, x, ctx):
        for layer in self.layers:
            x = layer.forward(x, ctx)
        return x


class ParallelConcat(Layer):
    """Run every branch on the same input and concatenate along `axis`."""

    def __init__(self, name: str, branches: list[Layer], axis: int = 1):
        super().__init__(name)
        self.branches = branches
        self.axis = axis

    def parameters(self):
        return [p for branch in self.branches for p in branch.parameters()]

    def buffers(self):
        out = {}
        for branch in self.branches:
            out.update(branch.buffers())
        return out

    def forward(self, x, ctx):
        return T.concat([branch.forward(x, ctx) for branch in self.branches], self.axis)


class Dense(Layer):
    def __init__(self, name: str, n_in: int, n_out: int, rng: Rng, dtype=np.float32):
        super().__init__(name)
        self.weight = Parameter(f"{name}.weight",
                                glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(n_out, dtype=dtype))

    def forward(self, x, ctx):
        return T.matmul(x, self.weight) + self.bias


class Conv3x3(Layer):
    def __init__(self, name: str, c_in: int, c_out: int, rng: Rng,
                 padding: str = "same", dtype=np.float32):
        super().__init__(name)
        self.padding = padding
        self.weight = Parameter(
            f"{name}.weight",
            glorot_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, c_out * 9, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(c_out, dtype=dtype))

    def forward(self, x, ctx):
        return T.conv2d(x, self.weight, self.bias, self.padding)


class Activation(Layer):
    def __init__(self, name: str, kind: str):
        super().__init__(name)
        self.kind = kind

    def forward(self, x, ctx):
        return T.activation(x, self.kind)


class Pool(Layer):
    def __init__(self, name: str, kind: str):
        super().__init__(name)
        self.kind = kind

    def forward(self, x, ctx):
        return T.pool(x, self.kind)


class Flatten(Layer):
    def forward(self, x, ctx):
        return x.reshape(x.shape[0], -1)


@dataclass
class DropoutSpec:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")


def dropout_apply(x: Tensor, spec: DropoutSpec, rng: Rng | None, mode: str) -> Tensor:
    """Inverted dropout: zero units with p=rate, scale survivors by 1/(1-rate).

    Identity at inference or when rate is zero.  The mask comes from a
    numpy stream seeded off `rng`, so one u64 draw pins the whole mask.
    """
    if mode == "infer" or spec.rate == 0.0:
        return x
    if rng is None:
        raise StateError("dropout in train mode needs an Rng in the context")
    stream = np.random.default_rng(rng.next_u64())
    keep = stream.random(x.shape) >= spec.rate
    mask = keep.astype(x.dtype) / np.asarray(1.0 - spec.rate, dtype=x.dtype)
    return x * Tensor(mask)


class Dropout(Layer):
    def __init__(self, name: str, rate: float):
        super().__init__(name)
        self.spec = DropoutSpec(rate)

    def forward(self, x, ctx):
        return dropout_apply(x, self.spec, ctx.rng, ctx.mode)


class BatchNorm(Layer):
    """Batch normalization over the batch (and spatial) axes.

    Training uses biased batch statistics and keeps running stats with
    momentum 0.9; inference normalizes with the running stats (zero mean,
    unit variance before the first update).
    """

    def __init__(self, name: str, num_features: int, dtype=np.float32,
                 momentum: float = 0.9, eps: float = 1e-5):
        super().__init__(name)
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(f"{name}.gamma", np.ones(num_features, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(num_features, dtype=dtype))
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def forward(self, x, ctx):
        if x.data.ndim == 4:
            axes, stat_shape = (0, 2, 3), (1, -1, 1, 1)
        elif x.data.ndim == 2:
            axes, stat_shape = (0,), (1, -1)
        else:
            raise DimensionError(f"batch norm expects 2-D or 4-D input, got {x.shape}")

        if ctx.mode == "train":
            if x.shape[0] < 2:
                raise DimensionError("batch norm training requires batch extent >= 2")
            mean = x.mean(axis=axes, keepdims=True)
            var = ((x - mean) ** 2).mean(axis=axes, keepdims=True)
            self.running_mean[...] = (self.momentum * self.running_mean
                                      + (1.0 - self.momentum) * mean.data.reshape(-1))
            self.running_var[...] = (self.momentum * self.running_var
                                     + (1.0 - self.momentum) * var.data.reshape(-1))
            xhat = (x - mean) * ((var + self.eps) ** -0.5)
        else:
            mean = Tensor(self.running_mean.reshape(stat_shape))
            std_inv = Tensor((self.running_var.reshape(stat_shape) + self.eps) ** -0.5)
            xhat = (x - mean) * std_inv
        return xhat * self.gamma.reshape(stat_shape) + self.beta.reshape(stat_shape)


class LayerNorm(Layer):
    """Normalization over the last axis with learned scale/shift."""

    def __init__(self, name: str, dim: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__(name)
        self.eps = eps
        self.gamma = Parameter(f"{name}.gamma", np.ones(dim, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(dim, dtype=dtype))

    def forward(self, x, ctx):
        mean = x.mean(axis=-1, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
        xhat = (x - mean) * ((var + self.eps) ** -0.5)
        return xhat * self.gamma + self.beta


# ----------------------------------------------------------------------
# squeeze-and-excitation
# ----------------------------------------------------------------------

@dataclass
class SEForwardTrace:
    channel_summary: np.ndarray   # z: (b, C) spatial means
    channel_weights: np.ndarray   # s: (b, C) sigmoid gates in (0, 1)
    output: np.ndarray            # y = s * x, channelwise


def se_block(x: Tensor, w1: Tensor, w2: Tensor):
    """Channel attention: squeeze to per-channel means, gate, recalibrate.

    Returns the recalibrated tensor plus a trace of the intermediate
    squeeze vector and gate values.
    """
    z = T.pool(x, "global_avg")                      # (b, C)
    hidden = T.activation(T.matmul(z, w1), "relu")   # (b, C/r)
    s = T.activation(T.matmul(hidden, w2), "sigmoid")
    y = x * s.reshape(s.shape[0], s.shape[1], 1, 1)
    return y, SEForwardTrace(z.data.copy(), s.data.copy(), y.data)


class SEBlock(Layer):
    def __init__(self, name: str, channels: int, reduction: int, rng: Rng,
                 dtype=np.float32):
        super().__init__(name)
        if reduction < 1 or channels % reduction != 0:
            raise ConfigError(
                f"SE reduction {reduction} must divide channel count {channels}")
        hidden = channels // reduction
        self.w1 = Parameter(f"{name}.w1",
                            glorot_uniform(rng, (channels, hidden), channels, hidden, dtype))
        self.w2 = Parameter(f"{name}.w2",
                            glorot_uniform(rng, (hidden, channels), hidden, channels, dtype))
        self.last_trace: SEForwardTrace | None = None

    def forward(self, x, ctx):
        y, self.last_trace = se_block(x, self.w1, self.w2)
        return y


# ----------------------------------------------------------------------
# vision-transformer pieces
# ----------------------------------------------------------------------

@dataclass
class ViTConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    num_heads: int = 4
    depth: int = 2
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image size {self.image_size} not divisible by patch {self.patch_size}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed dim {self.embed_dim} not divisible by heads {self.num_heads}")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


class PatchEmbed(Layer):
    """Split the image into patches, project linearly, prepend a class
    token, and add learned position embeddings."""

    def __init__(self, name: str, cfg: ViTConfig, rng: Rng, dtype=np.float32,
                 in_channels: int = 3):
        super().__init__(name)
        self.cfg = cfg
        self.in_channels = in_channels
        patch_dim = in_channels * cfg.patch_size ** 2
        self.proj = Parameter(f"{name}.proj",
                              glorot_uniform(rng, (patch_dim, cfg.embed_dim),
                                             patch_dim, cfg.embed_dim, dtype))
        stream = np.random.default_rng(rng.next_u64())
        self.cls_token = Parameter(
            f"{name}.cls_token",
            stream.uniform(-0.02, 0.02, (1, 1, cfg.embed_dim)).astype(dtype))
        self.pos_embed = Parameter(
            f"{name}.pos_embed",
            stream.uniform(-0.02, 0.02,
                           (1, cfg.num_patches + 1, cfg.embed_dim)).astype(dtype))

    def forward(self, x, ctx):
        b, c, s, _ = x.shape
        p = self.cfg.patch_size
        if s != self.cfg.image_size or c != self.in_channels:
            raise DimensionError(
                f"patch embed expects (b, {self.in_channels}, {self.cfg.image_size}, "
                f"{self.cfg.image_size}), got {x.shape}")
        n = s // p
        # (b, c, n, p, n, p) -> (b, n, n, c, p, p) -> (b, N, c*p*p)
        patches = (x.reshape(b, c, n, p, n, p)
                    .transpose(0, 2, 4, 1, 3, 5)
                    .reshape(b, n * n, c * p * p))
        tokens = T.matmul(patches, self.proj)
        ones = Tensor(np.ones((b, 1, 1), dtype=x.dtype))
        cls = ones * self.cls_token
        return T.concat([cls, tokens], axis=1) + self.pos_embed


def multi_head_self_attention(x: Tensor, wq, wk, wv, wo, bq, bk, bv, bo,
                              num_heads: int) -> Tensor:
    """Scaled dot-product attention per head, concatenated and projected."""
    b, n, d = x.shape
    if d % num_heads != 0:
        raise ConfigError(f"model dim {d} not divisible by {num_heads} heads")
    dh = d // num_heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(b, n, num_heads, dh).transpose(0, 2, 1, 3)

    q = split(T.matmul(x, wq) + bq)
    k = split(T.matmul(x, wk) + bk)
    v = split(T.matmul(x, wv) + bv)
    scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    attn = T.softmax_t(scores, 1.0)
    mixed = T.matmul(attn, v)                       # (b, h, n, dh)
    merged = mixed.transpose(0, 2, 1, 3).reshape(b, n, d)
    return T.matmul(merged, wo) + bo


class MultiHeadSelfAttention(Layer):
    def __init__(self, name: str, dim: int, num_heads: int, rng: Rng, dtype=np.float32):
        super().__init__(name)
        if dim % num_heads != 0:
            raise ConfigError(f"model dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        for part in ("wq", "wk", "wv", "wo"):
            setattr(self, part, Parameter(f"{name}.{part}",
                                          glorot_uniform(rng, (dim, dim), dim, dim, dtype)))
        for part in ("bq", "bk", "bv", "bo"):
            setattr(self, part, Parameter(f"{name}.{part}", np.zeros(dim, dtype=dtype)))

    def forward(self, x, ctx):
        return multi_head_self_attention(x, self.wq, self.wk, self.wv, self.wo,
                                         self.bq, self.bk, self.bv, self.bo,
                                         self.num_heads)


class TransformerBlock(Layer):
    """Pre-norm residual block: x + MHSA(LN(x)), then + MLP(LN(.)) with GELU."""

    def __init__(self, name: str, dim: int, num_heads: int, mlp_ratio: int,
                 rng: Rng, dtype=np.float32):
        super().__init__(name)
        self.norm1 = LayerNorm(f"{name}.norm1", dim, dtype)
        self.attn = MultiHeadSelfAttention(f"{name}.attn", dim, num_heads, rng, dtype)
        self.norm2 = LayerNorm(f"{name}.norm2", dim, dtype)
        self.mlp_in = Dense(f"{name}.mlp_in", dim, mlp_ratio * dim, rng, dtype)
        self.mlp_out = Dense(f"{name}.mlp_out", mlp_ratio * dim, dim, rng, dtype)

    def parameters(self):
        return (self.norm1.parameters() + self.attn.parameters()
                + self.norm2.parameters() + self.mlp_in.parameters()
                + self.mlp_out.parameters())

    def forward(self, x, ctx):
        h = x + self.attn.forward(self.norm1.forward(x, ctx), ctx)
        mlp = self.mlp_out.forward(
            T.activation(self.mlp_in.forward(self.norm2.forward(h, ctx), ctx), "gelu"),
            ctx)
        return h + mlp


class TakeToken(Layer):
    """Select one token (the class token) from a (b, n, d) sequence."""

    def __init__(self, name: str, index: int = 0):
        super().__init__(name)
        self.index = index

    def forward(self, x, ctx):
        return x[:, self.index, :]
