import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor, add, gelu, layernorm, matmul, reshape, scale, softmax, swapaxes,
)
from .errors import InvalidArgumentError, ShapeError

LAYERNORM_EPS = 1e-5


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


@dataclass(eq=False)
class LinearLayer:
    weight: Tensor  # [out, in]
    bias: Tensor  # [out]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"linear layer shapes weight={self.weight.shape} bias={self.bias.shape}")

    @classmethod
    def initialize(cls, n_in, n_out, rng, zero=False):
        if zero:
            return cls(Tensor(np.zeros((n_out, n_in))), Tensor(np.zeros(n_out)))
        return cls(_uniform(rng, (n_out, n_in), n_in), _uniform(rng, (n_out,), n_in))

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def named_parameters(self, prefix=""):
        yield f"{prefix}weight", self.weight
        yield f"{prefix}bias", self.bias


def linear_forward(layer, x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != layer.in_features:
        raise ShapeError(f"linear layer expects last dim {layer.in_features}, got {x.shape}")
    if x.ndim == 1:
        out = matmul(reshape(x, (1, x.shape[0])), swapaxes(layer.weight))
        return add(reshape(out, (layer.out_features,)), layer.bias)
    return add(matmul(x, swapaxes(layer.weight)), layer.bias)


@dataclass(eq=False)
class MultiHeadAttention:
    q: LinearLayer
    k: LinearLayer
    v: LinearLayer
    out: LinearLayer
    n_head: int

    @classmethod
    def initialize(cls, width, n_head, rng, zero_output=False):
        if width % n_head:
            raise InvalidArgumentError(f"{n_head} heads do not divide width {width}")
        return cls(
            q=LinearLayer.initialize(width, width, rng),
            k=LinearLayer.initialize(width, width, rng),
            v=LinearLayer.initialize(width, width, rng),
            out=LinearLayer.initialize(width, width, rng, zero=zero_output),
            n_head=n_head,
        )

    def named_parameters(self, prefix=""):
        for name in ("q", "k", "v", "out"):
            yield from getattr(self, name).named_parameters(f"{prefix}{name}.")


def split_heads(x, n_head):
    # [..., n, H*d] -> [..., H, n, d]
    *lead, n, width = x.shape
    return swapaxes(reshape(x, (*lead, n, n_head, width // n_head)), -3, -2)


def merge_heads(x):
    # [..., H, n, d] -> [..., n, H*d]
    *lead, h, n, d = x.shape
    return reshape(swapaxes(x, -3, -2), (*lead, n, h * d))


def mha_forward(attn, x, return_weights=False):
    width = x.shape[-1]
    if width % attn.n_head:
        raise ShapeError(f"{attn.n_head} heads do not divide width {width}")
    q = split_heads(linear_forward(attn.q, x), attn.n_head)
    k = split_heads(linear_forward(attn.k, x), attn.n_head)
    v = split_heads(linear_forward(attn.v, x), attn.n_head)
    logits = scale(matmul(q, swapaxes(k)), 1.0 / math.sqrt(width // attn.n_head))
    weights = softmax(logits, axis=-1)
    out = linear_forward(attn.out, merge_heads(matmul(weights, v)))
    return (out, weights) if return_weights else out


@dataclass(eq=False)
class EncoderBlock:
    ln1_gain: Tensor
    ln1_bias: Tensor
    attention: MultiHeadAttention
    ln2_gain: Tensor
    ln2_bias: Tensor
    ff1: LinearLayer
    ff2: LinearLayer

    @classmethod
    def initialize(cls, width, n_head, ff_width, rng, zero_output=False):
        return cls(
            ln1_gain=Tensor(np.ones(width)),
            ln1_bias=Tensor(np.zeros(width)),
            attention=MultiHeadAttention.initialize(width, n_head, rng, zero_output=zero_output),
            ln2_gain=Tensor(np.ones(width)),
            ln2_bias=Tensor(np.zeros(width)),
            ff1=LinearLayer.initialize(width, ff_width, rng),
            ff2=LinearLayer.initialize(ff_width, width, rng, zero=zero_output),
        )

    def named_parameters(self, prefix=""):
        yield f"{prefix}ln1_gain", self.ln1_gain
        yield f"{prefix}ln1_bias", self.ln1_bias
        yield from self.attention.named_parameters(f"{prefix}attention.")
        yield f"{prefix}ln2_gain", self.ln2_gain
        yield f"{prefix}ln2_bias", self.ln2_bias
        yield from self.ff1.named_parameters(f"{prefix}ff1.")
        yield from self.ff2.named_parameters(f"{prefix}ff2.")


def encoder_forward(block, x):
    # pre-norm residual
    h = add(x, mha_forward(block.attention, layernorm(x, block.ln1_gain, block.ln1_bias, LAYERNORM_EPS)))
    ff = gelu(linear_forward(block.ff1, layernorm(h, block.ln2_gain, block.ln2_bias, LAYERNORM_EPS)))
    return add(h, linear_forward(block.ff2, ff))


@dataclass(eq=False)
class TimeEmbedding:
    frequencies: np.ndarray
    proj: LinearLayer

    MAX_FREQUENCY = 16.0

    @classmethod
    def initialize(cls, dim, rng):
        if dim <= 0 or dim % 2:
            raise InvalidArgumentError(f"time embedding dim must be a positive even number, got {dim}")
        return cls(
            frequencies=np.geomspace(1.0, cls.MAX_FREQUENCY, dim // 2),
            proj=LinearLayer.initialize(dim, dim, rng),
        )

    @property
    def dim(self):
        return 2 * self.frequencies.size

    def named_parameters(self, prefix=""):
        yield from self.proj.named_parameters(f"{prefix}proj.")


def sinusoidal_features(frequencies, t):
    angles = np.asarray(t, dtype=np.float64)[..., None] * frequencies
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def time_embed(embedding, t):
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)) or np.any((t < 0.0) | (t > 1.0)):
        raise InvalidArgumentError(f"flow time must lie in [0, 1], got {t}")
    return linear_forward(embedding.proj, Tensor(sinusoidal_features(embedding.frequencies, t)))
