"""Cross-frequency interaction: high-frequency refinement, a token transformer
over the low-frequency base, and gated fusion of the two pathways."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .nn import BatchNorm2d, Conv2d, ConvBNAct, LayerNorm, Linear, Module, depthwise
from .tensor import Tensor


@dataclass(frozen=True)
class HfbConfig:
    width: int
    split: tuple[int, int, int] = (1, 3, 4)
    base_kernel: tuple[int, int] = (11, 1)
    branch_kernels: tuple[tuple[int, int], tuple[int, int]] = ((5, 2), (7, 3))
    reduction: int = 4

    def __post_init__(self):
        total = sum(self.split)
        if self.width % total:
            raise ValueError(f"HFB width {self.width} is not divisible by {total} (split {self.split})")
        for k, _ in (self.base_kernel, *self.branch_kernels):
            if k % 2 == 0:
                raise ValueError(f"HFB kernels must be odd, got {k}")
        if self.width % self.reduction:
            raise ValueError(f"HFB width {self.width} is not divisible by reduction {self.reduction}")

    @property
    def split_sizes(self) -> tuple[int, int, int]:
        unit = self.width // sum(self.split)
        return tuple(unit * s for s in self.split)


def split_channels(width: int, ratio=(1, 3, 4)) -> tuple[int, ...]:
    return HfbConfig(width, split=tuple(ratio)).split_sizes


@dataclass
class HfbIntermediates:
    projected: Tensor
    base: Tensor
    splits: list[Tensor]
    refined: list[Tensor]
    aggregate: Tensor
    gate: Tensor


class HighFrequencyBlock(Module):
    """Refines one Laplacian level into ``width`` feature channels.

    3x3 projection, an 11x11 depthwise base filter, a 1:3:4 channel split with
    dilated depthwise branches on the last two parts, 1x1 aggregation, and a
    squeeze-excite reweighting added back onto the projection.
    """

    def __init__(self, cfg: HfbConfig, rng: np.random.Generator, in_channels: int = 1):
        self.cfg = cfg
        c = cfg.width
        _, cb, cc = cfg.split_sizes
        k0, d0 = cfg.base_kernel
        (k1, d1), (k2, d2) = cfg.branch_kernels
        self.proj = ConvBNAct(in_channels, c, 3, rng, act="relu")
        self.dw_base = depthwise(c, k0, rng, dilation=d0)
        self.dw_b = depthwise(cb, k1, rng, dilation=d1)
        self.dw_c = depthwise(cc, k2, rng, dilation=d2)
        self.pw = Conv2d(c, c, 1, rng)
        self.se_reduce = Conv2d(c, c // cfg.reduction, 1, rng)
        self.se_expand = Conv2d(c // cfg.reduction, c, 1, rng)

    def forward(self, x, return_intermediates: bool = False):
        if x.shape[1] != self.proj.conv.weight.shape[1]:
            raise ValueError(f"HFB expects {self.proj.conv.weight.shape[1]} input channels, got {x.shape[1]}")
        projected = self.proj(x)
        base = self.dw_base(projected)
        fa, fb, fc = F.slice_channels(base, F.split_sizes(self.cfg.split_sizes))
        f1, f2 = self.dw_b(fb), self.dw_c(fc)
        aggregate = self.pw(F.concat([fa, f1, f2]))
        gate = F.sigmoid(self.se_expand(F.gelu(self.se_reduce(F.global_avg_pool(aggregate)))))
        out = aggregate * gate + projected
        if return_intermediates:
            return out, HfbIntermediates(projected, base, [fa, fb, fc], [f1, f2], aggregate, gate)
        return out


class ProjectionOnly(Module):
    """HFB ablation: keeps only the 3x3 projection so channel contracts hold."""

    def __init__(self, cfg: HfbConfig, rng: np.random.Generator, in_channels: int = 1):
        self.cfg = cfg
        self.proj = ConvBNAct(in_channels, cfg.width, 3, rng, act="relu")

    def forward(self, x, return_intermediates: bool = False):
        out = self.proj(x)
        return (out, None) if return_intermediates else out


# ------------------------------------------------------------------ transformer


@dataclass(frozen=True)
class StConfig:
    dim: int = 128
    layers: int = 2
    heads: int = 4
    ffn_expansion: int = 4
    tokens: int = 64

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"ST dim {self.dim} is not divisible by heads={self.heads}")


class EncoderLayer(Module):
    """Pre-norm transformer encoder layer (multi-head attention + GELU MLP)."""

    def __init__(self, dim: int, heads: int, expansion: int, rng: np.random.Generator):
        self.heads = heads
        self.norm1 = LayerNorm(dim)
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, dim * expansion, rng)
        self.fc2 = Linear(dim * expansion, dim, rng)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.out(F.scaled_dot_attention(self.q(h), self.k(h), self.v(h), self.heads))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class SpatialTransformer(Module):
    """Embeds the low-frequency base to ``dim`` channels and mixes it globally as tokens."""

    def __init__(self, cfg: StConfig, rng: np.random.Generator, in_channels: int = 1, identity: bool = False):
        self.cfg = cfg
        self.identity = identity
        self.embed = Conv2d(in_channels, cfg.dim, 1, rng)
        if not identity:
            self.pos = Tensor(rng.normal(0.0, 0.02, size=(1, cfg.tokens, cfg.dim)).astype(np.float32), requires_grad=True)
            self.blocks = [EncoderLayer(cfg.dim, cfg.heads, cfg.ffn_expansion, rng) for _ in range(cfg.layers)]

    def forward(self, x):
        n, _, h, w = x.shape
        if h * w != self.cfg.tokens:
            raise ValueError(f"ST positional table has {self.cfg.tokens} tokens but input gives {h}x{w}={h * w}")
        z = self.embed(x)
        if self.identity:
            return z
        d = self.cfg.dim
        tokens = z.reshape(n, d, h * w).transpose(0, 2, 1) + self.pos
        for block in self.blocks:
            tokens = block(tokens)
        return tokens.transpose(0, 2, 1).reshape(n, d, h, w)


# -------------------------------------------------------------------------- FGM


@dataclass
class FgmIntermediates:
    gate: Tensor
    value: Tensor
    m_gate: Tensor
    m_diff: Tensor
    m_res: Tensor
    weights: Tensor  # (N, 3, C, 1, 1), softmax over axis 1


class FrequencyGatedModulation(Module):
    """Fuses level features with the transformer output through three streams.

    gate stream   : sigmoid(DW3x3(GELU(BN(1x1(Up(lf)))))) * GELU(BN(DW3x3(hf)))
    diff stream   : GELU(BN(1x1(concat(hf, Up(lf)))))
    residual      : 1x1(hf)
    Per-channel softmax weights over the three streams come from a 1x1 conv on
    the pooled stream sum. With ``equal_weights`` the streams are averaged.
    """

    def __init__(self, channels: int, low_dim: int, scale: int, rng: np.random.Generator, equal_weights: bool = False):
        self.channels, self.scale, self.equal_weights = channels, scale, equal_weights
        self.gate_proj = Conv2d(low_dim, channels, 1, rng, bias=False)
        self.gate_bn = BatchNorm2d(channels)
        self.gate_dw = depthwise(channels, 3, rng)
        self.value_dw = depthwise(channels, 3, rng, bias=False)
        self.value_bn = BatchNorm2d(channels)
        self.diff = ConvBNAct(channels + low_dim, channels, 1, rng, act="gelu")
        self.res = Conv2d(channels, channels, 1, rng)
        if not equal_weights:
            self.fuse = Conv2d(channels, 3 * channels, 1, rng)

    def forward(self, hf, lf, return_intermediates: bool = False):
        n, c = hf.shape[:2]
        if c != self.channels:
            raise ValueError(f"FGM expects {self.channels} high-frequency channels, got {c}")
        up = F.bilinear_upsample(lf, self.scale)
        if up.shape[2:] != hf.shape[2:]:
            raise ValueError(f"upsampled low-frequency size {up.shape[2:]} != level size {hf.shape[2:]}")
        gate = F.sigmoid(self.gate_dw(F.gelu(self.gate_bn(self.gate_proj(up)))))
        value = F.gelu(self.value_bn(self.value_dw(hf)))
        m_gate = gate * value
        m_diff = self.diff(F.concat([hf, up]))
        m_res = self.res(hf)
        if self.equal_weights:
            weights = Tensor(np.full((n, 3, c, 1, 1), 1.0 / 3.0, dtype=hf.dtype))
        else:
            logits = self.fuse(F.global_avg_pool(m_gate + m_diff + m_res))
            weights = F.softmax(logits.reshape(n, 3, c, 1, 1), axis=1)
        w1, w2, w3 = (w.reshape(n, c, 1, 1) for w in F.slice_channels(weights, [(0, 1), (1, 2), (2, 3)]))
        out = w1 * m_gate + w2 * m_diff + w3 * m_res
        if return_intermediates:
            return out, FgmIntermediates(gate, value, m_gate, m_diff, m_res, weights)
        return out

