# Backend/WaveformEngine/ere.py

"""
Embedding representation enhancement.

Operators work on block batches shaped (..., N, N_emb, C):

  - Involution1D: a kernel generated per position from that position's own
    window, shared across channels. Windows run along the embedding axis of one
    row and never cross rows.
  - Multi-head self-attention over rows, with channels folded into features.
  - A plain 1-D convolution as the ablation baseline.

Cascades are registered by name with @register_mode, so "invo_then_attn(3)"
style strings resolve to a stack of stages.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import ShapeMismatch, UnknownMode
from .numerics import (
    Module,
    Param,
    Tensor,
    concat,
    glorot_param,
    leaky_relu,
    linear,
    matmul,
    mul,
    reshape,
    softmax,
    sum_,
    swapaxes,
    unfold1d,
)
from .seeding import seeded_rng


# --------------------------------------------------------------------------------------
# Configs
# --------------------------------------------------------------------------------------


@dataclass(frozen=True)
class InvolutionConfig:
    kernel_size: int = 5
    groups: int = 1
    hidden: Optional[int] = None  # defaults to K*C
    leaky_slope: float = 0.01

    def validate(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ShapeMismatch(
                message=f"Kernel size must be a positive odd integer, got {self.kernel_size}",
                invalid_value=str(self.kernel_size),
            )
        if self.groups < 1:
            raise ShapeMismatch(message=f"Groups must be positive, got {self.groups}", invalid_value=str(self.groups))
        if self.hidden is not None and self.hidden < 1:
            raise ShapeMismatch(message=f"Hidden width must be positive, got {self.hidden}", invalid_value=str(self.hidden))

    def hidden_for(self, channels: int) -> int:
        return self.hidden if self.hidden is not None else self.kernel_size * channels


@dataclass(frozen=True)
class AttentionConfig:
    heads: int
    d_model: int
    scale_by_sqrt_d: bool = False

    def validate(self) -> None:
        if self.heads < 1 or self.d_model < 1:
            raise ShapeMismatch(message=f"Attention needs H >= 1 and d_model >= 1, got {self.heads}/{self.d_model}")


# --------------------------------------------------------------------------------------
# Involution
# --------------------------------------------------------------------------------------


def expansion_product(a: Tensor, b: Tensor) -> Tensor:
    """T[..., k, g, c] = A[..., k, g] * B[..., k, c]."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-1] != b.shape[:-1]:
        raise ShapeMismatch(message=f"expansion_product: A{a.shape} vs B{b.shape}", subject="expansion_product")
    return mul(reshape(a, a.shape + (1,)), reshape(b, b.shape[:-1] + (1, b.shape[-1])))


class Involution1D(Module):
    """phi: FC(K*C -> hidden) -> LeakyReLU -> FC(hidden -> K*G)."""

    def __init__(self, channels: int, cfg: InvolutionConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.channels = channels
        k, g, hidden = cfg.kernel_size, cfg.groups, cfg.hidden_for(channels)
        self.fc1_w = glorot_param(rng, k * channels, hidden, "fc1_w")
        self.fc1_b = Param(np.zeros(hidden), "fc1_b")
        self.fc2_w = glorot_param(rng, hidden, k * g, "fc2_w")
        self.fc2_b = Param(np.zeros(k * g), "fc2_b")

    def __call__(self, block: Tensor) -> Tensor:
        return involution1d(block, self.cfg, self)


def involution_kernel(x_flat: Tensor, phi: Involution1D) -> Tensor:
    k, g = phi.cfg.kernel_size, phi.cfg.groups
    if x_flat.shape[-1] != k * phi.channels:
        raise ShapeMismatch(
            message=f"involution_kernel expects {k * phi.channels} inputs, got {x_flat.shape[-1]}",
            subject="involution_kernel",
        )
    hidden = leaky_relu(linear(x_flat, phi.fc1_w, phi.fc1_b), phi.cfg.leaky_slope)
    out = linear(hidden, phi.fc2_w, phi.fc2_b)
    return reshape(out, x_flat.shape[:-1] + (k, g))


def involution1d(block: Tensor, cfg: InvolutionConfig, phi: Involution1D) -> Tensor:
    """
    out[..., j, c] = sum_g sum_k kernel_j[k, g] * window_j[k, c]

    window_j is the zero-padded K-neighbourhood of position j along the
    embedding axis, and kernel_j = phi(flatten(window_j)).
    """
    if block.ndim < 2 or block.shape[-1] != phi.channels:
        raise ShapeMismatch(
            message=f"involution1d expects (..., N_emb, {phi.channels}), got {block.shape}",
            subject="involution1d",
        )
    k, c = cfg.kernel_size, block.shape[-1]
    windows = unfold1d(block, k)
    kernel = involution_kernel(reshape(windows, windows.shape[:-2] + (k * c,)), phi)
    return sum_(expansion_product(kernel, windows), axis=(-3, -2))


# --------------------------------------------------------------------------------------
# Attention
# --------------------------------------------------------------------------------------


class AttentionHead(Module):
    def __init__(self, d_model: int, rng: np.random.Generator):
        self.w_q = glorot_param(rng, d_model, d_model, "w_q")
        self.w_k = glorot_param(rng, d_model, d_model, "w_k")
        self.w_v = glorot_param(rng, d_model, d_model, "w_v")


def attention_weights(x: Tensor, head: AttentionHead, scale_by_sqrt_d: bool = False) -> Tensor:
    q = linear(x, head.w_q)
    k = linear(x, head.w_k)
    logits = matmul(q, swapaxes(k, -1, -2))
    if scale_by_sqrt_d:
        logits = mul(logits, 1.0 / math.sqrt(x.shape[-1]))
    return softmax(logits, axis=-1)


def self_attention(x: Tensor, head: AttentionHead, scale_by_sqrt_d: bool = False) -> Tensor:
    """softmax(Q K^T) V with row-wise softmax over (..., N, d) inputs."""
    if x.ndim < 2 or x.shape[-1] != head.w_q.shape[0]:
        raise ShapeMismatch(
            message=f"self_attention expects (..., N, {head.w_q.shape[0]}), got {x.shape}",
            subject="self_attention",
        )
    return matmul(attention_weights(x, head, scale_by_sqrt_d), linear(x, head.w_v))


class MultiHeadAttention(Module):
    """H full-width heads, concatenated, then mapped back to d_model."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.heads = [AttentionHead(cfg.d_model, rng) for _ in range(cfg.heads)]
        self.w_o = glorot_param(rng, cfg.heads * cfg.d_model, cfg.d_model, "w_o")

    def __call__(self, x: Tensor) -> Tensor:
        return multi_head(x, self)


def multi_head(x: Tensor, mha: MultiHeadAttention) -> Tensor:
    outputs = [self_attention(x, head, mha.cfg.scale_by_sqrt_d) for head in mha.heads]
    return linear(concat(outputs, axis=-1), mha.w_o)


# --------------------------------------------------------------------------------------
# Convolution baseline
# --------------------------------------------------------------------------------------


class Conv1DBaseline(Module):
    """Depthwise static kernel: one K-tap filter per channel, shared by every position."""

    def __init__(self, channels: int, kernel_size: int, rng: np.random.Generator):
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ShapeMismatch(message=f"Kernel size must be a positive odd integer, got {kernel_size}")
        self.kernel_size = kernel_size
        self.channels = channels
        self.weight = glorot_param(rng, kernel_size, channels, "weight")

    def __call__(self, block: Tensor) -> Tensor:
        return conv1d_baseline(block, self)


def conv1d_baseline(block: Tensor, conv: Conv1DBaseline) -> Tensor:
    """out[..., j, c] = sum_k W[k, c] * window_j[k, c]; channels never mix."""
    if block.ndim < 2 or block.shape[-1] != conv.channels:
        raise ShapeMismatch(
            message=f"conv1d_baseline expects (..., N_emb, {conv.channels}), got {block.shape}",
            subject="conv1d_baseline",
        )
    windows = unfold1d(block, conv.kernel_size)
    return sum_(mul(windows, conv.weight), axis=-2)


# --------------------------------------------------------------------------------------
# Stages and mode registry
# --------------------------------------------------------------------------------------


class AttentionStage(Module):
    """Folds channels into features: (..., N, E, C) -> (..., N, E*C) -> attend -> back."""

    def __init__(self, emb_dim: int, channels: int, heads: int, scale_by_sqrt_d: bool, rng: np.random.Generator):
        self.emb_dim = emb_dim
        self.channels = channels
        self.mha = MultiHeadAttention(AttentionConfig(heads, emb_dim * channels, scale_by_sqrt_d), rng)

    def __call__(self, block: Tensor) -> Tensor:
        lead = block.shape[:-2]
        folded = reshape(block, lead + (self.emb_dim * self.channels,))
        return reshape(self.mha(folded), lead + (self.emb_dim, self.channels))


@dataclass(frozen=True)
class EreSettings:
    heads: int = 3
    involution: InvolutionConfig = InvolutionConfig()
    scale_by_sqrt_d: bool = False


StageBuilder = Callable[[int, int, int, EreSettings, np.random.Generator], List[Module]]


@dataclass(frozen=True)
class ModeSpec:
    name: str
    uses_heads: bool
    builder: StageBuilder


ERE_MODES: Dict[str, ModeSpec] = {}


def register_mode(name: str, uses_heads: bool = False):
    """
    Register a cascade builder under a mode name.

        @register_mode("invo")
        def _invo(emb_dim, channels, heads, settings, rng):
            return [Involution1D(channels, settings.involution, rng)]
    """

    def decorator(builder: StageBuilder) -> StageBuilder:
        ERE_MODES[name] = ModeSpec(name, uses_heads, builder)
        return builder

    return decorator


def mode_names() -> List[str]:
    return sorted(ERE_MODES)


_MODE_PATTERN = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*(\d+)\s*\))?\s*$")


def parse_mode(text: str, default_heads: int = 3) -> Tuple[str, int]:
    """'attn(3)' -> ('attn', 3); 'attn' -> ('attn', default_heads)."""
    match = _MODE_PATTERN.match(text or "")
    if not match or match.group(1) not in ERE_MODES:
        raise UnknownMode(
            message=f"Unknown ERE mode '{text}'",
            invalid_value=text,
            valid_values=mode_names(),
        )
    name, heads = match.group(1), match.group(2)
    spec = ERE_MODES[name]
    if heads is not None and not spec.uses_heads:
        raise UnknownMode(message=f"Mode '{name}' takes no head count", invalid_value=text, valid_values=mode_names())
    count = int(heads) if heads is not None else default_heads
    if spec.uses_heads and count < 1:
        raise UnknownMode(message=f"Head count must be at least 1 in '{text}'", invalid_value=text)
    return name, count


def format_mode(name: str, heads: int) -> str:
    return f"{name}({heads})" if ERE_MODES[name].uses_heads else name


@register_mode("krl_only")
def _krl_only(emb_dim, channels, heads, settings, rng):
    return []


@register_mode("invo")
def _invo(emb_dim, channels, heads, settings, rng):
    return [Involution1D(channels, settings.involution, rng)]


@register_mode("conv")
def _conv(emb_dim, channels, heads, settings, rng):
    return [Conv1DBaseline(channels, settings.involution.kernel_size, rng)]


@register_mode("attn", uses_heads=True)
def _attn(emb_dim, channels, heads, settings, rng):
    return [AttentionStage(emb_dim, channels, heads, settings.scale_by_sqrt_d, rng)]


@register_mode("invo_then_attn", uses_heads=True)
def _invo_then_attn(emb_dim, channels, heads, settings, rng):
    return [
        Involution1D(channels, settings.involution, rng),
        AttentionStage(emb_dim, channels, heads, settings.scale_by_sqrt_d, rng),
    ]


@register_mode("attn_then_invo", uses_heads=True)
def _attn_then_invo(emb_dim, channels, heads, settings, rng):
    return [
        AttentionStage(emb_dim, channels, heads, settings.scale_by_sqrt_d, rng),
        Involution1D(channels, settings.involution, rng),
    ]


class EreStack(Module):
    """
    One side's cascade. Maps (B, N, N_emb, C) blocks to (B, N*N_emb*C) vectors;
    the output length never depends on the head.
    """

    def __init__(self, mode: str, rows: int, emb_dim: int, channels: int, settings: EreSettings, seed: int, stream: int):
        name, heads = parse_mode(mode, settings.heads)
        self.mode = format_mode(name, heads)
        self.rows = rows
        self.emb_dim = emb_dim
        self.channels = channels
        rng = seeded_rng(seed, 0xE2E, stream)
        self.stages: List[Module] = ERE_MODES[name].builder(emb_dim, channels, heads, settings, rng)

    @property
    def output_length(self) -> int:
        return self.rows * self.emb_dim * self.channels

    def __call__(self, blocks: Tensor) -> Tensor:
        return enhance(blocks, self)


def enhance(block: Tensor, stack: EreStack) -> Tensor:
    """Apply the cascade and flatten rows; a single (N, E, C) block gives a vector."""
    single = block.ndim == 3
    if single:
        block = reshape(block, (1,) + block.shape)
    if block.shape[1:] != (stack.rows, stack.emb_dim, stack.channels):
        raise ShapeMismatch(
            message=f"{stack.mode} expects blocks (N={stack.rows}, {stack.emb_dim}, {stack.channels}), got {block.shape[1:]}",
            subject=stack.mode,
        )
    x = block
    for stage in stack.stages:
        x = stage(x)
    flat = reshape(x, (x.shape[0], stack.output_length))
    return reshape(flat, (stack.output_length,)) if single else flat
