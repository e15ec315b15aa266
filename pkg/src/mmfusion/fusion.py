"""Regularized feature channels and the attention fusion paths.

Each modality's global embedding runs through two parallel channels, an
inverted-dropout channel and an elastic-net proximal channel, whose outputs
are concatenated and mixed by a linear+ReLU head (O_T, O_I). The context
sequences feed the hybrid attention path producing the interaction feature
O_H: per-modality intra-modal modeling first (a transformer block for image
regions, multi-window 1-D convolutions for text), then bidirectional
cross-attention between the pooled vector of one modality and the pre-pooled
sequence of the other.

Two alternative fusion topologies are provided for benchmarking: merged
attention (concatenate sequences, then self-attention) and an interaction
encoder (cross-attention first, then self-attention).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import masked_mean
from .layers import (LayerNorm, Linear, TransformerBlock, scaled_dot_attention,
                     trunc_normal)
from .tensor import Module, Tensor, dropout_mask, _result

ATTENTION_MODES = ("sequence", "pooled")
TOPOLOGIES = ("hybrid", "merged", "interaction")


@dataclass
class RegularizationConfig:
    p: float = 0.9          # keep probability
    alpha: float = 0.01     # L1 coefficient
    beta: float = 0.01      # L2 coefficient

    def validate(self):
        problems = []
        if not 0 < self.p <= 1:
            problems.append(f"keep probability p must be in (0, 1], got {self.p}")
        if self.alpha < 0:
            problems.append(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            problems.append(f"beta must be >= 0, got {self.beta}")
        return problems


@dataclass
class FusedFeatures:
    """The three fusion outputs feeding the decision branches, equal width."""
    o_text: Tensor
    o_interaction: Tensor
    o_image: Tensor


def dropout_channel(x: Tensor, p: float, mode: str = "training",
                    rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: keep with probability ``p`` and rescale by 1/p during
    training; the inference path is the exact identity."""
    if not 0 < p <= 1:
        raise ValueError(f"dropout_channel: keep probability must be in (0, 1], got {p}")
    if mode == "inference":
        return x
    if mode != "training":
        raise ValueError(f"dropout_channel: unknown mode {mode!r}")
    if rng is None:
        raise ValueError("dropout_channel: training mode needs an rng")
    mask = dropout_mask(x.shape, p, rng).astype(x.data.dtype)
    return T.mul(x, Tensor(mask / p))


def elastic_net_channel(x: Tensor, alpha: float, beta: float) -> Tensor:
    """Closed-form minimizer of ||x' - x||^2 + alpha*||x'||_1 + beta*||x'||_2^2,
    applied elementwise: soft-threshold at alpha/2, then shrink by 1/(1+beta).

    Differentiable almost everywhere; the subgradient at the threshold kink
    is taken as zero.
    """
    if alpha < 0 or beta < 0:
        raise ValueError(f"elastic_net_channel: coefficients must be >= 0, "
                         f"got alpha={alpha}, beta={beta}")
    thresh = alpha / 2.0
    active = np.abs(x.data) > thresh
    out = np.sign(x.data) * np.maximum(np.abs(x.data) - thresh, 0.0) / (1.0 + beta)

    def backward_fn(g):
        return (g * active / (1.0 + beta),)

    return _result(out.astype(x.data.dtype), (x,), backward_fn)


class UnimodalFusionHead(Module):
    """concat(channel1, channel2) -> linear -> ReLU, one head per modality."""

    def __init__(self, d_in, d_out, rng, dtype=np.float32):
        super().__init__()
        self.proj = Linear(2 * d_in, d_out, rng, dtype=dtype)

    def __call__(self, ch1: Tensor, ch2: Tensor) -> Tensor:
        if ch1.shape != ch2.shape:
            raise T.ShapeError(
                f"fuse_unimodal: channel widths differ, {ch1.shape} vs {ch2.shape}")
        return T.relu(self.proj(T.concat([ch1, ch2], axis=-1)))


class SelfAttentionPool(Module):
    """Transformer block over region features, mean over positions, LayerNorm.

    Returns (pooled [B, d], updated sequence [B, N, d]). ``identity_block``
    is a test hook that skips the transformer so the pooling arithmetic can
    be checked in isolation.
    """

    def __init__(self, d, n_heads, ffn_width, rng, dtype=np.float32,
                 identity_block=False):
        super().__init__()
        self.identity_block = identity_block
        if not identity_block:
            self.block = TransformerBlock(d, n_heads, ffn_width, rng, dtype=dtype)
        self.norm = LayerNorm(d, dtype=dtype)

    def __call__(self, seq: Tensor):
        if seq.shape[1] < 1:
            raise T.ShapeError("image_self_attention_pool: empty region sequence")
        updated = seq if self.identity_block else self.block(seq)
        pooled = self.norm(T.mean_pool(updated, axis=1))
        return pooled, updated


def _window_key_mask(pad_mask: np.ndarray, window: int) -> np.ndarray:
    """True where a conv window of the given length covers only real tokens.

    Rows with no fully-real window fall back to all-valid so downstream max
    and attention stay well-defined.
    """
    B, D = pad_mask.shape
    steps = D - window + 1
    valid = np.ones((B, steps), dtype=bool)
    for j in range(window):
        valid &= pad_mask[:, j:j + steps]
    hollow = ~valid.any(axis=1)
    valid[hollow] = True
    return valid


class TextConvPool(Module):
    """Phrase modeling with window-1/2/3 convolutions.

    Each window's features are max-pooled over positions, the three pooled
    vectors are concatenated, mixed by a linear map and LayerNorm'd into the
    text global feature. Also exposes the concatenated pre-pooled phrase
    sequence, which the cross-attention stage uses as keys/values.
    """

    WINDOWS = (1, 2, 3)

    def __init__(self, d, rng, dtype=np.float32):
        super().__init__()
        self.d = d
        # fan-scaled init: these layers are trained from scratch
        self.conv_w1 = Tensor(trunc_normal(rng, (1 * d, d), std=1.0 / np.sqrt(d),
                                           dtype=dtype), requires_grad=True)
        self.conv_b1 = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.conv_w2 = Tensor(trunc_normal(rng, (2 * d, d), std=1.0 / np.sqrt(2 * d),
                                           dtype=dtype), requires_grad=True)
        self.conv_b2 = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.conv_w3 = Tensor(trunc_normal(rng, (3 * d, d), std=1.0 / np.sqrt(3 * d),
                                           dtype=dtype), requires_grad=True)
        self.conv_b3 = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.mix = Linear(3 * d, d, rng, dtype=dtype)
        self.norm = LayerNorm(d, dtype=dtype)

    def __call__(self, seq: Tensor, pad_mask: np.ndarray | None = None):
        B, D, d = seq.shape
        if D < 3:
            raise T.ShapeError(
                f"text_conv_pool: sequence length {D} < 3; pad the batch first")
        weights = ((self.conv_w1, self.conv_b1), (self.conv_w2, self.conv_b2),
                   (self.conv_w3, self.conv_b3))
        pooled = []
        phrase_chunks = []
        phrase_masks = []
        for window, (w, b) in zip(self.WINDOWS, weights):
            feats = T.conv1d(seq, w, b, window)          # [B, D-window+1, d]
            if pad_mask is not None:
                valid = _window_key_mask(pad_mask, window)
                gate = np.where(valid[:, :, None], 0.0, -1e9)
                masked = T.add(feats, Tensor(np.broadcast_to(
                    gate, feats.shape).astype(feats.data.dtype)))
            else:
                valid = np.ones(feats.shape[:2], dtype=bool)
                masked = feats
            pooled.append(T.max_pool(masked, axis=1))    # [B, d]
            phrase_chunks.append(feats)
            phrase_masks.append(valid)
        global_text = self.norm(self.mix(T.concat(pooled, axis=-1)))
        phrase_seq = T.concat(phrase_chunks, axis=1)     # [B, 3D-3, d]
        phrase_mask = np.concatenate(phrase_masks, axis=1)
        return global_text, phrase_seq, phrase_mask


class CrossModalAttention(Module):
    """Bidirectional single-block cross attention producing the interaction
    feature: each modality's pooled vector queries the other modality.

    mode="sequence" (default) attends over the other modality's pre-pooled
    sequence. mode="pooled" attends over its length-1 pooled vector, where
    softmax over a single key is forced to one and the output reduces exactly
    to the value projection. Projections are bias-free matrix products.
    """

    def __init__(self, d, n_heads, rng, mode="sequence", dtype=np.float32):
        super().__init__()
        if mode not in ATTENTION_MODES:
            raise ValueError(f"cross_modal_attention: unknown mode {mode!r}")
        if d % n_heads:
            raise T.ShapeError(f"cross_modal_attention: width {d} not divisible "
                               f"by {n_heads} heads")
        self.mode = mode
        self.n_heads = n_heads
        self.q_from_text = Linear(d, d, rng, bias=False, dtype=dtype)
        self.k_image = Linear(d, d, rng, bias=False, dtype=dtype)
        self.v_image = Linear(d, d, rng, bias=False, dtype=dtype)
        self.q_from_image = Linear(d, d, rng, bias=False, dtype=dtype)
        self.k_text = Linear(d, d, rng, bias=False, dtype=dtype)
        self.v_text = Linear(d, d, rng, bias=False, dtype=dtype)

    def _one_direction(self, query_vec, kv_seq, q_proj, k_proj, v_proj, key_mask):
        B, d = query_vec.shape
        q = q_proj(T.reshape(query_vec, (B, 1, d)))
        out = scaled_dot_attention(q, k_proj(kv_seq), v_proj(kv_seq),
                                   self.n_heads, key_mask)
        return T.reshape(out, (B, d))

    def __call__(self, text_pooled, text_seq, text_mask, image_pooled, image_seq):
        if text_pooled.shape[-1] != image_pooled.shape[-1]:
            raise T.ShapeError(
                f"cross_modal_attention: widths differ, {text_pooled.shape} vs "
                f"{image_pooled.shape}")
        B, d = text_pooled.shape
        if self.mode == "pooled":
            text_kv = T.reshape(text_pooled, (B, 1, d))
            image_kv = T.reshape(image_pooled, (B, 1, d))
            text_mask = None
        else:
            text_kv = text_seq
            image_kv = image_seq
        image_enhanced = self._one_direction(
            text_pooled, image_kv, self.q_from_text, self.k_image, self.v_image, None)
        text_enhanced = self._one_direction(
            image_pooled, text_kv, self.q_from_image, self.k_text, self.v_text,
            text_mask)
        return T.add(image_enhanced, text_enhanced)


class HybridAttentionFusion(Module):
    """Fig-style hybrid path: self-attention within each modality, then
    bidirectional cross attention. Consumes encoder context sequences."""

    def __init__(self, d, n_heads, ffn_width, rng, mode="sequence", dtype=np.float32):
        super().__init__()
        self.image_pool = SelfAttentionPool(d, n_heads, ffn_width, rng, dtype=dtype)
        self.text_pool = TextConvPool(d, rng, dtype=dtype)
        self.cross = CrossModalAttention(d, n_heads, rng, mode=mode, dtype=dtype)

    def __call__(self, text_ctx: Tensor, text_mask: np.ndarray, image_ctx: Tensor) -> Tensor:
        image_pooled, image_updated = self.image_pool(image_ctx)
        text_pooled, phrase_seq, phrase_mask = self.text_pool(text_ctx, text_mask)
        return self.cross(text_pooled, phrase_seq, phrase_mask,
                          image_pooled, image_updated)


class ConcatLinearFusion(Module):
    """Attention-free interaction path: masked means of both context
    sequences, concatenated and linearly mixed (the ablation baseline)."""

    def __init__(self, d, rng, dtype=np.float32):
        super().__init__()
        self.proj = Linear(2 * d, d, rng, dtype=dtype)

    def __call__(self, text_ctx, text_mask, image_ctx):
        B = text_ctx.shape[0]
        image_mask = np.ones(image_ctx.shape[:2], dtype=bool)
        pooled = T.concat(
            [masked_mean(text_ctx, text_mask), masked_mean(image_ctx, image_mask)],
            axis=-1)
        return self.proj(pooled)


class MergedAttentionFusion(Module):
    """Concatenate the two context sequences, run self-attention over the
    merged sequence, mean-pool the real positions."""

    def __init__(self, d, n_heads, ffn_width, rng, dtype=np.float32):
        super().__init__()
        self.block = TransformerBlock(d, n_heads, ffn_width, rng, dtype=dtype)

    def __call__(self, text_ctx, text_mask, image_ctx):
        merged = T.concat([text_ctx, image_ctx], axis=1)
        mask = np.concatenate(
            [text_mask, np.ones(image_ctx.shape[:2], dtype=bool)], axis=1)
        return masked_mean(self.block(merged, key_mask=mask), mask)


class InteractionEncoderFusion(Module):
    """Cross-attention between the raw sequences first, then self-attention
    over the concatenated interaction sequence, then pooling."""

    def __init__(self, d, n_heads, ffn_width, rng, dtype=np.float32):
        super().__init__()
        self.n_heads = n_heads
        self.text_q = Linear(d, d, rng, bias=False, dtype=dtype)
        self.image_k = Linear(d, d, rng, bias=False, dtype=dtype)
        self.image_v = Linear(d, d, rng, bias=False, dtype=dtype)
        self.image_q = Linear(d, d, rng, bias=False, dtype=dtype)
        self.text_k = Linear(d, d, rng, bias=False, dtype=dtype)
        self.text_v = Linear(d, d, rng, bias=False, dtype=dtype)
        self.block = TransformerBlock(d, n_heads, ffn_width, rng, dtype=dtype)

    def __call__(self, text_ctx, text_mask, image_ctx):
        text_enh = scaled_dot_attention(
            self.text_q(text_ctx), self.image_k(image_ctx), self.image_v(image_ctx),
            self.n_heads)
        image_enh = scaled_dot_attention(
            self.image_q(image_ctx), self.text_k(text_ctx), self.text_v(text_ctx),
            self.n_heads, key_mask=text_mask)
        merged = T.concat([text_enh, image_enh], axis=1)
        mask = np.concatenate(
            [text_mask, np.ones(image_ctx.shape[:2], dtype=bool)], axis=1)
        return masked_mean(self.block(merged, key_mask=mask), mask)


def build_interaction_path(topology, d, n_heads, ffn_width, rng, mode="sequence",
                           dtype=np.float32):
    if topology == "hybrid":
        return HybridAttentionFusion(d, n_heads, ffn_width, rng, mode=mode, dtype=dtype)
    if topology == "merged":
        return MergedAttentionFusion(d, n_heads, ffn_width, rng, dtype=dtype)
    if topology == "interaction":
        return InteractionEncoderFusion(d, n_heads, ffn_width, rng, dtype=dtype)
    raise ValueError(f"unknown attention topology {topology!r}")
