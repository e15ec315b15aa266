"""Toy-scale text and image encoders.

The text side follows the two defining ALBERT mechanisms, factorized
embeddings and cross-layer weight sharing; the image side is a small ViT:
flattened patches, a learned CLS token, positional embeddings, transformer
blocks. Both are deterministic given fixed weights (no internal dropout).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear, TransformerBlock, trunc_normal
from .tensor import Module, ModuleList, Tensor

PAD_ID = 0
UNK_ID = 1


@dataclass
class EncoderConfig:
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    ffn_width: int = 128
    embedding_dim: int = 32
    share_layers: bool = True
    max_len: int = 64

    def validate(self):
        problems = []
        if self.d_model % self.n_heads:
            problems.append(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        for name in ("d_model", "n_heads", "n_layers", "ffn_width", "embedding_dim", "max_len"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        return problems


@dataclass
class EncoderOutput:
    """Per-modality contextual sequence plus its global embedding."""
    context: Tensor   # [B, L, d]
    pooled: Tensor    # [B, d]


@dataclass
class TextBatch:
    token_ids: np.ndarray   # [B, D] ints
    pad_mask: np.ndarray    # [B, D] bool, True on real tokens
    vocab_size: int

    def __post_init__(self):
        if self.token_ids.shape != self.pad_mask.shape:
            raise T.ShapeError("TextBatch: token_ids and pad_mask shapes differ")
        if self.token_ids.size and self.token_ids.max() >= self.vocab_size:
            raise T.ShapeError("TextBatch: token id out of vocabulary range")


@dataclass
class ImageBatch:
    pixels: np.ndarray      # [B, H, W, C] floats in [0, 1]
    patch_size: int

    def __post_init__(self):
        B, H, W, C = self.pixels.shape
        if H % self.patch_size or W % self.patch_size:
            raise T.ShapeError(
                f"ImageBatch: patch size {self.patch_size} does not divide {H}x{W}")


def tokenize(text: str, vocab: dict) -> list:
    """Whitespace tokenization against a fixed vocabulary; unknown words map
    to UNK and empty text yields a single UNK token."""
    words = text.split()
    if not words:
        return [UNK_ID]
    return [vocab.get(w, UNK_ID) for w in words]


def patchify(x: Tensor, patch: int) -> Tensor:
    """Split [H,W,C] (or [B,H,W,C]) into flattened non-overlapping patches.

    Patches are ordered row-major over the patch grid; within a patch the
    layout is (row, col, channel), so unpatchify reconstructs exactly.
    """
    batched = x.data.ndim == 4
    if x.data.ndim not in (3, 4):
        raise T.ShapeError(f"patchify: expects [H,W,C] or [B,H,W,C], got {x.shape}")
    H, W, C = x.shape[-3:]
    if H % patch or W % patch:
        raise T.ShapeError(f"patchify: patch size {patch} does not divide {H}x{W}")
    hp, wp = H // patch, W // patch
    if batched:
        B = x.shape[0]
        x = T.reshape(x, (B, hp, patch, wp, patch, C))
        x = T.transpose(x, (0, 1, 3, 2, 4, 5))
        return T.reshape(x, (B, hp * wp, patch * patch * C))
    x = T.reshape(x, (hp, patch, wp, patch, C))
    x = T.transpose(x, (0, 2, 1, 3, 4))
    return T.reshape(x, (hp * wp, patch * patch * C))


def unpatchify(x: Tensor, H: int, W: int, C: int) -> Tensor:
    """Inverse of patchify for [N, P*P*C] inputs."""
    N = x.shape[0]
    patch = int(np.sqrt(x.shape[1] // C))
    hp, wp = H // patch, W // patch
    if hp * wp != N:
        raise T.ShapeError(f"unpatchify: {N} patches inconsistent with {H}x{W}/{patch}")
    x = T.reshape(x, (hp, wp, patch, patch, C))
    x = T.transpose(x, (0, 2, 1, 3, 4))
    return T.reshape(x, (H, W, C))


ENCODER_INIT_STD = 0.02


class _BlockStack(Module):
    """n_layers transformer applications; one parameter set when shared."""

    def __init__(self, cfg: EncoderConfig, rng, dtype):
        super().__init__()
        self.n_layers = cfg.n_layers
        self.share_layers = cfg.share_layers
        if cfg.share_layers:
            self.block = TransformerBlock(cfg.d_model, cfg.n_heads, cfg.ffn_width,
                                          rng, dtype, std=ENCODER_INIT_STD)
        else:
            self.blocks = ModuleList(
                TransformerBlock(cfg.d_model, cfg.n_heads, cfg.ffn_width, rng,
                                 dtype, std=ENCODER_INIT_STD)
                for _ in range(cfg.n_layers))

    def __call__(self, x, key_mask=None):
        if self.share_layers:
            for _ in range(self.n_layers):
                x = self.block(x, key_mask)
            return x
        for block in self.blocks:
            x = block(x, key_mask)
        return x


class TextEncoder(Module):
    """Factorized embeddings (word + position + segment) projected to model
    width, then a (possibly weight-shared) transformer stack. The global
    embedding is the mean over non-pad positions."""

    def __init__(self, cfg: EncoderConfig, vocab_size: int, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.vocab_size = vocab_size
        E = cfg.embedding_dim
        self.word_emb = Tensor(trunc_normal(rng, (vocab_size, E), dtype=dtype), requires_grad=True)
        self.pos_emb = Tensor(trunc_normal(rng, (cfg.max_len, E), dtype=dtype), requires_grad=True)
        self.seg_emb = Tensor(np.zeros(E, dtype=dtype), requires_grad=True)
        self.input_proj = Linear(E, cfg.d_model, rng, dtype=dtype, std=ENCODER_INIT_STD)
        self.stack = _BlockStack(cfg, rng, dtype)

    def __call__(self, batch: TextBatch) -> EncoderOutput:
        ids = batch.token_ids
        B, D = ids.shape
        if D > self.cfg.max_len:
            raise T.ShapeError(
                f"encode_text: sequence length {D} exceeds max_len {self.cfg.max_len}")
        emb = T.embedding(self.word_emb, ids)                    # [B, D, E]
        pos = T.narrow(self.pos_emb, 0, 0, D)                    # [D, E]
        emb = T.add(T.add(emb, pos), self.seg_emb)
        hidden = self.input_proj(emb)                            # [B, D, d]
        context = self.stack(hidden, key_mask=batch.pad_mask)
        pooled = masked_mean(context, batch.pad_mask)
        return EncoderOutput(context=context, pooled=pooled)


def masked_mean(context: Tensor, pad_mask: np.ndarray) -> Tensor:
    """Mean of [B, L, d] over positions where pad_mask is True."""
    B, L, d = context.shape
    counts = pad_mask.sum(axis=1)
    if np.any(counts == 0):
        raise T.ShapeError("masked_mean: a row has no real tokens")
    dtype = context.data.dtype
    mask3 = np.repeat(pad_mask[:, :, None].astype(dtype), d, axis=2)
    summed = T.tsum(T.mul(context, Tensor(mask3)), axis=1)       # [B, d]
    inv = np.repeat((1.0 / counts)[:, None].astype(dtype), d, axis=1)
    return T.mul(summed, Tensor(inv))


class ImageEncoder(Module):
    """Patch projection, learned CLS token, positional embedding, transformer
    stack. The global embedding is the CLS output position."""

    def __init__(self, cfg: EncoderConfig, image_size: int, patch_size: int,
                 channels: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        if image_size % patch_size:
            raise T.ShapeError(
                f"ImageEncoder: patch size {patch_size} does not divide {image_size}")
        self.cfg = cfg
        self.patch_size = patch_size
        self.channels = channels
        self.n_patches = (image_size // patch_size) ** 2
        d = cfg.d_model
        self.patch_proj = Linear(patch_size * patch_size * channels, d, rng, dtype=dtype,
                                 std=ENCODER_INIT_STD)
        self.cls_token = Tensor(trunc_normal(rng, (d,), dtype=dtype), requires_grad=True)
        self.pos_emb = Tensor(
            trunc_normal(rng, (self.n_patches + 1, d), dtype=dtype), requires_grad=True)
        self.stack = _BlockStack(cfg, rng, dtype)

    def __call__(self, batch: ImageBatch) -> EncoderOutput:
        pixels = batch.pixels
        if pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValueError(
                "encode_image: pixel values outside [0, 1]; run preprocessing first")
        B = pixels.shape[0]
        d = self.cfg.d_model
        dtype = self.cls_token.data.dtype
        patches = patchify(Tensor(pixels.astype(dtype)), self.patch_size)
        tokens = self.patch_proj(patches)                        # [B, N, d]
        cls = T.add(Tensor(np.zeros((B, 1, d), dtype=dtype)), self.cls_token)
        seq = T.concat([cls, tokens], axis=1)                    # [B, N+1, d]
        seq = T.add(seq, self.pos_emb)
        context = self.stack(seq)
        pooled = T.reshape(T.narrow(context, 1, 0, 1), (B, d))
        return EncoderOutput(context=context, pooled=pooled)
