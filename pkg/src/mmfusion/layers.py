"""Trainable building blocks: linear maps, layer norm, attention, transformer."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Module, Tensor


def trunc_normal(rng: np.random.Generator, shape, std=0.02, dtype=np.float32):
    """Truncated-normal init at +-2 std, the usual transformer choice."""
    vals = rng.standard_normal(shape) * std
    return np.clip(vals, -2 * std, 2 * std).astype(dtype)


class Linear(Module):
    """Affine map x @ W + b with W stored [d_in, d_out].

    ``std=None`` initializes at 1/sqrt(d_in) (fan-scaled, the right scale for
    freshly trained layers); encoder stacks pass an explicit 0.02.
    """

    def __init__(self, d_in, d_out, rng, bias=True, dtype=np.float32, std=None):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        std = 1.0 / np.sqrt(d_in) if std is None else std
        self.weight = Tensor(trunc_normal(rng, (d_in, d_out), std=std, dtype=dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise T.ShapeError(f"Linear: input width {x.shape[-1]} != {self.d_in}")
        flat = x if x.data.ndim == 2 else T.reshape(x, (-1, self.d_in))
        out = T.matmul(flat, self.weight)
        if x.data.ndim != 2:
            out = T.reshape(out, tuple(x.shape[:-1]) + (self.d_out,))
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """[B, L, d] -> [B*h, L, d/h]."""
    B, L, d = x.shape
    dh = d // n_heads
    x = T.reshape(x, (B, L, n_heads, dh))
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (B * n_heads, L, dh))


def merge_heads(x: Tensor, n_heads: int) -> Tensor:
    """[B*h, L, d/h] -> [B, L, d]."""
    Bh, L, dh = x.shape
    B = Bh // n_heads
    x = T.reshape(x, (B, n_heads, L, dh))
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (B, L, n_heads * dh))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                         key_mask: np.ndarray | None = None,
                         return_weights: bool = False):
    """Multi-head scaled dot-product attention over already-projected q/k/v.

    q: [B, Lq, d], k/v: [B, Lk, d]. ``key_mask`` is a boolean [B, Lk] array,
    True where the key is real; masked keys get -1e9 logits so their
    attention weight underflows to zero. With ``return_weights`` the
    row-stochastic weight tensor [B*h, Lq, Lk] is returned alongside.
    """
    B, Lq, d = q.shape
    if d % n_heads:
        raise T.ShapeError(f"attention: width {d} not divisible by {n_heads} heads")
    Lk = k.shape[1]
    qh = split_heads(q, n_heads)
    kh = split_heads(k, n_heads)
    vh = split_heads(v, n_heads)
    scores = T.scale(T.bmm(qh, T.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(d // n_heads))
    if key_mask is not None:
        bias = np.where(key_mask[:, None, None, :], 0.0, -1e9)
        bias = np.broadcast_to(bias, (B, n_heads, Lq, Lk)).reshape(B * n_heads, Lq, Lk)
        scores = T.add(scores, Tensor(bias.astype(scores.data.dtype)))
    weights = T.softmax(scores, axis=-1)
    out = merge_heads(T.bmm(weights, vh), n_heads)
    if return_weights:
        return out, weights
    return out


class MultiHeadSelfAttention(Module):
    def __init__(self, d, n_heads, rng, dtype=np.float32, std=None):
        super().__init__()
        if d % n_heads:
            raise T.ShapeError(f"attention: d_model {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q_proj = Linear(d, d, rng, dtype=dtype, std=std)
        # a key bias shifts every logit of a query equally and cancels in
        # softmax, leaving a parameter with an identically zero gradient
        self.k_proj = Linear(d, d, rng, bias=False, dtype=dtype, std=std)
        self.v_proj = Linear(d, d, rng, dtype=dtype, std=std)
        self.o_proj = Linear(d, d, rng, dtype=dtype, std=std)

    def __call__(self, x: Tensor, key_mask=None) -> Tensor:
        out = scaled_dot_attention(
            self.q_proj(x), self.k_proj(x), self.v_proj(x), self.n_heads, key_mask)
        return self.o_proj(out)


class FeedForward(Module):
    def __init__(self, d, width, rng, dtype=np.float32, std=None):
        super().__init__()
        self.inner = Linear(d, width, rng, dtype=dtype, std=std)
        self.outer = Linear(width, d, rng, dtype=dtype, std=std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(T.relu(self.inner(x)))


class TransformerBlock(Module):
    """Post-norm block: LN(x + attn(x)) then LN(h + ffn(h))."""

    def __init__(self, d, n_heads, ffn_width, rng, dtype=np.float32, std=None):
        super().__init__()
        self.attn = MultiHeadSelfAttention(d, n_heads, rng, dtype=dtype, std=std)
        self.norm1 = LayerNorm(d, dtype=dtype)
        self.ffn = FeedForward(d, ffn_width, rng, dtype=dtype, std=std)
        self.norm2 = LayerNorm(d, dtype=dtype)

    def __call__(self, x: Tensor, key_mask=None) -> Tensor:
        h = self.norm1(T.add(x, self.attn(x, key_mask)))
        return self.norm2(T.add(h, self.ffn(h)))
