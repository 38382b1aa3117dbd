"""Shifted-window self-attention blocks.

Token grids are ``(B, H_t, W_t, D)`` tensors; unbatched ``(H_t, W_t, D)``
grids are accepted by the grid-level helpers and returned unbatched.
Shifts are whole-token cyclic rolls toward the top-left, so the block
schedule {0, 1, 2, 3} gives four distinct window placements.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .layers import LayerNorm, Linear, Module
from .tensor import ShapeError, Tensor

MASK_VALUE = -1e9


@dataclass(frozen=True)
class BlockConfig:
    dim: int
    att_heads: int
    mlp_hidden: int
    window: int = 4
    shift: int = 0

    def __post_init__(self):
        if self.dim % self.att_heads:
            raise ValueError(f"dim {self.dim} is not divisible by att_heads {self.att_heads}")
        if not 0 <= self.shift < self.window:
            raise ValueError(f"shift {self.shift} must satisfy 0 <= shift < window {self.window}")


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected a (B, H_t, W_t, D) token grid, got shape {x.shape}")
    return x, False


class PatchEmbed(Module):
    """Flatten non-overlapping ``patch x patch`` tiles and project them to ``dim``."""

    def __init__(self, rng, patch: int, channels: int, dim: int):
        self.patch = patch
        self.channels = channels
        self.proj = Linear(rng, patch * patch * channels, dim)

    def __call__(self, image) -> Tensor:
        image = image if isinstance(image, Tensor) else Tensor(image)
        if image.ndim == 2:
            image = image.reshape(image.shape + (1,))
        unbatched = image.ndim == 3
        if unbatched:
            image = image.reshape((1,) + image.shape)
        b, h, w, c = image.shape
        p = self.patch
        if h % p or w % p:
            raise ShapeError(f"patch_embed: image {h}x{w} is not divisible by patch {p}")
        if c != self.channels:
            raise ShapeError(f"patch_embed: expected {self.channels} channels, got {c}")
        tiles = image.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
        tokens = self.proj(tiles.reshape(b, h // p, w // p, p * p * c))
        return tokens.reshape(tokens.shape[1:]) if unbatched else tokens


def patch_embed(image, embed: PatchEmbed) -> Tensor:
    return embed(image)


def window_partition(grid: Tensor, w: int) -> Tensor:
    """``(B, H_t, W_t, D)`` -> ``(B * nW, w*w, D)``, windows in row-major order."""
    grid, _ = _batched(grid)
    b, ht, wt, d = grid.shape
    if ht % w or wt % w:
        raise ShapeError(f"window_partition: grid {ht}x{wt} is not divisible by window {w}")
    x = grid.reshape(b, ht // w, w, wt // w, w, d).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b * (ht // w) * (wt // w), w * w, d)


def window_reverse(windows: Tensor, ht: int, wt: int) -> Tensor:
    n, ww, d = windows.shape
    w = int(round(ww**0.5))
    if w * w != ww or ht % w or wt % w:
        raise ShapeError(f"window_reverse: windows {windows.shape} do not tile a {ht}x{wt} grid")
    per_image = (ht // w) * (wt // w)
    if n % per_image:
        raise ShapeError(f"window_reverse: {n} windows is not a multiple of {per_image}")
    x = windows.reshape(n // per_image, ht // w, wt // w, w, w, d).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n // per_image, ht, wt, d)


def window_index(row: int, col: int, w: int, wt: int) -> tuple[int, tuple[int, int]]:
    """Window number and intra-window (row, col) of grid position (row, col)."""
    return (row // w) * (wt // w) + col // w, (row % w, col % w)


def cyclic_shift(grid: Tensor, s: int) -> Tensor:
    """Roll the grid by ``(-s, -s)``; ``cyclic_shift(g, -s)`` undoes it."""
    if s == 0:
        return grid
    return T.roll(grid, (-s, -s), axis=(-3, -2))


@lru_cache(maxsize=64)
def _mask(ht: int, wt: int, w: int, s: int) -> np.ndarray:
    n_windows = (ht // w) * (wt // w)
    if s == 0:
        return np.zeros((n_windows, w * w, w * w), dtype=np.float32)
    # after rolling by -s the last s rows/cols wrapped around from the top/left
    rows = (np.arange(ht) >= ht - s).astype(np.int64)
    cols = (np.arange(wt) >= wt - s).astype(np.int64)
    region = rows[:, None] * 2 + cols[None, :]
    win = region.reshape(ht // w, w, wt // w, w).transpose(0, 2, 1, 3).reshape(n_windows, w * w)
    same = win[:, :, None] == win[:, None, :]
    mask = np.where(same, 0.0, MASK_VALUE).astype(np.float32)
    mask.flags.writeable = False
    return mask


def attention_mask(ht: int, wt: int, w: int, s: int) -> np.ndarray:
    """Additive ``(nW, w*w, w*w)`` mask: 0 within a pre-shift region, -1e9 across."""
    if ht % w or wt % w:
        raise ShapeError(f"attention_mask: grid {ht}x{wt} is not divisible by window {w}")
    return _mask(ht, wt, w, s)


class WindowAttention(Module):
    def __init__(self, rng, dim: int, heads: int):
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.qkv = Linear(rng, dim, 3 * dim)
        self.proj = Linear(rng, dim, dim)

    def __call__(self, windows: Tensor, mask: np.ndarray | None = None) -> Tensor:
        n, tokens, d = windows.shape
        if d != self.dim:
            raise ShapeError(f"window_attention: expected width {self.dim}, got {d}")
        h = self.heads
        dh = d // h
        qkv = self.qkv(windows).reshape(n, tokens, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = T.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / np.sqrt(dh))
        if mask is not None:
            n_windows = mask.shape[0]
            logits = logits.reshape(n // n_windows, n_windows, h, tokens, tokens)
            logits = logits + Tensor(mask[None, :, None].astype(logits.dtype))
            logits = logits.reshape(n, h, tokens, tokens)
        attn = T.softmax(logits, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(n, tokens, d)
        return self.proj(out)


def window_attention(windows: Tensor, attn: WindowAttention, mask: np.ndarray | None = None) -> Tensor:
    return attn(windows, mask)


class Mlp(Module):
    def __init__(self, rng, dim: int, hidden: int):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class SwinBlock(Module):
    """Pre-norm block: ``x + Att(LN(x))`` on shifted windows, then ``+ MLP(LN(.))``."""

    def __init__(self, rng, cfg: BlockConfig):
        self.cfg = cfg
        self.norm1 = LayerNorm(cfg.dim)
        self.attn = WindowAttention(rng, cfg.dim, cfg.att_heads)
        self.norm2 = LayerNorm(cfg.dim)
        self.mlp = Mlp(rng, cfg.dim, cfg.mlp_hidden)

    def __call__(self, grid: Tensor) -> Tensor:
        grid, unbatched = _batched(grid)
        _, ht, wt, _ = grid.shape
        w, s = self.cfg.window, self.cfg.shift
        y = cyclic_shift(self.norm1(grid), s)
        mask = attention_mask(ht, wt, w, s) if s else None
        y = window_reverse(self.attn(window_partition(y, w), mask), ht, wt)
        x = grid + cyclic_shift(y, -s)
        x = x + self.mlp(self.norm2(x))
        return x.reshape(x.shape[1:]) if unbatched else x


def swin_block(grid: Tensor, block: SwinBlock) -> Tensor:
    return block(grid)
