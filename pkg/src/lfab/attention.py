"""Multi-head self-attention with optional banded (limited-context) masking.

Three interchangeable evaluation strategies over the same weights:

- mha_full: dense attention, O(T^2) score storage;
- lca_masked_oracle: dense scores with a band mask outside
  [i - left, i + right]; the reference every efficient path is tested
  against;
- lca_chunked: overlapping-chunk evaluation that never materializes a T x T
  matrix; peak transient score storage is O(T * (left + right + 1) * heads);
- lca_global_token: chunked band plus one virtual position that every query
  attends to and that attends to everything; its own output row is dropped.

All paths share one projection/softmax code path, so when the band covers the
whole sequence they agree bitwise (masking nothing is a no-op).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, batched_matmul, linear_rows, softmax_rows


@dataclass
class AttentionConfig:
    num_heads: int
    head_dim: int
    left_context: int = 128
    right_context: int = 128
    use_global_token: bool = False

    def __post_init__(self):
        if self.num_heads < 1:
            raise ConfigError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.head_dim < 1:
            raise ConfigError(f"head_dim must be >= 1, got {self.head_dim}")
        if self.left_context < 0 or self.right_context < 0:
            raise ConfigError(
                f"context window must be non-negative, got "
                f"({self.left_context}, {self.right_context})"
            )

    @property
    def model_dim(self) -> int:
        return self.num_heads * self.head_dim


@dataclass
class AttentionWeights:
    """Projection weights, all (D, D) with per-projection (D,) biases."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    b_q: Tensor
    b_k: Tensor
    b_v: Tensor
    b_o: Tensor
    global_token: Tensor | None = None  # (1, D) iff the config uses one


def init_attention_weights(cfg: AttentionConfig, rng: np.random.Generator) -> AttentionWeights:
    d = cfg.model_dim
    bound = 1.0 / math.sqrt(d)

    def draw(*shape):
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32))

    return AttentionWeights(
        w_q=draw(d, d), w_k=draw(d, d), w_v=draw(d, d), w_o=draw(d, d),
        b_q=draw(d), b_k=draw(d), b_v=draw(d), b_o=draw(d),
        global_token=draw(1, d) if cfg.use_global_token else None,
    )


def validate_weights(cfg: AttentionConfig, w: AttentionWeights) -> None:
    d = cfg.model_dim
    for name in ("w_q", "w_k", "w_v", "w_o"):
        if getattr(w, name).shape != (d, d):
            raise ConfigError(f"{name} must be ({d}, {d}), got {getattr(w, name).shape}")
    for name in ("b_q", "b_k", "b_v", "b_o"):
        if getattr(w, name).shape != (d,):
            raise ConfigError(f"{name} must be ({d},), got {getattr(w, name).shape}")
    if cfg.use_global_token and w.global_token is None:
        raise ConfigError("config uses a global token but weights carry no embedding")
    if not cfg.use_global_token and w.global_token is not None:
        raise ConfigError("weights carry a global token embedding the config does not use")


def band_mask(t: int, left: int, right: int) -> np.ndarray:
    """(T, T) bool mask: query i may attend to j iff i-left <= j <= i+right."""
    idx = np.arange(t)
    rel = idx[None, :] - idx[:, None]
    return (rel >= -left) & (rel <= right)


def global_token_mask(t: int, left: int, right: int) -> np.ndarray:
    """(T+1, T+1) mask: position 0 is the global token, unmasked both ways."""
    m = np.zeros((t + 1, t + 1), dtype=bool)
    m[0, :] = True
    m[:, 0] = True
    m[1:, 1:] = band_mask(t, left, right)
    return m


def chunk_size(cfg: AttentionConfig) -> int:
    """Chunk length: left + right + 1 rounded up to a multiple of 8."""
    span = cfg.left_context + cfg.right_context + 1
    return ((span + 7) // 8) * 8


def _split_heads(x: Tensor, h: int, dh: int) -> Tensor:
    t = x.shape[0]
    return Tensor._wrap(np.ascontiguousarray(x.array.reshape(t, h, dh).transpose(1, 0, 2)))


def _merge_heads(ctx: Tensor) -> Tensor:
    h, t, dh = ctx.shape
    return Tensor._wrap(np.ascontiguousarray(ctx.array.transpose(1, 0, 2).reshape(t, h * dh)))


def attend_with_mask(
    x: Tensor, w: AttentionWeights, cfg: AttentionConfig, mask: np.ndarray | None
) -> Tensor:
    """Dense multi-head attention; mask (T, T) limits which keys a query sees."""
    if x.ndim != 2 or x.shape[1] != cfg.model_dim:
        raise ShapeError(
            f"attention input must be (T, {cfg.model_dim}), got {x.shape}"
        )
    t = x.shape[0]
    h, dh = cfg.num_heads, cfg.head_dim
    q = _split_heads(linear_rows(x, w.w_q, w.b_q), h, dh)
    k = _split_heads(linear_rows(x, w.w_k, w.b_k), h, dh)
    v = _split_heads(linear_rows(x, w.w_v, w.b_v), h, dh)
    kt = Tensor._wrap(np.ascontiguousarray(k.array.transpose(0, 2, 1)))
    scores = batched_matmul(q, kt, scale=1.0 / math.sqrt(dh))  # (H, T, T)
    probs = softmax_rows(scores, None if mask is None else mask[None, :, :])
    ctx = batched_matmul(probs, v)  # (H, T, dh)
    return linear_rows(_merge_heads(ctx), w.w_o, w.b_o)


def mha_full(x: Tensor, w: AttentionWeights, cfg: AttentionConfig) -> Tensor:
    """Unmasked dense attention (no residual, no norm: just the sublayer)."""
    validate_weights(cfg, w)
    return attend_with_mask(x, w, cfg, None)


def lca_masked_oracle(x: Tensor, w: AttentionWeights, cfg: AttentionConfig) -> Tensor:
    """Reference banded attention: dense O(T^2) scores plus a band mask."""
    validate_weights(cfg, w)
    return attend_with_mask(x, w, cfg, band_mask(x.shape[0], cfg.left_context, cfg.right_context))


def _gather_windows(arr: np.ndarray, t_pad: int, n_chunks: int, cs: int, win: int, left: int):
    """(T, H, dh) -> read-only strided view (n_chunks, win, H, dh) of windows."""
    t, h, dh = arr.shape
    padded = np.zeros((left + t_pad + (win - cs - left), h, dh), dtype=arr.dtype)
    padded[left : left + t] = arr
    s0, s1, s2 = padded.strides
    return np.lib.stride_tricks.as_strided(
        padded,
        shape=(n_chunks, win, h, dh),
        strides=(s0 * cs, s0, s1, s2),
        writeable=False,
    )


def _chunked_band(
    x: Tensor,
    w: AttentionWeights,
    cfg: AttentionConfig,
    gt_kv: tuple[Tensor, Tensor] | None,
) -> Tensor:
    """Shared engine for lca_chunked and lca_global_token."""
    t = x.shape[0]
    h, dh = cfg.num_heads, cfg.head_dim
    left, right = cfg.left_context, cfg.right_context
    cs = chunk_size(cfg)
    n_chunks = -(-t // cs)
    t_pad = n_chunks * cs
    win = cs + left + right

    q = _split_heads(linear_rows(x, w.w_q, w.b_q), h, dh)
    k = _split_heads(linear_rows(x, w.w_k, w.b_k), h, dh)
    v = _split_heads(linear_rows(x, w.w_v, w.b_v), h, dh)

    # (H, n_chunks, cs, dh) queries; tail queries beyond T are padding
    q_pad = np.zeros((h, n_chunks, cs, dh), dtype=np.float32)
    q_pad.reshape(h, t_pad, dh)[:, :t] = q.array
    qc = Tensor._wrap(q_pad)

    k_thd = np.ascontiguousarray(k.array.transpose(1, 0, 2))  # (T, H, dh)
    v_thd = np.ascontiguousarray(v.array.transpose(1, 0, 2))
    k_win = _gather_windows(k_thd, t_pad, n_chunks, cs, win, left)
    v_win = _gather_windows(v_thd, t_pad, n_chunks, cs, win, left)
    kw = Tensor._wrap(np.ascontiguousarray(k_win.transpose(2, 0, 3, 1)))  # (H, n, dh, win)
    vw = Tensor._wrap(np.ascontiguousarray(v_win.transpose(2, 0, 1, 3)))  # (H, n, win, dh)

    # slot s of chunk c holds absolute key j = c*cs + s - left
    qi = np.arange(cs)[:, None]
    si = np.arange(win)[None, :]
    band_ok = (si >= qi) & (si <= qi + left + right)  # relative band condition
    j_abs = np.arange(n_chunks)[:, None, None] * cs + si[None] - left
    q_abs = np.arange(n_chunks)[:, None, None] * cs + qi[None]
    key_ok = (j_abs >= 0) & (j_abs < t)
    mask = band_ok[None] & key_ok
    # padded tail queries get one dummy slot so their (discarded) rows softmax
    pad_q = q_abs[:, :, 0] >= t
    mask[pad_q, :] = False
    mask[pad_q, 0] = True

    n_slots = win
    if gt_kv is not None:
        k_g, v_g = gt_kv  # each (H, dh)
        kw = Tensor._wrap(
            np.concatenate([kw.array, np.broadcast_to(
                k_g.array[:, None, :, None], (h, n_chunks, dh, 1))], axis=3)
        )
        vw = Tensor._wrap(
            np.concatenate([vw.array, np.broadcast_to(
                v_g.array[:, None, None, :], (h, n_chunks, 1, dh))], axis=2)
        )
        gt_col = np.broadcast_to(~pad_q[:, :, None], (n_chunks, cs, 1))
        mask = np.concatenate([mask, gt_col], axis=2)
        n_slots += 1

    scores = batched_matmul(qc, kw, scale=1.0 / math.sqrt(dh))  # (H, n, cs, slots)
    probs = softmax_rows(scores, mask[None])
    ctx = batched_matmul(probs, vw)  # (H, n, cs, dh)
    merged = np.ascontiguousarray(
        ctx.array.reshape(h, t_pad, dh).transpose(1, 0, 2).reshape(t_pad, h * dh)[:t]
    )
    return linear_rows(Tensor._wrap(merged), w.w_o, w.b_o)


def lca_chunked(x: Tensor, w: AttentionWeights, cfg: AttentionConfig) -> Tensor:
    """Banded attention via overlapping chunks, O(T * window) score storage.

    A sequence that fits in one chunk takes the oracle path outright; chunking
    buys nothing there and the dense band code is exact by construction.
    """
    validate_weights(cfg, w)
    if x.shape[0] <= chunk_size(cfg):
        return attend_with_mask(
            x, w, cfg, band_mask(x.shape[0], cfg.left_context, cfg.right_context)
        )
    return _chunked_band(x, w, cfg, None)


def lca_global_token(x: Tensor, w: AttentionWeights, cfg: AttentionConfig) -> Tensor:
    """Banded attention plus one virtual global position.

    The global token is prepended as a learned embedding: every query gains
    it as an extra key/value, and it would attend to everything, but its own
    output row is dropped, so that row is never computed here. Output rows
    align 1:1 with the input.
    """
    validate_weights(cfg, w)
    if not cfg.use_global_token or w.global_token is None:
        raise ConfigError("lca_global_token requires use_global_token and an embedding")
    t = x.shape[0]
    if t + 1 <= chunk_size(cfg):
        x_aug = Tensor._wrap(np.concatenate([w.global_token.array, x.array], axis=0))
        mask = global_token_mask(t, cfg.left_context, cfg.right_context)
        out = attend_with_mask(x_aug, w, cfg, mask)
        return Tensor._wrap(out.array[1:].copy())
    h, dh = cfg.num_heads, cfg.head_dim
    k_g = _split_heads(linear_rows(w.global_token, w.w_k, w.b_k), h, dh)
    v_g = _split_heads(linear_rows(w.global_token, w.w_v, w.b_v), h, dh)
    k_g2 = Tensor._wrap(k_g.array.reshape(h, dh))
    v_g2 = Tensor._wrap(v_g.array.reshape(h, dh))
    return _chunked_band(x, w, cfg, (k_g2, v_g2))
