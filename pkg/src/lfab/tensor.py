"""float32 tensor substrate with deterministic CPU kernels.

Design rules, enforced here so every higher layer inherits them:

- storage is always contiguous row-major float32; reductions (matmul, conv,
  norm statistics, softmax) accumulate in float64 and round once on output;
- operations are pure: inputs are never written, repeated calls are
  bit-identical;
- "same" padding splits K-1 as floor((K-1)/2) left, ceil((K-1)/2) right;
- argmax ties resolve to the lowest index;
- every Tensor registers its buffer with the allocation accounting below,
  which is what bench.track_measured_peak reads.
"""

from __future__ import annotations

import weakref

import numpy as np

from .errors import NumericDomainError, ShapeError

# ---------------------------------------------------------------------------
# allocation accounting

_LIVE_BYTES = 0
_TRACKERS: list["AllocationTracker"] = []


def _note_alloc(nbytes: int) -> None:
    global _LIVE_BYTES
    _LIVE_BYTES += nbytes
    for t in _TRACKERS:
        if _LIVE_BYTES > t._high:
            t._high = _LIVE_BYTES


def _note_free(nbytes: int) -> None:
    global _LIVE_BYTES
    _LIVE_BYTES -= nbytes


def live_bytes() -> int:
    """Bytes currently held by live Tensor buffers."""
    return _LIVE_BYTES


class AllocationTracker:
    """Context manager recording the high-water mark of live tensor bytes.

    peak_bytes is reported relative to the bytes live at entry, so tensors
    that already existed (model weights, inputs) do not count.
    """

    def __init__(self) -> None:
        self._baseline = 0
        self._high = 0

    def __enter__(self) -> "AllocationTracker":
        self._baseline = _LIVE_BYTES
        self._high = _LIVE_BYTES
        _TRACKERS.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TRACKERS.remove(self)

    @property
    def peak_bytes(self) -> int:
        return self._high - self._baseline


# ---------------------------------------------------------------------------
# the Tensor type


class Tensor:
    """Immutable dense float32 tensor. Data is flat, row-major, contiguous."""

    __slots__ = ("_a", "__weakref__")

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float32, order="C")
        if arr.size == 0:
            raise ShapeError("tensor must be non-empty")
        if not np.isfinite(arr).all():
            raise NumericDomainError("tensor values must be finite")
        self._attach(arr)

    def _attach(self, arr: np.ndarray) -> None:
        arr.flags.writeable = False
        self._a = arr
        # only buffers this tensor owns count toward live bytes; views add 0
        owned = arr.nbytes if arr.base is None else 0
        _note_alloc(owned)
        weakref.finalize(self, _note_free, owned)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal: take ownership of a freshly computed float32 array
        self = cls.__new__(cls)
        self._attach(np.ascontiguousarray(arr, dtype=np.float32))
        return self

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls._wrap(np.zeros(shape, dtype=np.float32))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._a.shape

    @property
    def ndim(self) -> int:
        return self._a.ndim

    @property
    def size(self) -> int:
        return self._a.size

    @property
    def nbytes(self) -> int:
        return self._a.nbytes

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view of the underlying buffer."""
        return self._a

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the buffer."""
        return self._a.reshape(-1)

    def tolist(self) -> list:
        return self._a.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _as2d(x: Tensor, name: str) -> np.ndarray:
    if x.ndim != 2:
        raise ShapeError(f"{name} must be rank 2, got rank {x.ndim}")
    return x._a


# ---------------------------------------------------------------------------
# convolution


def _resolve_padding(padding, k: int) -> tuple[int, int]:
    if padding == "same":
        return (k - 1) // 2, k - 1 - (k - 1) // 2
    if isinstance(padding, int) and padding >= 0:
        return padding, padding
    raise ShapeError(f"padding must be 'same' or a non-negative int, got {padding!r}")


def conv1d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding="same",
    groups: int = 1,
) -> Tensor:
    """Grouped 1-D convolution over (channels, time).

    w has shape (out_channels, in_channels // groups, K). Output length is
    floor((T + pad_l + pad_r - K) / stride) + 1.
    """
    xa = _as2d(x, "conv1d input (channels, time)")
    if w.ndim != 3:
        raise ShapeError(f"conv1d weight must be rank 3 (out, in/groups, K), got rank {w.ndim}")
    c_in, t = xa.shape
    c_out, c_in_g, k = w.shape
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if groups < 1:
        raise ShapeError(f"groups must be >= 1, got {groups}")
    if c_in % groups != 0:
        raise ShapeError(f"in_channels axis: {c_in} not divisible by groups={groups}")
    if c_out % groups != 0:
        raise ShapeError(f"out_channels axis: {c_out} not divisible by groups={groups}")
    if c_in_g != c_in // groups:
        raise ShapeError(
            f"weight in_channels axis: expected {c_in // groups} "
            f"(= in_channels/groups), got {c_in_g}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias out_channels axis: expected ({c_out},), got {bias.shape}")

    pad_l, pad_r = _resolve_padding(padding, k)
    t_padded = t + pad_l + pad_r
    if t_padded < k:
        raise ShapeError(
            f"time axis too short: T={t} with padding {pad_l}+{pad_r} < kernel {k}"
        )
    t_out = (t_padded - k) // stride + 1

    xp = np.zeros((c_in, t_padded), dtype=np.float64)
    xp[:, pad_l : pad_l + t] = xa
    w64 = w._a.astype(np.float64)
    out = np.zeros((c_out, t_out), dtype=np.float64)

    last = 1 + stride * (t_out - 1)
    if c_in_g == 1 and groups == c_in and c_out == c_in:
        # depthwise: one vectorized pass per tap
        for tap in range(k):
            out += w64[:, 0, tap : tap + 1] * xp[:, tap : tap + last : stride]
    else:
        og = c_out // groups
        for g in range(groups):
            xg = xp[g * c_in_g : (g + 1) * c_in_g]
            wg = w64[g * og : (g + 1) * og]
            og_out = out[g * og : (g + 1) * og]
            for tap in range(k):
                og_out += wg[:, :, tap] @ xg[:, tap : tap + last : stride]

    if bias is not None:
        out += bias._a.astype(np.float64)[:, None]
    return Tensor._wrap(out.astype(np.float32))


def conv1d_output_length(t: int, k: int, stride: int, padding="same") -> int:
    """Output time length of conv1d without running it."""
    pad_l, pad_r = _resolve_padding(padding, k)
    if t + pad_l + pad_r < k:
        raise ShapeError(f"time axis too short: T={t} with padding {pad_l}+{pad_r} < kernel {k}")
    return (t + pad_l + pad_r - k) // stride + 1


def depthwise_separable_conv1d(
    x: Tensor,
    w_dw: Tensor,
    w_pw: Tensor,
    stride: int = 1,
    padding="same",
) -> Tensor:
    """Depthwise conv (one K-tap filter per channel) followed by a pointwise mix.

    w_dw: (C, K), w_pw: (C_out, C). Parameter cost K*C + C*C_out versus
    K*C*C_out for a dense kernel.
    """
    if w_dw.ndim != 2:
        raise ShapeError(f"depthwise weight must be rank 2 (C, K), got rank {w_dw.ndim}")
    if w_pw.ndim != 2:
        raise ShapeError(f"pointwise weight must be rank 2 (C_out, C), got rank {w_pw.ndim}")
    c, k = w_dw.shape
    if x.shape[0] != c:
        raise ShapeError(f"channels axis: input has {x.shape[0]}, depthwise weight has {c}")
    if w_pw.shape[1] != c:
        raise ShapeError(f"channels axis: pointwise expects {w_pw.shape[1]}, depthwise yields {c}")
    y = conv1d(x, Tensor._wrap(w_dw._a.reshape(c, 1, k)), stride=stride, padding=padding, groups=c)
    return conv1d(y, Tensor._wrap(w_pw._a.reshape(w_pw.shape[0], c, 1)))


def separable_param_count(c_in: int, c_out: int, k: int) -> int:
    return k * c_in + c_in * c_out


# ---------------------------------------------------------------------------
# normalization


def batch_norm_infer(
    x: Tensor, gamma: Tensor, beta: Tensor, mean: Tensor, var: Tensor, eps: float = 1e-5
) -> Tensor:
    """Inference-mode batch norm over (channels, time) with fixed statistics."""
    xa = _as2d(x, "batch_norm input (channels, time)")
    c = xa.shape[0]
    for name, p in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if p.shape != (c,):
            raise ShapeError(f"channels axis: {name} expected ({c},), got {p.shape}")
    denom = var._a.astype(np.float64) + eps
    if (denom <= 0.0).any():
        raise NumericDomainError(f"batch_norm variance + eps must be positive, eps={eps}")
    y = (xa - mean._a.astype(np.float64)[:, None]) / np.sqrt(denom)[:, None]
    y = gamma._a.astype(np.float64)[:, None] * y + beta._a.astype(np.float64)[:, None]
    return Tensor._wrap(y.astype(np.float32))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer norm over (rows, features), population variance."""
    xa = _as2d(x, "layer_norm input (rows, features)")
    d = xa.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"features axis: gamma/beta expected ({d},)")
    x64 = xa.astype(np.float64)
    mu = x64.mean(axis=1, keepdims=True)
    var = np.square(x64 - mu).mean(axis=1, keepdims=True)
    y = (x64 - mu) / np.sqrt(var + eps)
    y = y * gamma._a.astype(np.float64) + beta._a.astype(np.float64)
    return Tensor._wrap(y.astype(np.float32))


# ---------------------------------------------------------------------------
# elementwise


def relu(x: Tensor) -> Tensor:
    return Tensor._wrap(np.maximum(x._a, np.float32(0.0)))


def sigmoid(x: Tensor) -> Tensor:
    x64 = x._a.astype(np.float64)
    return Tensor._wrap((1.0 / (1.0 + np.exp(-x64))).astype(np.float32))


def tanh(x: Tensor) -> Tensor:
    return Tensor._wrap(np.tanh(x._a.astype(np.float64)).astype(np.float32))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x), composed from the sigmoid above so they agree exactly."""
    return mul(x, sigmoid(x))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return Tensor._wrap(a._a + b._a)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    return Tensor._wrap(a._a * b._a)


def scale_channels(x: Tensor, gains: Tensor) -> Tensor:
    """Multiply each channel row of (C, T) by a per-channel gain."""
    xa = _as2d(x, "scale_channels input (channels, time)")
    if gains.shape != (xa.shape[0],):
        raise ShapeError(f"channels axis: gains expected ({xa.shape[0]},), got {gains.shape}")
    return Tensor._wrap(xa * gains._a[:, None])


def transpose(x: Tensor) -> Tensor:
    return Tensor._wrap(_as2d(x, "transpose input").T)


def mean_over_time(x: Tensor) -> Tensor:
    """Mean over the time axis of (C, T), float64 accumulation."""
    xa = _as2d(x, "mean_over_time input (channels, time)")
    return Tensor._wrap(xa.astype(np.float64).mean(axis=1).astype(np.float32))


# ---------------------------------------------------------------------------
# matmul family


def matmul(a: Tensor, b: Tensor) -> Tensor:
    aa = _as2d(a, "matmul lhs")
    ba = _as2d(b, "matmul rhs")
    if aa.shape[1] != ba.shape[0]:
        raise ShapeError(f"inner axis mismatch: lhs {aa.shape} vs rhs {ba.shape}")
    out = aa.astype(np.float64) @ ba.astype(np.float64)
    return Tensor._wrap(out.astype(np.float32))


def batched_matmul(a: Tensor, b: Tensor, scale: float = 1.0) -> Tensor:
    """matmul over the last two axes with matching leading batch axes."""
    if a.ndim != b.ndim or a.ndim < 2:
        raise ShapeError(f"batched_matmul rank mismatch: {a.shape} vs {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"batch axes mismatch: {a.shape[:-2]} vs {b.shape[:-2]}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner axis mismatch: lhs {a.shape} vs rhs {b.shape}")
    out = a._a.astype(np.float64) @ b._a.astype(np.float64)
    if scale != 1.0:
        out *= scale
    return Tensor._wrap(out.astype(np.float32))


def linear_rows(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map of row vectors: (T, D_in) @ w(D_out, D_in)^T + b."""
    xa = _as2d(x, "linear input (rows, features)")
    wa = _as2d(w, "linear weight (out, in)")
    if xa.shape[1] != wa.shape[1]:
        raise ShapeError(f"features axis mismatch: input {xa.shape} vs weight {wa.shape}")
    out = xa.astype(np.float64) @ wa.astype(np.float64).T
    if b is not None:
        if b.shape != (wa.shape[0],):
            raise ShapeError(f"bias axis: expected ({wa.shape[0]},), got {b.shape}")
        out += b._a.astype(np.float64)
    return Tensor._wrap(out.astype(np.float32))


# ---------------------------------------------------------------------------
# softmax / argmax


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax along the last axis with max subtraction.

    mask (optional, bool, broadcastable) marks the positions allowed to
    receive weight; masked positions come out exactly 0. A row with every
    position masked is an error.
    """
    x64 = x._a.astype(np.float64)
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x64.shape)
        if not m.any(axis=-1).all():
            raise NumericDomainError("empty attention row: all positions masked for some query")
        x64 = np.where(m, x64, -np.inf)
    rowmax = x64.max(axis=-1, keepdims=True)
    e = np.exp(x64 - rowmax)
    out = e / e.sum(axis=-1, keepdims=True)
    return Tensor._wrap(out.astype(np.float32))


def argmax_rows(x: Tensor) -> np.ndarray:
    """Index of the max along the last axis; ties go to the lowest index."""
    return np.argmax(x._a, axis=-1)
