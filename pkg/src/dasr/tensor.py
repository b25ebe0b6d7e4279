"""Dense float32 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: every operation needed by the networks in
this package (strided convolution, leaky ReLU, pixel shuffle, concatenation,
affine maps, reductions) builds a backward graph of closures, and
``backward`` walks it in reverse topological order. Graphs are rebuilt every
training step; nothing here keeps global state.

Conventions:
  * 4-D tensors are laid out [batch, channel, height, width].
  * ``conv2d`` is cross-correlation (no kernel flip).
  * Reductions accumulate in float64 and emit float32 scalars.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

# Forward dtype for newly built tensors. grad_check flips this to float64 for
# its finite-difference evaluations so the divided differences are not
# drowned by float32 quantization; everything else always runs float32.
_ACTIVE_DTYPE = np.float32

# walk-local gradient accumulator; a backward() in flight owns it
_WALK: Optional[dict] = None


@contextlib.contextmanager
def precise_mode():
    global _ACTIVE_DTYPE
    prev = _ACTIVE_DTYPE
    _ACTIVE_DTYPE = np.float64
    try:
        yield
    finally:
        _ACTIVE_DTYPE = prev


def _as_f32(data) -> np.ndarray:
    arr = np.asarray(data, dtype=_ACTIVE_DTYPE)
    return arr


class Tensor:
    """A float32 array plus an optional gradient and backward-graph node."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_op",
                 "hires")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f32(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = ""
        # reductions keep their float64 accumulation here so finite-difference
        # checks are not limited by the float32 rounding of the scalar
        self.hires: Optional[float] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same data, no graph; used to stop gradients at a boundary."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        """Add a gradient contribution (within a backward walk, into its
        local accumulator, so repeated walks over one graph add up exactly
        once per walk)."""
        if _WALK is not None:
            key = id(self)
            entry = _WALK.get(key)
            if entry is None:
                _WALK[key] = [self, g.astype(np.float32, copy=True)]
            else:
                entry[1] += g
            return
        if self.grad is None:
            self.grad = g.astype(np.float32, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"

    # small amount of operator sugar used by the loss code
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A named, gradient-tracked tensor owned by a model."""

    __slots__ = ("name", "frozen")

    def __init__(self, data, name: str, frozen: bool = False):
        super().__init__(data, requires_grad=not frozen)
        self.name = name
        self.frozen = frozen

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


def _make(out_data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    """Wrap op output; attach a node only if some parent is tracked."""
    out = Tensor(out_data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward
        out._op = op
    return out


# ---------------------------------------------------------------------------
# elementwise / shape ops
# ---------------------------------------------------------------------------

def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * np.float32(s))

    return _make(a.data * np.float32(s), (a,), backward, "scale")


def add_scalar(a: Tensor, s: float) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)

    return _make(a.data + np.float32(s), (a,), backward, "add_scalar")


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """max(x, slope*x); the subgradient at exactly 0 uses the negative slope."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu: slope must be in (0,1), got {slope}")
    pos = x.data > 0
    out_data = np.where(pos, x.data, x.data * np.float32(slope))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.where(pos, g, g * np.float32(slope)))

    return _make(out_data, (x,), backward, "leaky_relu")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large |x|; d/dx = sigmoid(x)."""
    out_data = np.logaddexp(np.float32(0.0), x.data)

    def backward(g):
        if x.requires_grad:
            e = np.exp(-np.abs(x.data))
            sig = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
            x.accumulate_grad(g * sig.astype(np.float32))

    return _make(out_data, (x,), backward, "softplus")


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g / (2.0 * np.maximum(out_data, np.float32(1e-12))))

    return _make(out_data, (x,), backward, "sqrt")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = x.shape

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(orig))

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; all other extents must agree."""
    if len(tensors) == 0:
        raise ValueError("concat: need at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref):
            raise ValueError(f"concat: rank mismatch {t.shape} vs {ref}")
        for d, (ea, eb) in enumerate(zip(ref, t.shape)):
            if d != axis % len(ref) and ea != eb:
                raise ValueError(
                    f"concat: extent mismatch on axis {d}: {ea} vs {eb}"
                )
    extents = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out_data, tuple(tensors), backward, "concat")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    acc = float(np.sum(x.data, dtype=np.float64))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g, x.shape).astype(np.float32))

    out = _make(_ACTIVE_DTYPE(acc), (x,), backward, "sum")
    out.hires = acc
    return out


def mean(x: Tensor) -> Tensor:
    n = x.size
    acc = float(np.sum(x.data, dtype=np.float64) / n)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.full(x.shape, g / n, dtype=np.float32))

    out = _make(_ACTIVE_DTYPE(acc), (x,), backward, "mean")
    out.hires = acc
    return out


def reduce_mean_abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """(1/N) * sum |a - b| over all N elements, accumulated in float64."""
    _check_same_shape(a, b, "reduce_mean_abs_diff")
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    n = d.size
    acc = float(np.abs(d).sum() / n)
    sign = np.sign(d).astype(np.float32)

    def backward(g):
        gd = sign * np.float32(g / n)
        if a.requires_grad:
            a.accumulate_grad(gd)
        if b.requires_grad:
            b.accumulate_grad(-gd)

    out = _make(_ACTIVE_DTYPE(acc), (a, b), backward, "mean_abs_diff")
    out.hires = acc
    return out


# ---------------------------------------------------------------------------
# convolution / linear / pixel shuffle
# ---------------------------------------------------------------------------

def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, :, p:p + h, p:p + w] = x
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int,
            ho: int, wo: int) -> np.ndarray:
    """Padded [N,C,H,W] -> [N, C*kh*kw, Ho*Wo] via per-offset block copies."""
    n, c = x.shape[0], x.shape[1]
    cols = np.empty((n, c, kh * kw, ho, wo), dtype=x.dtype)
    he = (ho - 1) * stride + 1
    we = (wo - 1) * stride + 1
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, di * kw + dj] = x[:, :, di:di + he:stride,
                                         dj:dj + we:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _corr2d_raw(x: np.ndarray, w: np.ndarray, stride: int,
                want_cols: bool = False):
    """Cross-correlation of [N,C,H,W] with [K,C,kh,kw]; no padding here.

    Runs in the promoted dtype of its operands (float32 BLAS normally,
    float64 under precise_mode). With ``want_cols`` also returns the window
    matrix for reuse by the filter-gradient pass.
    """
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, ho, wo)
    wmat = np.ascontiguousarray(w.reshape(k, -1))
    if wmat.dtype != cols.dtype:
        wmat = wmat.astype(cols.dtype)
    out = np.matmul(wmat[None], cols).reshape(n, k, ho, wo)
    if want_cols:
        return out, cols
    return out


def _corr2d_filter_grad(cols: np.ndarray, g: np.ndarray, c: int, kh: int,
                        kw: int) -> np.ndarray:
    """d(out)/d(weight) from the stashed window matrix.

    Accumulated in float64 so the analytic gradient carries a single final
    rounding, keeping finite-difference checks tight.
    """
    n, k, ho, wo = g.shape
    gmat = g.reshape(n, k, ho * wo).astype(np.float64)
    cols64 = cols.astype(np.float64)  # contiguous cast, transposed view below
    dw = np.matmul(gmat, cols64.transpose(0, 2, 1)).sum(axis=0)
    return dw.reshape(k, c, kh, kw).astype(np.float32)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with optional bias.

    x: [N, Cin, H, W], w: [Cout, Cin, kh, kw], b: [Cout].
    Output extent along each spatial axis: (H + 2*padding - kh)//stride + 1.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: input must be 4-D, got shape {x.shape}")
    if w.data.ndim != 4:
        raise ValueError(f"conv2d: weight must be 4-D, got shape {w.shape}")
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    if cin != cin_w:
        raise ValueError(
            f"conv2d: input channels {cin} != weight in-channels {cin_w}")
    if b is not None and b.shape != (cout,):
        raise ValueError(
            f"conv2d: bias shape {b.shape} != out-channels ({cout},)")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < kh or wp < kw:
        raise ValueError(
            f"conv2d: padded input {hp}x{wp} smaller than kernel {kh}x{kw}")

    compute_dtype = np.result_type(x.data.dtype, w.data.dtype)
    xd = x.data
    if xd.dtype != compute_dtype:
        xd = xd.astype(compute_dtype)
    xpad = _pad2d(xd, padding)
    out_data, cols = _corr2d_raw(xpad, w.data, stride, want_cols=True)
    if b is not None:
        out_data += b.data[None, :, None, None]
    ho, wo = out_data.shape[2], out_data.shape[3]

    parents = (x, w) if b is None else (x, w, b)
    if not w.requires_grad:
        cols = None  # nothing will need the window matrix

    def backward(g):
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            w.accumulate_grad(_corr2d_filter_grad(cols, g, cin, kh, kw))
        if x.requires_grad:
            # dilate the output grad by the stride, then full-correlate with
            # the spatially flipped, channel-swapped kernel (float64
            # accumulation, one final rounding)
            gh = (ho - 1) * stride + 1
            gw = (wo - 1) * stride + 1
            gpad = np.zeros((n, cout, gh + 2 * (kh - 1), gw + 2 * (kw - 1)),
                            dtype=np.float64)
            gpad[:, :, kh - 1:kh - 1 + gh:stride,
                 kw - 1:kw - 1 + gw:stride] = g
            wt = np.ascontiguousarray(
                w.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            dxp = _corr2d_raw(gpad, wt, 1).astype(np.float32)
            # cover input columns past the last kernel placement
            rh = hp - dxp.shape[2]
            rw = wp - dxp.shape[3]
            if rh or rw:
                full = np.zeros((n, cin, hp, wp), dtype=np.float32)
                full[:, :, :dxp.shape[2], :dxp.shape[3]] = dxp
                dxp = full
            x.accumulate_grad(dxp[:, :, padding:padding + h,
                                  padding:padding + wd])

    return _make(out_data, parents, backward, "conv2d")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map: x [N,D] @ w [M,D]^T + b [M]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError(
            f"linear: need 2-D input and weight, got {x.shape}, {w.shape}")
    n, d = x.shape
    m, d_w = w.shape
    if d != d_w:
        raise ValueError(f"linear: input width {d} != weight width {d_w}")
    if b is not None and b.shape != (m,):
        raise ValueError(f"linear: bias shape {b.shape} != ({m},)")
    compute_dtype = np.result_type(x.data.dtype, w.data.dtype)
    xd = x.data if x.data.dtype == compute_dtype else x.data.astype(compute_dtype)
    wt = w.data.T if w.data.dtype == compute_dtype else w.data.T.astype(compute_dtype)
    out_data = xd @ wt
    if b is not None:
        out_data += b.data[None, :]
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g64 = g.astype(np.float64)
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=0, dtype=np.float64)
                              .astype(np.float32))
        if w.requires_grad:
            w.accumulate_grad((g64.T @ x.data.astype(np.float64))
                              .astype(np.float32))
        if x.requires_grad:
            x.accumulate_grad((g64 @ w.data.astype(np.float64))
                              .astype(np.float32))

    return _make(out_data, parents, backward, "linear")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: [N, C*r^2, H, W] -> [N, C, r*H, r*W]."""
    n, c_r2, h, wd = x.shape
    if c_r2 % (r * r) != 0:
        raise ValueError(
            f"pixel_shuffle: channels {c_r2} not divisible by r^2={r * r}")
    c = c_r2 // (r * r)
    out_data = (x.data.reshape(n, c, r, r, h, wd)
                .transpose(0, 1, 4, 2, 5, 3)
                .reshape(n, c, h * r, wd * r))

    def backward(g):
        if x.requires_grad:
            gi = (g.reshape(n, c, h, r, wd, r)
                  .transpose(0, 1, 3, 5, 2, 4)
                  .reshape(n, c_r2, h, wd))
            x.accumulate_grad(np.ascontiguousarray(gi))

    return _make(np.ascontiguousarray(out_data), (x,), backward,
                 "pixel_shuffle")


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth, the exact inverse of pixel_shuffle."""
    n, c, hr, wr = x.shape
    if hr % r != 0 or wr % r != 0:
        raise ValueError(
            f"pixel_unshuffle: extents {hr}x{wr} not divisible by r={r}")
    h, wd = hr // r, wr // r
    out_data = (x.data.reshape(n, c, h, r, wd, r)
                .transpose(0, 1, 3, 5, 2, 4)
                .reshape(n, c * r * r, h, wd))

    def backward(g):
        if x.requires_grad:
            gi = (g.reshape(n, c, r, r, h, wd)
                  .transpose(0, 1, 4, 2, 5, 3)
                  .reshape(n, c, hr, wr))
            x.accumulate_grad(np.ascontiguousarray(gi))

    return _make(np.ascontiguousarray(out_data), (x,), backward,
                 "pixel_unshuffle")


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate .grad of every tracked tensor reachable from ``loss``.

    Each call runs one independent reverse pass and adds its result into
    the .grad buffers, so repeated calls on the same graph accumulate
    (backward twice without a reset doubles every gradient). Single-threaded.
    """
    global _WALK
    if loss.size != 1:
        raise ValueError(
            f"backward: loss must be scalar, got shape {loss.shape}")
    if _WALK is not None:
        raise RuntimeError("backward: nested backward calls are unsupported")
    # iterative reverse topological order (graphs can be deeper than the
    # Python recursion limit)
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    _WALK = {}
    try:
        _WALK[id(loss)] = [loss, np.ones_like(loss.data, dtype=np.float32)]
        for node in reversed(topo):
            entry = _WALK.get(id(node))
            if entry is not None and node._backward is not None:
                node._backward(entry[1])
        contributions = list(_WALK.values())
    finally:
        _WALK = None
    for t, g in contributions:
        if t.grad is None:
            t.grad = g
        else:
            t.grad += g


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    Per element: |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    x.zero_grad()
    out = f(x)
    backward(out)
    if x.grad is None:
        raise ValueError("grad_check: f(x) does not depend on x")
    analytic = x.grad.astype(np.float64).copy()

    def scalar(t: Tensor) -> float:
        return t.hires if t.hires is not None else float(t.data.reshape(()))

    numeric = np.zeros_like(analytic)
    with precise_mode():
        probe = Tensor(x.data)  # float64 copy of the float32 values
        flat = probe.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = scalar(f(probe))
            flat[i] = orig - eps
            fm = scalar(f(probe))
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
