"""Minimal reverse-mode automatic differentiation over dense 4-d tensors.

The layer set is exactly what the flow networks need: strided convolution,
transposed convolution (resolution doubling), ReLU, channel concatenation,
bilinear resize, average downsampling, and elementwise arithmetic -- each
with an exact analytic backward.  The Adam optimizer and a flat binary
checkpoint format live here as well.

Graphs are built define-by-run: every op returns a new Tensor holding
references to its parents and a closure producing the parent gradients.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """N-d array plus a reverse-mode tape node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self, grad=None) -> None:
        """Reverse-mode sweep from this node; accumulates into .grad fields."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        # Reverse topological order, each node visited exactly once.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            parent_grads = node._backward_fn(node.grad)
            for p, g in zip(node._parents, parent_grads):
                if g is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = g.astype(p.data.dtype, copy=True)
                else:
                    p.grad = p.grad + g.astype(p.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"


def check_finite(t: Tensor, where: str = "") -> None:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values in tensor {where or t.op}")


# ---------------------------------------------------------------------------
# convolution primitives (shared by conv2d / upconv2d forward and backward)
# ---------------------------------------------------------------------------


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(n, c, H, W) -> (n, c*kh*kw, oh*ow) patch matrix."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (n,c,oh',ow',kh,kw)
    win = win[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols)


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    cout, cin, kh, kw = w.shape
    xp = _pad_hw(x, pad)
    n, _, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride)
    out = np.matmul(w.reshape(cout, cin * kh * kw), cols)  # (n, cout, oh*ow)
    return out.reshape(x.shape[0], cout, oh, ow)


def _conv_wgrad(x: np.ndarray, gout: np.ndarray, w_shape, stride: int, pad: int) -> np.ndarray:
    cout, cin, kh, kw = w_shape
    xp = _pad_hw(x, pad)
    cols = _im2col(xp, kh, kw, stride)  # (n, cin*kh*kw, L)
    n = x.shape[0]
    g = gout.reshape(n, cout, -1)  # (n, cout, L)
    gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)  # (cout, cin*kh*kw)
    return gw.reshape(cout, cin, kh, kw)


def _conv_adjoint(y: np.ndarray, w: np.ndarray, stride: int, pad: int, out_hw) -> np.ndarray:
    """Exact adjoint of _conv_fwd with respect to its input.

    y plays the role of the output-space tensor (n, cout, oh, ow); the result
    has spatial size out_hw = (h, w) of the original input.
    """
    cout, cin, kh, kw = w.shape
    n, _, oh, ow = y.shape
    h, wdt = out_hw
    gxp = np.zeros((n, cin, h + 2 * pad, wdt + 2 * pad), dtype=y.dtype)
    # t[n, oh, ow, cin, kh, kw]: per-position contribution of every kernel tap
    t = np.tensordot(y, w, axes=([1], [0]))
    t = t.transpose(0, 3, 1, 2, 4, 5)  # (n, cin, oh, ow, kh, kw)
    for p in range(kh):
        rows = slice(p, p + stride * oh, stride)
        for q in range(kw):
            gxp[:, :, rows, q : q + stride * ow : stride] += t[:, :, :, :, p, q]
    if pad:
        return gxp[:, :, pad : pad + h, pad : pad + wdt]
    return gxp


# ---------------------------------------------------------------------------
# tape ops
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, pad: int | None = None) -> Tensor:
    """2-d cross-correlation convolution with zero padding.

    Weights have shape (c_out, c_in, kh, kw).  Default padding floor(k/2)
    ("same" for odd kernels), so stride 2 halves spatial dimensions.
    """
    cout, cin, kh, kw = w.shape
    if x.shape[1] != cin:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[1]}, weights expect {cin}")
    if pad is None:
        pad = kh // 2
    out = _conv_fwd(x.data, w.data, stride, pad)
    if b is not None:
        out = out + b.data[None, :, None, None]
    x_hw = x.shape[2:]

    def bwd(g):
        gx = _conv_adjoint(g, w.data, stride, pad, x_hw) if x.requires_grad else None
        gw = _conv_wgrad(x.data, g, w.shape, stride, pad) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if (b is not None and b.requires_grad) else None
        if b is None:
            return gx, gw
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents=parents, backward_fn=bwd, op="conv2d")


def upconv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2, pad: int = 1) -> Tensor:
    """Transposed convolution doubling spatial resolution (stride 2, 4x4 kernel).

    Weights have shape (c_in, c_out, kh, kw).  This realizes zero-insertion
    unpooling followed by a convolution as a single linear map.
    """
    cin, cout, kh, kw = w.shape
    if x.shape[1] != cin:
        raise ValueError(f"upconv2d channel mismatch: input {x.shape[1]}, weights expect {cin}")
    n, _, h, wdt = x.shape
    out_hw = (stride * h, stride * wdt)
    # x sits in the "output" role of a conv with these weights; the upconv
    # forward is that conv's input-adjoint.
    out = _conv_adjoint(x.data, w.data.transpose(0, 1, 2, 3), stride, pad, out_hw)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def bwd(g):
        gx = _conv_fwd(g, w.data, stride, pad) if x.requires_grad else None
        gw = _conv_wgrad(g, x.data, w.shape, stride, pad) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if (b is not None and b.requires_grad) else None
        if b is None:
            return gx, gw
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents=parents, backward_fn=bwd, op="upconv2d")


def relu(x: Tensor, slope: float = 0.0) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def bwd(g):
        return (np.where(pos, g, slope * g),)

    return Tensor(out, parents=(x,), backward_fn=bwd, op="relu")


def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=1))

    return Tensor(out, parents=tuple(tensors), backward_fn=bwd, op="concat")


def _resize_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    """Dense 1-d bilinear interpolation matrix (n_in*factor, n_in)."""
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    m = np.zeros((n_out, n_in), dtype=dtype)
    m[np.arange(n_out), i0] += 1.0 - f
    m[np.arange(n_out), i1] += f
    return m


def bilinear_resize(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor (separable, exact adjoint)."""
    if factor < 1:
        raise ValueError(f"resize factor must be positive, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    mh = _resize_matrix(h, factor, x.data.dtype)
    mw = _resize_matrix(w, factor, x.data.dtype)
    out = np.einsum("ij,ncjk,lk->ncil", mh, x.data, mw, optimize=True)

    def bwd(g):
        return (np.einsum("ij,ncik,kl->ncjl", mh, g, mw, optimize=True),)

    return Tensor(out, parents=(x,), backward_fn=bwd, op="bilinear_resize")


def avg_downsample(x: Tensor, factor: int) -> Tensor:
    """Average pooling by an integer factor (spatial dims must divide)."""
    if factor < 1:
        raise ValueError(f"downsample factor must be positive, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"spatial dims {h}x{w} not divisible by factor {factor}")
    out = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def bwd(g):
        gx = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3) / (factor * factor)
        return (gx,)

    return Tensor(out, parents=(x,), backward_fn=bwd, op="avg_downsample")


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return g, g

    return Tensor(out, parents=(a, b), backward_fn=bwd, op="add")


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def bwd(g):
        return (g * s,)

    return Tensor(out, parents=(a,), backward_fn=bwd, op="scale")


def weighted_sum(x: Tensor, r: np.ndarray) -> Tensor:
    """Scalar projection sum(x * r) for a fixed array r (no grad through r)."""
    out = np.asarray((x.data * r).sum(), dtype=x.dtype)

    def bwd(g):
        return (g * r,)

    return Tensor(out, parents=(x,), backward_fn=bwd, op="weighted_sum")


def weighted_epe(pred: Tensor, target: np.ndarray, weight: np.ndarray | None = None,
                 eps: float = 1e-8) -> Tensor:
    """Mean endpoint error between a (n,2,h,w) prediction and a target array.

    weight, if given, is a per-pixel (n,1,h,w) or (n,h,w) nonnegative map;
    the mean is weight-normalized.  eps regularizes the sqrt at zero error.
    """
    d = pred.data - target
    dist = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2 + eps * eps)  # (n,h,w)
    if weight is None:
        wsum = float(dist.size)
        loss = dist.sum() / wsum
        wmap = None
    else:
        wmap = weight.reshape(dist.shape)
        wsum = float(wmap.sum())
        if wsum <= 0:
            raise ValueError("weighted_epe: weight map sums to zero")
        loss = (dist * wmap).sum() / wsum

    def bwd(g):
        gd = d / dist[:, None]  # (n,2,h,w)
        if wmap is not None:
            gd = gd * wmap[:, None]
        return (g * gd / wsum,)

    return Tensor(np.asarray(loss, dtype=pred.dtype), parents=(pred,), backward_fn=bwd, op="epe")


# ---------------------------------------------------------------------------
# parameter initialization and Adam
# ---------------------------------------------------------------------------


def he_init(rng: np.random.Generator, shape, fan_in: int | None = None, dtype=np.float32) -> np.ndarray:
    """He-style fan-in scaled normal initialization."""
    if fan_in is None:
        fan_in = int(np.prod(shape[1:]))
    std = np.sqrt(2.0 / fan_in)
    return rng.standard_normal(shape).astype(dtype) * np.asarray(std, dtype=dtype)


@dataclass
class AdamState:
    """Per-parameter Adam moment estimates and step counter."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(
            m=[np.zeros_like(np.asarray(p)) for p in params],
            v=[np.zeros_like(np.asarray(p)) for p in params],
            t=0,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params, grads, state: AdamState, lr: float):
    """One Adam update with bias correction.  Updates params in place.

    params and grads are aligned lists of arrays; state moments are updated
    in place and state.t is incremented.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=p.dtype)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / c1
        vhat = v / c2
        p -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)
    return params


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def finite_difference_grad(fn, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn()
        flat[i] = orig - eps
        fm = fn()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def gradcheck(build_loss, arrays, eps: float = 1e-5, rtol: float = 1e-4) -> float:
    """Compare analytic gradients of build_loss(*tensors) with finite differences.

    arrays are float64 numpy arrays, modified in place during probing.
    Returns the worst relative error over all inputs; raises nothing.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    loss.backward()
    worst = 0.0
    for t, a in zip(tensors, arrays):
        fd = finite_difference_grad(lambda: float(build_loss(*[Tensor(x) for x in arrays]).data), a, eps)
        denom = max(np.abs(fd).max(), np.abs(t.grad).max(), 1e-8)
        err = np.abs(t.grad - fd).max() / denom
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

_CKPT_HEADER = b"FLOWLITE-CKPT v1"


def save_checkpoint(path, params: dict, config_hash: str = "") -> None:
    """Flat binary of named float32 tensors with a text header.

    Layout: header line, u32 record count, then per record: u32 name length,
    utf-8 name, u32 ndim, u32 dims, float32 data -- all little-endian.
    """
    with open(path, "wb") as f:
        f.write(_CKPT_HEADER + b" " + config_hash.encode() + b"\n")
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name], dtype="<f4")
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)) + nb)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns (params dict, config hash)."""
    with open(path, "rb") as f:
        header = f.readline().rstrip(b"\n")
        if not header.startswith(_CKPT_HEADER):
            raise ValueError(f"not a flowlite checkpoint: header {header[:32]!r}")
        config_hash = header[len(_CKPT_HEADER) :].strip().decode()
        (count,) = struct.unpack("<I", f.read(4))
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode()
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(4 * n_items), dtype="<f4").reshape(shape)
            params[name] = data.copy()
    return params, config_hash


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]
