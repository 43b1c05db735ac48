"""Minimal reverse-mode automatic differentiation over float32 numpy arrays.

The engine is tape-based: while a ``Graph`` is active (``with Graph() as g:``),
every operation whose inputs require gradients appends a record to the tape.
``backward(loss, g)`` replays the tape in reverse and accumulates gradients
into every tensor that requires them.  With no active graph, operations are
plain numpy evaluations, which is what rendering after training uses.

Only the operations the light-field pipeline needs are provided.  Spatial
operations accept either unbatched ``(C, H, W)`` arrays or batched
``(N, C, H, W)`` arrays; batching is how the renderer decodes many view
coordinates in one matmul.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np


class TensorError(Exception):
    """Base class for engine failures."""


class ShapeError(TensorError):
    """Operands do not conform (a configuration error, not a numeric one)."""


class NumericError(TensorError):
    """A NaN or Inf showed up where finite values are required."""


class Tensor:
    """Dense float32 array with an optional gradient slot.

    ``requires_grad`` marks leaves (parameters).  Outputs of operations get
    it derived from their inputs, and only while a graph is recording.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data, *, check_finite: bool = True) -> Tensor:
    """Create a trainable leaf tensor, validating finiteness on entry."""
    t = Tensor(np.array(data, dtype=np.float32, copy=True), requires_grad=True)
    if check_finite and not np.all(np.isfinite(t.data)):
        raise NumericError("parameter initialized with non-finite values")
    return t


def constant(data) -> Tensor:
    return Tensor(data)


@dataclass
class OpRecord:
    """One step of the forward pass: enough to run its backward."""

    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: object  # callable(out_grad: ndarray) -> tuple[ndarray | None, ...]


@dataclass
class Graph:
    """Ordered tape of operation records; inputs always precede their record."""

    records: list[OpRecord] = field(default_factory=list)

    def __enter__(self) -> "Graph":
        _push_graph(self)
        return self

    def __exit__(self, *exc) -> None:
        _pop_graph(self)


_state = threading.local()


def _push_graph(g: Graph) -> None:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = []
        _state.stack = stack
    stack.append(g)


def _pop_graph(g: Graph) -> None:
    stack = _state.stack
    if not stack or stack[-1] is not g:
        raise TensorError("graph exit out of order")
    stack.pop()


def active_graph() -> Graph | None:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


def _make_output(kind: str, inputs: tuple[Tensor, ...], data: np.ndarray, backward) -> Tensor:
    g = active_graph()
    needs = g is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        g.records.append(OpRecord(kind, inputs, out, backward))
    return out


def backward(loss: Tensor, graph: Graph) -> None:
    """Reverse sweep over ``graph``, accumulating gradients from ``loss``.

    All gradients of tensors appearing in the graph are cleared first, so a
    fresh tape always yields fresh gradients.  Raises ``NumericError`` naming
    the operation kind if any produced gradient is non-finite.
    """
    if loss.data.size != 1:
        raise TensorError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    for rec in graph.records:
        rec.output.grad = None
        for t in rec.inputs:
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(graph.records):
        out_grad = rec.output.grad
        if out_grad is None:
            continue  # not on any path to the loss
        grads = rec.backward(out_grad)
        for t, g in zip(rec.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient out of op '{rec.kind}'")
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.astype(np.float32, copy=False)


# ---------------------------------------------------------------------------
# elementwise family


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make_output("add", (a, b), data, back)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make_output("subtract", (a, b), data, back)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make_output("multiply", (a, b), data, back)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    data = x.data * np.float32(s)

    def back(g):
        return (g * np.float32(s),)

    return _make_output("scale", (x,), data, back)


def abs_val(x: Tensor) -> Tensor:
    data = np.abs(x.data)

    def back(g):
        # subgradient 0 at exactly 0
        return (g * np.sign(x.data),)

    return _make_output("abs_val", (x,), data, back)


def exp_neg(x: Tensor) -> Tensor:
    data = np.exp(-x.data)

    def back(g):
        return (-g * data,)

    return _make_output("exp_neg", (x,), data, back)


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.where(
            x.data >= 0,
            1.0 / (1.0 + np.exp(-x.data)),
            np.exp(x.data) / (1.0 + np.exp(x.data)),
        ).astype(np.float32)

    def back(g):
        return (g * data * (1.0 - data),)

    return _make_output("sigmoid", (x,), data, back)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    a32 = np.float32(alpha)
    data = np.where(x.data > 0, x.data, a32 * x.data)

    def back(g):
        return (np.where(x.data > 0, g, a32 * g),)

    return _make_output("leaky_relu", (x,), data, back)


def concat_channels(tensors: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis (axis -3 of (..., C, H, W))."""
    if not tensors:
        raise ShapeError("concat_channels of nothing")
    axis = tensors[0].data.ndim - 3
    if axis < 0:
        raise ShapeError("concat_channels needs at least (C, H, W) operands")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make_output("concat_channels", tuple(tensors), data, back)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    axis = x.data.ndim - 3
    if axis < 0:
        raise ShapeError("slice_channels needs at least (C, H, W)")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = x.data[index]

    def back(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make_output("slice_channels", (x,), data, back)


def stack_maps(tensors: list[Tensor]) -> Tensor:
    """Stack same-shape tensors into a new leading axis."""
    if not tensors:
        raise ShapeError("stack_maps of nothing")
    data = np.stack([t.data for t in tensors], axis=0)

    def back(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _make_output("stack_maps", tuple(tensors), data, back)


def index_stack(x: Tensor, i: int) -> Tensor:
    data = x.data[i]

    def back(g):
        full = np.zeros_like(x.data)
        full[i] = g
        return (full,)

    return _make_output("index_stack", (x,), data, back)


def sum_over_stack(x: Tensor) -> Tensor:
    data = x.data.sum(axis=0)

    def back(g):
        return (np.broadcast_to(g, x.data.shape).astype(np.float32, copy=False),)

    return _make_output("sum_over_stack", (x,), data, back)


def softmax_over_stack(x: Tensor) -> Tensor:
    """Softmax across the leading (stack) axis, independently per position."""
    shifted = x.data - x.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=0, keepdims=True)

    def back(g):
        inner = (g * data).sum(axis=0, keepdims=True)
        return (data * (g - inner),)

    return _make_output("softmax_over_stack", (x,), data, back)


def reduce_mean_abs(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.abs(x.data).mean(dtype=np.float32)

    def back(g):
        return ((np.float32(g.reshape(())) / np.float32(n)) * np.sign(x.data),)

    return _make_output("reduce_mean_abs", (x,), np.float32(data), back)


def reduce_sum(x: Tensor) -> Tensor:
    data = x.data.sum(dtype=np.float32)

    def back(g):
        return (np.full_like(x.data, np.float32(g.reshape(()))),)

    return _make_output("reduce_sum", (x,), np.float32(data), back)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)

    def back(g):
        return (g.reshape(x.data.shape),)

    return _make_output("reshape", (x,), data, back)


def center_crop(x: Tensor, height: int, width: int) -> Tensor:
    """Crop the trailing two axes to (height, width), centered."""
    h, w = x.data.shape[-2], x.data.shape[-1]
    if height > h or width > w:
        raise ShapeError(f"cannot crop {h}x{w} to {height}x{width}")
    top = (h - height) // 2
    left = (w - width) // 2
    index = (Ellipsis, slice(top, top + height), slice(left, left + width))
    data = x.data[index]

    def back(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make_output("center_crop", (x,), data, back)


# ---------------------------------------------------------------------------
# structured operations


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w.T + b for x of shape (in,) or (N, in)."""
    if w.data.ndim != 2 or b.data.ndim != 1 or w.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"bad fully_connected weights {w.data.shape} / bias {b.data.shape}")
    if x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError(f"input {x.data.shape} does not feed weights {w.data.shape}")
    data = x.data @ w.data.T + b.data

    def back(g):
        gx = g @ w.data
        if x.data.ndim == 1:
            gw = np.outer(g, x.data)
            gb = g.copy()
        else:
            gw = g.T @ x.data
            gb = g.sum(axis=0)
        return gx, gw, gb

    return _make_output("fully_connected", (x, w, b), data, back)


def _as_batched(data: np.ndarray) -> tuple[np.ndarray, bool]:
    if data.ndim == 3:
        return data[None], False
    if data.ndim == 4:
        return data, True
    raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got {data.shape}")


def _conv3x3_raw(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Cross-correlate (N,C,H,W) with (Cout,C,3,3), stride 1, zero pad 1."""
    n, c, h, w = x.shape
    cout = k.shape[0]
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, h * w, c * 9)
    out = cols @ k.reshape(cout, c * 9).T
    return out.transpose(0, 2, 1).reshape(n, cout, h, w)


def conv2d_same(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """3x3 same-padded cross-correlation with per-output-channel bias."""
    if k.data.ndim != 4 or k.data.shape[2:] != (3, 3):
        raise ShapeError(f"kernel must be (Cout,Cin,3,3), got {k.data.shape}")
    xb, batched = _as_batched(x.data)
    if xb.shape[1] != k.data.shape[1]:
        raise ShapeError(f"input channels {xb.shape[1]} != kernel channels {k.data.shape[1]}")
    if b.data.shape != (k.data.shape[0],):
        raise ShapeError(f"bias {b.data.shape} does not match kernel {k.data.shape}")
    out = _conv3x3_raw(xb, k.data) + b.data[None, :, None, None]
    data = out if batched else out[0]

    def back(g):
        gb4, _ = _as_batched(g)
        n, _, h, w = xb.shape
        c, cout = xb.shape[1], k.data.shape[0]
        # data gradient: correlate with the spatially flipped, axis-swapped kernel
        k_flip = k.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gx = _conv3x3_raw(gb4, np.ascontiguousarray(k_flip))
        # kernel gradient from the im2col matrix
        padded = np.pad(xb, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, h * w, c * 9)
        go = gb4.reshape(n, cout, h * w)
        gk = np.einsum("npc,nkp->kc", cols, go, optimize=True).reshape(k.data.shape)
        gbias = gb4.sum(axis=(0, 2, 3))
        return (gx if batched else gx[0]), gk.astype(np.float32, copy=False), gbias

    return _make_output("conv2d_same", (x, k, b), data, back)


def upsample_nearest_x2(x: Tensor) -> Tensor:
    xb, batched = _as_batched(x.data)
    up = np.repeat(np.repeat(xb, 2, axis=2), 2, axis=3)
    data = up if batched else up[0]

    def back(g):
        gb, _ = _as_batched(g)
        n, c, h2, w2 = gb.shape
        summed = gb.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        return (summed if batched else summed[0],)

    return _make_output("upsample_nearest_x2", (x,), data, back)


def grid_sample_bilinear(image: Tensor, coords: Tensor) -> Tensor:
    """Sample ``image`` at absolute pixel positions, border-clamped.

    ``coords`` holds (x_pix, y_pix) per output pixel as channels 0 and 1.
    The backward pass produces gradients for both the image values and the
    sample coordinates; the coordinate gradient is what carries learning
    signal from the photometric loss into the geometry network.
    """
    ib, batched = _as_batched(image.data)
    cb, cbatched = _as_batched(coords.data)
    if batched != cbatched:
        raise ShapeError("image and coords must both be batched or both not")
    if cb.shape[0] != ib.shape[0] or cb.shape[1] != 2:
        raise ShapeError(f"coords {coords.data.shape} do not match image {image.data.shape}")
    n, c, h, w = ib.shape
    xs = np.clip(cb[:, 0], 0.0, w - 1.0)
    ys = np.clip(cb[:, 1], 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    np.clip(x0, 0, max(w - 2, 0), out=x0)
    np.clip(y0, 0, max(h - 2, 0), out=y0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0).astype(np.float32)
    fy = (ys - y0).astype(np.float32)

    batch_idx = np.arange(n)[:, None, None]
    v00 = ib[batch_idx[..., None], np.arange(c)[None, None, None, :], y0[:, :, :, None], x0[:, :, :, None]]
    v01 = ib[batch_idx[..., None], np.arange(c)[None, None, None, :], y0[:, :, :, None], x1[:, :, :, None]]
    v10 = ib[batch_idx[..., None], np.arange(c)[None, None, None, :], y1[:, :, :, None], x0[:, :, :, None]]
    v11 = ib[batch_idx[..., None], np.arange(c)[None, None, None, :], y1[:, :, :, None], x1[:, :, :, None]]
    fxn = fx[:, :, :, None]
    fyn = fy[:, :, :, None]
    top = v00 * (1.0 - fxn) + v01 * fxn
    bot = v10 * (1.0 - fxn) + v11 * fxn
    out_nhwc = top * (1.0 - fyn) + bot * fyn
    out = out_nhwc.transpose(0, 3, 1, 2).astype(np.float32, copy=False)
    data = out if batched else out[0]

    # saturation mask: clamped coordinates have zero positional gradient
    x_open = ((cb[:, 0] > 0.0) & (cb[:, 0] < w - 1.0)).astype(np.float32)
    y_open = ((cb[:, 1] > 0.0) & (cb[:, 1] < h - 1.0)).astype(np.float32)

    def back(g):
        gb, _ = _as_batched(g)
        g_nhwc = gb.transpose(0, 2, 3, 1)
        need_image = image.requires_grad
        need_coords = coords.requires_grad
        gi = None
        gc = None
        if need_image:
            gi_b = np.zeros_like(ib)
            w00 = ((1.0 - fx) * (1.0 - fy))[..., None] * g_nhwc
            w01 = (fx * (1.0 - fy))[..., None] * g_nhwc
            w10 = ((1.0 - fx) * fy)[..., None] * g_nhwc
            w11 = (fx * fy)[..., None] * g_nhwc
            flat = gi_b.reshape(n, c, h * w)
            for contrib, yy, xx in ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1)):
                lin = (yy * w + xx).reshape(n, -1)
                for bi in range(n):
                    for ci in range(c):
                        flat[bi, ci] += np.bincount(
                            lin[bi], weights=contrib[bi, :, :, ci].ravel(), minlength=h * w
                        ).astype(np.float32)
            gi = gi_b if batched else gi_b[0]
        if need_coords:
            d_dx = ((v01 - v00) * (1.0 - fyn) + (v11 - v10) * fyn)
            d_dy = ((v10 - v00) * (1.0 - fxn) + (v11 - v01) * fxn)
            gx = (d_dx * g_nhwc).sum(axis=-1) * x_open
            gy = (d_dy * g_nhwc).sum(axis=-1) * y_open
            gc_b = np.stack([gx, gy], axis=1).astype(np.float32, copy=False)
            gc = gc_b if batched else gc_b[0]
        return gi, gc

    return _make_output("grid_sample_bilinear", (image, coords), data, back)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction over a named set of parameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        k = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            m_hat = m / (1.0 - b1 ** k)
            v_hat = v / (1.0 - b2 ** k)
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(np.float32)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
