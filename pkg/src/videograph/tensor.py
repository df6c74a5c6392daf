"""Dense tensors with reverse-mode automatic differentiation.

Implements exactly the operations the video-graph pipeline needs, on top of
numpy arrays. Gradients are recorded on a tape and replayed in reverse
execution order; broadcasting is supported for elementwise ops via gradient
unbroadcasting.

Conventions fixed here so results are reproducible:
  * relu gradient at 0 is 0;
  * max-pool ties route the gradient to the lowest (row-major) index;
  * probabilities inside losses are clamped to [1e-7, 1 - 1e-7], with zero
    gradient where the clamp is active.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

PROB_CLAMP = 1e-7


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """A dense nd-array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None, check_finite: bool = True):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if check_finite and not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape


class _TapeOp:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable):
        self.output = output
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


_LOCAL = threading.local()


def _tape_stack() -> list:
    if not hasattr(_LOCAL, "stack"):
        _LOCAL.stack = []
    return _LOCAL.stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class stop_recording:
    """Context manager that suspends tape recording on this thread."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _tape_stack().pop()
        return False


class Tape:
    """Ordered record of executed differentiable operations.

    The reverse pass walks the record backwards (execution order is a valid
    topological order of the data flow), accumulating gradient contributions
    additively.
    """

    def __init__(self):
        self.ops: list[_TapeOp] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _tape_stack().pop()
        return False

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> None:
        output.requires_grad = True
        self.ops.append(_TapeOp(output, inputs, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad for every requires_grad tensor reachable from loss.

        Repeated calls without zeroing grads accumulate.
        """
        if loss.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for op in reversed(self.ops):
            g_out = grads.get(id(op.output))
            if g_out is None:
                continue
            contributions = op.backward_fn(g_out)
            for inp, g_in in zip(op.inputs, contributions):
                if g_in is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g_in
                else:
                    grads[key] = g_in
                    holders[key] = inp
        for key, tensor in holders.items():
            if tensor.requires_grad:
                tensor.accumulate_grad(np.asarray(grads[key]))


def _maybe_record(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, length in enumerate(shape):
        if length == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, check_finite=False)
    return _maybe_record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, check_finite=False)
    return _maybe_record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, check_finite=False)
    return _maybe_record(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape), check_finite=False)
    return _maybe_record(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.transpose(x.data, axes), check_finite=False)
    return _maybe_record(out, (x,), lambda g: (np.transpose(g, inverse),))


def mean(x: Tensor, axes, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes) if isinstance(axes, (tuple, list)) else (axes,)
    count = 1
    for ax in axes:
        count *= x.shape[ax]
    out = Tensor(x.data.mean(axis=axes, keepdims=keepdims), check_finite=False)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _maybe_record(out, (x,), backward)


def mean_exact(x: Tensor, axes) -> Tensor:
    """Mean over axes with correctly-rounded (order-independent) summation.

    Uses math.fsum per output position, so permuting elements along the
    reduced axes cannot change the result even in the last bit. Intended for
    the orderless pooling baseline; O(size) python loop, desk scale only.
    """
    x = as_tensor(x)
    axes = tuple(sorted(ax % x.ndim for ax in (axes if isinstance(axes, (tuple, list)) else (axes,))))
    keep = [i for i in range(x.ndim) if i not in axes]
    moved = np.transpose(x.data, keep + list(axes))
    out_shape = tuple(x.shape[i] for i in keep)
    count = int(np.prod([x.shape[i] for i in axes], dtype=np.int64))
    flat = moved.reshape(-1, count)
    vals = np.array([math.fsum(row) for row in flat], dtype=x.data.dtype) / count
    out = Tensor(vals.reshape(out_shape), check_finite=False)

    def backward(g):
        gx = np.broadcast_to(np.expand_dims(g, axes) / count, x.shape)
        return (gx.copy(),)

    return _maybe_record(out, (x,), backward)


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul requires (m,k) x (k,p); got {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, check_finite=False)
    return _maybe_record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# ---------------------------------------------------------------------------
# Activations


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0), check_finite=False)
    return _maybe_record(out, (x,), lambda g: (g * (x.data > 0),))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # stable in both tails
    y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    out = Tensor(y, check_finite=False)
    return _maybe_record(out, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y, check_finite=False)
    return _maybe_record(out, (x,), lambda g: (g * (1.0 - y * y),))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None


def softmax(x: Tensor, axis: int) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, check_finite=False)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return _maybe_record(out, (x,), backward)


# ---------------------------------------------------------------------------
# Depthwise 1-D convolution (same zero padding, one kernel per channel)


def depthwise_conv1d(x: Tensor, axis: int, kernels: Tensor) -> Tensor:
    """Convolve one length-k kernel per channel along a single axis.

    The trailing axis of x is the channel axis; output channel c depends only
    on input channel c. Same zero padding, so the output shape equals the
    input shape.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 2:
        raise ShapeError(f"kernels must be (channels, k); got {kernels.shape}")
    channels, k = kernels.shape
    if k % 2 == 0:
        raise ShapeError(f"kernel length must be odd, got {k}")
    if x.shape[-1] != channels:
        raise ShapeError(f"channel mismatch: input has {x.shape[-1]} channels, kernels have {channels}")
    axis = axis % x.ndim
    if axis == x.ndim - 1:
        raise ShapeError("cannot convolve along the channel axis")

    pad = k // 2
    moved = np.moveaxis(x.data, axis, -2)  # (..., L, C)
    length = moved.shape[-2]
    pad_spec = [(0, 0)] * moved.ndim
    pad_spec[-2] = (pad, pad)
    padded = np.pad(moved, pad_spec)
    out_m = np.zeros_like(moved)
    for j in range(k):
        out_m += padded[..., j:j + length, :] * kernels.data[:, j]
    out = Tensor(np.moveaxis(out_m, -2, axis), check_finite=False)

    def backward(g):
        g_m = np.moveaxis(g, axis, -2)
        gx_pad = np.zeros_like(padded)
        gk = np.zeros_like(kernels.data)
        reduce_axes = tuple(range(g_m.ndim - 1))
        for j in range(k):
            gx_pad[..., j:j + length, :] += g_m * kernels.data[:, j]
            gk[:, j] = (padded[..., j:j + length, :] * g_m).sum(axis=reduce_axes)
        gx = np.moveaxis(gx_pad[..., pad:pad + length, :], -2, axis)
        return (gx, gk)

    return _maybe_record(out, (x, kernels), backward)


# ---------------------------------------------------------------------------
# Max pooling (non-overlapping windows, kernel == stride)


def max_pool(x: Tensor, axes, kernel: int = 3) -> Tensor:
    """Non-overlapping max over `kernel`-wide windows along each axis in axes.

    Pooled axis lengths become floor(L / kernel); tail elements beyond the
    last full window are dropped. Gradient routes to the window argmax, ties
    broken to the lowest row-major index.
    """
    x = as_tensor(x)
    axes = sorted(ax % x.ndim for ax in (axes if isinstance(axes, (tuple, list)) else (axes,)))
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate pooled axes {axes}")
    for ax in axes:
        if x.shape[ax] < kernel:
            raise ShapeError(f"axis {ax} has length {x.shape[ax]} < pooling kernel {kernel}")

    trim = [slice(None)] * x.ndim
    windowed_shape = []
    for i, length in enumerate(x.shape):
        if i in axes:
            full = (length // kernel) * kernel
            trim[i] = slice(0, full)
            windowed_shape.extend([length // kernel, kernel])
        else:
            windowed_shape.append(length)
    trimmed = x.data[tuple(trim)]
    windowed = trimmed.reshape(windowed_shape)

    # window axes sit right after their outer axis; move them to the end in
    # ascending original-axis order so the flattened window is row-major
    win_pos = [ax + 1 + rank for rank, ax in enumerate(axes)]
    m = len(axes)
    moved = np.moveaxis(windowed, win_pos, range(windowed.ndim - m, windowed.ndim))
    out_shape = moved.shape[:-m]
    flat_w = moved.reshape(out_shape + (kernel ** m,))
    idx = flat_w.argmax(axis=-1)
    out_data = np.take_along_axis(flat_w, idx[..., None], axis=-1)[..., 0]
    out = Tensor(out_data, check_finite=False)

    def backward(g):
        gw = np.zeros_like(flat_w)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(moved.shape)
        gw = np.moveaxis(gw, range(windowed.ndim - m, windowed.ndim), win_pos)
        gx = np.zeros_like(x.data)
        gx[tuple(trim)] = gw.reshape(trimmed.shape)
        return (gx,)

    return _maybe_record(out, (x,), backward)


# ---------------------------------------------------------------------------
# Batch normalization


class BatchNormState:
    """Learnable scale/shift plus running statistics over one channel axis."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9, dtype=np.float64):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.initialized = False
        self.eps = eps
        self.momentum = momentum

    @property
    def channels(self) -> int:
        return self.gamma.size


def batch_norm(x: Tensor, channel_axis: int, state: BatchNormState, mode: str) -> Tensor:
    """Normalize per channel over all other axes; affine gamma/beta last.

    Train mode uses batch statistics and blends them into the running stats;
    eval mode uses running stats and errors if none were ever recorded.
    """
    x = as_tensor(x)
    channel_axis = channel_axis % x.ndim
    channels = x.shape[channel_axis]
    if channels != state.channels:
        raise ShapeError(f"batch_norm state has {state.channels} channels, input axis has {channels}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batch_norm mode {mode!r}")

    bshape = [1] * x.ndim
    bshape[channel_axis] = channels
    reduce_axes = tuple(i for i in range(x.ndim) if i != channel_axis)
    gamma_b = state.gamma.data.reshape(bshape)
    beta_b = state.beta.data.reshape(bshape)

    if mode == "train":
        mu = x.data.mean(axis=reduce_axes, keepdims=True)
        var = x.data.var(axis=reduce_axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mu.reshape(channels)
        state.running_var = m * state.running_var + (1.0 - m) * var.reshape(channels)
        state.initialized = True
    else:
        if not state.initialized:
            raise RuntimeError("batch_norm eval mode before any train-mode update: running stats uninitialized")
        mu = state.running_mean.reshape(bshape)
        inv = 1.0 / np.sqrt(state.running_var.reshape(bshape) + state.eps)
        xhat = (x.data - mu) * inv

    out = Tensor(gamma_b * xhat + beta_b, check_finite=False)

    def backward(g):
        g_gamma = (g * xhat).sum(axis=reduce_axes)
        g_beta = g.sum(axis=reduce_axes)
        g_xhat = g * gamma_b
        if mode == "train":
            mean_g = g_xhat.mean(axis=reduce_axes, keepdims=True)
            mean_gx = (g_xhat * xhat).mean(axis=reduce_axes, keepdims=True)
            gx = inv * (g_xhat - mean_g - xhat * mean_gx)
        else:
            gx = g_xhat * inv
        return (gx, g_gamma, g_beta)

    return _maybe_record(out, (x, state.gamma, state.beta), backward)


# ---------------------------------------------------------------------------
# Losses


def loss(predictions: Tensor, targets, mode: str) -> Tensor:
    """Classification loss over a batch of probability rows.

    single_label_ce: predictions (B,K) softmax outputs, targets int indices;
    mean over the batch of -log p[target].
    multi_label_bce: predictions (B,K) sigmoid outputs, targets (B,K) in
    {0,1}; mean binary cross-entropy over all labels.
    """
    predictions = as_tensor(predictions)
    if predictions.ndim != 2:
        raise ShapeError(f"predictions must be (batch, classes); got {predictions.shape}")
    batch, num_classes = predictions.shape
    lo, hi = PROB_CLAMP, 1.0 - PROB_CLAMP

    if mode == "single_label_ce":
        targets = np.asarray(targets, dtype=np.int64)
        if targets.shape != (batch,):
            raise ShapeError(f"targets shape {targets.shape} does not match batch {batch}")
        if targets.min() < 0 or targets.max() >= num_classes:
            raise IndexError(f"target index out of range [0, {num_classes})")
        p_raw = predictions.data[np.arange(batch), targets]
        p = np.clip(p_raw, lo, hi)
        out = Tensor(np.asarray(-np.log(p).mean()), check_finite=False)

        def backward(g):
            gp = np.zeros_like(predictions.data)
            active = (p_raw > lo) & (p_raw < hi)
            gp[np.arange(batch), targets] = np.where(active, -1.0 / (batch * p), 0.0) * g.reshape(())
            return (gp,)

        return _maybe_record(out, (predictions,), backward)

    if mode == "multi_label_bce":
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != predictions.shape:
            raise ShapeError(f"targets shape {targets.shape} does not match predictions {predictions.shape}")
        p_raw = predictions.data
        p = np.clip(p_raw, lo, hi)
        total = batch * num_classes
        out = Tensor(np.asarray(-(targets * np.log(p) + (1.0 - targets) * np.log1p(-p)).mean()),
                     check_finite=False)

        def backward(g):
            active = (p_raw > lo) & (p_raw < hi)
            gp = np.where(active, (p - targets) / (p * (1.0 - p)) / total, 0.0) * g.reshape(())
            return (gp,)

        return _maybe_record(out, (predictions,), backward)

    raise ValueError(f"unknown loss mode {mode!r}")


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


def grad_check(f: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5) -> float:
    """Compare tape gradients of scalar f() against central finite differences.

    Returns the max relative error |a - n| / max(1e-8, |a| + |n|) over every
    component of every tensor in `tensors`. Inputs should be 64-bit.
    """
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        out = f()
        if out.size != 1:
            raise ShapeError(f"grad_check requires a scalar function, got shape {out.shape}")
        tape.backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    worst = 0.0
    for t, a in zip(tensors, analytic):
        if not t.data.flags["C_CONTIGUOUS"]:
            t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)   # view: in-place writes perturb t.data
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError("non-finite value encountered during finite differencing")
            n = (fp - fm) / (2.0 * h)
            rel = abs(a_flat[i] - n) / max(1e-8, abs(a_flat[i]) + abs(n))
            worst = max(worst, rel)
    return worst
