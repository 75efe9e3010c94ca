"""Minimal dense-tensor conv engine with reverse-mode gradients.

Tensors are plain numpy arrays, (channels, height, width) or batched
(count, channels, height, width), float32 in production. Convolutions are
cross-correlations with zero padding, computed by stacking one shifted
input slab per kernel tap and reducing with a single batched matmul; the
canonical six-loop definition lives in the test suite as the oracle.

Cross-shaped filters are realized as ordinary n x n convolutions whose
weights outside the cross area are pinned to exactly zero: the mask
multiplies the weights on every forward pass and the weight gradient on
every backward pass, so no update can ever move a masked coordinate.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

_DEBUG_FINITE = bool(os.environ.get("CROSSGO_DEBUG_FINITE"))


def set_debug_finite(enabled: bool) -> None:
    """Toggle NaN/Inf checking after every op (off by default)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = enabled


def _check_finite(t: np.ndarray) -> np.ndarray:
    if _DEBUG_FINITE and not np.isfinite(t).all():
        raise FloatingPointError("non-finite value produced by nn op")
    return t


# -- cross masks ---------------------------------------------------------------


def max_cross_width(n: int) -> int:
    """Largest cross-width that still leaves zeroed corners on an n x n
    filter; widths above this give a full (normal) filter."""
    return math.ceil(n / 2 - 1)


def cross_mask(n: int, c: int) -> np.ndarray:
    """Binary n x n mask of the cross area for cross-width c.

    The cross area is the set of coordinates swept by a c x c block moving
    corner to corner along both diagonals; its complement is four triangles.
    Closed form: (r, q) is active iff |r - q| <= c - 1 or |r + q - (n-1)| <= c - 1.
    c = 0 gives the all-zero mask and c beyond the valid range the all-one
    mask (a zero or normal convolution respectively).
    """
    if n < 2:
        raise ValueError(f"filter size must be >= 2, got {n}")
    if c < 0:
        raise ValueError(f"cross-width must be >= 0, got {c}")
    if c == 0:
        return np.zeros((n, n), dtype=np.float32)
    if c > max_cross_width(n):
        return np.ones((n, n), dtype=np.float32)
    r, q = np.indices((n, n))
    active = (np.abs(r - q) <= c - 1) | (np.abs(r + q - (n - 1)) <= c - 1)
    return active.astype(np.float32)


@dataclass
class CrossMask:
    """A validated in-range cross mask (1 <= c <= ceil(n/2 - 1))."""

    n: int
    c: int
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 1 <= self.c <= max_cross_width(self.n):
            raise ValueError(
                f"cross-width {self.c} out of range 1..{max_cross_width(self.n)} "
                f"for filter size {self.n}"
            )
        self.mask = cross_mask(self.n, self.c)

    @property
    def active_count(self) -> int:
        return int(self.mask.sum())


# -- convolution layers --------------------------------------------------------


@dataclass
class ConvLayer:
    """Weights (out_ch, in_ch, n, n), bias (out_ch,), zero padding, and an
    optional binary spatial mask shared by all filters."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    pad: int = 0
    mask: np.ndarray | None = None

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    def effective_weights(self) -> np.ndarray:
        if self.mask is None:
            return self.weights
        return self.weights * self.mask


def init_conv(
    rng: np.random.Generator,
    in_channels: int,
    out_channels: int,
    kernel_size: int,
    stride: int = 1,
    pad: int = 0,
    mask: np.ndarray | None = None,
    dtype=np.float32,
) -> ConvLayer:
    """He-style init with fan-in counted over active (unmasked) weights only,
    so sparse cross filters keep unit-order output variance."""
    n = kernel_size
    active = n * n if mask is None else int(mask.sum())
    fan_in = in_channels * max(active, 1)
    std = math.sqrt(2.0 / fan_in)
    weights = rng.normal(0.0, std, size=(out_channels, in_channels, n, n))
    if mask is not None:
        weights = weights * mask
    bias = np.zeros(out_channels)
    return ConvLayer(
        weights=weights.astype(dtype),
        bias=bias.astype(dtype),
        stride=stride,
        pad=pad,
        mask=None if mask is None else mask.astype(dtype),
    )


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def _tap_coords(n: int, mask: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Kernel coordinates that actually contribute: all n*n of them, or only
    the active mask cells. Skipping masked-out taps entirely is what makes
    the 39x39 cross filters affordable."""
    if mask is None:
        grid = np.indices((n, n)).reshape(2, -1)
        return grid[0], grid[1]
    return np.nonzero(mask)


def _shift_stack(
    xb: np.ndarray, n: int, stride: int, pad: int, taps
) -> tuple[np.ndarray, int, int]:
    """Stack of input slabs, one per kernel tap: (batch, taps * in_ch,
    out_h * out_w). Built from cheap contiguous slices instead of gathering
    overlapping windows."""
    if pad:
        xb = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    batch, chans = xb.shape[:2]
    out_h = (xb.shape[2] - n) // stride + 1
    out_w = (xb.shape[3] - n) // stride + 1
    ai, aj = taps
    stack = np.empty((batch, ai.size, chans, out_h, out_w), dtype=xb.dtype)
    for t in range(ai.size):
        a, b = ai[t], aj[t]
        stack[:, t] = xb[
            :, :, a : a + stride * out_h : stride, b : b + stride * out_w : stride
        ]
    return stack.reshape(batch, ai.size * chans, out_h * out_w), out_h, out_w


def _weight_matrix(layer: ConvLayer) -> np.ndarray:
    """Weights flattened to (out_ch, taps * in_ch), matching _shift_stack."""
    w = layer.effective_weights()
    ai, aj = _tap_coords(layer.kernel_size, layer.mask)
    per_tap = w[:, :, ai, aj].transpose(0, 2, 1)  # (out, taps, in)
    return np.ascontiguousarray(per_tap).reshape(layer.out_channels, -1)


def conv2d_forward(
    x: np.ndarray, layer: ConvLayer, _cache: dict | None = None
) -> np.ndarray:
    """Cross-correlation with zero padding; masked weights contribute nothing.

    ``_cache``, when given, receives the internal slab stack so a following
    conv2d_backward can skip rebuilding it.
    """
    xb, single = _as_batch(x)
    if xb.shape[1] != layer.in_channels:
        raise ValueError(
            f"input has {xb.shape[1]} channels, layer expects {layer.in_channels}"
        )
    n = layer.kernel_size
    out_h = (xb.shape[2] + 2 * layer.pad - n) // layer.stride + 1
    out_w = (xb.shape[3] + 2 * layer.pad - n) // layer.stride + 1
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"kernel {n} too large for input {xb.shape} pad {layer.pad}")
    taps = _tap_coords(n, layer.mask)
    if taps[0].size == 0:  # zero convolution (all-masked)
        out = np.zeros((xb.shape[0], layer.out_channels, out_h, out_w), dtype=xb.dtype)
        out += layer.bias.reshape(1, -1, 1, 1)
        return _check_finite(out[0] if single else out)
    stack, out_h, out_w = _shift_stack(xb, n, layer.stride, layer.pad, taps)
    if _cache is not None:
        _cache["stack"] = stack
    out = _weight_matrix(layer) @ stack  # (batch, out_ch, out_h*out_w)
    out += layer.bias.reshape(1, -1, 1)
    out = out.reshape(xb.shape[0], layer.out_channels, out_h, out_w)
    return _check_finite(out[0] if single else out)


def _transpose_layer(layer: ConvLayer) -> ConvLayer:
    """Stride-1 gradient trick: correlating the output gradient with the
    180-degree-flipped, in/out-swapped weights at pad n-1-pad gives the
    input gradient with the same fast forward machinery."""
    n = layer.kernel_size
    flipped = layer.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    mask = None if layer.mask is None else np.ascontiguousarray(layer.mask[::-1, ::-1])
    return ConvLayer(
        weights=np.ascontiguousarray(flipped),
        bias=np.zeros(layer.in_channels, dtype=layer.weights.dtype),
        stride=1,
        pad=n - 1 - layer.pad,
        mask=mask,
    )


def conv2d_backward(
    grad_out: np.ndarray,
    saved_input: np.ndarray,
    layer: ConvLayer,
    _cache: dict | None = None,
    need_input_grad: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward: (grad_input, grad_weights, grad_bias).
    grad_weights is masked wherever the layer is.

    ``_cache`` may carry the slab stack saved by the matching forward;
    ``need_input_grad=False`` returns a zero grad_input without computing it
    (for the first layer of a network)."""
    gb, g_single = _as_batch(grad_out)
    xb, x_single = _as_batch(saved_input)
    if g_single != x_single:
        raise ValueError("grad_out and saved_input batch shapes disagree")
    n = layer.kernel_size
    batch, out_ch, out_h, out_w = gb.shape
    if out_ch != layer.out_channels:
        raise ValueError("grad_out channel count does not match layer")

    g2 = gb.reshape(batch, out_ch, out_h * out_w)
    taps = _tap_coords(n, layer.mask)
    grad_b = gb.sum(axis=(0, 2, 3))
    if taps[0].size == 0:
        grad_w = np.zeros_like(layer.weights)
        grad_x = np.zeros_like(xb)
    else:
        stack = _cache.get("stack") if _cache else None
        if stack is None:
            stack, ch, cw = _shift_stack(xb, n, layer.stride, layer.pad, taps)
            if (ch, cw) != (out_h, out_w):
                raise ValueError("grad_out spatial shape does not match forward output")
        gw_flat = (g2 @ stack.transpose(0, 2, 1)).sum(axis=0)  # (out, taps*in)
        ai, aj = taps
        per_tap = gw_flat.reshape(out_ch, ai.size, layer.in_channels)
        grad_w = np.zeros_like(layer.weights)
        grad_w[:, :, ai, aj] = per_tap.transpose(0, 2, 1)
        if not need_input_grad:
            grad_x = np.zeros_like(xb)
        elif layer.stride == 1 and layer.pad <= n - 1:
            grad_x = conv2d_forward(gb, _transpose_layer(layer))
        else:
            grad_x = _scatter_grad_input(g2, gb.dtype, xb.shape, layer, taps)
    if x_single:
        grad_x = grad_x[0]
    return _check_finite(grad_x), grad_w, grad_b


def _scatter_grad_input(
    g2: np.ndarray, dtype, input_shape: tuple, layer: ConvLayer, taps
) -> np.ndarray:
    """Scatter-add fallback for strided or over-padded layers."""
    batch, in_ch, height, width = input_shape
    n = layer.kernel_size
    pad, stride = layer.pad, layer.stride
    out_h = (height + 2 * pad - n) // stride + 1
    out_w = (width + 2 * pad - n) // stride + 1
    dstack = (_weight_matrix(layer).T @ g2).reshape(
        batch, -1, in_ch, out_h, out_w
    )  # (batch, taps, in, oh, ow)
    dxp = np.zeros((batch, in_ch, height + 2 * pad, width + 2 * pad), dtype=dtype)
    ai, aj = taps
    for t in range(ai.size):
        a, b = ai[t], aj[t]
        dxp[
            :, :, a : a + stride * out_h : stride, b : b + stride * out_w : stride
        ] += dstack[:, t]
    return dxp[:, :, pad : pad + height, pad : pad + width]


# -- pointwise ops and plumbing --------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return _check_finite(np.maximum(x, 0))


def relu_backward(grad: np.ndarray, saved_input: np.ndarray) -> np.ndarray:
    return grad * (saved_input > 0)


def concat_channels(tensors: list[np.ndarray]) -> np.ndarray:
    if not tensors:
        raise ValueError("nothing to concatenate")
    spatial = tensors[0].shape[-2:]
    for t in tensors[1:]:
        if t.shape[-2:] != spatial or t.ndim != tensors[0].ndim:
            raise ValueError("concat inputs must share spatial dims")
    return np.concatenate(tensors, axis=-3)


def concat_channels_backward(
    grad: np.ndarray, channel_counts: list[int]
) -> list[np.ndarray]:
    """Split a gradient back along the same channel boundaries."""
    bounds = np.cumsum(channel_counts)[:-1]
    return np.split(grad, bounds, axis=-3)


def softmax_cross_entropy(
    scores: np.ndarray, label: int
) -> tuple[float, np.ndarray]:
    """Stabilized softmax + negative log likelihood over a flat score vector.
    Returns (loss, grad) with grad = softmax(scores) - one_hot(label)."""
    if not 0 <= label < scores.shape[-1]:
        raise ValueError(f"label {label} out of range for {scores.shape[-1]} scores")
    z = scores - scores.max()
    e = np.exp(z)
    p = e / e.sum()
    loss = -float(np.log(p[label]))
    grad = p.astype(scores.dtype)
    grad[label] -= 1
    return loss, grad


def softmax_cross_entropy_batch(
    scores: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean loss over a batch; grads are scaled by 1/N so accumulating them
    yields the gradient of the mean."""
    n = scores.shape[0]
    if labels.min() < 0 or labels.max() >= scores.shape[1]:
        raise ValueError("label out of range")
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(-np.log(p[rows, labels]).mean())
    grad = p.astype(scores.dtype)
    grad[rows, labels] -= 1
    grad /= n
    return loss, grad


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    """In-place vanilla SGD: p <- p - lr * g. Grads of masked layers arrive
    pre-masked, so pinned zeros stay exactly zero."""
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        p -= lr * g


# -- checkpoints -----------------------------------------------------------------

CHECKPOINT_MAGIC = b"CGPN"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, layers: list[ConvLayer]) -> None:
    """Write conv layers in execution order; bit-exact round trip with
    load_checkpoint."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<BH", CHECKPOINT_VERSION, len(layers)))
        for layer in layers:
            n = layer.kernel_size
            flags = 1 if layer.mask is not None else 0
            f.write(
                struct.pack(
                    "<HHBBBB",
                    layer.out_channels,
                    layer.in_channels,
                    n,
                    layer.stride,
                    layer.pad,
                    flags,
                )
            )
            f.write(layer.weights.astype("<f4", copy=False).tobytes())
            f.write(layer.bias.astype("<f4", copy=False).tobytes())
            if layer.mask is not None:
                bits = np.packbits(layer.mask.astype(np.uint8).ravel())
                f.write(bits.tobytes())


def load_checkpoint(path) -> list[ConvLayer]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<BH", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 7
    layers = []
    for _ in range(count):
        out_ch, in_ch, n, stride, pad, flags = struct.unpack_from("<HHBBBB", blob, offset)
        offset += 8
        w_count = out_ch * in_ch * n * n
        weights = np.frombuffer(blob, dtype="<f4", count=w_count, offset=offset)
        weights = weights.reshape(out_ch, in_ch, n, n).copy()
        offset += 4 * w_count
        bias = np.frombuffer(blob, dtype="<f4", count=out_ch, offset=offset).copy()
        offset += 4 * out_ch
        mask = None
        if flags & 1:
            n_bytes = (n * n + 7) // 8
            bits = np.frombuffer(blob, dtype=np.uint8, count=n_bytes, offset=offset)
            mask = np.unpackbits(bits)[: n * n].reshape(n, n).astype(np.float32)
            offset += n_bytes
        layers.append(
            ConvLayer(weights=weights, bias=bias, stride=stride, pad=pad, mask=mask)
        )
    if offset != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return layers
