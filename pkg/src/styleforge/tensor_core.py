"""Dense (C, H, W) tensor primitives and image post-processing kernels.

Tensors are float64 numpy arrays in channel-major layout: ``t[c, h, w]``,
each channel plane row-major.  Every primitive that appears in a loss path
has a matching backward function; all reductions run in double precision so
gradients survive finite-difference checks at 1e-6 relative error.

Convolutions are fixed to 3x3 kernels, stride 1, zero padding 1 (the only
form the VGG-style networks here use).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError


def as_tensor(x) -> np.ndarray:
    """Coerce to a float64 (C, H, W) array, validating rank and extents."""
    t = np.ascontiguousarray(x, dtype=np.float64)
    if t.ndim != 3:
        raise ShapeError(f"expected rank-3 (C, H, W) tensor, got shape {t.shape}")
    if min(t.shape) < 1:
        raise ShapeError(f"all extents must be >= 1, got {t.shape}")
    return t


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col3x3(x: np.ndarray) -> np.ndarray:
    """Unfold zero-padded 3x3 neighborhoods into a (9*C, H*W) matrix."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    # (C, H, W, 3, 3) -> (C, 3, 3, H*W)
    return win.transpose(0, 3, 4, 1, 2).reshape(c * 9, h * w)


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 convolution, stride 1, zero padding 1; spatial dims are preserved.

    kernel has shape (out_c, in_c, 3, 3), bias shape (out_c,).
    """
    x = as_tensor(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ShapeError(f"kernel must be (out_c, in_c, 3, 3), got {kernel.shape}")
    out_c, in_c = kernel.shape[:2]
    if x.shape[0] != in_c:
        raise ShapeError(f"input has {x.shape[0]} channels, kernel expects {in_c}")
    if bias.shape != (out_c,):
        raise ShapeError(f"bias must be ({out_c},), got {bias.shape}")
    _, h, w = x.shape
    cols = _im2col3x3(x)
    out = kernel.reshape(out_c, in_c * 9) @ cols
    out += bias[:, None]
    return out.reshape(out_c, h, w)


def conv2d_backward(
    x: np.ndarray, kernel: np.ndarray, grad_output: np.ndarray
) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. its input.

    Equals the transpose convolution of grad_output: a 3x3 convolution with
    the kernel rotated 180 degrees and its channel axes swapped.
    """
    x = as_tensor(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    g = as_tensor(grad_output)
    if g.shape != (kernel.shape[0], x.shape[1], x.shape[2]):
        raise ShapeError(
            f"grad_output {g.shape} does not match conv output shape "
            f"({kernel.shape[0]}, {x.shape[1]}, {x.shape[2]})"
        )
    if kernel.shape[1] != x.shape[0]:
        raise ShapeError(f"input has {x.shape[0]} channels, kernel expects {kernel.shape[1]}")
    k_t = np.ascontiguousarray(kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    zeros = np.zeros(k_t.shape[0])
    return conv2d_forward(g, k_t, zeros)


# ---------------------------------------------------------------------------
# activations and pooling
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x: np.ndarray, grad_output: np.ndarray) -> np.ndarray:
    """Pass gradient where the forward input was > 0 (subgradient 0 at 0)."""
    x = as_tensor(x)
    g = as_tensor(grad_output)
    if x.shape != g.shape:
        raise ShapeError(f"input {x.shape} vs grad_output {g.shape}")
    return np.where(x > 0.0, g, 0.0)


def maxpool2x2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling, stride 2; returns (pooled, argmax indices).

    Indices are 0..3 positions inside each window in row-major order;
    ties break to the first occurrence.
    """
    x = as_tensor(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even H and W, got {h}x{w}")
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
    win = win.reshape(c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=3)
    out = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    return out, idx


def maxpool2x2_backward(
    idx: np.ndarray, grad_output: np.ndarray, input_shape: tuple[int, int, int]
) -> np.ndarray:
    """Route each gradient to its recorded argmax position."""
    g = as_tensor(grad_output)
    c, h, w = input_shape
    if g.shape != (c, h // 2, w // 2) or idx.shape != g.shape:
        raise ShapeError(
            f"grad_output {g.shape} / indices {idx.shape} do not match "
            f"pooled shape of input {input_shape}"
        )
    win = np.zeros((c, h // 2, w // 2, 4))
    np.put_along_axis(win, idx[..., None], g[..., None], axis=3)
    return np.ascontiguousarray(
        win.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
    )


def avgpool2x2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling, stride 2 (spatial alignment for chained Grams)."""
    x = as_tensor(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x2 needs even H and W, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def avgpool2x2_backward(grad_output: np.ndarray) -> np.ndarray:
    """Spread each gradient uniformly over its 2x2 window."""
    return upsample_nearest2x(grad_output) * 0.25


def upsample_nearest2x(x: np.ndarray) -> np.ndarray:
    """Replicate every pixel into a 2x2 block."""
    x = as_tensor(x)
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


# ---------------------------------------------------------------------------
# image post-processing
# ---------------------------------------------------------------------------

def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centered sampling, clamped at edges."""
    x = as_tensor(x)
    c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output extents must be >= 1, got {out_h}x{out_w}")

    def axis_coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        lo = np.minimum(lo, n_in - 2) if n_in > 1 else np.zeros_like(lo)
        frac = src - lo
        return lo, frac

    yi, yf = axis_coords(out_h, h)
    xi, xf = axis_coords(out_w, w)
    if h == 1:
        yf = np.zeros_like(yf)
    if w == 1:
        xf = np.zeros_like(xf)
    y1 = np.minimum(yi + 1, h - 1)
    x1 = np.minimum(xi + 1, w - 1)

    top = x[:, yi][:, :, xi] * (1 - xf) + x[:, yi][:, :, x1] * xf
    bot = x[:, y1][:, :, xi] * (1 - xf) + x[:, y1][:, :, x1] * xf
    return top * (1 - yf[None, :, None]) + bot * yf[None, :, None]


def upscale_bilinear(image: np.ndarray, factor: int) -> np.ndarray:
    """Integer-factor bilinear upscale (the x4 post-processing step)."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upscale factor must be a positive integer, got {factor}")
    image = as_tensor(image)
    if factor == 1:
        return image.copy()
    _, h, w = image.shape
    return resize_bilinear(image, h * int(factor), w * int(factor))


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    r = int(math.ceil(3.0 * sigma))
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with clamp-to-edge boundary handling."""
    image = as_tensor(image)
    k = gaussian_kernel1d(sigma)
    r = (len(k) - 1) // 2

    def blur_axis(x, axis):
        xp = np.pad(
            x,
            [(0, 0) if a != axis else (r, r) for a in range(3)],
            mode="edge",
        )
        out = np.zeros_like(x)
        n = x.shape[axis]
        sl = [slice(None)] * 3
        for j, kj in enumerate(k):
            sl[axis] = slice(j, j + n)
            out += kj * xp[tuple(sl)]
        return out

    return blur_axis(blur_axis(image, 1), 2)
