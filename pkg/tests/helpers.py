"""Shared test utilities: finite-difference gradient checks, brute-force
oracles, and synthetic network/weight fixtures.

The oracles here are deliberately written as plain nested loops, independent
of the vectorized implementations they check.
"""

from __future__ import annotations

import numpy as np

from styleforge import vgg
from styleforge.vgg import Layer, NetworkSpec, WeightStore


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_rel_errors(fn, x, rng, n_coords=100, h_scale=1e-6):
    """Central finite-difference check of ``fn(x) -> (value, grad)``.

    Returns the per-coordinate relative errors at ``n_coords`` random
    coordinates.  The comparison floor scales with the largest analytic
    gradient entry so near-zero coordinates are judged on absolute error.
    """
    x = np.asarray(x, dtype=np.float64)
    _, grad = fn(x)
    grad = np.asarray(grad, dtype=np.float64)
    assert grad.shape == x.shape
    flat = x.reshape(-1)
    n_coords = min(n_coords, flat.size)
    coords = rng.choice(flat.size, size=n_coords, replace=False)
    gmax = max(float(np.max(np.abs(grad))), 1e-8)
    floor = 1e-4 * gmax
    errors = []
    for i in coords:
        h = h_scale * max(1.0, abs(flat[i]))
        xp = flat.copy()
        xp[i] += h
        xm = flat.copy()
        xm[i] -= h
        fp, _ = fn(xp.reshape(x.shape))
        fm, _ = fn(xm.reshape(x.shape))
        numeric = (fp - fm) / (2.0 * h)
        analytic = grad.reshape(-1)[i]
        denom = max(abs(analytic), abs(numeric), floor)
        errors.append(abs(analytic - numeric) / denom)
    return np.array(errors)


def check_grad(fn, x, rng, n_coords=100, rtol=1e-5, h_scale=1e-6):
    errs = grad_rel_errors(fn, x, rng, n_coords=n_coords, h_scale=h_scale)
    assert errs.max() < rtol, f"max rel grad error {errs.max():.3e} >= {rtol}"


def pack_features(features, names):
    """Flatten a name->array mapping into one vector (fixed name order)."""
    return np.concatenate([np.asarray(features[n]).reshape(-1) for n in names])


def unpack_features(flat, names, shapes):
    """Inverse of :func:`pack_features`."""
    out = {}
    offset = 0
    for n in names:
        size = int(np.prod(shapes[n]))
        out[n] = flat[offset : offset + size].reshape(shapes[n])
        offset += size
    return out


def featuremap_objective(loss_fn, template):
    """Adapt a featuremap loss (dict -> (value, grad dict)) to a flat-vector
    objective usable with :func:`check_grad`.  Layers absent from the
    returned gradient dict contribute zero gradient."""
    names = sorted(template)
    shapes = {n: np.asarray(template[n]).shape for n in names}

    def fn(flat):
        feats = unpack_features(flat, names, shapes)
        value, grads = loss_fn(feats)
        full = {n: grads.get(n, np.zeros(shapes[n])) for n in names}
        return value, pack_features(full, names)

    return fn, pack_features(template, names)


# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------

def conv2d_oracle(x, kernel, bias):
    """Direct six-nested-loop 3x3 convolution with zero padding 1."""
    in_c, h, w = x.shape
    out_c = kernel.shape[0]
    out = np.zeros((out_c, h, w))
    for o in range(out_c):
        for y in range(h):
            for xx in range(w):
                acc = bias[o]
                for i in range(in_c):
                    for ky in range(3):
                        for kx in range(3):
                            yy = y + ky - 1
                            xs = xx + kx - 1
                            if 0 <= yy < h and 0 <= xs < w:
                                acc += kernel[o, i, ky, kx] * x[i, yy, xs]
                out[o, y, xx] = acc
    return out


def maxpool_oracle(x):
    """Window-scan 2x2 max pooling."""
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ch in range(c):
        for y in range(h // 2):
            for xx in range(w // 2):
                out[ch, y, xx] = max(
                    x[ch, 2 * y, 2 * xx],
                    x[ch, 2 * y, 2 * xx + 1],
                    x[ch, 2 * y + 1, 2 * xx],
                    x[ch, 2 * y + 1, 2 * xx + 1],
                )
    return out


def gram_oracle(x, shift=False):
    """Double-loop channel correlation matrix."""
    c, h, w = x.shape
    out = np.zeros((c, c))
    for a in range(c):
        for b in range(c):
            acc = 0.0
            for y in range(h):
                for xx in range(w):
                    xa = x[a, y, xx] - (1.0 if shift else 0.0)
                    xb = x[b, y, xx] - (1.0 if shift else 0.0)
                    acc += xa * xb
            out[a, b] = acc / (h * w * c)
    return out


def chained_gram_oracle(x, y):
    """Double-loop shifted cross-correlation, normalized by x's channel count."""
    cx, h, w = x.shape
    cy = y.shape[0]
    out = np.zeros((cx, cy))
    for a in range(cx):
        for b in range(cy):
            acc = 0.0
            for yy in range(h):
                for xx in range(w):
                    acc += (x[a, yy, xx] - 1.0) * (y[b, yy, xx] - 1.0)
            out[a, b] = acc / (h * w * cx)
    return out


def color_stats_oracle(image):
    """Two-pass per-channel mean and population covariance."""
    _, h, w = image.shape
    n = h * w
    mean = np.zeros(3)
    for c in range(3):
        mean[c] = sum(image[c, y, x] for y in range(h) for x in range(w)) / n
    cov = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            acc = 0.0
            for y in range(h):
                for x in range(w):
                    acc += (image[a, y, x] - mean[a]) * (image[b, y, x] - mean[b])
            cov[a, b] = acc / n
    return mean, cov


# ---------------------------------------------------------------------------
# synthetic networks and weights
# ---------------------------------------------------------------------------

def tiny_encoder() -> NetworkSpec:
    """Small 4-conv encoder used for desk-scale optimization tests."""
    return NetworkSpec(
        name="tiny4",
        layers=(
            Layer("conv", "c1", in_channels=3, out_channels=8),
            Layer("relu", "r1"),
            Layer("conv", "c2", in_channels=8, out_channels=8),
            Layer("relu", "r2"),
            Layer("pool", "p1"),
            Layer("conv", "c3", in_channels=8, out_channels=16),
            Layer("relu", "r3"),
            Layer("conv", "c4", in_channels=16, out_channels=16),
            Layer("relu", "r4"),
        ),
    )


def random_conv_weights(net: NetworkSpec, rng, scale=None) -> WeightStore:
    """He-style random weights for every conv layer of a spec."""
    tensors = {}
    for l in net.conv_layers():
        fan_in = l.in_channels * 9
        s = scale if scale is not None else np.sqrt(2.0 / fan_in)
        tensors[l.weight_name] = rng.standard_normal(
            (l.out_channels, l.in_channels, 3, 3)
        ) * s
        tensors[l.bias_name] = rng.standard_normal(l.out_channels) * 0.1
    return WeightStore(tensors=tensors)


def _identity_kernel(out_c, in_c, carry, gain=1.0):
    k = np.zeros((out_c, in_c, 3, 3))
    for c in range(min(carry, out_c, in_c)):
        k[c, c, 1, 1] = gain
    return k


_SHIFT = 200.0  # lifts carried pixel channels above zero so ReLU is transparent


def identity_codec_store(max_level=5) -> WeightStore:
    """VGG-19 encoder + mirrored decoder weights that carry the image through.

    conv1_1 shifts the three carried channels by +200 (preprocessed pixels
    lie in roughly [-124, 151], so they stay positive through every ReLU);
    the final decoder conv removes the shift.  decode(encode(x)) then equals
    x up to max-pooling, which loses little on smooth images.
    """
    tensors: dict[str, np.ndarray] = {}
    enc = vgg.vgg19_encoder(max_level)
    for l in enc.conv_layers():
        tensors[l.weight_name] = _identity_kernel(l.out_channels, l.in_channels, carry=3)
        bias = np.zeros(l.out_channels)
        if l.name == "conv1_1":
            bias[:3] = _SHIFT
        tensors[l.bias_name] = bias
    for level in range(1, max_level + 1):
        dec = vgg.vgg19_decoder(level)
        conv_layers = dec.conv_layers()
        for i, l in enumerate(conv_layers):
            tensors[l.weight_name] = _identity_kernel(l.out_channels, l.in_channels, carry=3)
            bias = np.zeros(l.out_channels)
            if i == len(conv_layers) - 1:
                bias[:3] = -_SHIFT
            tensors[l.bias_name] = bias
    return WeightStore(tensors=tensors)


def random_codec_store(rng, max_level=5) -> WeightStore:
    """Orthogonal-center-tap random weights for encoders and decoders."""
    tensors: dict[str, np.ndarray] = {}

    def ortho_center(out_c, in_c):
        m = rng.standard_normal((max(out_c, in_c), max(out_c, in_c)))
        q, _ = np.linalg.qr(m)
        k = np.zeros((out_c, in_c, 3, 3))
        k[:, :, 1, 1] = q[:out_c, :in_c] * np.sqrt(2.0)
        return k

    def fill(net):
        for l in net.conv_layers():
            tensors[l.weight_name] = ortho_center(l.out_channels, l.in_channels)
            tensors[l.bias_name] = np.zeros(l.out_channels)

    fill(vgg.vgg19_encoder(max_level))
    for level in range(1, max_level + 1):
        fill(vgg.vgg19_decoder(level))
    return WeightStore(tensors=tensors)


def smooth_photo(h=64, w=64, seed=3):
    """Deterministic smooth 'photograph' in [0, 1].

    Kept low-frequency on purpose: the synthetic near-inverse decoders only
    lose information at max-pooling, so gentle gradients reconstruct well.
    """
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    rng = np.random.default_rng(seed)
    img = np.zeros((3, h, w))
    for c in range(3):
        a, b = rng.uniform(0.3, 0.7, 2)
        ph = rng.uniform(0, 2 * np.pi)
        img[c] = 0.5 + 0.15 * np.sin(2 * np.pi * (a * xx + b * yy) + ph) + 0.15 * (xx - yy)
    return np.clip(img, 0.0, 1.0)


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB between two [0, peak] images."""
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    if mse == 0:
        return np.inf
    return 10.0 * np.log10(peak * peak / mse)


def textured_image(h=64, w=64, seed=7):
    """Deterministic high-frequency 'style' image in [0, 1]."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.0, 1.0, (3, h, w))
    # mild smoothing keeps it texture-like rather than pure noise
    out = base
    for _ in range(2):
        out = 0.5 * out + 0.25 * np.roll(out, 1, axis=1) + 0.25 * np.roll(out, 1, axis=2)
    return np.clip(out, 0.0, 1.0)
