"""Objective terms for optimization-based style transfer.

All losses return ``(value, gradient)`` pairs.  Style terms operate on named
feature maps (layer name -> (C, H, W) activations) and return per-layer
gradients ready to be pushed back through the network to the image.

Style statistics are channel correlation (Gram) matrices, optionally with
the activation shift ``x - 1`` and cross-layer chained correlations between
consecutive layers.  Per-layer weighting is geometric, doubling toward the
shallow end (or the deep end when reversed), normalized to sum 1 over the
active layers so the global style weight keeps a stable meaning.

Masking: a scalar field in [0, 1] weights each spatial position's
contribution to the generated image's Gram matrix, and the style target is
scaled by the mask's mean coverage.  A constant mask m therefore scales a
style term by m^2, an all-ones mask reproduces the unmasked loss exactly,
and an all-zeros mask removes both the loss and its gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor_core as tc
from .errors import ShapeError, ValidationError


# ---------------------------------------------------------------------------
# configuration and masks
# ---------------------------------------------------------------------------

def _check_mask_field(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"mask field must be 2-D (H, W), got shape {m.shape}")
    if m.min() < 0.0 or m.max() > 1.0:
        raise ValidationError(
            f"mask values must lie in [0, 1], got range [{m.min()}, {m.max()}]"
        )
    return m


@dataclass(frozen=True)
class MaskSet:
    """Per-region scalar fields at image resolution plus a region->style map.

    ``style_of[i]`` is the style slot (0 = primary style) that region i's
    statistics should come from.  Multi-region sets must partition the image.
    """

    regions: tuple[np.ndarray, ...]
    style_of: tuple[int, ...]

    def __post_init__(self):
        if len(self.regions) != len(self.style_of):
            raise ValidationError(
                f"{len(self.regions)} regions but {len(self.style_of)} style assignments"
            )
        if not self.regions:
            raise ValidationError("MaskSet needs at least one region")
        fields = tuple(_check_mask_field(m) for m in self.regions)
        object.__setattr__(self, "regions", fields)
        shapes = {m.shape for m in fields}
        if len(shapes) != 1:
            raise ShapeError(f"all region fields must share one shape, got {shapes}")
        if len(fields) > 1:
            total = np.sum(fields, axis=0)
            if np.abs(total - 1.0).max() > 1e-6:
                raise ValidationError("multi-region masks must partition the image")

    @classmethod
    def single(cls, mask: np.ndarray) -> "MaskSet":
        return cls(regions=(np.asarray(mask, dtype=np.float64),), style_of=(0,))

    def coverage(self) -> np.ndarray:
        """Union field: total mask weight per pixel."""
        return np.sum(self.regions, axis=0)


@dataclass
class StyleConfig:
    """All objective hyperparameters for the optimization path."""

    alpha: float = 1.0          # content weight
    beta: float = 1e4           # style weight
    tv_weight: float = 8.5e-2   # total-variation weight
    use_shift: bool = False
    use_chained: bool = False
    use_all_layers: bool = True
    reverse_layer_weights: bool = False
    style_layers: tuple[str, ...] | None = None
    content_layer: str = "relu2_2"
    mask: MaskSet | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.tv_weight < 0:
            raise ValidationError("alpha, beta and tv_weight must be >= 0")
        if self.mask is not None and isinstance(self.mask, np.ndarray):
            self.mask = MaskSet.single(self.mask)

    def active_layers(self, layer_order: Sequence[str]) -> tuple[str, ...]:
        """Resolve which layers carry plain style terms."""
        if self.style_layers is not None:
            missing = [n for n in self.style_layers if n not in layer_order]
            if missing:
                raise ValueError(f"style layers not in network order: {missing}")
            return tuple(self.style_layers)
        if self.use_all_layers:
            return tuple(layer_order)
        first_of_block = tuple(n for n in layer_order if n.endswith("_1"))
        return first_of_block or tuple(layer_order)


# ---------------------------------------------------------------------------
# elementary losses
# ---------------------------------------------------------------------------

def content_loss(f_o: np.ndarray, f_c: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared Frobenius distance between generated and content features."""
    f_o = np.asarray(f_o, dtype=np.float64)
    f_c = np.asarray(f_c, dtype=np.float64)
    if f_o.shape != f_c.shape:
        raise ShapeError(f"feature shapes differ: {f_o.shape} vs {f_c.shape}")
    diff = f_o - f_c
    return float(np.sum(diff * diff)), 2.0 * diff


def tv_loss(image: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared forward differences along both spatial axes."""
    x = tc.as_tensor(image)
    dh = x[:, 1:, :] - x[:, :-1, :]
    dw = x[:, :, 1:] - x[:, :, :-1]
    value = float(np.sum(dh * dh) + np.sum(dw * dw))
    grad = np.zeros_like(x)
    grad[:, 1:, :] += 2.0 * dh
    grad[:, :-1, :] -= 2.0 * dh
    grad[:, :, 1:] += 2.0 * dw
    grad[:, :, :-1] -= 2.0 * dw
    return value, grad


def total_loss(
    content: tuple[float, np.ndarray],
    style: tuple[float, np.ndarray],
    tv: tuple[float, np.ndarray],
    config: StyleConfig,
) -> tuple[float, np.ndarray]:
    """Linearly scaled sum alpha*L_content + beta*L_style + lambda*J."""
    value = config.alpha * content[0] + config.beta * style[0] + config.tv_weight * tv[0]
    grad = (
        config.alpha * content[1]
        + config.beta * style[1]
        + config.tv_weight * tv[1]
    )
    return value, grad


# ---------------------------------------------------------------------------
# Gram statistics
# ---------------------------------------------------------------------------

def gram(x: np.ndarray, shift: bool = False) -> np.ndarray:
    """Channel correlation matrix (1/HWC) * sum_hw x[c] x[c'].

    With ``shift`` the activations are shifted by -1 first, which keeps the
    correlations away from the sparse-activation degenerate region.
    """
    x = tc.as_tensor(x)
    c, h, w = x.shape
    xf = x.reshape(c, h * w)
    if shift:
        xf = xf - 1.0
    return (xf @ xf.T) / (h * w * c)


def chained_gram(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cross-layer correlation (1/HWC_x) * sum_hw (x-1)[c] (y-1)[c'].

    Both maps must already be spatially aligned; cross-pool pairs are
    average-pooled to the deeper layer's resolution before calling this.
    """
    x = tc.as_tensor(x)
    y = tc.as_tensor(y)
    if x.shape[1:] != y.shape[1:]:
        raise ShapeError(f"spatial dims differ: {x.shape[1:]} vs {y.shape[1:]}")
    cx, h, w = x.shape
    xf = x.reshape(cx, h * w) - 1.0
    yf = y.reshape(y.shape[0], h * w) - 1.0
    return (xf @ yf.T) / (h * w * cx)


def layer_weight(depth: int, total_depth: int) -> float:
    """Geometric style weight 2^(D - d) for a layer at depth d of D."""
    return 2.0 ** (total_depth - depth)


def geometric_layer_weights(
    active: Sequence[str],
    layer_order: Sequence[str],
    reverse: bool = False,
    normalize: bool = True,
) -> dict[str, float]:
    """Per-layer weights 2^(D - d(l)), optionally normalized to sum 1.

    d(l) counts 1 at the shallowest layer by default (fine texture gets the
    large weights); ``reverse`` counts from the deep end instead.
    """
    depth_of = {name: i + 1 for i, name in enumerate(layer_order)}
    total = len(layer_order)
    weights = {}
    for name in active:
        d = depth_of[name]
        if reverse:
            d = total + 1 - d
        weights[name] = layer_weight(d, total)
    if normalize:
        s = sum(weights.values())
        weights = {k: v / s for k, v in weights.items()}
    return weights


# ---------------------------------------------------------------------------
# masking helpers
# ---------------------------------------------------------------------------

def apply_mask(features: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Hadamard product of a scalar field with every channel of a feature map."""
    features = tc.as_tensor(features)
    mask = _check_mask_field(mask)
    if mask.shape != features.shape[1:]:
        raise ShapeError(
            f"mask {mask.shape} does not match feature spatial dims {features.shape[1:]}"
        )
    return features * mask[None, :, :]


def rescale_mask(mask: np.ndarray, spatial: tuple[int, int]) -> np.ndarray:
    """Bilinear reduction of an image-resolution mask to a layer's dims."""
    mask = _check_mask_field(mask)
    if mask.shape == tuple(spatial):
        return mask
    out = tc.resize_bilinear(mask[None, :, :], spatial[0], spatial[1])[0]
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# style loss
# ---------------------------------------------------------------------------

def _masked_gram_pair(xf, yf, weights_hw, norm):
    """Position-weighted cross Gram and the pieces its gradient needs."""
    if weights_hw is None:
        return (xf @ yf.T) / norm
    return ((xf * weights_hw) @ yf.T) / norm


def _align_to(deep: np.ndarray, shallow: np.ndarray) -> tuple[np.ndarray, int]:
    """Average-pool the shallower map down to the deeper map's dims."""
    pools = 0
    y = shallow
    while y.shape[1:] != deep.shape[1:]:
        if y.shape[1] < deep.shape[1] or y.shape[1] % 2 or y.shape[2] % 2:
            raise ShapeError(
                f"cannot align {shallow.shape[1:]} to {deep.shape[1:]} by 2x2 pooling"
            )
        y = tc.avgpool2x2(y)
        pools += 1
    return y, pools


def _unpool_grad(grad: np.ndarray, pools: int) -> np.ndarray:
    for _ in range(pools):
        grad = tc.avgpool2x2_backward(grad)
    return grad


class _StyleAccumulator:
    """Accumulates masked/shifted plain and chained Gram terms and grads."""

    def __init__(self, f_o, f_s, shift, mask_field):
        self.f_o = f_o
        self.f_s = f_s
        self.shift = shift
        self.mask_field = mask_field
        self.value = 0.0
        self.grads: dict[str, np.ndarray] = {}

    def _layer_mask(self, name):
        if self.mask_field is None:
            return None, 1.0
        m = rescale_mask(self.mask_field, self.f_o[name].shape[1:])
        return m.reshape(-1), float(m.mean())

    def _grad_into(self, name, g):
        if name in self.grads:
            self.grads[name] += g
        else:
            self.grads[name] = g

    def add_plain(self, name, weight):
        x = self.f_o[name]
        s = self.f_s[name]
        if x.shape[0] != s.shape[0]:
            raise ShapeError(
                f"channel mismatch at {name}: {x.shape[0]} vs {s.shape[0]}"
            )
        c, h, w = x.shape
        norm = h * w * c
        xf = x.reshape(c, h * w)
        if self.shift:
            xf = xf - 1.0
        m, rho = self._layer_mask(name)
        phi_o = _masked_gram_pair(xf, xf, m, norm)
        phi_s = gram(s, shift=self.shift)
        delta = phi_o - rho * phi_s
        self.value += weight * float(np.sum(delta * delta))
        g = (4.0 * weight / norm) * (delta @ xf)
        if m is not None:
            g = g * m
        self._grad_into(name, g.reshape(c, h, w))

    def add_chained(self, deep_name, shallow_name, weight):
        x = self.f_o[deep_name]
        y_raw = self.f_o[shallow_name]
        sx = self.f_s[deep_name]
        sy_raw = self.f_s[shallow_name]
        y, pools = _align_to(x, y_raw)
        sy, _ = _align_to(sx, sy_raw)
        cx, h, w = x.shape
        cy = y.shape[0]
        norm = h * w * cx
        xf = x.reshape(cx, h * w) - 1.0
        yf = y.reshape(cy, h * w) - 1.0
        m, rho = self._layer_mask(deep_name)
        phi_o = _masked_gram_pair(xf, yf, m, norm)
        phi_s = chained_gram(sx, sy)
        delta = phi_o - rho * phi_s
        self.value += weight * float(np.sum(delta * delta))
        gx = (2.0 * weight / norm) * (delta @ (yf * m if m is not None else yf))
        gy = (2.0 * weight / norm) * (delta.T @ (xf * m if m is not None else xf))
        self._grad_into(deep_name, gx.reshape(cx, h, w))
        self._grad_into(
            shallow_name, _unpool_grad(gy.reshape(cy, h, w), pools)
        )


def style_loss(
    f_o: Mapping[str, np.ndarray],
    f_s: Mapping[str, np.ndarray],
    config: StyleConfig,
    layer_order: Sequence[str],
    mask_field: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted Gram-matching loss over the active layers, plus chained terms.

    ``layer_order`` lists the network's style-capture layers shallow to deep;
    it defines both layer depth (for the geometric weights) and the adjacent
    pairs used by chained correlation.  ``mask_field`` overrides the mask in
    ``config`` (used by the n-ary path).
    """
    active = config.active_layers(layer_order)
    for name in active:
        if name not in f_o or name not in f_s:
            raise ValueError(f"layer {name!r} missing from captured features")
    if mask_field is None and config.mask is not None:
        mask_field = config.mask.coverage()

    weights = geometric_layer_weights(
        active, layer_order, reverse=config.reverse_layer_weights
    )
    acc = _StyleAccumulator(f_o, f_s, config.use_shift, mask_field)
    for name in active:
        acc.add_plain(name, weights[name])
    if config.use_chained:
        for shallow, deep in zip(active[:-1], active[1:]):
            acc.add_chained(deep, shallow, weights[deep])
    return acc.value, acc.grads


def nary_style_loss(
    f_o: Mapping[str, np.ndarray],
    styles: Sequence[Mapping[str, np.ndarray]],
    mask_set: MaskSet,
    config: StyleConfig,
    layer_order: Sequence[str],
) -> tuple[float, dict[str, np.ndarray]]:
    """Region-masked style loss against several styles at once.

    Regions that resolve to identical style features are merged (their masks
    summed) before computing the loss, so k regions sharing one style reduce
    to a single masked term with the union mask.
    """
    active = config.active_layers(layer_order)

    def same_style(a, b):
        return all(np.array_equal(a[n], b[n]) for n in active)

    groups: list[tuple[Mapping[str, np.ndarray], np.ndarray]] = []
    for mask, slot in zip(mask_set.regions, mask_set.style_of):
        if not 0 <= slot < len(styles):
            raise ValidationError(f"region style slot {slot} out of range")
        style = styles[slot]
        for i, (g_style, g_mask) in enumerate(groups):
            if same_style(g_style, style):
                groups[i] = (g_style, g_mask + mask)
                break
        else:
            groups.append((style, mask.astype(np.float64)))

    value = 0.0
    grads: dict[str, np.ndarray] = {}
    for style, mask in groups:
        v, g = style_loss(f_o, style, config, layer_order, mask_field=mask)
        value += v
        for name, arr in g.items():
            if name in grads:
                grads[name] += arr
            else:
                grads[name] = arr
    return value, grads
