"""VGG-style network definitions, portable weight loading, and the forward
and backward passes the engine needs.

Two families are defined: the 13-conv VGG-16 used by the optimization path,
and VGG-19 encoder slices (up to Relu_X_1) with mirrored decoders for the
feed-forward path.  Weights come from "SFW1" files, a small little-endian
container of named float32 tensors with a trailing CRC32, optionally
accompanied by a plain-text manifest listing expected names/shapes and the
preprocessing means.

Images enter the networks in BGR order, scaled to 0-255, with per-channel
means subtracted (the convention pretrained VGG weights assume); the means
travel with the weight file so the engine itself stays weight-agnostic.
"""

from __future__ import annotations

import io
import os
import re
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .errors import FormatError, ShapeError, ValidationError

IMAGENET_MEAN_BGR = (103.939, 116.779, 123.68)

_VGG16_BLOCKS = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))
_VGG19_BLOCKS = ((64, 2), (128, 2), (256, 4), (512, 4), (512, 4))
LEVEL_CHANNELS = (64, 128, 256, 512, 512)


# ---------------------------------------------------------------------------
# network specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Layer:
    kind: str  # conv | relu | pool | upsample
    name: str
    in_channels: int = 0
    out_channels: int = 0

    @property
    def weight_name(self) -> str:
        return f"{self.name}.weight"

    @property
    def bias_name(self) -> str:
        return f"{self.name}.bias"


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[Layer, ...]

    def layer_names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.layers)

    def conv_layers(self) -> tuple[Layer, ...]:
        return tuple(l for l in self.layers if l.kind == "conv")

    def relu_names(self) -> tuple[str, ...]:
        """Post-activation capture names, shallow to deep."""
        return tuple(l.name for l in self.layers if l.kind == "relu")

    def validate_weights(self, weights: "WeightStore") -> None:
        for l in self.conv_layers():
            for key, shape in (
                (l.weight_name, (l.out_channels, l.in_channels, 3, 3)),
                (l.bias_name, (l.out_channels,)),
            ):
                if key not in weights:
                    raise ValidationError(f"{self.name}: missing weight entry {key!r}")
                if weights[key].shape != shape:
                    raise ValidationError(
                        f"{self.name}: {key!r} has shape {weights[key].shape}, "
                        f"expected {shape}"
                    )


def _vgg_layers(blocks, in_c=3, max_block=None, last_conv_of_last_block=None):
    layers = []
    c = in_c
    for b, (width, n_convs) in enumerate(blocks, start=1):
        if max_block is not None and b > max_block:
            break
        stop = n_convs
        if max_block is not None and b == max_block and last_conv_of_last_block:
            stop = last_conv_of_last_block
        for i in range(1, stop + 1):
            layers.append(Layer("conv", f"conv{b}_{i}", in_channels=c, out_channels=width))
            layers.append(Layer("relu", f"relu{b}_{i}"))
            c = width
        if max_block is not None and b == max_block:
            break
        if b < len(blocks):
            layers.append(Layer("pool", f"pool{b}"))
    return tuple(layers)


def vgg16() -> NetworkSpec:
    """The 13-conv VGG-16 feature stack (2-2-3-3-3 blocks)."""
    return NetworkSpec(name="vgg16", layers=_vgg_layers(_VGG16_BLOCKS))


def vgg19_encoder(level: int) -> NetworkSpec:
    """VGG-19 slice ending exactly at relu<level>_1."""
    if not 1 <= level <= 5:
        raise ValueError(f"encoder level must be 1..5, got {level}")
    layers = _vgg_layers(_VGG19_BLOCKS, max_block=level, last_conv_of_last_block=1)
    return NetworkSpec(name=f"vgg19_enc{level}", layers=layers)


def vgg19_decoder(level: int) -> NetworkSpec:
    """Mirror of the level's encoder: upsampling replaces pooling, channel
    counts reverse, and every conv but the last is followed by a ReLU."""
    enc = vgg19_encoder(level)
    mirrored: list[Layer] = []
    for l in reversed(enc.layers):
        if l.kind == "conv":
            mirrored.append(
                Layer(
                    "conv",
                    f"dec{level}_{l.name}",
                    in_channels=l.out_channels,
                    out_channels=l.in_channels,
                )
            )
        elif l.kind == "pool":
            mirrored.append(Layer("upsample", f"dec{level}_up{l.name[-1]}"))

    layers: list[Layer] = []
    last_conv = max(i for i, l in enumerate(mirrored) if l.kind == "conv")
    for i, l in enumerate(mirrored):
        layers.append(l)
        if l.kind == "conv" and i != last_conv:
            layers.append(Layer("relu", f"{l.name}_relu"))
    return NetworkSpec(name=f"vgg19_dec{level}", layers=tuple(layers))


def canonical_layer_name(name: str, valid: tuple[str, ...]) -> str:
    """Resolve user-supplied layer names like 'Relu_4_1' to spec names."""
    if name in valid:
        return name

    def squash(s: str) -> str:
        return re.sub(r"[_\-\s]", "", s.lower())

    matches = [v for v in valid if squash(v) == squash(name)]
    if len(matches) == 1:
        return matches[0]
    raise ValueError(f"unknown layer name {name!r}; valid names: {list(valid)}")


# ---------------------------------------------------------------------------
# weight storage ("SFW1" container + plain-text manifest)
# ---------------------------------------------------------------------------

_MAGIC = b"SFW1"
_VERSION = 1


@dataclass
class WeightStore:
    """Named tensor bundle; immutable after load, shareable across threads."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    mean_bgr: tuple[float, float, float] = IMAGENET_MEAN_BGR
    source: str = ""

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise KeyError(f"weight entry {name!r} not found in store") from None

    def __len__(self) -> int:
        return len(self.tensors)


def write_weights(
    tensors: dict[str, np.ndarray],
    path,
    mean_bgr=IMAGENET_MEAN_BGR,
    source: str = "",
    manifest: bool = True,
) -> None:
    """Serialize tensors to an SFW1 file (float32 payloads, trailing CRC32)
    and, by default, a ``<path>.manifest`` sidecar."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<II", _VERSION, len(tensors)))
    entries = []
    for name, arr in tensors.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", 0, arr32.ndim))
        buf.write(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
        payload = arr32.tobytes()
        buf.write(payload)
        entries.append((name, arr32.shape, zlib.crc32(payload) & 0xFFFFFFFF))
    data = buf.getvalue()
    data += struct.pack("<I", zlib.crc32(data) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(data)
    if manifest:
        lines = [f"source = {source or 'unknown'}"]
        lines.append("mean_bgr = " + " ".join(repr(float(m)) for m in mean_bgr))
        for name, shape, crc in entries:
            dims = "x".join(str(d) for d in shape) if shape else "1"
            lines.append(f"tensor = {name} {dims} crc32=0x{crc:08X}")
        with open(f"{path}.manifest", "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")


def parse_manifest(path) -> dict:
    """Parse the plain-text key-value manifest into source/means/tensor list."""
    out = {"source": "", "mean_bgr": None, "tensors": []}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "source":
                out["source"] = value
            elif key == "mean_bgr":
                parts = value.split()
                if len(parts) != 3:
                    raise FormatError(f"{path}:{lineno}: mean_bgr needs 3 values")
                out["mean_bgr"] = tuple(float(p) for p in parts)
            elif key == "tensor":
                m = re.fullmatch(
                    r"(\S+)\s+([0-9x]+)(?:\s+crc32=0x([0-9a-fA-F]{8}))?", value
                )
                if not m:
                    raise FormatError(f"{path}:{lineno}: bad tensor entry {value!r}")
                shape = tuple(int(d) for d in m.group(2).split("x"))
                crc = int(m.group(3), 16) if m.group(3) else None
                out["tensors"].append((m.group(1), shape, crc))
            else:
                raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
    return out


def load_weights(path, manifest_path=None) -> WeightStore:
    """Load an SFW1 weight file, verifying structure and the trailing CRC32.

    If ``manifest_path`` (default: ``<path>.manifest`` when present) is
    given, every listed tensor must exist with the listed shape, and the
    preprocessing means are taken from it.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != _MAGIC:
        raise FormatError(f"{path}: not an SFW1 file (bad magic)")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise FormatError(
            f"{path}: CRC mismatch (stored 0x{stored_crc:08X}, "
            f"computed 0x{actual_crc:08X})"
        )
    buf = io.BytesIO(data[:-4])
    buf.seek(4)

    def read(fmt):
        size = struct.calcsize(fmt)
        raw = buf.read(size)
        if len(raw) != size:
            raise FormatError(f"{path}: truncated file")
        return struct.unpack(fmt, raw)

    version, count = read("<II")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = read("<H")
        name = buf.read(name_len).decode("utf-8")
        dtype, ndim = read("<BB")
        if dtype != 0:
            raise FormatError(f"{path}: tensor {name!r} has unsupported dtype {dtype}")
        dims = read(f"<{ndim}I") if ndim else ()
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = buf.read(4 * n)
        if len(payload) != 4 * n:
            raise FormatError(f"{path}: truncated payload for tensor {name!r}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
        tensors[name] = arr
    if buf.read(1):
        raise FormatError(f"{path}: trailing bytes after last tensor")

    store = WeightStore(tensors=tensors)
    if manifest_path is None:
        candidate = f"{path}.manifest"
        manifest_path = candidate if os.path.exists(candidate) else None
    if manifest_path is not None:
        man = parse_manifest(manifest_path)
        if man["mean_bgr"] is not None:
            store.mean_bgr = man["mean_bgr"]
        store.source = man["source"]
        for name, shape, _crc in man["tensors"]:
            if name not in tensors:
                raise ValidationError(f"manifest entry {name!r} missing from {path}")
            if tensors[name].shape != shape:
                raise ValidationError(
                    f"tensor {name!r} has shape {tensors[name].shape}, "
                    f"manifest expects {shape}"
                )
        listed = {name for name, _, _ in man["tensors"]}
        extra = sorted(set(tensors) - listed)
        if extra:
            raise ValidationError(f"tensors not listed in manifest: {extra}")
    return store


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def preprocess(image_rgb: np.ndarray, mean_bgr=IMAGENET_MEAN_BGR) -> np.ndarray:
    """[0,1] RGB -> mean-subtracted 0-255 BGR (the networks' input space)."""
    t = tc.as_tensor(image_rgb)
    if t.shape[0] != 3:
        raise ShapeError(f"expected a 3-channel image, got C={t.shape[0]}")
    bgr = t[::-1] * 255.0
    return bgr - np.asarray(mean_bgr, dtype=np.float64)[:, None, None]


def postprocess(t: np.ndarray, mean_bgr=IMAGENET_MEAN_BGR) -> np.ndarray:
    """Exact inverse of :func:`preprocess`."""
    t = tc.as_tensor(t)
    bgr = t + np.asarray(mean_bgr, dtype=np.float64)[:, None, None]
    return np.ascontiguousarray(bgr[::-1] / 255.0)


def pad_to_multiple(t: np.ndarray, multiple: int = 32) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad bottom/right so H and W divide ``multiple``."""
    t = tc.as_tensor(t)
    _, h, w = t.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return t, (h, w)
    mode = "reflect" if min(h, w) > max(ph, pw) else "edge"
    return np.pad(t, ((0, 0), (0, ph), (0, pw)), mode=mode), (h, w)


def crop_to(t: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    return np.ascontiguousarray(t[:, :h, :w])


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class FeatureMaps:
    """Captured activations plus the tape the backward pass replays."""

    activations: dict[str, np.ndarray]
    tape: list | None
    input_shape: tuple[int, int, int]


def forward_collect(
    net: NetworkSpec,
    weights: WeightStore,
    image: np.ndarray,
    capture,
    want_tape: bool = True,
) -> FeatureMaps:
    """Run the network, returning the requested activations (and a tape).

    Traversal stops once every requested layer has been captured.
    """
    x = tc.as_tensor(image)
    names = net.layer_names()
    capture = {canonical_layer_name(c, names) for c in capture}
    if not capture:
        raise ValueError("capture set must not be empty")

    convs = net.conv_layers()
    if convs and x.shape[0] != convs[0].in_channels:
        raise ShapeError(
            f"{net.name} expects {convs[0].in_channels} input channels, got {x.shape[0]}"
        )

    activations: dict[str, np.ndarray] = {}
    tape = [] if want_tape else None
    pending = set(capture)
    input_shape = x.shape
    for layer in net.layers:
        saved = None
        if layer.kind == "conv":
            x = tc.conv2d_forward(x, weights[layer.weight_name], weights[layer.bias_name])
        elif layer.kind == "relu":
            saved = x
            x = tc.relu(x)
        elif layer.kind == "pool":
            saved_shape = x.shape
            x, idx = tc.maxpool2x2(x)
            saved = (idx, saved_shape)
        elif layer.kind == "upsample":
            x = tc.upsample_nearest2x(x)
        else:  # pragma: no cover - specs are built internally
            raise ValueError(f"unknown layer kind {layer.kind!r}")
        if want_tape:
            tape.append((layer, saved))
        if layer.name in pending:
            activations[layer.name] = x
            pending.discard(layer.name)
        if not pending:
            break
    if pending:
        raise ValueError(f"capture points never reached: {sorted(pending)}")
    return FeatureMaps(activations=activations, tape=tape, input_shape=input_shape)


def backward_to_input(
    net: NetworkSpec,
    weights: WeightStore,
    features: FeatureMaps,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Chain-rule the per-layer gradients back to the input image."""
    if features.tape is None:
        raise ValueError("forward pass was run without a tape")
    names = net.layer_names()
    grads = {canonical_layer_name(k, names): v for k, v in grads.items()}
    for name, g in grads.items():
        if name not in features.activations:
            raise ValueError(f"gradient for {name!r}, which was not captured")
        if np.shape(g) != features.activations[name].shape:
            raise ShapeError(
                f"gradient for {name!r} has shape {np.shape(g)}, activation is "
                f"{features.activations[name].shape}"
            )

    g = None
    for layer, saved in reversed(features.tape):
        if layer.name in grads:
            if g is None:
                g = np.zeros_like(grads[layer.name])
            g = g + grads[layer.name]
        if g is None:
            continue
        if layer.kind == "conv":
            g = tc.conv2d_backward(
                np.empty((layer.in_channels,) + g.shape[1:]),
                weights[layer.weight_name],
                g,
            )
        elif layer.kind == "relu":
            g = tc.relu_backward(saved, g)
        elif layer.kind == "pool":
            idx, in_shape = saved
            g = tc.maxpool2x2_backward(idx, g, in_shape)
        else:
            raise ValueError(f"no backward rule for layer kind {layer.kind!r}")
    if g is None:
        return np.zeros(features.input_shape)
    return g


def decode(level: int, weights: WeightStore, features: np.ndarray) -> np.ndarray:
    """Run the level's mirrored decoder on Relu_<level>_1-shaped features."""
    if not 1 <= level <= 5:
        raise ValueError(f"decoder level must be 1..5, got {level}")
    f = tc.as_tensor(features)
    want_c = LEVEL_CHANNELS[level - 1]
    if f.shape[0] != want_c:
        raise ShapeError(
            f"level {level} decoder expects {want_c} channels, got {f.shape[0]}"
        )
    dec = vgg19_decoder(level)
    last = dec.layers[-1].name
    return forward_collect(dec, weights, f, {last}, want_tape=False).activations[last]
