"""The recognition net: a small convolutional classifier over [0,1] images.

Architectures are flat lists of layer specs (Conv / ReLU / MaxPool2 /
Flatten / Dense) ending in a Dense head with one output per class. The
default "SmallNet-8" stack has three conv stages, so early, middle and
late layers exist as distinct optimization targets.

Checkpoints use the versioned "SOPT" container: magic, u16 version,
architecture descriptor (layer tags and dims as little-endian u32), a
length-prefixed UTF-8 class-name table, then parameter payloads in
declaration order as TENS1 blocks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import BadMagicError, ShapeError, VersionMismatchError
from .imageio import read_tens1, write_tens1, _read_exact

CHECKPOINT_MAGIC = b"SOPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    out_features: int


LayerSpec = Union[Conv, ReLU, MaxPool2, Flatten, Dense]

_LAYER_TAGS = {Conv: 1, ReLU: 2, MaxPool2: 3, Flatten: 4, Dense: 5}


def default_layers(num_classes: int) -> list[LayerSpec]:
    """Three conv stages then a linear head ("SmallNet-8")."""
    return [
        Conv(16, 3, 1, 1), ReLU(), MaxPool2(),
        Conv(32, 3, 1, 1), ReLU(), MaxPool2(),
        Conv(64, 3, 1, 1), ReLU(), MaxPool2(),
        Flatten(), Dense(num_classes),
    ]


def infer_shapes(layers: Sequence[LayerSpec], input_shape: tuple[int, int, int]) -> list[tuple[int, ...]]:
    """Output shape (without batch dim) after each layer.

    Raises ShapeError naming the first layer whose composition is invalid.
    """
    if len(input_shape) != 3 or any(d < 1 for d in input_shape):
        raise ShapeError(f"input shape must be (C, H, W) of positive dims, got {input_shape}")
    if not layers:
        raise ShapeError("architecture has no layers")
    shapes: list[tuple[int, ...]] = []
    cur: tuple[int, ...] = tuple(input_shape)
    for i, spec in enumerate(layers):
        name = type(spec).__name__
        if isinstance(spec, Conv):
            if len(cur) != 3:
                raise ShapeError(f"layer {i} (Conv): needs a C,H,W input, got shape {cur}")
            c, h, w = cur
            oh = (h + 2 * spec.pad - spec.kernel) // spec.stride + 1
            ow = (w + 2 * spec.pad - spec.kernel) // spec.stride + 1
            if spec.kernel > h + 2 * spec.pad or spec.kernel > w + 2 * spec.pad:
                raise ShapeError(f"layer {i} (Conv): kernel {spec.kernel} exceeds padded input {h}x{w}")
            if oh < 1 or ow < 1 or spec.out_channels < 1 or spec.stride < 1 or spec.pad < 0:
                raise ShapeError(f"layer {i} (Conv): invalid geometry for input {cur}")
            cur = (spec.out_channels, oh, ow)
        elif isinstance(spec, ReLU):
            pass
        elif isinstance(spec, MaxPool2):
            if len(cur) != 3:
                raise ShapeError(f"layer {i} (MaxPool2): needs a C,H,W input, got shape {cur}")
            c, h, w = cur
            if h % 2 or w % 2:
                raise ShapeError(f"layer {i} (MaxPool2): spatial dims {h}x{w} must be even")
            cur = (c, h // 2, w // 2)
        elif isinstance(spec, Flatten):
            cur = (int(np.prod(cur)),)
        elif isinstance(spec, Dense):
            if len(cur) != 1:
                raise ShapeError(f"layer {i} (Dense): input must be flattened first, got shape {cur}")
            if spec.out_features < 1:
                raise ShapeError(f"layer {i} (Dense): out_features must be positive")
            cur = (spec.out_features,)
        else:
            raise ShapeError(f"layer {i}: unknown layer spec {name}")
        shapes.append(cur)
    if not isinstance(layers[-1], Dense):
        raise ShapeError(f"layer {len(layers) - 1}: architecture must end in Dense")
    return shapes


@dataclass
class RecognitionNet:
    """Layer specs plus their parameter tensors and the class-name list."""

    layers: list[LayerSpec]
    params: list[list[Tensor]]  # [] for parameterless layers, [w, b] otherwise
    input_shape: tuple[int, int, int]
    class_names: list[str]
    layer_shapes: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def conv_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if isinstance(l, Conv)]

    def last_conv_layer(self) -> int:
        convs = self.conv_layers()
        if not convs:
            raise ShapeError("net has no conv layers")
        return convs[-1]

    def parameter_tensors(self) -> list[Tensor]:
        return [p for group in self.params for p in group]

    def copy(self) -> "RecognitionNet":
        return RecognitionNet(
            layers=list(self.layers),
            params=[[Tensor(p.data.copy()) for p in group] for group in self.params],
            input_shape=self.input_shape,
            class_names=list(self.class_names),
            layer_shapes=list(self.layer_shapes),
        )

    def class_index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise ShapeError(f"unknown class name {name!r}; known: {self.class_names}") from None


@dataclass
class ActivationRecord:
    """Post-activation tensor of every layer, plus logits and probs."""

    activations: dict[int, Tensor]
    logits: Tensor
    probs: Tensor


def build_net(layers: Sequence[LayerSpec], input_shape: tuple[int, int, int],
              class_names: Sequence[str], seed: int = 0) -> RecognitionNet:
    """Initialize parameters: fan-in scaled Gaussian weights, zero biases."""
    class_names = [str(n) for n in class_names]
    shapes = infer_shapes(layers, input_shape)
    if shapes[-1] != (len(class_names),):
        raise ShapeError(
            f"final Dense features {shapes[-1][0]} != class count {len(class_names)}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    params: list[list[Tensor]] = []
    cur = tuple(input_shape)
    for spec, out_shape in zip(layers, shapes):
        if isinstance(spec, Conv):
            fan_in = cur[0] * spec.kernel * spec.kernel
            std = float(np.sqrt(2.0 / fan_in))
            w = rng.normal(0.0, std, size=(spec.out_channels, cur[0], spec.kernel, spec.kernel))
            params.append([Tensor(w.astype(np.float32)),
                           Tensor(np.zeros(spec.out_channels, dtype=np.float32))])
        elif isinstance(spec, Dense):
            fan_in = cur[0]
            std = float(np.sqrt(2.0 / fan_in))
            w = rng.normal(0.0, std, size=(fan_in, spec.out_features))
            params.append([Tensor(w.astype(np.float32)),
                           Tensor(np.zeros(spec.out_features, dtype=np.float32))])
        else:
            params.append([])
        cur = out_shape
    return RecognitionNet(list(layers), params, tuple(input_shape), class_names, shapes)


def forward(net: RecognitionNet, images) -> ActivationRecord:
    """Run a batch through the net, retaining every layer's output.

    ``images`` is an NCHW Tensor or array whose pixels must lie in [0, 1].
    Records onto the active tape, so the result is differentiable when one
    is open.
    """
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
    if x.ndim != 4:
        raise ShapeError(f"forward expects NCHW images, got shape {x.shape}")
    if tuple(x.shape[1:]) != tuple(net.input_shape):
        raise ShapeError(
            f"image shape {tuple(x.shape[1:])} != net input shape {net.input_shape}")
    lo, hi = float(x.data.min()), float(x.data.max())
    if lo < -1e-6 or hi > 1.0 + 1e-6:
        raise ShapeError(f"pixel values must be in [0, 1], got range [{lo:.6g}, {hi:.6g}]")

    activations: dict[int, Tensor] = {}
    n = x.shape[0]
    cur = x
    for i, spec in enumerate(net.layers):
        if isinstance(spec, Conv):
            w, b = net.params[i]
            cur = ad.conv2d(cur, w, b, stride=spec.stride, pad=spec.pad)
        elif isinstance(spec, ReLU):
            cur = ad.relu(cur)
        elif isinstance(spec, MaxPool2):
            cur = ad.pool2d(cur)
        elif isinstance(spec, Flatten):
            cur = ad.reshape(cur, (n, int(np.prod(cur.shape[1:]))))
        elif isinstance(spec, Dense):
            w, b = net.params[i]
            cur = ad.affine(cur, w, b)
        activations[i] = cur
    logits = cur
    probs = ad.softmax(logits, axis=1)
    return ActivationRecord(activations, logits, probs)


def predict_probs(net: RecognitionNet, images, batch_size: int = 256) -> np.ndarray:
    """Forward-only class probabilities, chunked for large batches."""
    images = np.asarray(images, dtype=np.float32)
    out = []
    for start in range(0, images.shape[0], batch_size):
        rec = forward(net, images[start:start + batch_size])
        out.append(rec.probs.data)
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net: RecognitionNet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<3I", *net.input_shape))
        fh.write(struct.pack("<I", len(net.layers)))
        for spec in net.layers:
            fh.write(struct.pack("<I", _LAYER_TAGS[type(spec)]))
            if isinstance(spec, Conv):
                fh.write(struct.pack("<4I", spec.out_channels, spec.kernel, spec.stride, spec.pad))
            elif isinstance(spec, Dense):
                fh.write(struct.pack("<I", spec.out_features))
        fh.write(struct.pack("<I", len(net.class_names)))
        for name in net.class_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        for group in net.params:
            for p in group:
                write_tens1(fh, p.data)


def load_checkpoint(path) -> RecognitionNet:
    """Load a SOPT checkpoint; never returns a partially read net."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "checkpoint magic")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"expected checkpoint magic {CHECKPOINT_MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "checkpoint version"))
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(f"checkpoint version {version} not supported")
        input_shape = struct.unpack("<3I", _read_exact(fh, 12, "input shape"))
        (n_layers,) = struct.unpack("<I", _read_exact(fh, 4, "layer count"))
        layers: list[LayerSpec] = []
        for _ in range(n_layers):
            (tag,) = struct.unpack("<I", _read_exact(fh, 4, "layer tag"))
            if tag == 1:
                oc, k, s, p = struct.unpack("<4I", _read_exact(fh, 16, "conv dims"))
                layers.append(Conv(oc, k, s, p))
            elif tag == 2:
                layers.append(ReLU())
            elif tag == 3:
                layers.append(MaxPool2())
            elif tag == 4:
                layers.append(Flatten())
            elif tag == 5:
                (m,) = struct.unpack("<I", _read_exact(fh, 4, "dense dims"))
                layers.append(Dense(m))
            else:
                raise VersionMismatchError(f"unknown layer tag {tag}")
        (n_classes,) = struct.unpack("<I", _read_exact(fh, 4, "class count"))
        class_names = []
        for _ in range(n_classes):
            (ln,) = struct.unpack("<I", _read_exact(fh, 4, "class name length"))
            class_names.append(_read_exact(fh, ln, "class name").decode("utf-8"))
        shapes = infer_shapes(layers, input_shape)
        params: list[list[Tensor]] = []
        cur = tuple(input_shape)
        for spec, out_shape in zip(layers, shapes):
            if isinstance(spec, (Conv, Dense)):
                w = read_tens1(fh)
                b = read_tens1(fh)
                params.append([Tensor(w), Tensor(b)])
            else:
                params.append([])
            cur = out_shape
    net = RecognitionNet(layers, params, tuple(int(d) for d in input_shape), class_names, shapes)
    _validate_params(net)
    return net


def _validate_params(net: RecognitionNet) -> None:
    cur = tuple(net.input_shape)
    for i, (spec, group) in enumerate(zip(net.layers, net.params)):
        if isinstance(spec, Conv):
            want_w = (spec.out_channels, cur[0], spec.kernel, spec.kernel)
            if group[0].shape != want_w or group[1].shape != (spec.out_channels,):
                raise ShapeError(f"layer {i} (Conv): parameter shapes do not match the spec")
        elif isinstance(spec, Dense):
            want_w = (cur[0], spec.out_features)
            if group[0].shape != want_w or group[1].shape != (spec.out_features,):
                raise ShapeError(f"layer {i} (Dense): parameter shapes do not match the spec")
        cur = net.layer_shapes[i]


def describe(net: RecognitionNet) -> str:
    lines = [f"input {net.input_shape}, classes {net.class_names}"]
    for i, (spec, shape) in enumerate(zip(net.layers, net.layer_shapes)):
        n_par = sum(p.size for p in net.params[i])
        lines.append(f"  {i:2d} {type(spec).__name__:<9s} -> {shape} ({n_par} params)")
    return "\n".join(lines)
