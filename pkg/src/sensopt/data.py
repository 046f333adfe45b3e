"""Art-free training data, the training loop, and the evaluators.

The built-in generator rasterizes parametric shapes (circle, square,
triangle, cross, ring, stripes, checker, star) with 4x supersampled
anti-aliasing, jittered position/scale/rotation and randomized colors, so
the corpus provably contains no artwork. External photo corpora can be
ingested through ``load_manifest`` instead (manifest.csv plus binary
PGM/PPM files).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import (
    LabelError,
    ManifestError,
    MissingFileError,
    NonFiniteError,
    ShapeError,
    TrainingDivergedError,
)
from .imageio import image_path_suffix, read_image, write_image
from .nets import RecognitionNet, forward, predict_probs

ALL_CLASSES = ("checker", "circle", "cross", "ring", "square", "star", "stripes", "triangle")

_FULL_FIELD = {"stripes", "checker"}  # textures that fill the frame


@dataclass
class LabeledImage:
    image: Tensor  # CHW in [0, 1]
    label: int
    id: str


@dataclass(frozen=True)
class ShapesSpec:
    """Recipe for the synthetic shape corpus.

    ``classes`` is normalized to sorted order; labels index into it.
    Position jitter is in units of the half-image, scale is the fraction
    of the half-image the shape radius covers, rotation in radians.
    """

    classes: tuple[str, ...] = ALL_CLASSES
    size: int = 32
    color_mode: str = "rgb"
    position_jitter: float = 0.15
    scale_range: tuple[float, float] = (0.55, 0.9)
    rotation_jitter: float = math.pi
    noise_std: float = 0.05
    fg: tuple[float, ...] | None = None  # fixed foreground color, None = random
    bg: tuple[float, ...] | None = None

    def __post_init__(self):
        unknown = sorted(set(self.classes) - set(ALL_CLASSES))
        if unknown:
            raise ShapeError(f"unknown shape classes {unknown}; valid: {sorted(ALL_CLASSES)}")
        if len(set(self.classes)) < 2:
            raise ShapeError("need at least 2 shape classes")
        if self.size < 16:
            raise ShapeError(f"image size must be >= 16, got {self.size}")
        if self.color_mode not in ("gray", "rgb"):
            raise ShapeError(f"color mode must be 'gray' or 'rgb', got {self.color_mode!r}")
        if not (0 < self.scale_range[0] <= self.scale_range[1]):
            raise ShapeError(f"bad scale range {self.scale_range}")
        object.__setattr__(self, "classes", tuple(sorted(set(self.classes))))

    @property
    def channels(self) -> int:
        return 1 if self.color_mode == "gray" else 3

    @property
    def class_names(self) -> list[str]:
        return list(self.classes)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ShapeError("epochs and batch size must be positive")
        if self.learning_rate <= 0 or self.momentum < 0:
            raise ShapeError("learning rate must be positive, momentum non-negative")
        if not (0.0 < self.val_fraction < 1.0):
            raise ShapeError(f"validation fraction must be in (0, 1), got {self.val_fraction}")


# ---------------------------------------------------------------------------
# rasterizer


def _point_in_polygon(x: np.ndarray, y: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Even-odd rule, vectorized over the pixel grid."""
    inside = np.zeros(x.shape, dtype=bool)
    n = len(verts)
    for k in range(n):
        x0, y0 = verts[k]
        x1, y1 = verts[(k + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = (x1 - x0) * (y - y0) / (y1 - y0) + x0
        inside ^= crosses & (x < xi)
    return inside


def _star_vertices() -> np.ndarray:
    inner = math.cos(math.radians(72)) / math.cos(math.radians(36))
    pts = []
    for k in range(10):
        ang = -math.pi / 2 + k * math.pi / 5
        r = 1.0 if k % 2 == 0 else inner
        pts.append((r * math.cos(ang), r * math.sin(ang)))
    return np.array(pts)


def _triangle_vertices() -> np.ndarray:
    pts = []
    for k in range(3):
        ang = -math.pi / 2 + k * 2 * math.pi / 3
        pts.append((math.cos(ang), math.sin(ang)))
    return np.array(pts)


_STAR = _star_vertices()
_TRIANGLE = _triangle_vertices()


def _shape_mask(name: str, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
    """Canonical coverage mask; shapes have nominal radius 1."""
    if name == "circle":
        return cx * cx + cy * cy <= 1.0
    if name == "ring":
        r2 = cx * cx + cy * cy
        return (r2 <= 1.0) & (r2 >= 0.55 ** 2)
    if name == "square":
        return np.maximum(np.abs(cx), np.abs(cy)) <= 0.8
    if name == "cross":
        return ((np.abs(cx) <= 0.32) & (np.abs(cy) <= 1.0)) | \
               ((np.abs(cy) <= 0.32) & (np.abs(cx) <= 1.0))
    if name == "triangle":
        return _point_in_polygon(cx, cy, _TRIANGLE)
    if name == "star":
        return _point_in_polygon(cx, cy, _STAR)
    if name == "stripes":
        return np.mod(cx / 0.7, 1.0) < 0.5
    if name == "checker":
        return np.mod(np.floor(cx / 0.7) + np.floor(cy / 0.7), 2) == 0
    raise ShapeError(f"unknown shape class {name!r}")


_SUPERSAMPLE = 4


def render_shape(spec: ShapesSpec, name: str, rng: np.random.Generator) -> np.ndarray:
    """One anti-aliased CHW image; all randomness drawn from ``rng``."""
    s = spec.size
    hi = s * _SUPERSAMPLE
    # pixel-center coordinates in [-1, 1]
    axis = (np.arange(hi, dtype=np.float64) + 0.5) / hi * 2.0 - 1.0
    u, v = np.meshgrid(axis, axis)

    ox, oy = rng.uniform(-spec.position_jitter, spec.position_jitter, size=2)
    theta = rng.uniform(-spec.rotation_jitter, spec.rotation_jitter)
    scl = rng.uniform(spec.scale_range[0], spec.scale_range[1])
    if name in _FULL_FIELD:
        ox = oy = 0.0  # texture classes jitter through phase/rotation only
        qx, qy = u + rng.uniform(0, 1), v + rng.uniform(0, 1)
    else:
        qx, qy = u - ox, v - oy
    ct, st = math.cos(theta), math.sin(theta)
    cx = (ct * qx + st * qy) / scl
    cy = (-st * qx + ct * qy) / scl

    mask = _shape_mask(name, cx, cy).astype(np.float64)
    cov = mask.reshape(s, _SUPERSAMPLE, s, _SUPERSAMPLE).mean(axis=(1, 3))

    c = spec.channels
    if spec.bg is not None:
        bg = np.asarray(spec.bg, dtype=np.float64).reshape(c)
    else:
        bg = rng.uniform(0.0, 1.0, size=c)
    if spec.fg is not None:
        fg = np.asarray(spec.fg, dtype=np.float64).reshape(c)
    else:
        # circular shift by ~half the range guarantees channelwise contrast
        fg = np.mod(bg + 0.5 + rng.uniform(-0.15, 0.15, size=c), 1.0)

    bg_field = bg[:, None, None] + spec.noise_std * rng.standard_normal((c, s, s))
    bg_field = np.clip(bg_field, 0.0, 1.0)
    img = cov[None, :, :] * fg[:, None, None] + (1.0 - cov[None, :, :]) * bg_field
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_shapes(spec: ShapesSpec, n_per_class: int, seed: int = 0) -> list[LabeledImage]:
    """Exactly ``n_per_class`` images per class; pure function of its inputs.

    Each image draws from its own seeded stream, so generation order (or a
    parallel implementation) cannot change the pixels.
    """
    if n_per_class < 1:
        raise ShapeError("n_per_class must be >= 1")
    children = np.random.SeedSequence(seed).spawn(len(spec.classes) * n_per_class)
    out: list[LabeledImage] = []
    k = 0
    for label, name in enumerate(spec.classes):
        for i in range(n_per_class):
            rng = np.random.default_rng(children[k])
            k += 1
            img = render_shape(spec, name, rng)
            out.append(LabeledImage(Tensor(img), label, f"{name}-{i:05d}"))
    return out


def images_array(data: Sequence[LabeledImage]) -> np.ndarray:
    return np.stack([d.image.data for d in data], axis=0)


def labels_array(data: Sequence[LabeledImage]) -> np.ndarray:
    return np.asarray([d.label for d in data], dtype=np.int64)


# ---------------------------------------------------------------------------
# manifest corpora


def save_manifest(directory, data: Sequence[LabeledImage], class_names: Sequence[str]) -> None:
    """Write images plus manifest.csv so ``load_manifest`` can read them back."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, item in enumerate(data):
        suffix = image_path_suffix(item.image.shape[0])
        fname = item.id.replace("/", "_")
        if not fname.endswith(suffix):
            fname += suffix
        write_image(directory / fname, item.image.data)
        rows.append((fname, class_names[item.label]))
    with open(directory / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label"])
        writer.writerows(rows)


def manifest_class_names(directory) -> list[str]:
    directory = Path(directory)
    path = directory / "manifest.csv"
    if not path.exists():
        raise ManifestError(f"no manifest.csv in {directory}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["filename", "label"]:
            raise ManifestError(f"malformed manifest header {header}, expected filename,label")
        labels = sorted({row[1] for row in reader if row})
    return labels


def load_manifest(directory, class_names: Sequence[str] | None = None) -> list[LabeledImage]:
    """Read a manifest corpus in manifest order.

    Labels map through the sorted unique label names, or through
    ``class_names`` when given (a label outside it raises LabelError).
    """
    directory = Path(directory)
    path = directory / "manifest.csv"
    if not path.exists():
        raise ManifestError(f"no manifest.csv in {directory}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["filename", "label"]:
            raise ManifestError(f"malformed manifest header {header}, expected filename,label")
        rows = [row for row in reader if row]
    for k, row in enumerate(rows):
        if len(row) != 2:
            raise ManifestError(f"row {k + 1}: expected 2 columns, got {len(row)}")
    if class_names is None:
        names = sorted({label for _, label in rows})
    else:
        names = list(class_names)
    index = {n: i for i, n in enumerate(names)}
    out: list[LabeledImage] = []
    for k, (fname, label) in enumerate(rows):
        if label not in index:
            raise LabelError(f"row {k + 1}: label {label!r} not in class set {names}")
        fpath = directory / fname
        if not fpath.exists():
            raise MissingFileError(f"row {k + 1}: image file {fname!r} not found")
        img = read_image(fpath)
        out.append(LabeledImage(Tensor(img), index[label], fname))
    return out


# ---------------------------------------------------------------------------
# training (SGD with momentum on softmax cross-entropy)


def split_train_val(data: Sequence[LabeledImage], val_fraction: float,
                    seed: int) -> tuple[list[LabeledImage], list[LabeledImage]]:
    """Seeded split; validation may come out empty for very small datasets."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x51)))
    perm = rng.permutation(len(data))
    n_val = min(len(data) - 1, int(round(len(data) * val_fraction)))
    val_idx = set(perm[:n_val].tolist())
    train = [data[i] for i in range(len(data)) if i not in val_idx]
    val = [data[i] for i in sorted(val_idx)]
    return train, val


def train(net: RecognitionNet, data: Sequence[LabeledImage],
          cfg: TrainConfig = TrainConfig()) -> tuple[RecognitionNet, list[dict]]:
    """Train a private copy of the net; returns it plus per-epoch metrics.

    Shuffling is a fixed function of (seed, epoch), so the whole run is
    reproducible bit-for-bit.
    """
    if not data:
        raise ShapeError("training data is empty")
    if tuple(data[0].image.shape) != tuple(net.input_shape):
        raise ShapeError(
            f"data shape {tuple(data[0].image.shape)} != net input {net.input_shape}")
    bad = [d.label for d in data if not (0 <= d.label < net.num_classes)]
    if bad:
        raise LabelError(f"labels out of range for {net.num_classes} classes: {sorted(set(bad))[:5]}")

    net = net.copy()
    train_set, val_set = split_train_val(data, cfg.val_fraction, cfg.seed)
    x_train = images_array(train_set)
    y_train = labels_array(train_set)

    velocity: dict[tuple[int, int], np.ndarray] = {}
    metrics: list[dict] = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, epoch, 0x7A)))
        perm = rng.permutation(len(train_set))
        total_loss = 0.0
        for start in range(0, len(train_set), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            try:
                with Tape() as tape:
                    rec = forward(net, x_train[idx])
                    loss, _ = ad.softmax_cross_entropy(rec.logits, y_train[idx])
                ad.backward(tape, loss)
                total_loss += loss.item() * len(idx)
                for li, group in enumerate(net.params):
                    for pi, p in enumerate(group):
                        g = p.grad
                        v = velocity.get((li, pi))
                        v = g if v is None else cfg.momentum * v + g
                        velocity[(li, pi)] = v
                        group[pi] = Tensor(p.data - cfg.learning_rate * v)
            except NonFiniteError as exc:
                raise TrainingDivergedError(epoch) from exc
        val_acc, _ = evaluate(net, val_set if val_set else train_set)
        metrics.append({
            "epoch": epoch,
            "train_loss": total_loss / len(train_set),
            "val_accuracy": val_acc,
        })
    return net, metrics


def evaluate(net: RecognitionNet, data: Sequence[LabeledImage],
             batch_size: int = 256) -> tuple[float, np.ndarray]:
    """Accuracy and the KxK confusion matrix (rows = true class)."""
    if not data:
        raise ShapeError("cannot evaluate on empty data")
    k = net.num_classes
    probs = predict_probs(net, images_array(data), batch_size=batch_size)
    preds = probs.argmax(axis=1)
    labels = labels_array(data)
    if labels.max() >= k or labels.min() < 0:
        raise LabelError(f"labels out of range for {k} classes")
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    accuracy = float(np.trace(confusion)) / len(data)
    return accuracy, confusion


def cross_net_agreement(net_a: RecognitionNet, net_b: RecognitionNet,
                        images) -> tuple[float, list[tuple[int, int]]]:
    """Fraction of images both nets give the same top-1 label."""
    if net_a.class_names != net_b.class_names:
        raise LabelError(
            f"class sets differ: {net_a.class_names} vs {net_b.class_names}")
    if isinstance(images, (list, tuple)) and images and isinstance(images[0], LabeledImage):
        arr = images_array(images)
    else:
        arr = np.stack([im.data if isinstance(im, Tensor) else np.asarray(im, dtype=np.float32)
                        for im in images], axis=0)
    top_a = predict_probs(net_a, arr).argmax(axis=1)
    top_b = predict_probs(net_b, arr).argmax(axis=1)
    pairs = list(zip(top_a.tolist(), top_b.tolist()))
    rate = float(np.mean(top_a == top_b))
    return rate, pairs
