"""Scalar objectives over recognition-net activations, and their composition.

Terms cover class probability/logit, single neurons, channel means, whole
layer energy (the Deep-Dream-style target), content distance at one layer,
Gram-matrix style distance across layers, total variation and L2 pull
toward a reference image. A composite objective is a weighted list of
terms, each tagged maximize or minimize; its value is the signed weighted
sum, so the optimizer always ascends.

Distances are normalized (means, not sums) and Gram matrices carry a
1/(C*H*W) factor, which keeps weights transferable across layer sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, record_op
from .errors import ShapeError
from .nets import ActivationRecord, RecognitionNet, forward

Representation = dict[int, Tensor]


@dataclass
class GramMatrix:
    """Channel correlation matrix of one layer, with its normalization."""

    matrix: Tensor  # (C, C)
    normalization: float  # C * H * W


@dataclass
class StyleSignature:
    """Per-layer Gram targets plus non-negative layer weights."""

    grams: dict[int, np.ndarray]
    weights: dict[int, float]

    def __post_init__(self):
        if set(self.grams) != set(self.weights):
            raise ShapeError("style signature layers and weights must match")
        if any(w < 0 for w in self.weights.values()):
            raise ShapeError("style layer weights must be >= 0")


# --- term variants ----------------------------------------------------------


@dataclass(frozen=True)
class ClassProbability:
    class_index: int


@dataclass(frozen=True)
class ClassLogit:
    class_index: int


@dataclass(frozen=True)
class Neuron:
    layer: int
    channel: int
    y: int
    x: int


@dataclass(frozen=True)
class ChannelMean:
    layer: int
    channel: int


@dataclass(frozen=True)
class LayerL2:
    """Mean squared activation of one layer (normalized by neuron count)."""

    layer: int


@dataclass
class ContentLoss:
    layer: int
    target: Representation  # detached activations of the content source


@dataclass
class StyleLoss:
    signature: StyleSignature


@dataclass(frozen=True)
class TotalVariation:
    pass


@dataclass
class L2Distance:
    reference: np.ndarray  # CHW image


ObjectiveTerm = Union[ClassProbability, ClassLogit, Neuron, ChannelMean, LayerL2,
                      ContentLoss, StyleLoss, TotalVariation, L2Distance]

_ACTIVATION_TERMS = (ClassProbability, ClassLogit, Neuron, ChannelMean, LayerL2)
_NET_TERMS = _ACTIVATION_TERMS + (ContentLoss, StyleLoss)


@dataclass(frozen=True)
class WeightedTerm:
    term: ObjectiveTerm
    weight: float = 1.0
    direction: str = "maximize"

    def __post_init__(self):
        if self.direction not in ("maximize", "minimize"):
            raise ShapeError(f"direction must be maximize or minimize, got {self.direction!r}")
        if not np.isfinite(self.weight):
            raise ShapeError("term weight must be finite")

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "maximize" else -1.0


@dataclass
class CompositeObjective:
    terms: list[WeightedTerm]

    def __post_init__(self):
        if not self.terms:
            raise ShapeError("composite objective needs at least one term")


def maximize(term: ObjectiveTerm, weight: float = 1.0) -> WeightedTerm:
    return WeightedTerm(term, weight, "maximize")


def minimize(term: ObjectiveTerm, weight: float = 1.0) -> WeightedTerm:
    return WeightedTerm(term, weight, "minimize")


# --- activations ------------------------------------------------------------


def representation(net: RecognitionNet, image, layers: Sequence[int]) -> Representation:
    """Requested per-layer activations from one forward pass of a CHW image."""
    img = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float32))
    if img.ndim != 3:
        raise ShapeError(f"representation expects a CHW image, got shape {img.shape}")
    layers = list(layers)
    for l in layers:
        if not (0 <= l < len(net.layers)):
            raise ShapeError(f"layer index {l} out of range for {len(net.layers)} layers")
    x4 = ad.reshape(img, (1,) + tuple(img.shape))
    rec = forward(net, x4)
    return {l: rec.activations[l] for l in layers}


def gram(activation) -> GramMatrix:
    """G[a, b] = sum_hw act[a]*act[b] / (C*H*W), accumulated in float64."""
    t = activation if isinstance(activation, Tensor) else Tensor(np.asarray(activation, dtype=np.float32))
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ShapeError(f"gram expects one image, got batch {t.shape[0]}")
        t = t[0]
    if t.ndim != 3:
        raise ShapeError(f"gram expects a CxHxW activation, got shape {t.shape}")
    c, h, w = t.shape
    norm = float(c * h * w)
    flat = ad.reshape(t, (c, h * w))

    a64 = flat.data.astype(np.float64)
    g_val = ((a64 @ a64.T) / norm).astype(np.float32)

    def back(g: np.ndarray):
        return (((g + g.T) @ flat.data) / np.float32(norm),)

    matrix = record_op((flat,), g_val, back, context="gram")
    return GramMatrix(matrix, norm)


def style_signature(net: RecognitionNet, image, layers: Sequence[int] | None = None,
                    layer_weights: Sequence[float] | None = None) -> StyleSignature:
    """Detached Gram targets of a style source (default: all conv layers)."""
    if layers is None:
        layers = net.conv_layers()
    layers = list(layers)
    if layer_weights is None:
        layer_weights = [1.0] * len(layers)
    if len(layer_weights) != len(layers):
        raise ShapeError("need one weight per style layer")
    reps = representation(net, image, layers)
    grams = {l: gram(reps[l]).matrix.data.copy() for l in layers}
    return StyleSignature(grams, {l: float(w) for l, w in zip(layers, layer_weights)})


# --- losses -----------------------------------------------------------------


def content_loss(x_repr: Representation, target_repr: Representation, layer: int) -> Tensor:
    """Mean squared difference of the two activations at ``layer``."""
    if layer not in x_repr or layer not in target_repr:
        raise ShapeError(f"layer {layer} missing from a representation")
    a, b = x_repr[layer], target_repr[layer]
    if a.shape != b.shape:
        raise ShapeError(f"content shapes differ at layer {layer}: {a.shape} vs {b.shape}")
    return ad.tmean(ad.square(ad.sub(a, b)))


def _style_loss_from_record(rec: ActivationRecord, signature: StyleSignature) -> Tensor:
    parts = []
    for layer, target in sorted(signature.grams.items()):
        if layer not in rec.activations:
            raise ShapeError(f"style layer {layer} not present in activation record")
        gm = gram(rec.activations[layer])
        if gm.matrix.shape != target.shape:
            raise ShapeError(
                f"style Gram shape {gm.matrix.shape} != target {target.shape} at layer {layer}")
        diff = ad.sub(gm.matrix, Tensor(target))
        parts.append(ad.scale(ad.tmean(ad.square(diff)), signature.weights[layer]))
    return ad.add_n(parts)


def style_loss(image, signature: StyleSignature, net: RecognitionNet) -> Tensor:
    """Weighted mean-squared Gram distance, summed over signature layers."""
    img = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float32))
    x4 = ad.reshape(img, (1,) + tuple(img.shape))
    rec = forward(net, x4)
    return _style_loss_from_record(rec, signature)


def total_variation(image) -> Tensor:
    """Anisotropic TV: mean absolute neighbour difference over channels."""
    img = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float32))
    if img.ndim != 3:
        raise ShapeError(f"total_variation expects a CHW image, got shape {img.shape}")
    c, h, w = img.shape
    n_pairs = c * (h - 1) * w + c * h * (w - 1)
    if n_pairs == 0:
        raise ShapeError("total_variation needs at least two pixels along one axis")
    dv = ad.sub(img[:, 1:, :], img[:, :-1, :])
    dh = ad.sub(img[:, :, 1:], img[:, :, :-1])
    total = ad.add(ad.tsum(ad.absolute(dv)), ad.tsum(ad.absolute(dh)))
    return ad.scale(total, 1.0 / n_pairs)


# --- composition ------------------------------------------------------------


def validate_term(term: ObjectiveTerm, net: RecognitionNet) -> None:
    if isinstance(term, (ClassProbability, ClassLogit)):
        if not (0 <= term.class_index < net.num_classes):
            raise ShapeError(f"class index {term.class_index} out of range "
                             f"for {net.num_classes} classes")
        return
    if isinstance(term, (Neuron, ChannelMean, LayerL2)):
        if not (0 <= term.layer < len(net.layers)):
            raise ShapeError(f"layer index {term.layer} out of range")
        shape = net.layer_shapes[term.layer]
        if isinstance(term, (Neuron, ChannelMean)):
            if len(shape) != 3:
                raise ShapeError(f"layer {term.layer} has no channel structure (shape {shape})")
            if not (0 <= term.channel < shape[0]):
                raise ShapeError(f"channel {term.channel} out of range for layer {term.layer}")
        if isinstance(term, Neuron):
            if not (0 <= term.y < shape[1] and 0 <= term.x < shape[2]):
                raise ShapeError(f"neuron position ({term.y}, {term.x}) outside layer "
                                 f"{term.layer} spatial extent {shape[1:]}" )
        return
    if isinstance(term, ContentLoss):
        if not (0 <= term.layer < len(net.layers)):
            raise ShapeError(f"content layer {term.layer} out of range")
        return
    if isinstance(term, StyleLoss):
        for l in term.signature.grams:
            if not (0 <= l < len(net.layers)):
                raise ShapeError(f"style layer {l} out of range")
        return
    # TotalVariation and L2Distance need no net


def _needs_forward(obj: CompositeObjective) -> bool:
    return any(isinstance(wt.term, _NET_TERMS) for wt in obj.terms)


def _term_scalar(term: ObjectiveTerm, image: Tensor,
                 rec: ActivationRecord | None, net: RecognitionNet) -> Tensor:
    if isinstance(term, ClassProbability):
        return rec.probs[(0, term.class_index)]
    if isinstance(term, ClassLogit):
        return rec.logits[(0, term.class_index)]
    if isinstance(term, Neuron):
        return rec.activations[term.layer][(0, term.channel, term.y, term.x)]
    if isinstance(term, ChannelMean):
        return ad.tmean(rec.activations[term.layer][(0, term.channel)])
    if isinstance(term, LayerL2):
        return ad.tmean(ad.square(rec.activations[term.layer]))
    if isinstance(term, ContentLoss):
        x_repr = {term.layer: rec.activations[term.layer]}
        target = term.target[term.layer]
        t4 = target if target.ndim == 4 else ad.reshape(target, (1,) + tuple(target.shape))
        return content_loss(x_repr, {term.layer: t4}, term.layer)
    if isinstance(term, StyleLoss):
        return _style_loss_from_record(rec, term.signature)
    if isinstance(term, TotalVariation):
        return total_variation(image)
    if isinstance(term, L2Distance):
        ref = np.asarray(term.reference, dtype=np.float32)
        if ref.shape != image.shape:
            raise ShapeError(f"reference shape {ref.shape} != image shape {image.shape}")
        return ad.tmean(ad.square(ad.sub(image, Tensor(ref))))
    raise ShapeError(f"unknown objective term {type(term).__name__}")


def objective_scalar(obj: CompositeObjective, image: Tensor, net: RecognitionNet) -> Tensor:
    """Signed weighted sum of all terms, recorded on the active tape."""
    for wt in obj.terms:
        validate_term(wt.term, net)
    rec = None
    if _needs_forward(obj):
        x4 = ad.reshape(image, (1,) + tuple(image.shape))
        rec = forward(net, x4)
    parts = [ad.scale(_term_scalar(wt.term, image, rec, net), wt.sign * wt.weight)
             for wt in obj.terms]
    return ad.add_n(parts)


def evaluate_objective(obj: CompositeObjective, image, net: RecognitionNet) -> tuple[float, Tensor]:
    """Objective value and its gradient with respect to the image pixels."""
    img = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float32))
    img.zero_grad()
    with ad.Tape() as tape:
        value = objective_scalar(obj, img, net)
    ad.backward(tape, value)
    return value.item(), Tensor(img.grad)


def term_values(obj: CompositeObjective, image, net: RecognitionNet) -> list[float]:
    """Raw (unsigned, unweighted) value of each term; forward only."""
    img = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float32))
    rec = None
    if _needs_forward(obj):
        x4 = ad.reshape(img, (1,) + tuple(img.shape))
        rec = forward(net, x4)
    return [_term_scalar(wt.term, img, rec, net).item() for wt in obj.terms]


def _term_batch_from_record(term: ObjectiveTerm, rec: ActivationRecord | None,
                            arr: np.ndarray) -> np.ndarray:
    """Per-image raw term values for an NCHW batch (forward-only numpy)."""
    if isinstance(term, ClassProbability):
        return rec.probs.data[:, term.class_index].astype(np.float64)
    if isinstance(term, ClassLogit):
        return rec.logits.data[:, term.class_index].astype(np.float64)
    if isinstance(term, Neuron):
        return rec.activations[term.layer].data[:, term.channel, term.y, term.x].astype(np.float64)
    if isinstance(term, ChannelMean):
        return rec.activations[term.layer].data[:, term.channel].mean(
            axis=(1, 2), dtype=np.float64)
    if isinstance(term, LayerL2):
        act = rec.activations[term.layer].data
        return np.square(act, dtype=np.float64).reshape(act.shape[0], -1).mean(axis=1)
    if isinstance(term, ContentLoss):
        act = rec.activations[term.layer].data
        tgt = term.target[term.layer].data
        tgt = tgt if tgt.ndim == 4 else tgt[None]
        d = (act.astype(np.float64) - tgt.astype(np.float64)) ** 2
        return d.reshape(act.shape[0], -1).mean(axis=1)
    if isinstance(term, StyleLoss):
        out = np.zeros(arr.shape[0], dtype=np.float64)
        for layer, target in sorted(term.signature.grams.items()):
            act = rec.activations[layer].data.astype(np.float64)
            n, c, h, w = act.shape
            flat = act.reshape(n, c, h * w)
            g = np.einsum("nck,ndk->ncd", flat, flat) / float(c * h * w)
            d = (g.astype(np.float32).astype(np.float64) - target.astype(np.float64)) ** 2
            out += term.signature.weights[layer] * d.reshape(n, -1).mean(axis=1)
        return out
    if isinstance(term, TotalVariation):
        a = arr.astype(np.float64)
        n, c, h, w = a.shape
        n_pairs = c * (h - 1) * w + c * h * (w - 1)
        dv = np.abs(a[:, :, 1:, :] - a[:, :, :-1, :]).reshape(n, -1).sum(axis=1)
        dh = np.abs(a[:, :, :, 1:] - a[:, :, :, :-1]).reshape(n, -1).sum(axis=1)
        return (dv + dh) / n_pairs
    if isinstance(term, L2Distance):
        ref = np.asarray(term.reference, dtype=np.float64)[None]
        d = (arr.astype(np.float64) - ref) ** 2
        return d.reshape(arr.shape[0], -1).mean(axis=1)
    raise ShapeError(f"unknown objective term {type(term).__name__}")


def objective_value_batch(obj: CompositeObjective, images, net: RecognitionNet,
                          batch_size: int = 256) -> np.ndarray:
    """Signed weighted objective of each image in an NCHW batch, forward only."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim != 4:
        raise ShapeError(f"expected NCHW images, got shape {arr.shape}")
    for wt in obj.terms:
        validate_term(wt.term, net)
    out = []
    for start in range(0, arr.shape[0], batch_size):
        chunk = arr[start:start + batch_size]
        rec = forward(net, chunk) if _needs_forward(obj) else None
        total = np.zeros(chunk.shape[0], dtype=np.float64)
        for wt in obj.terms:
            total += wt.sign * wt.weight * _term_batch_from_record(wt.term, rec, chunk)
        out.append(total)
    return np.concatenate(out)


def term_value_batch(net: RecognitionNet, term: ObjectiveTerm, images,
                     batch_size: int = 256) -> np.ndarray:
    """Per-image value of an activation term over a batch (forward only)."""
    if not isinstance(term, _ACTIVATION_TERMS):
        raise ShapeError(f"{type(term).__name__} is not an activation term")
    validate_term(term, net)
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim != 4:
        raise ShapeError(f"expected NCHW images, got shape {arr.shape}")
    out = []
    for start in range(0, arr.shape[0], batch_size):
        chunk = arr[start:start + batch_size]
        rec = forward(net, chunk)
        out.append(_term_batch_from_record(term, rec, chunk))
    return np.concatenate(out)
