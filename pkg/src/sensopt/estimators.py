"""Scikit-learn style estimators wrapping the engine.

``ShapeNetClassifier`` is the recognition net behind a fit/predict surface;
``DeepDream`` and ``StyleTransfer`` are image-to-image transformers driven
by the same gradient-ascent machinery; ``FeatureVisualizer`` synthesizes
images from noise for a chosen unit of the net. All follow the BaseEstimator
parameter conventions, so get_params/set_params/clone compose with the
wider ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from . import objectives as obj
from .autodiff import Tensor
from .data import LabeledImage, TrainConfig, train
from .errors import ShapeError
from .nets import RecognitionNet, build_net, default_layers, predict_probs
from .objectives import CompositeObjective, maximize, minimize
from .optim import AscentConfig, ascend
from .params import Frequency, Pixel, init_param
from .validation import as_image_batch, check_fitted


def _resolve_net(net) -> RecognitionNet:
    if isinstance(net, RecognitionNet):
        return net
    if isinstance(net, ShapeNetClassifier):
        check_fitted(net, "net_")
        return net.net_
    raise ShapeError(f"expected a RecognitionNet or fitted ShapeNetClassifier, got {type(net)}")


class ShapeNetClassifier(ClassifierMixin, BaseEstimator):
    """Small convolutional classifier trained with SGD + momentum.

    X is an image batch (see ``as_image_batch``); y holds class labels,
    which may be strings. Training is deterministic per seed.
    """

    def __init__(self, image_shape=None, epochs=10, batch_size=32, learning_rate=0.05,
                 momentum=0.9, val_fraction=0.2, seed=0):
        self.image_shape = image_shape
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.val_fraction = val_fraction
        self.seed = seed

    def fit(self, X, y):
        X = as_image_batch(X, self.image_shape)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise ShapeError(f"got {X.shape[0]} images but {y.shape[0]} labels")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ShapeError("need at least 2 classes")
        input_shape = tuple(X.shape[1:])
        net = build_net(default_layers(len(self.classes_)), input_shape,
                        [str(c) for c in self.classes_], seed=self.seed)
        data = [LabeledImage(Tensor(X[i]), int(y_idx[i]), str(i)) for i in range(X.shape[0])]
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          learning_rate=self.learning_rate, momentum=self.momentum,
                          seed=self.seed, val_fraction=self.val_fraction)
        self.net_, self.history_ = train(net, data, cfg)
        self.n_features_in_ = int(np.prod(input_shape))
        return self

    def predict_proba(self, X):
        check_fitted(self, "net_")
        X = as_image_batch(X, self.net_.input_shape)
        return predict_probs(self.net_, X)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class DeepDream(TransformerMixin, BaseEstimator):
    """Amplify what a layer already sees: maximize its mean squared
    activation starting from each input photo."""

    def __init__(self, net=None, layer=None, steps=64, step_size=0.05, jitter=2,
                 tv_weight=0.1, seed=0):
        self.net = net
        self.layer = layer
        self.steps = steps
        self.step_size = step_size
        self.jitter = jitter
        self.tv_weight = tv_weight
        self.seed = seed

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        net = _resolve_net(self.net)
        X = as_image_batch(X, net.input_shape)
        layer = self.layer
        if layer is None:
            convs = net.conv_layers()
            layer = convs[len(convs) // 2]
        terms = [maximize(obj.LayerL2(layer))]
        if self.tv_weight > 0:
            terms.append(minimize(obj.TotalVariation(), self.tv_weight))
        objective = CompositeObjective(terms)
        cfg = AscentConfig(steps=self.steps, step_size=self.step_size,
                           jitter=self.jitter, seed=self.seed,
                           snapshot_every=max(1, self.steps))
        out = []
        for i in range(X.shape[0]):
            c, h, w = net.input_shape
            param = init_param(Pixel(h, w, c), "from_image", X[i])
            traj = ascend(objective, param, net, cfg)
            out.append(traj.final_artifact.image)
        return np.stack(out, axis=0)


class StyleTransfer(TransformerMixin, BaseEstimator):
    """Fuse content images with the style of the fitted source image(s).

    fit(X) digests style sources into per-layer Gram targets (averaged when
    several are given); transform(X) optimizes each content image, started
    from the content itself, under weighted style + content losses.
    """

    def __init__(self, net=None, style_weight=100.0, content_weight=1.0, tv_weight=0.0,
                 style_layers=None, content_layer=None, steps=200, step_size=0.05,
                 jitter=0, seed=0):
        self.net = net
        self.style_weight = style_weight
        self.content_weight = content_weight
        self.tv_weight = tv_weight
        self.style_layers = style_layers
        self.content_layer = content_layer
        self.steps = steps
        self.step_size = step_size
        self.jitter = jitter
        self.seed = seed

    def fit(self, X, y=None):
        net = _resolve_net(self.net)
        X = as_image_batch(X, net.input_shape)
        layers = list(self.style_layers) if self.style_layers is not None else net.conv_layers()
        sigs = [obj.style_signature(net, X[i], layers) for i in range(X.shape[0])]
        grams = {l: np.mean([s.grams[l] for s in sigs], axis=0).astype(np.float32)
                 for l in layers}
        self.signature_ = obj.StyleSignature(grams, {l: 1.0 for l in layers})
        return self

    def transform(self, X):
        check_fitted(self, "signature_")
        net = _resolve_net(self.net)
        X = as_image_batch(X, net.input_shape)
        layer = self.content_layer if self.content_layer is not None else net.last_conv_layer()
        cfg = AscentConfig(steps=self.steps, step_size=self.step_size,
                           jitter=self.jitter, seed=self.seed,
                           snapshot_every=max(1, self.steps))
        out = []
        for i in range(X.shape[0]):
            target = obj.representation(net, X[i], [layer])
            target = {layer: Tensor(target[layer].data.copy())}
            terms = [minimize(obj.StyleLoss(self.signature_), self.style_weight),
                     minimize(obj.ContentLoss(layer, target), self.content_weight)]
            if self.tv_weight > 0:
                terms.append(minimize(obj.TotalVariation(), self.tv_weight))
            c, h, w = net.input_shape
            param = init_param(Pixel(h, w, c), "from_image", X[i])
            traj = ascend(CompositeObjective(terms), param, net, cfg)
            out.append(traj.final_artifact.image)
        return np.stack(out, axis=0)


class FeatureVisualizer(BaseEstimator):
    """Synthesize an image from noise that drives a chosen unit of the net."""

    def __init__(self, net=None, steps=512, step_size=0.05, jitter=2, tv_weight=0.1,
                 parameterization="pixel", seed=0):
        self.net = net
        self.steps = steps
        self.step_size = step_size
        self.jitter = jitter
        self.tv_weight = tv_weight
        self.parameterization = parameterization
        self.seed = seed

    def synthesize(self, target) -> np.ndarray:
        """``target`` is a class name, class index, or an objective term."""
        net = _resolve_net(self.net)
        if isinstance(target, str):
            term = obj.ClassLogit(net.class_index(target))
        elif isinstance(target, (int, np.integer)):
            term = obj.ClassLogit(int(target))
        else:
            term = target
        terms = [maximize(term)]
        if self.tv_weight > 0:
            terms.append(minimize(obj.TotalVariation(), self.tv_weight))
        c, h, w = net.input_shape
        if self.parameterization == "pixel":
            param = init_param(Pixel(h, w, c), "noise", seed=self.seed)
        elif self.parameterization == "frequency":
            param = init_param(Frequency(h, w, c), "noise", seed=self.seed)
        else:
            raise ShapeError(f"parameterization must be pixel or frequency, "
                             f"got {self.parameterization!r}")
        cfg = AscentConfig(steps=self.steps, step_size=self.step_size, jitter=self.jitter,
                           seed=self.seed, snapshot_every=max(1, self.steps))
        traj = ascend(CompositeObjective(terms), param, net, cfg)
        return traj.final_artifact.image
