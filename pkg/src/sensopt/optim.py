"""Search procedures: gradient ascent on parameterizations, projected
constraints, jitter robustness, gradient-free serial stroke search, and the
superstimulus measurement.

``ascend`` climbs a composite objective by updating decoder parameters with
(optionally L2-normalized) gradients; each step may jitter the decoded
image by a circular shift that is undone through the chain rule, project
the decoded image back into an epsilon ball around the initial image, and
anneal the relaxation temperature of hard media.

``blackbox_paint`` is the gradient-free counterpart: greedy serial search
placing one stroke at a time, keeping a candidate only when it strictly
improves the objective, using forward passes alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import AscentDivergedError, NonFiniteError, ProjectionUnsupportedError, ShapeError
from .nets import RecognitionNet
from .objectives import (
    ChannelMean,
    ClassLogit,
    CompositeObjective,
    LayerL2,
    Neuron,
    ObjectiveTerm,
    objective_scalar,
    objective_value_batch,
    term_value_batch,
    term_values,
)
from .params import (
    FinalArtifact,
    Frequency,
    Parameterization,
    Pixel,
    Strokes,
    composite_stroke,
    copy_param,
    decode,
    finalize,
    init_param,
    param_tensors,
    set_param_tensors,
    set_temperature,
)


@dataclass(frozen=True)
class TemperatureSchedule:
    """Geometric anneal: start * factor^(step // interval), floored."""

    start: float = 1.0
    factor: float = 0.85
    interval: int = 50
    floor: float = 0.05

    def at(self, step: int) -> float:
        return max(self.floor, self.start * self.factor ** (step // self.interval))


@dataclass(frozen=True)
class Projection:
    mode: str  # "l2" | "linf"
    epsilon: float

    def __post_init__(self):
        if self.mode not in ("l2", "linf"):
            raise ShapeError(f"projection mode must be l2 or linf, got {self.mode!r}")
        if not (self.epsilon > 0):
            raise ShapeError("projection epsilon must be > 0")


@dataclass(frozen=True)
class AscentConfig:
    steps: int = 256
    step_size: float = 0.05
    normalize_grad: bool = True
    jitter: int = 2  # circular-shift amplitude in pixels, 0 disables
    projection: Projection | None = None
    temperature: TemperatureSchedule | None = None
    seed: int = 0
    snapshot_every: int = 50

    def __post_init__(self):
        if self.steps < 1:
            raise ShapeError("steps must be >= 1")
        if self.step_size <= 0:
            raise ShapeError("step size must be > 0")
        if self.jitter < 0 or self.snapshot_every < 1:
            raise ShapeError("jitter must be >= 0 and snapshot interval >= 1")


@dataclass
class Snapshot:
    step: int
    value: float
    image: np.ndarray  # CHW decode at this step
    term_values: list[float] | None = None


@dataclass
class Trajectory:
    snapshots: list[Snapshot]
    final_param: Parameterization
    final_artifact: FinalArtifact
    rejected_steps: list[int] = field(default_factory=list)

    @property
    def initial_value(self) -> float:
        return self.snapshots[0].value

    @property
    def final_value(self) -> float:
        return self.snapshots[-1].value


def project(image: np.ndarray, init_image: np.ndarray, mode: str, epsilon: float) -> np.ndarray:
    """Pull ``image`` into the epsilon ball around ``init_image``, then [0,1].

    L2 rescales the deviation onto the sphere when outside; Linf clamps each
    pixel deviation. Interior points are returned unchanged.
    """
    image = np.asarray(image, dtype=np.float32)
    init_image = np.asarray(init_image, dtype=np.float32)
    if image.shape != init_image.shape:
        raise ShapeError(f"image shape {image.shape} != init shape {init_image.shape}")
    delta = image.astype(np.float64) - init_image.astype(np.float64)
    if mode == "l2":
        norm = float(np.sqrt((delta ** 2).sum()))
        if norm <= epsilon:
            return image.copy()
        delta *= epsilon / norm
    elif mode == "linf":
        if float(np.abs(delta).max(initial=0.0)) <= epsilon:
            return image.copy()
        delta = np.clip(delta, -epsilon, epsilon)
    else:
        raise ShapeError(f"projection mode must be l2 or linf, got {mode!r}")
    out = init_image.astype(np.float64) + delta
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _supports_projection(param: Parameterization) -> bool:
    return isinstance(param, (Pixel, Frequency))


def _objective_value(obj: CompositeObjective, image: np.ndarray, net: RecognitionNet) -> float:
    return objective_scalar(obj, Tensor(image), net).item()


def ascend(obj: CompositeObjective, param: Parameterization, net: RecognitionNet,
           cfg: AscentConfig) -> Trajectory:
    """Gradient ascent on the decoder parameters; deterministic per seed.

    Snapshots record the (pre-update) objective value and decoded image at
    every ``snapshot_every`` steps plus a final post-update entry, each with
    the raw per-term values for reporting.
    """
    param = copy_param(param)
    if cfg.projection is not None and not _supports_projection(param):
        raise ProjectionUnsupportedError(
            f"{type(param).__name__} decode has no exact image inverse; "
            "projection supports Pixel and Frequency")
    if cfg.temperature is not None:
        set_temperature(param, cfg.temperature.at(0))
    init_image = decode(param).data.copy()
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x30)))

    snapshots: list[Snapshot] = []
    for step in range(cfg.steps):
        if cfg.temperature is not None:
            set_temperature(param, cfg.temperature.at(step))
        leaves = param_tensors(param)
        for t in leaves:
            t.zero_grad()
        try:
            with Tape() as tape:
                image = decode(param)
                if cfg.jitter > 0:
                    dy = int(rng.integers(-cfg.jitter, cfg.jitter + 1))
                    dx = int(rng.integers(-cfg.jitter, cfg.jitter + 1))
                    objective_input = ad.roll2d(image, dy, dx)
                else:
                    objective_input = image
                value_t = objective_scalar(obj, objective_input, net)
            value = value_t.item()
            ad.backward(tape, value_t)
        except NonFiniteError as exc:
            raise AscentDivergedError(step) from exc

        if step % cfg.snapshot_every == 0:
            snapshots.append(Snapshot(step, value, image.data.copy(),
                                      term_values(obj, image.data, net)))

        grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]
        if cfg.normalize_grad:
            norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
            inv = 1.0 / norm if norm > 1e-12 else 0.0
            grads = [g * np.float32(inv) for g in grads]
        set_param_tensors(param, [Tensor(t.data + np.float32(cfg.step_size) * g)
                                  for t, g in zip(leaves, grads)])

        if cfg.projection is not None:
            current = decode(param).data
            projected = project(current, init_image, cfg.projection.mode, cfg.projection.epsilon)
            param = init_param(param, "from_image", projected)

    final_image = decode(param).data
    final_value = _objective_value(obj, final_image, net)
    snapshots.append(Snapshot(cfg.steps, final_value, final_image.copy(),
                              term_values(obj, final_image, net)))
    return Trajectory(snapshots, param, finalize(param))


# ---------------------------------------------------------------------------
# gradient-free serial painting


def _sample_stroke_rows(param: Strokes, count: int, rng: np.random.Generator) -> np.ndarray:
    """Random strokes in squash space, stored as raw (pre-logistic) rows."""

    def logit(u):
        return np.log(u / (1.0 - u))

    rows = np.empty((count, param.arity), dtype=np.float64)
    rows[:, 0] = logit(rng.uniform(0.02, 0.98, count))  # cx
    rows[:, 1] = logit(rng.uniform(0.02, 0.98, count))  # cy
    if param.primitive == "disc":
        rows[:, 2] = logit(rng.uniform(0.02, 0.7, count))  # radius, biased small
        op_idx = 3
    else:
        rows[:, 2] = rng.uniform(-np.pi, np.pi, count)  # angle
        rows[:, 3] = logit(rng.uniform(0.02, 0.9, count))  # length
        rows[:, 4] = logit(rng.uniform(0.02, 0.7, count))  # thickness
        op_idx = 5
    rows[:, op_idx] = logit(rng.uniform(0.25, 0.98, count))  # opacity
    rows[:, op_idx + 1:] = logit(rng.uniform(0.02, 0.98, (count, param.channels)))
    return rows.astype(np.float32)


def blackbox_paint(obj: CompositeObjective, canvas: Strokes, net: RecognitionNet,
                   budget: int, proposals_per_step: int = 32, seed: int = 0) -> Trajectory:
    """Greedy serial stroke search using forward passes only.

    Each step samples candidate strokes, composites each over the current
    canvas, and appends the best candidate iff it strictly improves the
    objective; otherwise the step is recorded as a rejection. The accepted
    objective sequence is therefore strictly increasing. Proposal ties break
    to the lowest proposal index.
    """
    if budget < 1:
        raise ShapeError("budget must be >= 1")
    if proposals_per_step < 1:
        raise ShapeError("proposals_per_step must be >= 1")
    if canvas.raw is None:
        canvas = copy_param(
            Strokes(0, canvas.primitive, canvas.background, canvas.height,
                    canvas.width, canvas.channels,
                    raw=Tensor(np.zeros((0, canvas.arity), dtype=np.float32))))
    else:
        canvas = copy_param(canvas)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x60)))

    current = decode(canvas).data
    cur_val = _objective_value(obj, current, net)
    snapshots = [Snapshot(0, cur_val, current.copy(),
                          term_values(obj, current, net))]
    rejected: list[int] = []
    for step in range(budget):
        rows = _sample_stroke_rows(canvas, proposals_per_step, rng)
        candidates = np.stack(
            [composite_stroke(current, rows[i], canvas) for i in range(proposals_per_step)],
            axis=0)
        values = objective_value_batch(obj, candidates, net)
        best = int(values.argmax())  # argmax takes the first max: index tiebreak
        if values[best] > cur_val:
            canvas.raw = Tensor(np.vstack([canvas.raw.data, rows[best][None]]))
            canvas.n += 1
            current = candidates[best]
            cur_val = float(values[best])
            snapshots.append(Snapshot(step + 1, cur_val, current.copy(),
                                      term_values(obj, current, net)))
        else:
            rejected.append(step)
    return Trajectory(snapshots, canvas, finalize(canvas), rejected_steps=rejected)


def random_canvas(template: Strokes, n_strokes: int, seed: int = 0) -> Strokes:
    """A canvas of ``n_strokes`` random strokes (the painter's null model)."""
    canvas = copy_param(template)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x61)))
    canvas.raw = Tensor(_sample_stroke_rows(canvas, n_strokes, rng))
    canvas.n = n_strokes
    return canvas


# ---------------------------------------------------------------------------
# superstimulus measurement


_SUPERSTIMULUS_TERMS = (Neuron, ChannelMean, LayerL2, ClassLogit)


@dataclass(frozen=True)
class SuperstimulusReport:
    """Term value of an image against the dataset maximum.

    ``ratio > 1`` certifies the superstimulus property for that feature.
    When the dataset maximum is not positive the ratio is undefined (None)
    and both raw values are still reported.
    """

    image_value: float
    dataset_max: float
    ratio: float | None

    @property
    def is_superstimulus(self) -> bool:
        return self.ratio is not None and self.ratio > 1.0


def superstimulus_ratio(net: RecognitionNet, term: ObjectiveTerm, dataset,
                        image) -> SuperstimulusReport:
    """term(image) / max over the dataset of term(.)."""
    if not isinstance(term, _SUPERSTIMULUS_TERMS):
        raise ShapeError(
            f"superstimulus needs an activation term (Neuron, ChannelMean, LayerL2, "
            f"ClassLogit), got {type(term).__name__}")
    if isinstance(dataset, (list, tuple)):
        if not dataset:
            raise ShapeError("superstimulus dataset is empty")
        arr = np.stack([d.image.data if hasattr(d, "image") else np.asarray(d, dtype=np.float32)
                        for d in dataset], axis=0)
    else:
        arr = np.asarray(dataset, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[0] == 0:
            raise ShapeError("superstimulus dataset must be a non-empty NCHW batch")
    img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    dataset_values = term_value_batch(net, term, arr)
    image_value = float(term_value_batch(net, term, img[None])[0])
    dataset_max = float(dataset_values.max())
    ratio = image_value / dataset_max if dataset_max > 0 else None
    return SuperstimulusReport(image_value, dataset_max, ratio)
