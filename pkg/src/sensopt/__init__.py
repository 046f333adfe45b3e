"""sensopt: train a small recognizer on art-free images, then synthesize
images by optimizing them to drive target activation patterns in it."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward
from .data import (
    LabeledImage,
    ShapesSpec,
    TrainConfig,
    cross_net_agreement,
    evaluate,
    generate_shapes,
    load_manifest,
    save_manifest,
    train,
)
from .errors import SensoptError
from .estimators import DeepDream, FeatureVisualizer, ShapeNetClassifier, StyleTransfer
from .nets import (
    Conv,
    Dense,
    Flatten,
    MaxPool2,
    RecognitionNet,
    ReLU,
    build_net,
    default_layers,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .objectives import (
    ChannelMean,
    ClassLogit,
    ClassProbability,
    CompositeObjective,
    ContentLoss,
    L2Distance,
    LayerL2,
    Neuron,
    StyleLoss,
    StyleSignature,
    TotalVariation,
    WeightedTerm,
    content_loss,
    evaluate_objective,
    gram,
    maximize,
    minimize,
    representation,
    style_loss,
    style_signature,
    total_variation,
)
from .optim import (
    AscentConfig,
    Projection,
    TemperatureSchedule,
    Trajectory,
    ascend,
    blackbox_paint,
    project,
    random_canvas,
    superstimulus_ratio,
)
from .params import (
    FinalArtifact,
    Frequency,
    Halftone,
    PaletteStyle,
    Pixel,
    Strokes,
    apply_medium_constraint,
    decode,
    finalize,
    init_param,
)

__all__ = [name for name in dir() if not name.startswith("_")]
