"""Command-line surface: train, synth, eval, inspect.

Every run starts from a JSON config (plus ``--set dotted.key=value``
overrides), validates it fully before any computation, and ends by writing
a replayable run manifest: re-running the same command with the manifest's
config echo and seed reproduces bit-identical artifacts.

Exit codes are a stable contract: 0 success, 2 config error, 3 numerical
failure, 4 missing input.

All randomness flows from the single top-level seed through fixed
per-purpose tags (seed XOR tag), listed in ``SEED_TAGS``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, data as data_mod, objectives as obj
from .autodiff import Tensor
from .data import ShapesSpec, TrainConfig, cross_net_agreement, evaluate, generate_shapes, load_manifest
from .errors import (
    AscentDivergedError,
    ConfigError,
    NonFiniteError,
    SensoptError,
    TrainingDivergedError,
)
from .imageio import image_path_suffix, read_image, write_image
from .nets import build_net, default_layers, describe, load_checkpoint, save_checkpoint
from .objectives import CompositeObjective, WeightedTerm
from .optim import (
    AscentConfig,
    Projection,
    TemperatureSchedule,
    Trajectory,
    ascend,
    blackbox_paint,
    superstimulus_ratio,
)
from .params import Frequency, Halftone, PaletteStyle, Pixel, Strokes, init_param

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4

# Fixed tags XORed into the top-level seed, one per random purpose.
SEED_TAGS = {
    "dataset": 0x5EED0D,
    "net_init": 0x5EED4E,
    "train": 0x5EED52,
    "ascent": 0x5EED0A,
    "paint": 0x5EEDB0,
    "param_init": 0x5EED1F,
}


def derived_seed(seed: int, purpose: str) -> int:
    return int(seed) ^ SEED_TAGS[purpose]


class MissingInputError(SensoptError):
    """An input file named by the config does not exist."""


# ---------------------------------------------------------------------------
# configuration schema: unknown keys are errors, no silent typos


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


_SCALARS = {
    "str": lambda v: isinstance(v, str),
    "int": _is_int,
    "num": _is_num,
    "bool": lambda v: isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
    "any": lambda v: True,
}


def _check_schema(cfg, schema: dict, path: str = "") -> None:
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    for key, value in cfg.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key: {here}")
        spec = schema[key]
        if isinstance(spec, dict):
            _check_schema(value, spec, here)
        else:
            if not _SCALARS[spec](value):
                raise ConfigError(f"config key {here} must be {spec}")


_DATASET_SCHEMA = {
    "manifest": "str",
    "classes": "list",
    "size": "int",
    "color_mode": "str",
    "position_jitter": "num",
    "scale_range": "list",
    "rotation_jitter": "num",
    "noise_std": "num",
    "n_per_class": "int",
    "seed": "int",
}

_ASCENT_SCHEMA = {
    "steps": "int",
    "step_size": "num",
    "normalize_grad": "bool",
    "jitter": "int",
    "snapshot_every": "int",
    "projection": {"mode": "str", "epsilon": "num"},
    "temperature": {"start": "num", "factor": "num", "interval": "int", "floor": "num"},
}

_PARAM_SCHEMA = {
    "kind": "str",
    "height": "int",
    "width": "int",
    "channels": "int",
    "grid_h": "int",
    "grid_w": "int",
    "cell_size": "int",
    "temperature": "num",
    "n": "int",
    "primitive": "str",
    "background": "any",
    "k": "int",
    "brush_size": "int",
    "init": "str",
    "init_image": "str",
}

_TERM_SCHEMA = {
    "term": "str",
    "class_name": "str",
    "class_index": "int",
    "layer": "int",
    "channel": "int",
    "y": "int",
    "x": "int",
    "image": "str",
    "layers": "list",
    "layer_weights": "list",
    "weight": "num",
    "direction": "str",
}

_TRAIN_SCHEMA = {
    "dataset": _DATASET_SCHEMA,
    "train": {
        "epochs": "int",
        "batch_size": "int",
        "learning_rate": "num",
        "momentum": "num",
        "val_fraction": "num",
    },
    "out": "str",
    "seed": "int",
}

_SYNTH_SCHEMA = {
    "preset": "str",
    "net": "str",
    "class_name": "str",
    "layer": "int",
    "content_image": "str",
    "style_image": "any",
    "style_weight": "num",
    "content_weight": "num",
    "tv_weight": "num",
    "style_layers": "list",
    "objective": "list",
    "param": _PARAM_SCHEMA,
    "ascent": _ASCENT_SCHEMA,
    "paint": {"budget": "int", "proposals_per_step": "int"},
    "report_superstimulus": "bool",
    "dataset": _DATASET_SCHEMA,
    "out": "str",
    "seed": "int",
}

_EVAL_SCHEMA = {
    "net": "str",
    "net_b": "str",
    "corpus": "str",
    "dataset": _DATASET_SCHEMA,
    "out": "str",
    "seed": "int",
}

_PRESETS = ("fv", "dream", "style", "so", "medium", "paint")


def _parse_set(overrides: list[str]) -> list[tuple[list[str], object]]:
    out = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.append((key.split("."), value))
    return out


def load_config(args) -> dict:
    cfg: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingInputError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be a JSON object")
        if "config" in cfg and "engine_version" in cfg:
            cfg = cfg["config"]  # allow replaying a run manifest directly
    for keys, value in _parse_set(args.set or []):
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {'.'.join(keys)} crosses a non-object")
        node[keys[-1]] = value
    if args.out is not None:
        cfg["out"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


# ---------------------------------------------------------------------------
# config -> engine objects


def _dataset_from_config(dcfg: dict, seed: int) -> tuple[list, list[str]]:
    dcfg = dict(dcfg)
    if "manifest" in dcfg:
        directory = Path(dcfg["manifest"])
        if not directory.exists():
            raise MissingInputError(f"manifest directory not found: {directory}")
        names = data_mod.manifest_class_names(directory)
        return load_manifest(directory), names
    n_per_class = dcfg.pop("n_per_class", 100)
    ds_seed = dcfg.pop("seed", derived_seed(seed, "dataset"))
    fields = {}
    for key in ("classes", "size", "color_mode", "position_jitter", "rotation_jitter", "noise_std"):
        if key in dcfg:
            fields[key] = tuple(dcfg[key]) if key == "classes" else dcfg[key]
    if "scale_range" in dcfg:
        fields["scale_range"] = tuple(dcfg["scale_range"])
    spec = ShapesSpec(**fields)
    return generate_shapes(spec, n_per_class, ds_seed), spec.class_names


def _load_image_input(path_str: str) -> np.ndarray:
    path = Path(path_str)
    if not path.exists():
        raise MissingInputError(f"image file not found: {path}")
    return read_image(path)


def _term_from_config(tcfg: dict, net) -> WeightedTerm:
    _check_schema(tcfg, _TERM_SCHEMA, "objective[]")
    kind = tcfg.get("term")
    weight = float(tcfg.get("weight", 1.0))
    direction = tcfg.get("direction", "maximize")
    if kind in ("class_probability", "class_logit"):
        if "class_name" in tcfg:
            idx = net.class_index(tcfg["class_name"])
        elif "class_index" in tcfg:
            idx = int(tcfg["class_index"])
        else:
            raise ConfigError(f"{kind} term needs class_name or class_index")
        term = obj.ClassProbability(idx) if kind == "class_probability" else obj.ClassLogit(idx)
    elif kind == "neuron":
        term = obj.Neuron(tcfg["layer"], tcfg["channel"], tcfg["y"], tcfg["x"])
    elif kind == "channel_mean":
        term = obj.ChannelMean(tcfg["layer"], tcfg["channel"])
    elif kind == "layer_l2":
        term = obj.LayerL2(tcfg["layer"])
    elif kind == "content":
        layer = tcfg.get("layer", net.last_conv_layer())
        img = _load_image_input(tcfg["image"])
        rep = obj.representation(net, img, [layer])
        term = obj.ContentLoss(layer, {layer: Tensor(rep[layer].data.copy())})
    elif kind == "style":
        img = _load_image_input(tcfg["image"])
        layers = tcfg.get("layers")
        sig = obj.style_signature(net, img, layers, tcfg.get("layer_weights"))
        term = obj.StyleLoss(sig)
    elif kind == "total_variation":
        term = obj.TotalVariation()
    elif kind == "l2_distance":
        term = obj.L2Distance(_load_image_input(tcfg["image"]))
    else:
        raise ConfigError(f"unknown objective term {kind!r}")
    return WeightedTerm(term, weight, direction)


def _param_from_config(pcfg: dict, net, cfg: dict, seed: int):
    pcfg = dict(pcfg)
    kind = pcfg.pop("init", "noise")
    init_image_path = pcfg.pop("init_image", None)
    c, h, w = net.input_shape
    variant = pcfg.pop("kind", "pixel")
    height = pcfg.pop("height", h)
    width = pcfg.pop("width", w)
    channels = pcfg.pop("channels", c)
    if variant == "pixel":
        param = Pixel(height, width, channels)
    elif variant == "frequency":
        param = Frequency(height, width, channels)
    elif variant == "halftone":
        cell = pcfg.pop("cell_size", 2)
        param = Halftone(pcfg.pop("grid_h", height // cell), pcfg.pop("grid_w", width // cell),
                         cell, pcfg.pop("temperature", 1.0), channels)
    elif variant == "strokes":
        param = Strokes(pcfg.pop("n", 0), pcfg.pop("primitive", "disc"),
                        pcfg.pop("background", 0.5), height, width, channels)
    elif variant == "palette":
        inner = Pixel(height, width, channels)
        param = PaletteStyle(pcfg.pop("k", 4), inner, pcfg.pop("brush_size", 0),
                             pcfg.pop("temperature", 1.0))
    else:
        raise ConfigError(f"unknown parameterization kind {variant!r}")
    leftovers = {k: v for k, v in pcfg.items() if k not in ("grid_h", "grid_w", "cell_size",
                                                            "temperature", "n", "primitive",
                                                            "background", "k", "brush_size")}
    if leftovers:
        raise ConfigError(f"parameterization keys {sorted(leftovers)} do not apply to {variant}")
    source = None
    if kind == "from_image":
        path = init_image_path or cfg.get("content_image")
        if not path:
            raise ConfigError("param.init=from_image needs param.init_image or content_image")
        source = _load_image_input(path)
    return init_param(param, kind, source, seed=derived_seed(seed, "param_init"))


def _ascent_from_config(acfg: dict, seed: int, defaults: dict | None = None) -> AscentConfig:
    merged = dict(defaults or {})
    merged.update(acfg)
    projection = None
    if "projection" in merged and merged["projection"] is not None:
        p = merged.pop("projection")
        projection = Projection(p["mode"], float(p["epsilon"]))
    temperature = None
    if "temperature" in merged and merged["temperature"] is not None:
        t = dict(merged.pop("temperature"))
        temperature = TemperatureSchedule(**t)
    merged.pop("projection", None)
    merged.pop("temperature", None)
    return AscentConfig(projection=projection, temperature=temperature,
                        seed=derived_seed(seed, "ascent"), **merged)


# ---------------------------------------------------------------------------
# presets


def _preset_config(cfg: dict) -> dict:
    """Fill preset defaults without overwriting explicit keys."""
    preset = cfg.get("preset")
    if preset is None and "objective" not in cfg:
        raise ConfigError("synth needs a preset or an explicit objective list")
    if preset is not None and preset not in _PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {_PRESETS}")
    out = dict(cfg)
    ascent = dict(out.get("ascent", {}))
    param = dict(out.get("param", {}))

    def default_objective(terms: list[dict]):
        if "objective" not in out:
            out["objective"] = terms

    tv = out.get("tv_weight", 0.1)
    alpha = out.get("content_weight", 1.0)
    beta = out.get("style_weight", 100.0)
    if preset == "fv":
        if "class_name" not in out and "objective" not in out:
            raise ConfigError("preset fv needs class_name")
        default_objective(
            [{"term": "class_logit", "class_name": out.get("class_name"), "weight": 1.0,
              "direction": "maximize"},
             {"term": "total_variation", "weight": tv, "direction": "minimize"}])
        ascent.setdefault("steps", 512)
        param.setdefault("init", "noise")
    elif preset == "dream":
        terms = [{"term": "layer_l2", "weight": 1.0, "direction": "maximize"},
                 {"term": "total_variation", "weight": tv, "direction": "minimize"}]
        if "layer" in out:
            terms[0]["layer"] = out["layer"]
        default_objective(terms)
        ascent.setdefault("steps", 256)
        param.setdefault("init", "from_image")
    elif preset == "style":
        if "objective" not in out and ("content_image" not in out or "style_image" not in out):
            raise ConfigError("preset style needs content_image and style_image")
        default_objective(_style_terms(out, alpha, beta, out.get("tv_weight", 0.0)))
        ascent.setdefault("steps", 200)
        ascent.setdefault("jitter", 0)
        param.setdefault("init", "from_image")
    elif preset == "so":
        if "objective" not in out and ("content_image" not in out or "style_image" not in out):
            raise ConfigError("preset so needs content_image and style_image")
        terms = _style_terms(out, alpha, beta, 0.0)
        dream = {"term": "layer_l2", "weight": 1.0, "direction": "maximize"}
        if "layer" in out:
            dream["layer"] = out["layer"]
        default_objective(terms + [dream])
        ascent.setdefault("steps", 256)
        ascent.setdefault("jitter", 0)
        param.setdefault("init", "from_image")
    elif preset == "medium":
        if "objective" not in out and "content_image" not in out:
            raise ConfigError("preset medium needs content_image")
        default_objective(
            [{"term": "content", "image": out.get("content_image"), "weight": 1.0,
              "direction": "minimize"}])
        ascent.setdefault("steps", 1000)
        ascent.setdefault("jitter", 0)
        ascent.setdefault("temperature", {"start": 1.0, "factor": 0.85,
                                          "interval": 50, "floor": 0.05})
        param.setdefault("kind", "halftone")
        param.setdefault("init", "from_image")
    elif preset == "paint":
        if "class_name" not in out and "objective" not in out:
            raise ConfigError("preset paint needs class_name")
        default_objective(
            [{"term": "class_logit", "class_name": out.get("class_name"), "weight": 1.0,
              "direction": "maximize"}])
        param.setdefault("kind", "strokes")
        param.setdefault("init", "noise")
        out.setdefault("paint", {"budget": 100, "proposals_per_step": 32})
    out["ascent"] = ascent
    out["param"] = param
    return out


def _style_terms(out: dict, alpha: float, beta: float, tv: float) -> list[dict]:
    terms = []
    style_images = out.get("style_image")
    if style_images is not None:
        if isinstance(style_images, str):
            style_images = [style_images]
        for s in style_images:
            t = {"term": "style", "image": s, "weight": beta / len(style_images),
                 "direction": "minimize"}
            if out.get("style_layers") is not None:
                t["layers"] = out["style_layers"]
            terms.append(t)
    if out.get("content_image") is not None:
        terms.append({"term": "content", "image": out["content_image"], "weight": alpha,
                      "direction": "minimize"})
    if tv > 0:
        terms.append({"term": "total_variation", "weight": tv, "direction": "minimize"})
    return terms


# ---------------------------------------------------------------------------
# commands


def _write_manifest(out_dir: Path, payload: dict) -> None:
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _trajectory_metrics(traj: Trajectory) -> dict:
    return {
        "snapshots": [
            {"step": s.step, "value": s.value, "terms": s.term_values}
            for s in traj.snapshots
        ],
        "rejected_steps": traj.rejected_steps,
    }


def cmd_train(cfg: dict) -> int:
    _check_schema(cfg, _TRAIN_SCHEMA)
    seed = int(cfg.get("seed", 0))
    out_dir = Path(cfg.get("out", "runs/train"))
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    dataset, class_names = _dataset_from_config(cfg.get("dataset", {}), seed)
    input_shape = tuple(dataset[0].image.shape)
    net = build_net(default_layers(len(class_names)), input_shape, class_names,
                    seed=derived_seed(seed, "net_init"))
    tcfg_dict = dict(cfg.get("train", {}))
    tcfg = TrainConfig(seed=derived_seed(seed, "train"), **tcfg_dict)
    net, history = data_mod.train(net, dataset, tcfg)

    ckpt = out_dir / "checkpoint.sopt"
    save_checkpoint(net, ckpt)
    (out_dir / "metrics.json").write_text(json.dumps({"epochs": history}, indent=2) + "\n")
    resolved = dict(cfg)
    resolved["seed"] = seed
    _write_manifest(out_dir, {
        "engine_version": __version__,
        "command": "train",
        "config": resolved,
        "seed": seed,
        "timing_seconds": time.perf_counter() - t0,
        "final_val_accuracy": history[-1]["val_accuracy"],
        "checkpoint": str(ckpt),
        "metrics_path": str(out_dir / "metrics.json"),
    })
    print(f"trained {len(class_names)} classes: val accuracy "
          f"{history[-1]['val_accuracy']:.3f} -> {ckpt}")
    return EXIT_OK


def _load_net_or_fail(path_str: str):
    path = Path(path_str)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_synth(cfg: dict) -> int:
    cfg = _preset_config(cfg)
    _check_schema(cfg, _SYNTH_SCHEMA)
    if "net" not in cfg:
        raise ConfigError("synth needs a net checkpoint path")
    seed = int(cfg.get("seed", 0))
    out_dir = Path(cfg.get("out", "runs/synth"))
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    net = _load_net_or_fail(cfg["net"])
    terms = [_term_from_config(t, net) for t in cfg["objective"]]
    objective = CompositeObjective(terms)
    param = _param_from_config(cfg.get("param", {}), net, cfg, seed)

    if cfg.get("preset") == "paint":
        paint = cfg.get("paint", {})
        traj = blackbox_paint(objective, param, net,
                              budget=int(paint.get("budget", 100)),
                              proposals_per_step=int(paint.get("proposals_per_step", 32)),
                              seed=derived_seed(seed, "paint"))
    else:
        acfg = _ascent_from_config(cfg.get("ascent", {}), seed)
        traj = ascend(objective, param, net, acfg)

    suffix = image_path_suffix(traj.final_artifact.image.shape[0])
    final_path = out_dir / f"final{suffix}"
    write_image(final_path, traj.final_artifact.image)
    image_paths = [str(final_path)]
    for s in traj.snapshots:
        snap_path = out_dir / f"snap_{s.step:05d}{image_path_suffix(s.image.shape[0])}"
        write_image(snap_path, s.image)
        image_paths.append(str(snap_path))
    for fname, text in traj.final_artifact.files.items():
        (out_dir / fname).write_text(text)
        image_paths.append(str(out_dir / fname))
    (out_dir / "metrics.json").write_text(
        json.dumps(_trajectory_metrics(traj), indent=2) + "\n")

    superstim = None
    if cfg.get("report_superstimulus"):
        if "dataset" not in cfg:
            raise ConfigError("report_superstimulus needs a dataset in the config")
        dataset, _ = _dataset_from_config(cfg["dataset"], seed)
        term = next((wt.term for wt in terms
                     if isinstance(wt.term, (obj.ClassLogit, obj.Neuron, obj.ChannelMean,
                                             obj.LayerL2))), None)
        if term is None:
            raise ConfigError("report_superstimulus needs an activation term in the objective")
        report = superstimulus_ratio(net, term, dataset, traj.final_artifact.image)
        superstim = {"image_value": report.image_value, "dataset_max": report.dataset_max,
                     "ratio": report.ratio}

    resolved = dict(cfg)
    resolved["seed"] = seed
    _write_manifest(out_dir, {
        "engine_version": __version__,
        "command": "synth",
        "config": resolved,
        "seed": seed,
        "timing_seconds": time.perf_counter() - t0,
        "initial_objective": traj.initial_value,
        "final_objective": traj.final_value,
        "superstimulus": superstim,
        "images": image_paths,
        "metrics_path": str(out_dir / "metrics.json"),
        "medium": traj.final_artifact.kind,
    })
    print(f"synth {cfg.get('preset', 'custom')}: objective "
          f"{traj.initial_value:.4f} -> {traj.final_value:.4f} -> {final_path}")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    _check_schema(cfg, _EVAL_SCHEMA)
    if "net" not in cfg:
        raise ConfigError("eval needs a net checkpoint path")
    seed = int(cfg.get("seed", 0))
    out_dir = Path(cfg.get("out", "runs/eval"))
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    net = _load_net_or_fail(cfg["net"])
    if "corpus" in cfg:
        corpus_dir = Path(cfg["corpus"])
        if not corpus_dir.exists():
            raise MissingInputError(f"corpus directory not found: {corpus_dir}")
        corpus = load_manifest(corpus_dir, class_names=net.class_names)
    elif "dataset" in cfg:
        corpus, names = _dataset_from_config(cfg["dataset"], seed)
        if names != net.class_names:
            raise ConfigError(f"dataset classes {names} != net classes {net.class_names}")
    else:
        raise ConfigError("eval needs a corpus directory or a dataset")

    accuracy, confusion = evaluate(net, corpus)
    report = {
        "accuracy": accuracy,
        "retention": accuracy,  # top-1 vs the corpus' declared content labels
        "confusion": confusion.tolist(),
        "class_names": net.class_names,
        "n_images": len(corpus),
    }
    if "net_b" in cfg:
        net_b = _load_net_or_fail(cfg["net_b"])
        rate, _pairs = cross_net_agreement(net, net_b, [c.image for c in corpus])
        acc_b, _ = evaluate(net_b, corpus)
        report["cross_net_agreement"] = rate
        report["accuracy_net_b"] = acc_b
        report["retention_net_b"] = acc_b

    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    resolved = dict(cfg)
    resolved["seed"] = seed
    _write_manifest(out_dir, {
        "engine_version": __version__,
        "command": "eval",
        "config": resolved,
        "seed": seed,
        "timing_seconds": time.perf_counter() - t0,
        "report_path": str(out_dir / "report.json"),
        "accuracy": accuracy,
    })
    print(f"eval: accuracy {accuracy:.3f} over {len(corpus)} images"
          + (f", cross-net agreement {report['cross_net_agreement']:.3f}"
               if "cross_net_agreement" in report else ""))
    return EXIT_OK


def cmd_inspect(path_str: str) -> int:
    path = Path(path_str)
    if not path.exists():
        raise MissingInputError(f"no such file: {path}")
    head = path.open("rb").read(4)
    if head == b"SOPT":
        net = load_checkpoint(path)
        print(describe(net))
        return EXIT_OK
    if head[:2] in (b"P5", b"P6"):
        img = read_image(path)
        print(f"{path.name}: {'PGM' if head[:2] == b'P5' else 'PPM'} image, "
              f"shape {img.shape}, range [{img.min():.3f}, {img.max():.3f}]")
        return EXIT_OK
    try:
        payload = json.loads(path.read_text())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ConfigError(f"cannot inspect {path}: not a checkpoint, image, or JSON")
    if "engine_version" in payload:
        print(f"run manifest: command={payload.get('command')} "
              f"seed={payload.get('seed')} version={payload.get('engine_version')}")
        for key in ("final_val_accuracy", "initial_objective", "final_objective", "accuracy"):
            if payload.get(key) is not None:
                print(f"  {key}: {payload[key]}")
        if payload.get("images"):
            print(f"  images: {len(payload['images'])} files")
    else:
        print(json.dumps(payload, indent=2)[:2000])
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensopt",
        description="Train an art-free recognition net and synthesize images against it.")
    parser.add_argument("--version", action="version", version=f"sensopt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train a recognition net on shapes or a manifest corpus"),
        ("synth", "synthesize an image (presets: fv dream style so medium paint)"),
        ("eval", "classification report, retention, and cross-net agreement"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="top-level seed")
    p = sub.add_parser("inspect", help="summarize a checkpoint, manifest, or image")
    p.add_argument("path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "inspect":
            return cmd_inspect(args.path)
        cfg = load_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "synth":
            return cmd_synth(cfg)
        return cmd_eval(cfg)
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (TrainingDivergedError, AscentDivergedError, NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SensoptError, TypeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
