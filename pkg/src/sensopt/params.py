"""Image parameterizations: decoders from free parameters to [0,1] images.

Five variants bridge free-pixel synthesis and hard physical media:

* ``Pixel`` - raw values through a logistic squash.
* ``Frequency`` - real spectral coefficients, scaled per frequency by
  1/max(f, f0) (a 1/f preconditioner), inverse cosine transform, squash.
* ``Halftone`` - one ink value per grid cell; decoding is a temperature
  relaxation, finalizing thresholds to exactly {0, 1}.
* ``Strokes`` - discs or segments with position/size/color/opacity,
  soft-edge rasterized for differentiability; finalizing emits the
  vector program (SVG).
* ``PaletteStyle`` - wraps an inner parameterization, softly assigning
  every pixel to the nearest of k free palette colors; finalizing
  hard-assigns.

Hard media are optimized through these relaxations with the temperature
annealed, then finalized (relax-then-round). ``decode`` is differentiable
for every variant; ``finalize`` output is a fixed point of the medium's
constraint.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.fft

from . import autodiff as ad
from .autodiff import Tensor, record_op
from .errors import FromImageUnsupportedError, ShapeError

EDGE_SIGMA = 1.0  # soft raster edge width, pixels
_DIST_EPS = 1e-6  # keeps sqrt differentiable at zero distance
_CLIP_LO, _CLIP_HI = 0.01, 0.99  # image clamp before inverse logistic

MIN_DISC_RADIUS = 1.0
MIN_SEGMENT_LENGTH = 2.0
MIN_SEGMENT_THICKNESS = 0.75


@dataclass
class Pixel:
    height: int
    width: int
    channels: int = 3
    values: Tensor | None = None  # (c, h, w) raw


@dataclass
class Frequency:
    height: int
    width: int
    channels: int = 3
    coeffs: Tensor | None = None  # (c, h, w) real spectrum


@dataclass
class Halftone:
    grid_h: int
    grid_w: int
    cell_size: int = 2
    temperature: float = 1.0
    channels: int = 1
    ink: Tensor | None = None  # (grid_h, grid_w) raw

    @property
    def height(self) -> int:
        return self.grid_h * self.cell_size

    @property
    def width(self) -> int:
        return self.grid_w * self.cell_size


@dataclass
class Strokes:
    n: int
    primitive: str = "disc"  # disc | segment
    background: float | tuple[float, ...] = 0.5
    height: int = 32
    width: int = 32
    channels: int = 3
    raw: Tensor | None = None  # (n, stroke arity)

    def __post_init__(self):
        if self.primitive not in ("disc", "segment"):
            raise ShapeError(f"stroke primitive must be disc or segment, got {self.primitive!r}")

    @property
    def arity(self) -> int:
        geo = 4 if self.primitive == "disc" else 6
        return geo + self.channels


@dataclass
class PaletteStyle:
    k: int
    inner: "Parameterization"
    brush_size: int = 0  # odd box-blur width in pixels, 0/1 = off
    temperature: float = 1.0
    colors: Tensor | None = None  # (k, channels) raw

    def __post_init__(self):
        if self.k < 1:
            raise ShapeError("palette needs k >= 1 colors")
        if self.brush_size > 1 and self.brush_size % 2 == 0:
            raise ShapeError(f"brush size must be odd (or 0/1 for none), got {self.brush_size}")

    @property
    def height(self) -> int:
        return self.inner.height

    @property
    def width(self) -> int:
        return self.inner.width

    @property
    def channels(self) -> int:
        return self.inner.channels


Parameterization = Union[Pixel, Frequency, Halftone, Strokes, PaletteStyle]


@dataclass
class FinalArtifact:
    """Constraint-exact image plus the medium's own description."""

    image: np.ndarray  # CHW float32, a fixed point of the medium constraint
    kind: str
    description: dict
    files: dict[str, str]  # suggested filename -> text payload (SVG, cut grid)


def image_shape(param: Parameterization) -> tuple[int, int, int]:
    return (param.channels, param.height, param.width)


def param_tensors(param: Parameterization) -> list[Tensor]:
    """The leaf tensors a gradient optimizer updates, in a fixed order."""
    if isinstance(param, Pixel):
        return [_filled(param.values, "Pixel")]
    if isinstance(param, Frequency):
        return [_filled(param.coeffs, "Frequency")]
    if isinstance(param, Halftone):
        return [_filled(param.ink, "Halftone")]
    if isinstance(param, Strokes):
        return [_filled(param.raw, "Strokes")]
    if isinstance(param, PaletteStyle):
        return [_filled(param.colors, "PaletteStyle")] + param_tensors(param.inner)
    raise ShapeError(f"unknown parameterization {type(param).__name__}")


def set_param_tensors(param: Parameterization, tensors: list[Tensor]) -> None:
    """Assign leaves in the order ``param_tensors`` reports them."""
    if isinstance(param, Pixel):
        (param.values,) = tensors
    elif isinstance(param, Frequency):
        (param.coeffs,) = tensors
    elif isinstance(param, Halftone):
        (param.ink,) = tensors
    elif isinstance(param, Strokes):
        (param.raw,) = tensors
    elif isinstance(param, PaletteStyle):
        param.colors = tensors[0]
        set_param_tensors(param.inner, tensors[1:])
    else:
        raise ShapeError(f"unknown parameterization {type(param).__name__}")


def copy_param(param: Parameterization) -> Parameterization:
    out = copy.deepcopy(_strip_tensors(param))
    _restore_tensors(out, [Tensor(t.data.copy()) for t in param_tensors(param)])
    return out


def _strip_tensors(param):
    # deepcopy of Tensors is wasteful; copy structure only, re-attach after
    clone = copy.copy(param)
    if isinstance(param, PaletteStyle):
        clone.inner = _strip_tensors(param.inner)
    return clone


def _restore_tensors(param, tensors):
    set_param_tensors(param, tensors)


def set_temperature(param: Parameterization, temperature: float) -> None:
    if isinstance(param, (Halftone, PaletteStyle)):
        param.temperature = float(temperature)
    if isinstance(param, PaletteStyle):
        set_temperature(param.inner, temperature)


def _filled(t: Tensor | None, name: str) -> Tensor:
    if t is None:
        raise ShapeError(f"{name} parameterization has no values; call init_param first")
    return t


def _expect_shape(t: Tensor, shape: tuple[int, ...], name: str) -> None:
    if tuple(t.shape) != tuple(shape):
        raise ShapeError(f"{name} parameter shape {tuple(t.shape)} != expected {shape}")


# ---------------------------------------------------------------------------
# decode


def _freq_scale(h: int, w: int) -> np.ndarray:
    fy = np.arange(h, dtype=np.float64) / (2.0 * h)
    fx = np.arange(w, dtype=np.float64) / (2.0 * w)
    f = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    f0 = 1.0 / max(h, w)
    return (1.0 / np.maximum(f, f0)).astype(np.float32)


def _idct2(t: Tensor) -> Tensor:
    """Orthonormal inverse 2-D cosine transform over the last two axes."""
    out = scipy.fft.idctn(t.data, axes=(-2, -1), norm="ortho").astype(np.float32)

    def back(g: np.ndarray):
        return (scipy.fft.dctn(g, axes=(-2, -1), norm="ortho").astype(np.float32),)

    return record_op((t,), out, back, context="idct2")


def _box_blur(img: Tensor, width: int) -> Tensor:
    c, h, w = img.shape
    pad = width // 2
    kernel = Tensor(np.full((1, 1, width, width), 1.0 / (width * width), dtype=np.float32))
    x = ad.reshape(img, (c, 1, h, w))
    blurred = ad.conv2d(x, kernel, Tensor(np.zeros(1, dtype=np.float32)), stride=1, pad=pad)
    return ad.reshape(blurred, (c, h, w))


def _grids(h: int, w: int) -> tuple[Tensor, Tensor]:
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float32),
                         np.arange(w, dtype=np.float32), indexing="ij")
    return Tensor(gx), Tensor(gy)


def _background_colors(param: Strokes) -> np.ndarray:
    bg = param.background
    if isinstance(bg, (int, float)):
        return np.full(param.channels, float(bg), dtype=np.float32)
    bg = np.asarray(bg, dtype=np.float32)
    if bg.shape != (param.channels,):
        raise ShapeError(f"background color needs {param.channels} components, got {bg.shape}")
    return bg


def _apply_stroke(chans: list[Tensor], row: Tensor, param: Strokes,
                  gx: Tensor, gy: Tensor) -> list[Tensor]:
    """Alpha-composite one stroke (1-D raw ``row``) over per-channel images."""
    h, w = param.height, param.width
    cx = ad.scale(ad.sigmoid(row[(0,)]), w - 1.0)
    cy = ad.scale(ad.sigmoid(row[(1,)]), h - 1.0)
    if param.primitive == "disc":
        r_max = min(h, w) / 2.0
        radius = ad.add(ad.scale(ad.sigmoid(row[(2,)]), r_max - MIN_DISC_RADIUS),
                        Tensor(np.float32(MIN_DISC_RADIUS)))
        dx = ad.sub(gx, cx)
        dy = ad.sub(gy, cy)
        dist = ad.sqrt(ad.add(ad.add(ad.square(dx), ad.square(dy)),
                              Tensor(np.float32(_DIST_EPS))))
        cov = ad.sigmoid(ad.scale(ad.sub(radius, dist), 1.0 / EDGE_SIGMA))
        opacity_idx = 3
    else:
        theta = row[(2,)]
        l_max = 0.75 * max(h, w)
        t_max = min(h, w) / 4.0
        length = ad.add(ad.scale(ad.sigmoid(row[(3,)]), l_max - MIN_SEGMENT_LENGTH),
                        Tensor(np.float32(MIN_SEGMENT_LENGTH)))
        thickness = ad.add(
            ad.scale(ad.sigmoid(row[(4,)]), t_max - MIN_SEGMENT_THICKNESS),
            Tensor(np.float32(MIN_SEGMENT_THICKNESS)))
        ux, uy = ad.cos(theta), ad.sin(theta)
        half = ad.scale(length, 0.5)
        ax = ad.sub(cx, ad.mul(ux, half))
        ay = ad.sub(cy, ad.mul(uy, half))
        px = ad.sub(gx, ax)
        py = ad.sub(gy, ay)
        # position along the segment, clamped to its extent
        proj = ad.mul(ad.add(ad.mul(px, ux), ad.mul(py, uy)), ad.reciprocal(length))
        frac = ad.clamp(proj, 0.0, 1.0)
        qx = ad.mul(frac, ad.mul(ux, length))
        qy = ad.mul(frac, ad.mul(uy, length))
        ddx = ad.sub(px, qx)
        ddy = ad.sub(py, qy)
        dist = ad.sqrt(ad.add(ad.add(ad.square(ddx), ad.square(ddy)),
                              Tensor(np.float32(_DIST_EPS))))
        cov = ad.sigmoid(ad.scale(ad.sub(ad.scale(thickness, 0.5), dist), 1.0 / EDGE_SIGMA))
        opacity_idx = 5
    alpha = ad.mul(ad.sigmoid(row[(opacity_idx,)]), cov)
    out = []
    for ch, img in enumerate(chans):
        color = ad.sigmoid(row[(opacity_idx + 1 + ch,)])
        painted = ad.mul(alpha, color)
        out.append(ad.add(ad.sub(img, ad.mul(img, alpha)), painted))
    return out


def _decode_strokes(param: Strokes) -> Tensor:
    raw = _filled(param.raw, "Strokes")
    _expect_shape(raw, (param.n, param.arity), "Strokes")
    h, w, c = param.height, param.width, param.channels
    gx, gy = _grids(h, w)
    bg = _background_colors(param)
    chans = [Tensor(np.full((h, w), bg[ch], dtype=np.float32)) for ch in range(c)]
    for i in range(param.n):
        chans = _apply_stroke(chans, raw[(i,)], param, gx, gy)
    return ad.stack(chans, axis=0)


def composite_stroke(image: np.ndarray, row: np.ndarray, param: Strokes) -> np.ndarray:
    """Forward-only composite of one stroke over a CHW image.

    Shares the decode code path, so painting strokes one at a time onto the
    running canvas reproduces ``decode`` of the grown parameter bit-for-bit.
    """
    gx, gy = _grids(param.height, param.width)
    chans = [Tensor(np.ascontiguousarray(image[ch])) for ch in range(param.channels)]
    out = _apply_stroke(chans, Tensor(np.asarray(row, dtype=np.float32)), param, gx, gy)
    return np.stack([t.data for t in out], axis=0)


def _decode_palette(param: PaletteStyle) -> Tensor:
    colors_raw = _filled(param.colors, "PaletteStyle")
    _expect_shape(colors_raw, (param.k, param.channels), "PaletteStyle")
    base = decode(param.inner)
    if param.brush_size > 1:
        base = _box_blur(base, param.brush_size)
    colors = ad.sigmoid(colors_raw)  # (k, c)
    c = param.channels
    dists = []
    for j in range(param.k):
        cj = ad.reshape(colors[(j,)], (c, 1, 1))
        dists.append(ad.tsum(ad.square(ad.sub(base, cj)), axis=0))
    d = ad.stack(dists, axis=0)  # (k, h, w)
    weights = ad.softmax(ad.scale(d, -1.0 / param.temperature), axis=0)
    out = []
    for ch in range(c):
        col_ch = ad.reshape(colors[(slice(None), ch)], (param.k, 1, 1))
        out.append(ad.tsum(ad.mul(weights, col_ch), axis=0))
    return ad.stack(out, axis=0)


def decode(param: Parameterization) -> Tensor:
    """Differentiable decode to a CHW image in [0, 1]."""
    if isinstance(param, Pixel):
        values = _filled(param.values, "Pixel")
        _expect_shape(values, image_shape(param), "Pixel")
        return ad.sigmoid(values)
    if isinstance(param, Frequency):
        coeffs = _filled(param.coeffs, "Frequency")
        _expect_shape(coeffs, image_shape(param), "Frequency")
        scaled = ad.mul(coeffs, Tensor(_freq_scale(param.height, param.width)[None, :, :]))
        return ad.sigmoid(_idct2(scaled))
    if isinstance(param, Halftone):
        ink = _filled(param.ink, "Halftone")
        _expect_shape(ink, (param.grid_h, param.grid_w), "Halftone")
        soft = ad.sigmoid(ad.scale(ink, 1.0 / param.temperature))
        up = ad.upsample2d(soft, param.cell_size)
        return ad.stack([up] * param.channels, axis=0)
    if isinstance(param, Strokes):
        return _decode_strokes(param)
    if isinstance(param, PaletteStyle):
        return _decode_palette(param)
    raise ShapeError(f"unknown parameterization {type(param).__name__}")


# ---------------------------------------------------------------------------
# finalize


def apply_medium_constraint(param: Parameterization, image: np.ndarray) -> np.ndarray:
    """Project an image onto the medium's hard constraint set."""
    image = np.asarray(image, dtype=np.float32)
    if isinstance(param, Halftone):
        return (image >= 0.5).astype(np.float32)
    if isinstance(param, PaletteStyle):
        colors = _palette_colors(param)  # (k, c)
        c, h, w = image.shape
        flat = image.reshape(c, -1).T  # (hw, c)
        d = ((flat[:, None, :] - colors[None, :, :]) ** 2).sum(axis=2)
        assign = d.argmin(axis=1)
        return np.ascontiguousarray(colors[assign].T.reshape(c, h, w)).astype(np.float32)
    return image.copy()


def _palette_colors(param: PaletteStyle) -> np.ndarray:
    raw = _filled(param.colors, "PaletteStyle").data.astype(np.float64)
    return (1.0 / (1.0 + np.exp(-raw))).astype(np.float32)


def _stroke_list(param: Strokes) -> list[dict]:
    raw = _filled(param.raw, "Strokes").data.astype(np.float64)
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    h, w, c = param.height, param.width, param.channels
    out = []
    for i in range(param.n):
        row = raw[i]
        stroke: dict = {
            "primitive": param.primitive,
            "cx": float(sig(row[0]) * (w - 1)),
            "cy": float(sig(row[1]) * (h - 1)),
        }
        if param.primitive == "disc":
            stroke["radius"] = float(MIN_DISC_RADIUS + sig(row[2]) * (min(h, w) / 2.0 - MIN_DISC_RADIUS))
            op_idx = 3
        else:
            l_max = 0.75 * max(h, w)
            t_max = min(h, w) / 4.0
            stroke["angle"] = float(row[2])
            stroke["length"] = float(MIN_SEGMENT_LENGTH + sig(row[3]) * (l_max - MIN_SEGMENT_LENGTH))
            stroke["thickness"] = float(MIN_SEGMENT_THICKNESS + sig(row[4]) * (t_max - MIN_SEGMENT_THICKNESS))
            op_idx = 5
        stroke["opacity"] = float(sig(row[op_idx]))
        stroke["color"] = [float(sig(v)) for v in row[op_idx + 1: op_idx + 1 + c]]
        out.append(stroke)
    return out


def _svg_color(color: list[float]) -> str:
    if len(color) == 1:
        color = color * 3
    r, g, b = (int(round(255 * v)) for v in color[:3])
    return f"rgb({r},{g},{b})"


def strokes_svg(param: Strokes) -> str:
    """SVG rendering of the vector program (circles / lines)."""
    h, w = param.height, param.width
    bg = _background_colors(param).tolist()
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'  <rect width="{w}" height="{h}" fill="{_svg_color(bg)}"/>',
    ]
    for s in _stroke_list(param):
        color = _svg_color(s["color"])
        if s["primitive"] == "disc":
            parts.append(
                f'  <circle cx="{s["cx"]:.3f}" cy="{s["cy"]:.3f}" r="{s["radius"]:.3f}" '
                f'fill="{color}" fill-opacity="{s["opacity"]:.3f}"/>')
        else:
            half = s["length"] / 2.0
            x0 = s["cx"] - np.cos(s["angle"]) * half
            y0 = s["cy"] - np.sin(s["angle"]) * half
            x1 = s["cx"] + np.cos(s["angle"]) * half
            y1 = s["cy"] + np.sin(s["angle"]) * half
            parts.append(
                f'  <line x1="{x0:.3f}" y1="{y0:.3f}" x2="{x1:.3f}" y2="{y1:.3f}" '
                f'stroke="{color}" stroke-width="{s["thickness"]:.3f}" '
                f'stroke-opacity="{s["opacity"]:.3f}" stroke-linecap="round"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def halftone_cut_grid(param: Halftone) -> str:
    """Text plan of the binary grid, one row of 0/1 per line."""
    ink = _filled(param.ink, "Halftone").data
    bits = (ink >= 0.0).astype(np.uint8)
    return "\n".join("".join(str(int(v)) for v in row) for row in bits) + "\n"


def finalize(param: Parameterization) -> FinalArtifact:
    """Constraint-exact artifact plus medium description.

    The image is a fixed point of ``apply_medium_constraint``: hard media
    round to their exact value set, free media pass decode through.
    """
    img = decode(param).data
    if isinstance(param, Halftone):
        hard = apply_medium_constraint(param, img)
        return FinalArtifact(
            image=hard, kind="halftone",
            description={"grid": [param.grid_h, param.grid_w], "cell_size": param.cell_size},
            files={"cuts.txt": halftone_cut_grid(param)})
    if isinstance(param, PaletteStyle):
        base = decode(param.inner)
        if param.brush_size > 1:
            base = _box_blur(base, param.brush_size)
        hard = apply_medium_constraint(param, base.data)
        return FinalArtifact(
            image=hard, kind="palette",
            description={"palette": _palette_colors(param).tolist()},
            files={})
    if isinstance(param, Strokes):
        return FinalArtifact(
            image=img.copy(), kind="strokes",
            description={"strokes": _stroke_list(param),
                         "background": _background_colors(param).tolist()},
            files={"medium.svg": strokes_svg(param)})
    return FinalArtifact(image=img.copy(), kind="digital", description={}, files={})


# ---------------------------------------------------------------------------
# initialization


def _logit(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, _CLIP_LO, _CLIP_HI).astype(np.float64)
    return np.log(x / (1.0 - x)).astype(np.float32)


def init_param(param: Parameterization, mode: str = "noise", source=None,
               seed: int = 0) -> Parameterization:
    """Return a filled copy: small Gaussian noise, or an inverse of ``source``.

    Noise mode draws N(0, 0.01) in the unconstrained space, i.e. a decode
    near the neutral mid-gray point. from_image solves for parameters whose
    decode approximates the source (exact inverse logistic for Pixel, exact
    spectral fit for Frequency, per-cell means for Halftone). Strokes have
    no faithful inverse and raise FromImageUnsupportedError.
    """
    if mode not in ("noise", "from_image"):
        raise ShapeError(f"init mode must be noise or from_image, got {mode!r}")
    out = copy.copy(param)
    if isinstance(param, PaletteStyle):
        out.inner = init_param(param.inner, mode, source,
                               seed if mode == "noise" else seed)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x1A17)))

    if mode == "noise":
        if isinstance(out, Pixel):
            out.values = Tensor(rng.normal(0.0, 0.01, image_shape(out)).astype(np.float32))
        elif isinstance(out, Frequency):
            out.coeffs = Tensor(rng.normal(0.0, 0.01, image_shape(out)).astype(np.float32))
        elif isinstance(out, Halftone):
            out.ink = Tensor(rng.normal(0.0, 0.01, (out.grid_h, out.grid_w)).astype(np.float32))
        elif isinstance(out, Strokes):
            out.raw = Tensor(rng.normal(0.0, 0.01, (out.n, out.arity)).astype(np.float32))
        elif isinstance(out, PaletteStyle):
            out.colors = Tensor(rng.normal(0.0, 0.01, (out.k, out.channels)).astype(np.float32))
        return out

    if source is None:
        raise ShapeError("from_image mode needs a source image")
    src = source.data if isinstance(source, Tensor) else np.asarray(source, dtype=np.float32)
    if isinstance(out, Strokes):
        raise FromImageUnsupportedError(
            "strokes have no faithful inverse; use the blackbox painter for image targets")
    if tuple(src.shape) != image_shape(param):
        raise ShapeError(f"source shape {tuple(src.shape)} != decoded shape {image_shape(param)}")

    if isinstance(out, Pixel):
        out.values = Tensor(_logit(src))
    elif isinstance(out, Frequency):
        spatial = _logit(src)
        spec = scipy.fft.dctn(spatial, axes=(-2, -1), norm="ortho")
        out.coeffs = Tensor((spec / _freq_scale(out.height, out.width)[None]).astype(np.float32))
    elif isinstance(out, Halftone):
        m = src.mean(axis=0)
        cells = m.reshape(out.grid_h, out.cell_size, out.grid_w, out.cell_size).mean(axis=(1, 3))
        out.ink = Tensor(_logit(cells) * np.float32(out.temperature))
    elif isinstance(out, PaletteStyle):
        ys = rng.integers(0, param.height, size=out.k)
        xs = rng.integers(0, param.width, size=out.k)
        samples = src[:, ys, xs].T  # (k, c)
        out.colors = Tensor(_logit(samples))
    return out
