"""Binary file formats: PPM/PGM images and the TENS1 tensor dump.

Images travel as CHW float32 arrays in [0, 1]. On disk they are 8-bit
binary PGM (P5, one channel) or PPM (P6, three channels) with maxval 255,
so a file -> load -> save round trip is byte-identical.

TENS1 is the raw tensor dump used for golden-file tests and as the
parameter payload inside checkpoints: magic ``TENS``, u8 version=1,
u8 rank, little-endian u32 dims, then the row-major float32 payload,
also little-endian.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ShapeError, TruncatedFileError, VersionMismatchError

TENS1_MAGIC = b"TENS"
TENS1_VERSION = 1


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"unexpected end of file while reading {what}")
    return buf


# ---------------------------------------------------------------------------
# TENS1


def write_tens1(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if arr.ndim > 255:
        raise ShapeError("TENS1 rank limit is 255")
    fh.write(TENS1_MAGIC)
    fh.write(struct.pack("<BB", TENS1_VERSION, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f4").tobytes())


def read_tens1(fh) -> np.ndarray:
    magic = _read_exact(fh, 4, "TENS1 magic")
    if magic != TENS1_MAGIC:
        raise BadMagicError(f"expected TENS1 magic {TENS1_MAGIC!r}, got {magic!r}")
    version, rank = struct.unpack("<BB", _read_exact(fh, 2, "TENS1 header"))
    if version != TENS1_VERSION:
        raise VersionMismatchError(f"TENS1 version {version} not supported")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "TENS1 dims"))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, 4 * count, "TENS1 payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tens1(fh, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tens1(fh)


# ---------------------------------------------------------------------------
# PPM / PGM


def encode_image_bytes(image: np.ndarray) -> bytes:
    """Encode a CHW float array in [0, 1] as binary PGM (C=1) or PPM (C=3)."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ShapeError(f"expected CHW image with 1 or 3 channels, got shape {image.shape}")
    c, h, w = image.shape
    data = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    if c == 1:
        buf.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        buf.write(data[0].tobytes())
    else:
        buf.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        buf.write(data.transpose(1, 2, 0).tobytes())
    return buf.getvalue()


def write_image(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_image_bytes(image))


def _read_token(fh) -> bytes:
    """Next whitespace-delimited token, skipping ``#`` comment lines."""
    tok = b""
    while True:
        ch = fh.read(1)
        if ch == b"":
            if tok:
                return tok
            raise TruncatedFileError("unexpected end of file in image header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def read_image(path) -> np.ndarray:
    """Read a binary PGM/PPM into a CHW float32 array in [0, 1]."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 2, "image magic")
        if magic not in (b"P5", b"P6"):
            raise BadMagicError(f"expected P5 or P6 image, got magic {magic!r}")
        channels = 1 if magic == b"P5" else 3
        w = int(_read_token(fh))
        h = int(_read_token(fh))
        maxval = int(_read_token(fh))
        if maxval <= 0 or maxval > 255:
            raise ShapeError(f"only 8-bit images supported, got maxval {maxval}")
        payload = _read_exact(fh, w * h * channels, "image payload")
    raw = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        chw = raw.reshape(1, h, w)
    else:
        chw = raw.reshape(h, w, 3).transpose(2, 0, 1)
    return np.ascontiguousarray(chw.astype(np.float32) / float(maxval))


def image_path_suffix(channels: int) -> str:
    return ".pgm" if channels == 1 else ".ppm"


def infer_channels(path) -> int:
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return 1
    if magic == b"P6":
        return 3
    raise BadMagicError(f"expected P5 or P6 image at {Path(path).name}, got {magic!r}")
