"""Input validation helpers for the estimator layer."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_image_batch(X, image_shape: tuple[int, int, int] | None = None) -> np.ndarray:
    """Coerce estimator input to an NCHW float32 batch in [0, 1].

    Accepts 4-D (n, c, h, w), 3-D (n, h, w) single-channel, or flat 2-D
    (n, c*h*w) when ``image_shape`` is known. Values slightly outside [0, 1]
    from float round trips are clipped; real violations raise.
    """
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 2:
        if image_shape is None:
            raise ShapeError(
                "flat 2-D input needs image_shape=(c, h, w) to be reshaped")
        arr = arr.reshape((arr.shape[0],) + tuple(image_shape))
    elif arr.ndim == 3:
        arr = arr[:, None, :, :]
    elif arr.ndim != 4:
        raise ShapeError(f"expected image batch, got {arr.ndim}-D input of shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ShapeError("empty image batch")
    if image_shape is not None and tuple(arr.shape[1:]) != tuple(image_shape):
        raise ShapeError(f"images have shape {tuple(arr.shape[1:])}, expected {tuple(image_shape)}")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < -1e-4 or hi > 1.0 + 1e-4:
        raise ShapeError(f"pixel values must lie in [0, 1], got range [{lo:.4g}, {hi:.4g}]")
    return np.ascontiguousarray(np.clip(arr, 0.0, 1.0))


def as_single_image(x, image_shape: tuple[int, int, int] | None = None) -> np.ndarray:
    """Coerce one image to CHW float32 in [0, 1]."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ShapeError(f"expected a single CHW image, got shape {arr.shape}")
    return as_image_batch(arr[None], image_shape)[0]


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise ShapeError(
            f"{type(estimator).__name__} is not fitted yet; call fit first")
