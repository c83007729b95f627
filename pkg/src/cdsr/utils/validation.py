"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

import numbers

import numpy as np


def check_image(img, *, name="image", min_size=1, allow_gray=False) -> np.ndarray:
    """Return ``img`` as a float64 (H, W, 3) array in [0, 1].

    uint8 input is rescaled by 1/255. Grey images are broadcast to three
    channels when ``allow_gray``.
    """
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    elif not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got dtype {arr.dtype}")
    arr = arr.astype(np.float64, copy=False)
    if arr.ndim == 2 and allow_gray:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    if min(arr.shape[:2]) < min_size:
        raise ValueError(f"{name} is {arr.shape[0]}x{arr.shape[1]}, smaller than {min_size}px")
    return arr


def check_images(images, *, name="X", min_size=1, same_shape=False) -> list[np.ndarray]:
    """Validate a non-empty sequence of images (or a 4-D array)."""
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    images = [check_image(im, name=f"{name}[{i}]", min_size=min_size) for i, im in enumerate(images)]
    if not images:
        raise ValueError(f"{name} is empty")
    if same_shape and len({im.shape for im in images}) > 1:
        raise ValueError(f"all images in {name} must share one shape")
    return images


def check_random_state_int(seed) -> int:
    if seed is None:
        return 0
    if isinstance(seed, numbers.Integral):
        return int(seed)
    raise TypeError(f"random_state must be an int or None, got {type(seed).__name__}")
