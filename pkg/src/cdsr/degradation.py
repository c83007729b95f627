"""Blur kernels and the classical blur -> subsample -> noise degradation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

VALID_SCALES = (2, 3, 4)
NOISE_RANGE = (0.0, 15.0)


@dataclass(frozen=True)
class BlurKernel:
    values: np.ndarray
    sigma1: float
    sigma2: float
    theta: float

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DegradationSpec:
    kernel: BlurKernel
    scale: int
    noise_level: float = 0.0

    def __post_init__(self):
        _check_scale(self.scale)
        lo, hi = NOISE_RANGE
        if not lo <= self.noise_level <= hi:
            raise ValueError(f"noise_level must lie in [{lo}, {hi}], got {self.noise_level}")


def _check_scale(scale):
    if scale not in VALID_SCALES:
        raise ValueError(f"scale must be one of {VALID_SCALES}, got {scale!r}")


def make_aniso_gaussian_kernel(sigma1: float, sigma2: float, theta: float, size: int = 21) -> BlurKernel:
    """Anisotropic Gaussian sampled at integer offsets from the centre cell.

    The covariance is ``R(theta) diag(sigma1**2, sigma2**2) R(theta)^T``;
    offsets are (column, row) so that theta rotates counter-clockwise in the
    image x/y frame. The grid is normalised to unit sum.
    """
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError(f"sigmas must be positive, got {sigma1}, {sigma2}")
    if size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    cov = rot @ np.diag([sigma1 ** 2, sigma2 ** 2]) @ rot.T
    prec = np.linalg.inv(cov)
    r = size // 2
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    quad = prec[0, 0] * xs ** 2 + 2.0 * prec[0, 1] * xs * ys + prec[1, 1] * ys ** 2
    k = np.exp(-0.5 * quad)
    k /= k.sum()
    return BlurKernel(values=k, sigma1=float(sigma1), sigma2=float(sigma2), theta=float(theta))


def delta_kernel(size: int = 21) -> BlurKernel:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return BlurKernel(values=k, sigma1=0.0, sigma2=0.0, theta=0.0)


def sigma_range(scale: int) -> tuple[float, float]:
    _check_scale(scale)
    return 0.175 * scale, 2.5 * scale


def sample_degradation(rng_seed, scale: int, noise_max: float = 0.0, kernel_size: int = 21) -> DegradationSpec:
    """Draw sigma1, sigma2 ~ U(0.175s, 2.5s), theta ~ U(0, pi), noise ~ U(0, noise_max).

    ``rng_seed`` may be an int, a SeedSequence or an existing Generator.
    """
    _check_scale(scale)
    if noise_max < 0:
        raise ValueError("noise_max must be >= 0")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    lo, hi = sigma_range(scale)
    s1, s2 = rng.uniform(lo, hi, size=2)
    theta = rng.uniform(0.0, math.pi)
    noise = float(rng.uniform(0.0, noise_max)) if noise_max > 0 else 0.0
    return DegradationSpec(make_aniso_gaussian_kernel(s1, s2, theta, kernel_size), scale, noise)


def blur_subsample(x: torch.Tensor, kernels: torch.Tensor, scale: int) -> torch.Tensor:
    """Blur ``x`` (N, C, H, W) with per-sample kernels (N, k, k), keep every ``scale``-th pixel.

    Reflective padding; the kernels are point-symmetric so correlation and
    convolution coincide.
    """
    n, c, h, w = x.shape
    k = kernels.shape[-1]
    pad = k // 2
    xp = F.pad(x.reshape(1, n * c, h, w), (pad, pad, pad, pad), mode="reflect")
    weight = kernels.to(x.dtype).repeat_interleave(c, dim=0).unsqueeze(1)
    # strided conv evaluates only the kept positions
    out = F.conv2d(xp, weight, stride=scale, groups=n * c)
    return out.reshape(n, c, out.shape[-2], out.shape[-1])


def degrade(hr: np.ndarray, spec: DegradationSpec, rng_seed=None, clamp: bool = True) -> np.ndarray:
    """Degrade an RGB image (H, W, 3) in [0, 1] to its LR counterpart (H/s, W/s, 3).

    Noise std is ``spec.noise_level / 255``; Gaussian noise is added in the
    float domain and the result clamped to [0, 1] without quantisation.
    """
    hr = np.asarray(hr, dtype=np.float64)
    if hr.ndim != 3 or hr.shape[2] != 3:
        raise ValueError(f"expected an RGB image of shape (H, W, 3), got {hr.shape}")
    s = spec.scale
    h, w = hr.shape[:2]
    if h % s or w % s:
        raise ValueError(f"image size {h}x{w} is not divisible by scale {s}")
    pad = spec.kernel.size // 2
    if pad >= h or pad >= w:
        raise ValueError(f"image {h}x{w} too small for a {spec.kernel.size}x{spec.kernel.size} kernel")
    x = torch.from_numpy(hr).permute(2, 0, 1).unsqueeze(0)
    k = torch.from_numpy(spec.kernel.values).unsqueeze(0)
    lr = blur_subsample(x, k, s)[0].permute(1, 2, 0).numpy()
    if spec.noise_level > 0:
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        lr = lr + rng.standard_normal(lr.shape) * (spec.noise_level / 255.0)
    if clamp:
        lr = np.clip(lr, 0.0, 1.0)
    return lr


def modcrop(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[: h - h % scale, : w - w % scale]


def read_png(path) -> np.ndarray:
    """Load an 8-bit image as float RGB in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(path, img: np.ndarray) -> None:
    arr = np.asarray(img)
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q).save(path, format="PNG")


def save_kernel(path, kernel: BlurKernel) -> None:
    np.savetxt(path, kernel.values, fmt="%.17g")


def load_kernel(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)
