"""Contrastive batch construction under the three positive-selection strategies."""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .degradation import DegradationSpec, blur_subsample, read_png, sample_degradation

LR_PATCH = 48


class PositiveStrategy(str, enum.Enum):
    CD = "CD"  # same image, same degradation
    D = "D"    # different images, same degradation
    C = "C"    # same image, different degradations


@dataclass
class PatchPair:
    p0: np.ndarray
    p1: np.ndarray
    image_id: int
    degradation_id0: int
    degradation_id1: int
    # extras used by the trainer
    hr0: np.ndarray = field(repr=False, default=None)
    image_id1: int = -1
    spec0: DegradationSpec = field(repr=False, default=None)
    spec1: DegradationSpec = field(repr=False, default=None)


def derive_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed), int(index)])


def _crop(rng, img, size):
    h, w = img.shape[:2]
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top:top + size, left:left + size]


def build_batch(
    hr_pool: Sequence[np.ndarray],
    batch_size: int,
    scale: int,
    strategy="CD",
    rng_seed=0,
    lr_size: int = LR_PATCH,
    noise_max: float = 0.0,
    kernel_size: int = 21,
) -> list[PatchPair]:
    """Sample ``batch_size`` LR patch pairs of side ``lr_size``.

    Every pair receives its own degradation draw (two for strategy C), so
    degradations differ across pairs.
    """
    strategy = PositiveStrategy(strategy)
    if len(hr_pool) == 0:
        raise ValueError("hr_pool is empty")
    crop = lr_size * scale
    for i, img in enumerate(hr_pool):
        if img.shape[0] < crop or img.shape[1] < crop:
            raise ValueError(f"pool image {i} of size {img.shape[:2]} is smaller than the {crop}px crop")
    rng = np.random.default_rng(rng_seed)
    n_deg = 2 * batch_size if strategy is PositiveStrategy.C else batch_size
    specs = [sample_degradation(rng, scale, noise_max, kernel_size) for _ in range(n_deg)]

    hr0, hr1, meta = [], [], []
    for i in range(batch_size):
        a = int(rng.integers(len(hr_pool)))
        if strategy is PositiveStrategy.D and len(hr_pool) > 1:
            b = int(rng.integers(len(hr_pool) - 1))
            b += b >= a
        else:
            b = a
        d0 = i
        d1 = batch_size + i if strategy is PositiveStrategy.C else i
        hr0.append(_crop(rng, hr_pool[a], crop))
        hr1.append(_crop(rng, hr_pool[b], crop))
        meta.append((a, b, d0, d1))

    lr0 = _degrade_many(hr0, [specs[m[2]] for m in meta], rng)
    lr1 = _degrade_many(hr1, [specs[m[3]] for m in meta], rng)
    return [
        PatchPair(
            p0=lr0[i], p1=lr1[i], image_id=a, degradation_id0=d0, degradation_id1=d1,
            hr0=np.ascontiguousarray(hr0[i]), image_id1=b, spec0=specs[d0], spec1=specs[d1],
        )
        for i, (a, b, d0, d1) in enumerate(meta)
    ]


def _degrade_many(crops, specs, rng):
    x = torch.from_numpy(np.stack(crops).astype(np.float64)).permute(0, 3, 1, 2)
    k = torch.from_numpy(np.stack([s.kernel.values for s in specs]))
    lr = blur_subsample(x, k, specs[0].scale).permute(0, 2, 3, 1).numpy()
    noise = np.array([s.noise_level for s in specs]) / 255.0
    if noise.any():
        lr = lr + rng.standard_normal(lr.shape) * noise[:, None, None, None]
    return np.clip(lr, 0.0, 1.0)


def iter_batches(
    hr_pool, batch_size, scale, strategy="CD", base_seed=0, start=0, stop=None, workers=1, **kwargs
) -> Iterator[list[PatchPair]]:
    """Yield batches ``start, start+1, ...`` in order; batch ``i`` is seeded from (base_seed, i)."""
    def make(i):
        return build_batch(hr_pool, batch_size, scale, strategy, derive_seed(base_seed, i), **kwargs)

    indices = range(start, stop) if stop is not None else _count(start)
    if workers <= 1:
        for i in indices:
            yield make(i)
        return
    with ThreadPoolExecutor(workers) as ex:
        # bounded look-ahead so an unbounded range does not flood the pool
        pending = []
        it = iter(indices)
        for i in it:
            pending.append(ex.submit(make, i))
            if len(pending) >= 2 * workers:
                yield pending.pop(0).result()
        for fut in pending:
            yield fut.result()


def _count(start):
    i = start
    while True:
        yield i
        i += 1


def read_manifest(path) -> list[Path]:
    """Read a dataset manifest: one HR image path per line, relative to the manifest."""
    path = Path(path)
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        out.append(p if p.is_absolute() else path.parent / p)
    return out


def load_pool(paths) -> list[np.ndarray]:
    return [read_png(p) for p in paths]
