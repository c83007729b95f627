"""Y-channel metrics, the 9-kernel benchmark protocol, degradation-classification accuracy,
sigma sweeps and embedding export."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .degradation import (
    DegradationSpec, degrade, make_aniso_gaussian_kernel, modcrop, read_png, write_png,
)

PSNR_CAP = 100.0
KERNEL_SIGMAS = {2: (1.0, 3.0, 5.0), 3: (1.0, 4.0, 7.0), 4: (1.0, 5.0, 9.0)}
MANIFEST_HEADER = ("image_path", "sigma1", "sigma2", "theta", "noise_seed")
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


# -- metrics ---------------------------------------------------------------

def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luma on the 8-bit scale (16..235), returned divided by 255."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an RGB image (H, W, 3), got shape {img.shape}")
    y = 65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2] + 16.0
    return y / 255.0


def _as_y(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 1:
        img = img[..., 0]
    if img.ndim != 2:
        raise ValueError(f"expected a single-channel (Y) image, got shape {img.shape}")
    return img


def _shave(img, border):
    if border <= 0:
        return img
    return img[border:-border, border:-border]


def psnr(a, b, border_crop: int = 0) -> float:
    a, b = _as_y(a), _as_y(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a, b = _shave(a, border_crop), _shave(b, border_crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    r = size // 2
    g = np.exp(-(np.arange(-r, r + 1) ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return g


def _filter_valid(img, g):
    # separable 'valid' correlation
    tmp = np.apply_along_axis(lambda v: np.convolve(v, g[::-1], mode="valid"), 0, img)
    return np.apply_along_axis(lambda v: np.convolve(v, g[::-1], mode="valid"), 1, tmp)


def ssim(a, b, border_crop: int = 0, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over 11 x 11 Gaussian (sigma 1.5) windows fully inside the image."""
    a, b = _as_y(a), _as_y(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a, b = _shave(a, border_crop), _shave(b, border_crop)
    if min(a.shape) < 11:
        raise ValueError("images must be at least 11x11 for SSIM")
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    g = _gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def y_metrics(sr_rgb, hr_rgb, border_crop):
    ys, yh = rgb_to_y(np.clip(sr_rgb, 0, 1)), rgb_to_y(hr_rgb)
    return psnr(ys, yh, border_crop), ssim(ys, yh, border_crop)


# -- baselines / predictors --------------------------------------------------------

def bicubic_upsample(lr: np.ndarray, scale: int) -> np.ndarray:
    x = torch.from_numpy(np.asarray(lr, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)
    y = F.interpolate(x, scale_factor=scale, mode="bicubic", align_corners=False)
    return y[0].permute(1, 2, 0).clamp(0, 1).double().numpy()


class BicubicModel:
    def __init__(self, scale):
        self.scale = scale

    def __call__(self, lr):
        return bicubic_upsample(lr, self.scale)


# -- benchmark protocol ---------------------------------------------------------

@dataclass
class BenchmarkSpec:
    scale: int
    kernel_set: list = field(default_factory=list)
    noise_level: float = 0.0
    kernel_size: int = 21

    def __post_init__(self):
        if not self.kernel_set:
            self.kernel_set = nine_kernel_set(self.scale)
        if len(self.kernel_set) != 9:
            raise ValueError(f"a benchmark needs exactly 9 kernels, got {len(self.kernel_set)}")


def nine_kernel_set(scale: int) -> list[tuple[float, float, float]]:
    """All ordered (sigma1, sigma2) pairs from the per-scale triple; theta = 0 if isotropic else pi/4."""
    sig = KERNEL_SIGMAS[scale]
    return [(s1, s2, 0.0 if s1 == s2 else math.pi / 4) for s1 in sig for s2 in sig]


def kernel_folder(idx, triple):
    s1, s2, th = triple
    return f"k{idx}_s{s1:g}_{s2:g}_t{th:.4f}"


def list_images(folder) -> list[Path]:
    return sorted(p for p in Path(folder).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def build_benchmark(hr_dir, spec: BenchmarkSpec, out_dir, seed: int = 0) -> list[dict]:
    """Write mod-cropped HR images and one LR folder per kernel, plus ``manifest.txt``."""
    out_dir = Path(out_dir)
    paths = list_images(hr_dir)
    if not paths:
        raise ValueError(f"no images found in {hr_dir}")
    rows = []
    ss = np.random.SeedSequence(seed)
    noise_seeds = ss.generate_state(len(paths) * 9).reshape(len(paths), 9)
    for i, p in enumerate(paths):
        hr = modcrop(read_png(p), spec.scale)
        write_png(out_dir / "HR" / f"{p.stem}.png", hr)
        for j, triple in enumerate(spec.kernel_set):
            s1, s2, th = triple
            dspec = DegradationSpec(make_aniso_gaussian_kernel(s1, s2, th, spec.kernel_size), spec.scale,
                                    spec.noise_level)
            nseed = int(noise_seeds[i, j])
            lr = degrade(hr, dspec, nseed)
            rel = Path(kernel_folder(j, triple)) / f"{p.stem}.png"
            write_png(out_dir / rel, lr)
            rows.append({"image_path": rel.as_posix(), "sigma1": s1, "sigma2": s2, "theta": th, "noise_seed": nseed})
    with (out_dir / "manifest.txt").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for r in rows:
            w.writerow([r["image_path"], repr(r["sigma1"]), repr(r["sigma2"]), repr(r["theta"]), r["noise_seed"]])
    (out_dir / "benchmark.json").write_text(json.dumps(
        {"scale": spec.scale, "noise_level": spec.noise_level, "kernel_set": spec.kernel_set, "seed": seed}, indent=2))
    return rows


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"image_path": r["image_path"], "sigma1": float(r["sigma1"]), "sigma2": float(r["sigma2"]),
             "theta": float(r["theta"]), "noise_seed": int(r["noise_seed"])} for r in rows]


def load_benchmark(bench_dir):
    """Yield ``(row, lr, hr)`` for every manifest entry."""
    bench_dir = Path(bench_dir)
    for row in read_manifest(bench_dir / "manifest.txt"):
        rel = Path(row["image_path"])
        yield row, read_png(bench_dir / rel), read_png(bench_dir / "HR" / rel.name)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # per image: kernel, image, psnr, ssim

    def per_kernel(self):
        out = {}
        for r in self.rows:
            out.setdefault(r["kernel"], []).append(r)
        return {k: {"psnr": float(np.mean([r["psnr"] for r in v])), "ssim": float(np.mean([r["ssim"] for r in v])),
                    "n": len(v)} for k, v in out.items()}

    @property
    def psnr(self):
        return float(np.mean([r["psnr"] for r in self.rows]))

    @property
    def ssim(self):
        return float(np.mean([r["ssim"] for r in self.rows]))

    def to_dict(self):
        return {"psnr": self.psnr, "ssim": self.ssim, "per_kernel": self.per_kernel(), "images": self.rows}

    def write(self, path):
        """Write ``<path>.json`` and ``<path>.csv`` with the same content."""
        path = Path(path)
        base = path.with_suffix("") if path.suffix in (".json", ".csv") else path
        base.parent.mkdir(parents=True, exist_ok=True)
        base.with_suffix(".json").write_text(json.dumps(self.to_dict(), indent=2))
        with base.with_suffix(".csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "image", "psnr", "ssim"])
            for r in self.rows:
                w.writerow([r["kernel"], r["image"], repr(r["psnr"]), repr(r["ssim"])])
            for k, v in self.per_kernel().items():
                w.writerow([k, "MEAN", repr(v["psnr"]), repr(v["ssim"])])
            w.writerow(["ALL", "MEAN", repr(self.psnr), repr(self.ssim)])


def evaluate(model: Callable, bench_dir, scale: int, border_crop: int | None = None) -> EvalReport:
    """Score ``model`` (LR array -> SR array) on a benchmark folder."""
    border = scale if border_crop is None else border_crop
    report = EvalReport()
    for row, lr, hr in load_benchmark(bench_dir):
        p, s = y_metrics(model(lr), hr, border)
        report.rows.append({"kernel": Path(row["image_path"]).parent.name, "image": Path(row["image_path"]).name,
                            "psnr": p, "ssim": s})
    return report


def evaluate_pairs(model: Callable, pairs, scale: int, border_crop: int | None = None) -> EvalReport:
    """Same as :func:`evaluate` for in-memory ``(kernel_label, name, lr, hr)`` tuples."""
    border = scale if border_crop is None else border_crop
    report = EvalReport()
    for label, name, lr, hr in pairs:
        p, s = y_metrics(model(lr), hr, border)
        report.rows.append({"kernel": label, "image": name, "psnr": p, "ssim": s})
    return report


def benchmark_pairs(hr_images: Sequence[np.ndarray], spec: BenchmarkSpec, seed: int = 0):
    """In-memory version of the benchmark (no quantisation of the LR images)."""
    ss = np.random.SeedSequence(seed)
    noise_seeds = ss.generate_state(len(hr_images) * 9).reshape(len(hr_images), 9)
    out = []
    for i, img in enumerate(hr_images):
        hr = modcrop(img, spec.scale)
        for j, (s1, s2, th) in enumerate(spec.kernel_set):
            d = DegradationSpec(make_aniso_gaussian_kernel(s1, s2, th, spec.kernel_size), spec.scale, spec.noise_level)
            out.append((kernel_folder(j, (s1, s2, th)), f"img{i:03d}", degrade(hr, d, int(noise_seeds[i, j])), hr))
    return out


# -- degradation classification accuracy -----------------------------------------------

def accuracy_degradations(scale: int = 4, sigmas=range(1, 11), kernel_size: int = 21) -> list[DegradationSpec]:
    return [DegradationSpec(make_aniso_gaussian_kernel(float(s), float(s), 0.0, kernel_size), scale, 0.0)
            for s in sigmas]


def _cosine(x, centers):
    xn = np.linalg.norm(x, axis=1, keepdims=True)
    cn = np.linalg.norm(centers, axis=1, keepdims=True)
    xs = np.divide(x, xn, out=np.zeros_like(x), where=xn > 0)
    cs = np.divide(centers, cn, out=np.zeros_like(centers), where=cn > 0)
    return xs @ cs.T


def accuracy_from_embeddings(emb: np.ndarray, n_center: int) -> float:
    """``emb`` is (K, N, C): K degradations x N images. The first ``n_center`` images of
    every class form its centre; the rest are classified by cosine argmax (ties -> lowest index)."""
    emb = np.asarray(emb, dtype=np.float64)
    k, n, _ = emb.shape
    if not 0 < n_center < n:
        raise ValueError("need at least one centre image and one test image per class")
    centers = emb[:, :n_center].mean(axis=1)
    test = emb[:, n_center:]
    correct = 0
    for j in range(k):
        pred = np.argmax(_cosine(test[j], centers), axis=1)
        correct += int(np.sum(pred == j))
    return correct / (k * (n - n_center))


def classification_accuracy(encoder: Callable, image_pool: Sequence[np.ndarray],
                            degradations: Sequence[DegradationSpec] | None = None, rng_seed: int = 0,
                            n_center: int | None = None, batch_size: int = 50) -> float:
    """Embed every (image, degradation) LR, build per-degradation centres from the first half
    of the pool and classify the second half. ``encoder`` maps an (N, H, W, 3) LR batch to (N, C)."""
    if len(image_pool) < 2:
        raise ValueError("image pool must hold at least 2 images")
    degradations = list(degradations) if degradations is not None else accuracy_degradations()
    n_center = len(image_pool) // 2 if n_center is None else n_center
    seeds = np.random.SeedSequence(rng_seed).generate_state(len(image_pool) * len(degradations))
    emb = []
    for j, d in enumerate(degradations):
        lrs = [degrade(img, d, int(seeds[j * len(image_pool) + i])) for i, img in enumerate(image_pool)]
        rows = [np.asarray(encoder(np.stack(lrs[s:s + batch_size]))) for s in range(0, len(lrs), batch_size)]
        emb.append(np.concatenate(rows, axis=0))
    return accuracy_from_embeddings(np.stack(emb), n_center)


# -- sweeps / export ----------------------------------------------------------------

def psnr_sweep(model: Callable, test_set: Sequence[np.ndarray], sigmas, scale: int = 4, seed: int = 0,
               out_csv=None, kernel_size: int = 21, border_crop: int | None = None):
    border = scale if border_crop is None else border_crop
    curve = []
    for s in sigmas:
        d = DegradationSpec(make_aniso_gaussian_kernel(float(s), float(s), 0.0, kernel_size), scale, 0.0)
        vals = []
        for i, img in enumerate(test_set):
            hr = modcrop(img, scale)
            vals.append(y_metrics(model(degrade(hr, d, seed + i)), hr, border)[0])
        curve.append((float(s), float(np.mean(vals))))
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "psnr"])
            for s, p in curve:
                w.writerow([repr(s), repr(p)])
    return curve


def export_embeddings(encoder: Callable, lr_images, labels, path) -> int:
    """Write ``label, e_1, ..., e_C`` rows; returns the number of rows."""
    if len(lr_images) != len(labels):
        raise ValueError(f"{len(lr_images)} images but {len(labels)} labels")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for img, lab in zip(lr_images, labels):
            vec = np.asarray(encoder(np.asarray(img)[None]))[0]
            w.writerow([lab, *(f"{v:.9g}" for v in vec)])
    return len(labels)


def read_embeddings(path):
    labels, vecs = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            labels.append(row[0])
            vecs.append([float(v) for v in row[1:]])
    return labels, np.array(vecs)
