"""Blind super-resolution conditioned on content- and degradation-aware embeddings."""
from .config import TrainConfig, desk_config, load_config
from .degradation import DegradationSpec, degrade, make_aniso_gaussian_kernel
from .estimator import CDSR
from .evaluation import BenchmarkSpec, build_benchmark, classification_accuracy, evaluate, psnr, ssim
from .model import CDSRModel
from .sampler import PositiveStrategy, build_batch
from .stats import model_stats
from .trainer import Trainer, run_ablation

__version__ = "0.1.0"

__all__ = [
    "BenchmarkSpec", "CDSR", "CDSRModel", "DegradationSpec", "PositiveStrategy", "TrainConfig", "Trainer",
    "build_batch", "build_benchmark", "classification_accuracy", "degrade", "desk_config", "evaluate",
    "load_config", "make_aniso_gaussian_kernel", "model_stats", "psnr", "run_ablation", "ssim",
]
