"""End-to-end training loop, checkpoints, LR schedule and ablation presets."""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import TrainConfig
from .contrastive import NegativeQueue, info_nce, l1_loss
from .encoder import make_key_encoder, momentum_update
from .model import CDSRModel
from .sampler import PatchPair, build_batch, derive_seed, iter_batches

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
METRICS_HEADER = ("step", "l_cl", "l_1", "total", "lr")

ABLATIONS = {
    1: dict(use_LPE_L=True, use_LPE_P=True, use_DQA=True, use_CSC=True),
    2: dict(use_LPE_L=True, use_LPE_P=True, use_DQA=True, use_CSC=False),
    3: dict(use_LPE_L=True, use_LPE_P=True, use_DQA=False, use_CSC=True),
    4: dict(use_LPE_L=True, use_LPE_P=False, use_DQA=True, use_CSC=True),
    5: dict(use_LPE_L=False, use_LPE_P=True, use_DQA=True, use_CSC=True),
}


def lr_schedule(epoch: int, lr0: float = 1e-4, period: int = 125) -> float:
    """Multi-step decay: halve every ``period`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * 0.5 ** (epoch // period)


def run_ablation(model_id: int, cfg: TrainConfig) -> TrainConfig:
    """Configuration of ablation model ``model_id`` (1 = full model)."""
    try:
        flags = ABLATIONS[int(model_id)]
    except (KeyError, ValueError):
        raise ValueError(f"ablation model id must be in 1..5, got {model_id!r}") from None
    return cfg.replace(**flags)


def _stack(arrays, dtype):
    return torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2).to(dtype).contiguous()


class Trainer:
    """Mutable training state: query model, momentum key encoder, queue, optimiser."""

    def __init__(self, cfg: TrainConfig, dtype=torch.float32):
        self.cfg = cfg
        self.dtype = dtype
        torch.manual_seed(cfg.seed)
        self.model = CDSRModel(cfg).to(dtype)
        self.key_encoder = make_key_encoder(self.model.encoder)
        self.queue = NegativeQueue(cfg.queue_size, cfg.embed_dim, dtype=dtype)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=cfg.lr0, betas=(cfg.adam_beta1, cfg.adam_beta2)
        )
        self.step = 0
        self.history: list[dict] = []

    # -- schedule ----------------------------------------------------------

    def current_lr(self, step=None):
        step = self.step if step is None else step
        return lr_schedule(step // self.cfg.iters_per_epoch, self.cfg.lr0, self.cfg.lr_halving_period)

    def batch_for_step(self, hr_pool, step=None, scale=None):
        cfg = self.cfg
        step = self.step if step is None else step
        return build_batch(
            hr_pool, cfg.batch_size, scale or cfg.scale, cfg.positive_strategy,
            derive_seed(cfg.seed, step), lr_size=cfg.lr_patch_size, noise_max=cfg.noise_max,
            kernel_size=cfg.kernel_size,
        )

    # -- one optimisation step ------------------------------------------------

    def _contrastive(self, p0, p1):
        feat, z_q = self.model.encoder(p0)
        with torch.no_grad():
            _, z_k = self.key_encoder(p1)
        if self.queue.fill >= p0.shape[0]:
            l_cl = info_nce(z_q, z_k, self.queue, self.cfg.tau, self.cfg.include_positive_in_denominator)
        else:
            l_cl = z_q.new_zeros(())
        return feat, z_k, l_cl

    def train_step(self, batch: Sequence[PatchPair]) -> dict:
        p0 = _stack([b.p0 for b in batch], self.dtype)
        p1 = _stack([b.p1 for b in batch], self.dtype)
        hr = _stack([b.hr0 for b in batch], self.dtype)
        lr = self.current_lr()
        for group in self.optimizer.param_groups:
            group["lr"] = lr

        self.model.train()
        self.key_encoder.train()
        feat, z_k, l_cl = self._contrastive(p0, p1)
        sr = self.model.sr(p0, self.model.compressor(feat))
        l_1 = l1_loss(sr, hr)
        total = l_cl + l_1
        if not torch.isfinite(total):
            raise FloatingPointError(
                f"non-finite loss at step {self.step}: l_cl={l_cl.item()}, l_1={l_1.item()}"
            )
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        momentum_update(self.model.encoder, self.key_encoder, self.cfg.momentum)
        self.queue.enqueue(z_k)

        metrics = {"step": self.step, "l_cl": l_cl.item(), "l_1": l_1.item(), "total": total.item(), "lr": lr}
        self.step += 1
        self.history.append(metrics)
        return metrics

    def fit(self, hr_pool, steps=None, metrics_path=None, checkpoint_path=None, checkpoint_every=0, log_every=0,
            workers=1):
        """Run ``steps`` (default: remaining schedule) joint steps, optional encoder pretraining first.

        ``workers > 1`` builds batches ahead of time in threads; batch contents
        depend only on (seed, step), so the result is the same either way.
        """
        cfg = self.cfg
        if cfg.pretrain_encoder_epochs and self.step == 0:
            self.pretrain_encoder(hr_pool, cfg.pretrain_encoder_epochs)
        steps = cfg.total_steps - self.step if steps is None else steps
        writer = MetricsLog(metrics_path) if metrics_path else None
        batches = iter_batches(
            hr_pool, cfg.batch_size, cfg.scale, cfg.positive_strategy, cfg.seed, start=self.step,
            stop=self.step + steps, workers=workers, lr_size=cfg.lr_patch_size, noise_max=cfg.noise_max,
            kernel_size=cfg.kernel_size,
        )
        for batch in batches:
            m = self.train_step(batch)
            if writer:
                writer.append(m)
            if log_every and m["step"] % log_every == 0:
                logger.info("step %d  l_cl %.4f  l_1 %.4f  lr %.2e", m["step"], m["l_cl"], m["l_1"], m["lr"])
            if checkpoint_path and checkpoint_every and self.step % checkpoint_every == 0:
                self.save(checkpoint_path)
        if checkpoint_path:
            self.save(checkpoint_path)
        return self

    # -- encoder-only phase ---------------------------------------------------

    def pretrain_encoder(self, hr_pool, epochs: int, steps: int | None = None) -> list[float]:
        """Contrastive-only warm-up of the encoder; SR and codebook parameters are not touched.

        Uses its own Adam instance over encoder parameters and a separate
        seed stream so the joint phase's batches are unaffected.
        """
        n = epochs * self.cfg.iters_per_epoch if steps is None else steps
        if n <= 0:
            return []
        enc = self.model.encoder
        opt = torch.optim.Adam(enc.parameters(), lr=self.cfg.lr0, betas=(self.cfg.adam_beta1, self.cfg.adam_beta2))
        losses = []
        stream = self.cfg.seed + 1_000_003
        for i in range(n):
            batch = build_batch(
                hr_pool, self.cfg.batch_size, self.cfg.scale, self.cfg.positive_strategy,
                derive_seed(stream, i), lr_size=self.cfg.lr_patch_size, noise_max=self.cfg.noise_max,
                kernel_size=self.cfg.kernel_size,
            )
            p0 = _stack([b.p0 for b in batch], self.dtype)
            p1 = _stack([b.p1 for b in batch], self.dtype)
            for g in opt.param_groups:
                g["lr"] = lr_schedule(i // self.cfg.iters_per_epoch, self.cfg.lr0, self.cfg.lr_halving_period)
            enc.train()
            self.key_encoder.train()
            _, z_k, l_cl = self._contrastive(p0, p1)
            if l_cl.requires_grad:
                opt.zero_grad(set_to_none=True)
                l_cl.backward()
                opt.step()
                losses.append(l_cl.item())
            momentum_update(enc, self.key_encoder, self.cfg.momentum)
            self.queue.enqueue(z_k)
        return losses

    # -- persistence ------------------------------------------------------------

    def state_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "config": self.cfg.to_dict(),
            "step": self.step,
            "model": self.model.state_dict(),
            "key_encoder": self.key_encoder.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "queue": self.queue.state_dict(),
            "torch_rng": torch.get_rng_state(),
            "dtype": str(self.dtype).replace("torch.", ""),
        }

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(self.state_dict(), tmp)
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "Trainer":
        state = torch.load(path, map_location="cpu", weights_only=False)
        if state.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {state.get('format')!r}")
        cfg = TrainConfig(**state["config"])
        trainer = cls(cfg, dtype=getattr(torch, state.get("dtype", "float32")))
        trainer.model.load_state_dict(state["model"])
        trainer.key_encoder.load_state_dict(state["key_encoder"])
        trainer.optimizer.load_state_dict(state["optimizer"])
        trainer.queue.load_state_dict(state["queue"])
        trainer.step = int(state["step"])
        torch.set_rng_state(state["torch_rng"])
        return trainer


def train_step(state: Trainer, batch):
    return state, state.train_step(batch)


def pretrain_encoder(state: Trainer, hr_pool, epochs: int):
    state.pretrain_encoder(hr_pool, epochs)
    return state


class MetricsLog:
    """Append-only CSV with header ``step,l_cl,l_1,total,lr``."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_HEADER)

    def append(self, metrics: dict):
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow([repr(metrics[k]) if isinstance(metrics[k], float) else metrics[k]
                                     for k in METRICS_HEADER])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in rows]


def moving_average(values, window):
    v = np.asarray(values, dtype=float)
    if len(v) < window:
        return v.copy()
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window


def is_finite_metrics(m: dict) -> bool:
    return all(math.isfinite(m[k]) for k in ("l_cl", "l_1", "total"))
