"""scikit-learn style front end: ``fit`` on HR images, ``predict`` SR from LR images."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import TrainConfig, desk_config
from .evaluation import rgb_to_y, psnr
from .model import predict_tiled
from .trainer import Trainer, run_ablation
from .utils.validation import check_images, check_random_state_int

PRESETS = {"desk": desk_config, "full": TrainConfig}


class CDSR(TransformerMixin, BaseEstimator):
    """Blind super-resolution with content- and degradation-aware embeddings.

    Parameters
    ----------
    scale : int, default=2
        Upscaling factor (2, 3 or 4).
    preset : {"desk", "full"}, default="desk"
        Architecture/optimiser preset the remaining parameters override.
    n_steps : int, default=3000
        Joint training iterations run by ``fit``.
    ablation : int or None, default=None
        One of the ablation models 1-5; None keeps the explicit switches below.
    positive_strategy : {"CD", "D", "C"}, default="CD"
    fusion : {"DQA", "AdaIN", "DynConv"}, default="DQA"
    use_csc, use_patch_branch, use_pixel_branch : bool, default=True
    noise_max : float, default=0.0
        Upper bound of the training noise level (8-bit scale).
    lr0 : float or None
        Initial learning rate; None keeps the preset value.
    batch_size : int or None
    pretrain_encoder_epochs : int, default=0
    config_overrides : dict or None
        Any further configuration keys, applied last.
    random_state : int or None, default=0
    verbose : int, default=0
        Log every ``verbose`` steps when positive.
    """

    def __init__(self, scale=2, preset="desk", n_steps=3000, ablation=None, positive_strategy="CD",
                 fusion="DQA", use_csc=True, use_patch_branch=True, use_pixel_branch=True, noise_max=0.0,
                 lr0=None, batch_size=None, pretrain_encoder_epochs=0, config_overrides=None, random_state=0,
                 verbose=0):
        self.scale = scale
        self.preset = preset
        self.n_steps = n_steps
        self.ablation = ablation
        self.positive_strategy = positive_strategy
        self.fusion = fusion
        self.use_csc = use_csc
        self.use_patch_branch = use_patch_branch
        self.use_pixel_branch = use_pixel_branch
        self.noise_max = noise_max
        self.lr0 = lr0
        self.batch_size = batch_size
        self.pretrain_encoder_epochs = pretrain_encoder_epochs
        self.config_overrides = config_overrides
        self.random_state = random_state
        self.verbose = verbose

    def make_config(self) -> TrainConfig:
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {sorted(PRESETS)}, got {self.preset!r}")
        overrides = dict(
            scale=self.scale, positive_strategy=self.positive_strategy, fusion=self.fusion,
            use_CSC=self.use_csc, use_LPE_P=self.use_patch_branch, use_LPE_L=self.use_pixel_branch,
            noise_max=self.noise_max, pretrain_encoder_epochs=self.pretrain_encoder_epochs,
            seed=check_random_state_int(self.random_state), max_steps=self.n_steps,
        )
        if self.lr0 is not None:
            overrides["lr0"] = self.lr0
        if self.batch_size is not None:
            overrides["batch_size"] = self.batch_size
        overrides.update(self.config_overrides or {})
        cfg = PRESETS[self.preset](**overrides)
        if self.ablation is not None:
            cfg = run_ablation(self.ablation, cfg)
        return cfg

    def fit(self, X, y=None):
        """Train on a pool of HR images ``X`` (each (H, W, 3) in [0, 1]). ``y`` is ignored."""
        cfg = self.make_config()
        pool = check_images(X, name="X", min_size=cfg.lr_patch_size * cfg.scale)
        self.trainer_ = Trainer(cfg)
        self.trainer_.fit(pool, steps=self.n_steps, log_every=self.verbose)
        self.config_ = cfg
        self.n_iter_ = self.trainer_.step
        return self

    @classmethod
    def from_trainer(cls, trainer: Trainer):
        """Wrap an already trained (e.g. loaded) trainer."""
        cfg = trainer.cfg
        est = cls(scale=cfg.scale, n_steps=trainer.step, positive_strategy=cfg.positive_strategy,
                  fusion=cfg.fusion, use_csc=cfg.use_CSC, use_patch_branch=cfg.use_LPE_P,
                  use_pixel_branch=cfg.use_LPE_L, noise_max=cfg.noise_max, random_state=cfg.seed)
        est.trainer_ = trainer
        est.config_ = cfg
        est.n_iter_ = trainer.step
        return est

    def _tensor(self, img):
        return torch.from_numpy(img).permute(2, 0, 1).unsqueeze(0).to(self.trainer_.dtype)

    def predict(self, X):
        """Super-resolve LR images; returns a list of (sH, sW, 3) arrays."""
        check_is_fitted(self, "trainer_")
        imgs = check_images(X, name="X", min_size=self._min_lr_side())
        out = []
        for img in imgs:
            sr = predict_tiled(self.trainer_.model, self._tensor(img))
            out.append(sr[0].permute(1, 2, 0).double().numpy())
        return out

    def transform(self, X):
        """Compressed embeddings (n_images, C) that condition the SR network."""
        return self._encode(X, contrastive=False)

    def embed(self, X):
        """Unit-norm contrastive embeddings (n_images, C)."""
        return self._encode(X, contrastive=True)

    @torch.no_grad()
    def _encode(self, X, contrastive):
        check_is_fitted(self, "trainer_")
        imgs = check_images(X, name="X", min_size=self._min_lr_side())
        model = self.trainer_.model
        was = model.training
        model.eval()
        try:
            rows = []
            for img in imgs:
                x = self._crop_for_encoder(self._tensor(img))
                feat, z = model.encoder(x)
                rows.append((z if contrastive else model.compressor(feat))[0].double().numpy())
        finally:
            model.train(was)
        return np.stack(rows)

    def _crop_for_encoder(self, x):
        lpe = self.trainer_.model.encoder.lpe
        p = lpe.patch.patch_size if lpe.patch is not None else 1
        h, w = x.shape[-2:]
        return x[..., : h - h % p, : w - w % p]

    def _min_lr_side(self):
        lpe = self.trainer_.model.encoder.lpe
        sides = [1]
        if lpe.patch is not None:
            sides.append(lpe.patch.patch_size)
        if lpe.pixel is not None:
            sides.append(lpe.pixel.receptive_field)
        return max(sides)

    def score(self, X, y):
        """Mean Y-channel PSNR (dB) of ``predict(X)`` against HR images ``y``, border = scale."""
        hr = check_images(y, name="y")
        preds = self.predict(X)
        if len(preds) != len(hr):
            raise ValueError("X and y must hold the same number of images")
        s = self.config_.scale
        return float(np.mean([psnr(rgb_to_y(p), rgb_to_y(h), s) for p, h in zip(preds, hr)]))
