"""Assembled blind SR model: encoder -> codebook compression -> conditioned SR net."""
from __future__ import annotations

import torch
import torch.nn as nn

from .config import TrainConfig
from .csc import CodebookCompression, DirectEmbedding
from .encoder import DegradationEncoder
from .sr_network import SRNet, SRNetConfig


def sr_config(cfg: TrainConfig) -> SRNetConfig:
    return SRNetConfig(
        num_blocks=cfg.num_blocks, trunk_channels=cfg.trunk_channels, growth_channels=cfg.growth_channels,
        dyn_kernel_size=cfg.dyn_kernel_size, fusion=cfg.sr_fusion, scale=cfg.scale, embed_dim=cfg.embed_dim,
    )


def build_encoder(cfg: TrainConfig) -> DegradationEncoder:
    return DegradationEncoder(
        embed_dim=cfg.embed_dim, patch_size=cfg.patch_size, patch_channels=cfg.patch_channels,
        pixel_channels=cfg.pixel_channels, depth_patch=cfg.depth_patch, depth_pixel=cfg.depth_pixel,
        use_patch=cfg.use_LPE_P, use_pixel=cfg.use_LPE_L,
    )


class CDSRModel(nn.Module):
    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.encoder = build_encoder(cfg)
        in_dim = self.encoder.lpe.out_dim
        if cfg.use_CSC:
            self.compressor = CodebookCompression(in_dim, cfg.embed_dim, cfg.codebook_length)
        else:
            self.compressor = DirectEmbedding(in_dim, cfg.embed_dim)
        self.sr = SRNet(sr_config(cfg))

    def embedding(self, lr):
        """Compressed embedding fed to the SR network."""
        feat, _ = self.encoder(lr)
        return self.compressor(feat)

    def forward(self, lr):
        return self.sr(lr, self.embedding(lr))


@torch.no_grad()
def predict_tiled(model: CDSRModel, lr: torch.Tensor) -> torch.Tensor:
    """Eval-mode prediction; the LR side is cropped to a multiple of the patch size for the encoder."""
    was = model.training
    model.eval()
    try:
        p = model.encoder.lpe.patch.patch_size if model.encoder.lpe.patch is not None else 1
        h, w = lr.shape[-2:]
        enc_in = lr[..., : h - h % p, : w - w % p]
        e_a = model.compressor(model.encoder(enc_in)[0])
        return model.sr(lr, e_a)
    finally:
        model.train(was)
