"""Lightweight patch-based encoder with a patch-wise and a pixel-wise branch."""
from __future__ import annotations

import copy
from collections.abc import Mapping

import torch
import torch.nn as nn
import torch.nn.functional as F


def _basic_block(cin, cout, norm=True):
    layers = [nn.Conv2d(cin, cout, 3, 1, 1)]
    if norm:
        layers.append(nn.BatchNorm2d(cout))
    layers.append(nn.LeakyReLU(0.1, inplace=True))
    return layers


class PatchSubnet(nn.Module):
    """Patch embedding (a P x P, stride P projection) followed by conv stages.

    Produces a feature map of size (H/P, W/P) which is averaged over space
    and projected to ``embed_dim``.
    """

    def __init__(self, embed_dim=256, patch_size=8, channels=64, depth=4, in_channels=3):
        super().__init__()
        self.patch_size = patch_size
        self.patch_embed = nn.Conv2d(in_channels, channels, patch_size, stride=patch_size)
        body = []
        for _ in range(depth):
            body += _basic_block(channels, channels)
        self.body = nn.Sequential(*body)
        self.proj = nn.Linear(channels, embed_dim)

    def feature_map(self, x):
        h, w = x.shape[-2:]
        p = self.patch_size
        if h % p or w % p:
            raise ValueError(f"input side {h}x{w} not divisible by patch size {p}")
        return self.body(self.patch_embed(x))

    def forward(self, x):
        return self.proj(self.feature_map(x).mean(dim=(2, 3)))


class PixelSubnet(nn.Module):
    """Stride-1 3x3 convolutions without padding; receptive field ``2 * depth + 1``."""

    def __init__(self, embed_dim=256, channels=64, depth=5, in_channels=3, activation=True):
        super().__init__()
        layers = []
        cin = in_channels
        for _ in range(depth):
            layers.append(nn.Conv2d(cin, channels, 3, 1, 0))
            if activation:
                layers.append(nn.LeakyReLU(0.1, inplace=True))
            cin = channels
        self.body = nn.Sequential(*layers)
        self.proj = nn.Linear(channels, embed_dim)
        self.receptive_field = 2 * depth + 1

    def forward(self, x):
        h, w = x.shape[-2:]
        rf = self.receptive_field
        if h < rf or w < rf:
            raise ValueError(f"input {h}x{w} smaller than the {rf}x{rf} receptive field")
        return self.proj(self.body(x).mean(dim=(2, 3)))


class LPE(nn.Module):
    """Both branches; ``forward`` returns the concatenation of the enabled ones."""

    def __init__(
        self, embed_dim=256, patch_size=8, patch_channels=64, pixel_channels=64,
        depth_patch=4, depth_pixel=5, use_patch=True, use_pixel=True,
    ):
        super().__init__()
        if not (use_patch or use_pixel):
            raise ValueError("at least one encoder branch must be enabled")
        self.embed_dim = embed_dim
        self.patch = PatchSubnet(embed_dim, patch_size, patch_channels, depth_patch) if use_patch else None
        self.pixel = PixelSubnet(embed_dim, pixel_channels, depth_pixel) if use_pixel else None

    @property
    def out_dim(self):
        return self.embed_dim * ((self.patch is not None) + (self.pixel is not None))

    def forward(self, x):
        parts = []
        if self.patch is not None:
            parts.append(self.patch(x))
        if self.pixel is not None:
            parts.append(self.pixel(x))
        return torch.cat(parts, dim=1)


class DegradationEncoder(nn.Module):
    """LPE plus the projection head used only by the contrastive loss.

    ``forward`` returns ``(features, z)``: the raw concatenated embedding fed
    to the codebook and its unit-norm projection for contrastive matching.
    """

    def __init__(self, **lpe_kwargs):
        super().__init__()
        self.lpe = LPE(**lpe_kwargs)
        d = self.lpe.out_dim
        c = self.lpe.embed_dim
        self.head = nn.Sequential(nn.Linear(d, c), nn.LeakyReLU(0.1, inplace=True), nn.Linear(c, c))

    def forward(self, x):
        feat = self.lpe(x)
        z = F.normalize(self.head(feat), dim=1)
        return feat, z

    def embed(self, x):
        return self.forward(x)[1]


def patch_subnet_forward(lr, subnet: PatchSubnet):
    return subnet(lr)


def pixel_subnet_forward(lr, subnet: PixelSubnet):
    return subnet(lr)


def _named_tensors(obj):
    if isinstance(obj, nn.Module):
        return dict(obj.named_parameters())
    if isinstance(obj, Mapping):
        return dict(obj)
    raise TypeError(f"expected a Module or a mapping of tensors, got {type(obj).__name__}")


@torch.no_grad()
def momentum_update(query, key, m: float = 0.999):
    """In-place ``key <- m * key + (1 - m) * query`` over matching parameters.

    Written as ``key + (1 - m) * (query - key)`` so that equal parameters are
    left bit-identical. Returns ``key``.
    """
    if not 0.0 <= m < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {m}")
    q = _named_tensors(query)
    k = _named_tensors(key)
    if q.keys() != k.keys():
        raise ValueError("query and key parameter names differ")
    for name, kt in k.items():
        qt = q[name]
        if qt.shape != kt.shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(qt.shape)} vs {tuple(kt.shape)}")
        if m == 0.0:
            kt.copy_(qt)
        else:
            kt.add_(qt - kt, alpha=1.0 - m)
    return key


def make_key_encoder(query: nn.Module) -> nn.Module:
    key = copy.deepcopy(query)
    for p in key.parameters():
        p.requires_grad_(False)
    return key
