"""Embedding-conditioned RRDB super-resolution network.

Three fusion modes are available after every RRDB block:

* ``DQA`` - domain query attention: the block feature's spatial mean queries
  the compressed embedding, the attended vector generates depthwise filters
  and channel-attention gains.
* ``DynConv`` - depthwise filters generated from the embedding directly.
* ``AdaIN`` - per-channel scale and bias from the embedding.

``none`` gives the plain RRDB trunk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

FUSIONS = ("DQA", "AdaIN", "DynConv", "none")


@dataclass
class SRNetConfig:
    num_blocks: int = 10
    trunk_channels: int = 64
    growth_channels: int = 32
    dyn_kernel_size: int = 3
    fusion: str = "DQA"
    scale: int = 2
    embed_dim: int = 256

    def __post_init__(self):
        if self.dyn_kernel_size % 2 == 0:
            raise ValueError("dyn_kernel_size must be odd")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.scale not in (2, 3, 4):
            raise ValueError(f"unsupported scale {self.scale}")


# -- functional pieces -------------------------------------------------------

def scaled_dot_attention(q, k, v, scale=None, logit_shift=0.0):
    """``softmax(q k^T * scale + shift) v`` over the last two dims.

    q: (..., n_q, d), k: (..., n_k, d), v: (..., n_k, d_v). ``scale`` defaults
    to ``1 / sqrt(d)``.
    """
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    logits = q @ k.transpose(-2, -1) * scale + logit_shift
    w = torch.softmax(logits, dim=-1)
    return w @ v, w


def apply_dynamic_filters(f, kernels):
    """Depthwise-convolve each sample's channels with its own k x k filters.

    f: (N, C, H, W), kernels: (N, C, k, k); reflective padding keeps H x W.
    """
    n, c, h, w = f.shape
    if kernels.shape[:2] != (n, c):
        raise ValueError(f"kernels {tuple(kernels.shape)} do not match features {tuple(f.shape)}")
    k = kernels.shape[-1]
    p = k // 2
    x = F.pad(f.reshape(1, n * c, h, w), (p, p, p, p), mode="reflect")
    out = F.conv2d(x, kernels.reshape(n * c, 1, k, k), groups=n * c)
    return out.reshape(n, c, h, w)


def channel_attention(f, coeffs):
    if coeffs.shape != f.shape[:2]:
        raise ValueError(f"coefficients {tuple(coeffs.shape)} do not match features {tuple(f.shape)}")
    return f * coeffs[:, :, None, None]


def adain(f, beta, gamma):
    if beta.shape != f.shape[:2] or gamma.shape != f.shape[:2]:
        raise ValueError("beta/gamma must be (N, C) matching the features")
    return beta[:, :, None, None] * f + gamma[:, :, None, None]


# -- fusion modules ------------------------------------------------------------

class FilterGenerator(nn.Module):
    """Maps a vector to per-channel k x k filters, initialised near the identity filter."""

    def __init__(self, in_dim, channels, kernel_size=3, hidden=None):
        super().__init__()
        hidden = hidden or channels
        self.channels = channels
        self.kernel_size = kernel_size
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.LeakyReLU(0.1, inplace=True),
            nn.Linear(hidden, channels * kernel_size ** 2),
        )
        nn.init.normal_(self.mlp[-1].weight, std=1e-3)
        nn.init.zeros_(self.mlp[-1].bias)
        delta = torch.zeros(kernel_size, kernel_size)
        delta[kernel_size // 2, kernel_size // 2] = 1.0
        self.register_buffer("delta", delta)

    def forward(self, v):
        k = self.kernel_size
        return self.delta + self.mlp(v).view(-1, self.channels, k, k)


class DynamicFilter(nn.Module):
    """Applies generated depthwise filters; kept as a module so the stats counter sees it."""

    def forward(self, f, kernels):
        return apply_dynamic_filters(f, kernels)


def _projection(cin, cout):
    return nn.Sequential(nn.Linear(cin, cin), nn.LeakyReLU(0.1, inplace=True), nn.Linear(cin, cout))


class DomainQueryAttention(nn.Module):
    """attend -> dynamic depthwise filter -> channel attention.

    The attention is channel-wise: the projected feature mean, and the key
    and value projections of the embedding, are each treated as ``proj_dim``
    scalar tokens, giving a ``proj_dim x proj_dim`` logit matrix scaled by
    ``1 / sqrt(proj_dim)``.
    """

    def __init__(self, channels, embed_dim, proj_dim=None, kernel_size=3):
        super().__init__()
        d = proj_dim or channels
        self.proj_dim = d
        self.to_q = nn.Linear(channels, d)
        self.to_k = _projection(embed_dim, d)
        self.to_v = _projection(embed_dim, d)
        self.filters = FilterGenerator(d, channels, kernel_size)
        self.dynamic = DynamicFilter()
        self.ca = nn.Sequential(nn.Linear(d, channels), nn.LeakyReLU(0.1, inplace=True), nn.Linear(channels, channels))
        # gains start near 1 so stacked blocks do not attenuate the trunk at init
        nn.init.constant_(self.ca[-1].bias, 3.0)
        self.logit_shift = 0.0

    def attend(self, f, e_a):
        f_mean = f.mean(dim=(2, 3))
        q = self.to_q(f_mean).unsqueeze(-1)
        k = self.to_k(e_a).unsqueeze(-1)
        v = self.to_v(e_a).unsqueeze(-1)
        out, _ = scaled_dot_attention(q, k, v, scale=1.0 / math.sqrt(self.proj_dim), logit_shift=self.logit_shift)
        return out.squeeze(-1)

    def coefficients(self, e_d):
        return torch.sigmoid(self.ca(e_d))

    def forward(self, f, e_a):
        e_d = self.attend(f, e_a)
        f_tilde = self.dynamic(f, self.filters(e_d))
        return channel_attention(f_tilde, self.coefficients(e_d))


class DynConvFusion(nn.Module):
    def __init__(self, channels, embed_dim, kernel_size=3):
        super().__init__()
        self.filters = FilterGenerator(embed_dim, channels, kernel_size)
        self.dynamic = DynamicFilter()

    def forward(self, f, e_a):
        return self.dynamic(f, self.filters(e_a))


class AdaINFusion(nn.Module):
    def __init__(self, channels, embed_dim):
        super().__init__()
        self.channels = channels
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, channels), nn.LeakyReLU(0.1, inplace=True), nn.Linear(channels, 2 * channels)
        )
        nn.init.zeros_(self.mlp[-1].weight)
        with torch.no_grad():
            self.mlp[-1].bias.zero_()
            self.mlp[-1].bias[:channels] = 1.0

    def coefficients(self, e_a):
        beta, gamma = self.mlp(e_a).split(self.channels, dim=1)
        return beta, gamma

    def forward(self, f, e_a):
        beta, gamma = self.coefficients(e_a)
        return adain(f, beta, gamma)


def dqa_attend(f, e_a, module: DomainQueryAttention):
    return module.attend(f, e_a)


def dqa_filter(f, e_d, module: DomainQueryAttention):
    return module.dynamic(f, module.filters(e_d))


def dynconv_fuse(f, e_a, module: DynConvFusion):
    return module(f, e_a)


def adain_fuse(f, e_a, module: AdaINFusion):
    return module(f, e_a)


# -- trunk ---------------------------------------------------------------------

class ResidualDenseBlock(nn.Module):
    def __init__(self, nf=64, gc=32):
        super().__init__()
        self.convs = nn.ModuleList(nn.Conv2d(nf + i * gc, gc, 3, 1, 1) for i in range(4))
        self.conv_out = nn.Conv2d(nf + 4 * gc, nf, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(self.act(conv(torch.cat(feats, 1))))
        return x + 0.2 * self.conv_out(torch.cat(feats, 1))


class RRDB(nn.Module):
    def __init__(self, nf=64, gc=32):
        super().__init__()
        self.rdbs = nn.Sequential(*(ResidualDenseBlock(nf, gc) for _ in range(3)))

    def forward(self, x):
        return x + 0.2 * self.rdbs(x)


class Upsampler(nn.Sequential):
    def __init__(self, scale, nf):
        stages = [3] if scale == 3 else [2] * int(math.log2(scale))
        layers = []
        for r in stages:
            layers += [nn.Conv2d(nf, nf * r * r, 3, 1, 1), nn.PixelShuffle(r), nn.LeakyReLU(0.2, inplace=True)]
        super().__init__(*layers)


def make_fusion(cfg: SRNetConfig):
    if cfg.fusion == "DQA":
        return DomainQueryAttention(cfg.trunk_channels, cfg.embed_dim, kernel_size=cfg.dyn_kernel_size)
    if cfg.fusion == "DynConv":
        return DynConvFusion(cfg.trunk_channels, cfg.embed_dim, cfg.dyn_kernel_size)
    if cfg.fusion == "AdaIN":
        return AdaINFusion(cfg.trunk_channels, cfg.embed_dim)
    return None


class SRNet(nn.Module):
    """shallow conv -> blocks x (RRDB + fusion) -> conv -> global residual -> upsampler -> output conv.

    In training mode the output is left unclamped so the L1 gradient is not
    cut at the range limits; in eval mode it is clamped to [0, 1].
    """

    def __init__(self, cfg: SRNetConfig):
        super().__init__()
        self.cfg = cfg
        nf = cfg.trunk_channels
        self.head = nn.Conv2d(3, nf, 3, 1, 1)
        self.blocks = nn.ModuleList(RRDB(nf, cfg.growth_channels) for _ in range(cfg.num_blocks))
        fusions = [make_fusion(cfg) for _ in range(cfg.num_blocks)]
        self.fusions = nn.ModuleList(fusions) if cfg.fusion != "none" else None
        self.trunk_conv = nn.Conv2d(nf, nf, 3, 1, 1)
        self.upsampler = Upsampler(cfg.scale, nf)
        self.tail = nn.Conv2d(nf, 3, 3, 1, 1)

    def forward(self, lr, e_a=None):
        if lr.dim() != 4 or lr.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {tuple(lr.shape)}")
        x = self.head(lr)
        f = x
        for i, block in enumerate(self.blocks):
            f = block(f)
            if self.fusions is not None:
                f = self.fusions[i](f, e_a)
        x = x + self.trunk_conv(f)
        out = self.tail(self.upsampler(x))
        if not self.training:
            out = out.clamp(0.0, 1.0)
        return out


def sr_forward(lr, e_a, net: SRNet):
    return net(lr, e_a)
