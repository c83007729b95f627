"""Parameter and floating-point-operation accounting for one forward pass.

A multiply-accumulate counts as 2 flops. Convolutions, linear layers, the
generated depthwise filters and the attention/codebook matrix products are
counted; element-wise ops, normalisation and activations are not.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import TrainConfig
from .model import CDSRModel
from .sr_network import DynamicFilter


@dataclass(frozen=True)
class ModelStats:
    flops: float
    macs: int
    params: int

    @property
    def gflops(self):
        return self.flops / 1e9

    @property
    def mparams(self):
        return self.params / 1e6


def _conv_macs(m: nn.Conv2d, out):
    kh, kw = m.kernel_size
    return out.numel() * (m.in_channels // m.groups) * kh * kw


def count_macs(module: nn.Module, *inputs) -> int:
    total = 0

    def conv_hook(m, inp, out):
        nonlocal total
        total += _conv_macs(m, out)

    def linear_hook(m, inp, out):
        nonlocal total
        total += out.numel() * m.in_features

    def dyn_hook(m, inp, out):
        nonlocal total
        k = inp[1].shape[-1]
        total += out.numel() * k * k

    handles = []
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            handles.append(m.register_forward_hook(conv_hook))
        elif isinstance(m, nn.Linear):
            handles.append(m.register_forward_hook(linear_hook))
        elif isinstance(m, DynamicFilter):
            handles.append(m.register_forward_hook(dyn_hook))
    was = module.training
    module.eval()
    try:
        with torch.no_grad():
            module(*inputs)
    finally:
        module.train(was)
        for h in handles:
            h.remove()
    return total


def _attention_macs(model: CDSRModel, n: int) -> int:
    """Matrix products outside nn.Linear: codebook key/value products and DQA self-attention."""
    macs = 0
    comp = model.compressor
    if hasattr(comp, "codebook"):
        length, c = comp.codebook.shape
        macs += n * 2 * length * c  # Q_e K_e^T and w Cb
    for f in model.sr.fusions or []:
        d = getattr(f, "proj_dim", None)
        if d is not None:
            macs += n * 2 * d * d  # d x d logits and weights @ V
    return macs


def count_params(module: nn.Module, trainable_only=True) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def module_stats(module: nn.Module, *inputs) -> ModelStats:
    macs = count_macs(module, *inputs)
    return ModelStats(flops=2.0 * macs, macs=macs, params=count_params(module))


def model_stats(cfg: TrainConfig, input_size=(48, 48)) -> ModelStats:
    """Stats of the inference model (encoder, compression, SR network) on one LR input.

    The momentum key encoder exists only during training and is excluded.
    """
    torch.manual_seed(0)
    model = CDSRModel(cfg)
    x = torch.rand(1, 3, *input_size)
    macs = count_macs(model, x) + _attention_macs(model, 1)
    return ModelStats(flops=2.0 * macs, macs=macs, params=count_params(model))


# published complexity of the ten-block model on a 48x48 input (x2)
REFERENCE_COMPLEXITY = {"params_m": 13.23, "gflops": 19.72}
