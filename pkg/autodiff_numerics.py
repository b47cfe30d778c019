#!/usr/bin/env python3
"""
Numeric primitives used by the decoder models and the training loop:
shape-checked matmul, masked softmax, layer norm, GELU feed-forward,
Adam with an externally supplied learning rate, cosine decay.
"""

import math

import torch
import torch.nn.functional as F

from gf2_codes import ConfigError, DimensionError, LabError


class MaskError(LabError):
    """A softmax row has every position masked"""


class NumericalError(LabError):
    """Non-finite loss or gradient"""


ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def matmul(a, b):
    """Batched matmul with an explicit inner-dimension check"""
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return torch.matmul(a, b)


def masked_softmax(logits, mask):
    """softmax(logits + mask) over the last axis; mask is 0 or -inf"""
    if logits.shape[-2:] != mask.shape[-2:]:
        raise DimensionError(f"mask {tuple(mask.shape)} does not fit logits {tuple(logits.shape)}")
    if torch.isinf(mask).all(dim=-1).any():
        raise MaskError("attention mask has a fully-masked row")
    return torch.softmax(logits + mask, dim=-1)


def layer_norm(x, gain, bias, eps=1e-5):
    return F.layer_norm(x, (x.shape[-1],), gain, bias, eps)


def ffn(x, w1, b1, w2, b2):
    """W2 · GELU(W1 x + b1) + b2"""
    return F.linear(F.gelu(F.linear(x, w1, b1)), w2, b2)


def make_optimizer(params, lr=1e-4):
    return torch.optim.Adam(params, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def adam_step(optimizer, lr):
    """One Adam update at learning rate `lr` using the gradients in .grad"""
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()


def cosine_lr(step, total, lr0=1e-4, lr_min=5e-7):
    """lr_min + (lr0 - lr_min)(1 + cos(pi step / total)) / 2"""
    if total <= 0:
        raise ConfigError(f"cosine schedule needs total > 0, got {total}")
    if not 0 <= step <= total:
        raise ConfigError(f"step {step} outside 0..{total}")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total))


def check_finite(name, value):
    if not torch.isfinite(value).all():
        raise NumericalError(f"{name} is not finite")
