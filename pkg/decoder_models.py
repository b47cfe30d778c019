#!/usr/bin/env python3
"""
Transformer syndrome decoders.
- CrossMPT: magnitude and syndrome embeddings updated by two masked
  cross-attention blocks per layer that share one set of weights
- FCrossMPT: CrossMPT with length-independent embeddings and a Hᵀ-resized head,
  so one parameter set decodes any code
- ECCT: masked self-attention over the concatenated embeddings (baseline),
  plus the variant whose mask keeps only the magnitude-syndrome blocks
- decide(), param_count(), checkpoints
"""

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
import torch
from torch import nn

from autodiff_numerics import ffn, layer_norm, masked_softmax, matmul
from gf2_codes import (ConfigError, DimensionError, LabError, as_bits, build_crossmpt_masks,
                       build_ecct_mask, build_ecct_masked_mask)

CHECKPOINT_FORMAT = "crossmpt-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(LabError):
    """Checkpoint format, version, config or code mismatch"""


class Variant(str, Enum):
    CROSSMPT = "crossmpt"
    FCROSSMPT = "fcrossmpt"
    ECCT = "ecct"
    ECCT_MASKED = "ecct_masked"

    @property
    def code_specific(self):
        return self is not Variant.FCROSSMPT


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant = Variant.CROSSMPT
    n_layers: int = 2
    dim: int = 32
    heads: int = 1
    ffn_expansion: int = 4
    norm_order: str = "pre"
    fc2_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
        except ValueError:
            raise ConfigError(f"variant: unknown value '{self.variant}' "
                              f"(use {', '.join(v.value for v in Variant)})")
        for key in ("n_layers", "dim", "heads", "ffn_expansion"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1, got {getattr(self, key)}")
        if self.dim % self.heads:
            raise ConfigError(f"heads: {self.heads} does not divide dim {self.dim}")
        if self.norm_order not in ("pre", "post"):
            raise ConfigError(f"norm_order: use 'pre' or 'post', got '{self.norm_order}'")

    def to_dict(self):
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

class LayerNorm(nn.LayerNorm):
    def forward(self, x):
        return layer_norm(x, self.weight, self.bias, self.eps)


class FeedForward(nn.Module):
    def __init__(self, dim, expansion):
        super().__init__()
        self.expand = nn.Linear(dim, expansion * dim)
        self.project = nn.Linear(expansion * dim, dim)

    def forward(self, x):
        return ffn(x, self.expand.weight, self.expand.bias, self.project.weight, self.project.bias)


class MaskedAttention(nn.Module):
    """Multi-head attention with bias-free W_Q, W_K, W_V and an additive mask"""

    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.w_q = nn.Linear(dim, dim, bias=False)
        self.w_k = nn.Linear(dim, dim, bias=False)
        self.w_v = nn.Linear(dim, dim, bias=False)

    def _split(self, x):
        b, length, d = x.shape
        return x.view(b, length, self.heads, d // self.heads).transpose(1, 2)

    def forward(self, query, context, mask):
        b, rows, d = query.shape
        q = self._split(self.w_q(query))
        k = self._split(self.w_k(context))
        v = self._split(self.w_v(context))
        logits = matmul(q, k.transpose(-2, -1)) / math.sqrt(d // self.heads)
        weights = masked_softmax(logits, mask)
        out = matmul(weights, v).transpose(1, 2).reshape(b, rows, d)
        return out, weights


class DecoderBlock(nn.Module):
    """Attention + FFN sublayers, each with a residual and a norm"""

    def __init__(self, config):
        super().__init__()
        self.norm_order = config.norm_order
        self.attention = MaskedAttention(config.dim, config.heads)
        self.ffn = FeedForward(config.dim, config.ffn_expansion)
        self.norm_attn = LayerNorm(config.dim)
        self.norm_ffn = LayerNorm(config.dim)

    def forward(self, query, context, mask):
        """context=None means self-attention"""
        if self.norm_order == "pre":
            normed = self.norm_attn(query)
            ctx = normed if context is None else self.norm_attn(context)
            attended, weights = self.attention(normed, ctx, mask)
            h = query + attended
            return h + self.ffn(self.norm_ffn(h)), weights
        ctx = query if context is None else context
        attended, weights = self.attention(query, ctx, mask)
        h = self.norm_attn(query + attended)
        return self.norm_ffn(h + self.ffn(h)), weights


def crossmpt_layer(block, magnitude, syndrome, mag_mask, syn_mask):
    """
    One CrossMPT layer: M' from M attending to S under g(Hᵀ), then S' from S
    attending to M' under g(H). Both passes use the same block.
    """
    new_mag, mag_weights = block(magnitude, syndrome, mag_mask)
    new_syn, syn_weights = block(syndrome, new_mag, syn_mask)
    return new_mag, new_syn, (mag_weights, syn_weights)


@dataclass(frozen=True)
class PcmTensors:
    """One PCM as the tensors a forward pass needs"""
    h: np.ndarray
    mag_mask: torch.Tensor
    syn_mask: torch.Tensor
    h_t: torch.Tensor

    @classmethod
    def from_pcm(cls, h, dtype=torch.float32):
        h = as_bits(h)
        mag_mask, syn_mask = build_crossmpt_masks(h)
        return cls(
            h=h,
            mag_mask=torch.as_tensor(mag_mask.values, dtype=dtype),
            syn_mask=torch.as_tensor(syn_mask.values, dtype=dtype),
            h_t=torch.as_tensor(h.T.astype(np.float64), dtype=dtype),
        )

    @property
    def n(self):
        return self.h.shape[1]

    @property
    def m(self):
        return self.h.shape[0]


def init_weights(model, dim, seed):
    """Weights and embeddings ~ N(0, 1/d), biases 0, norm gains 1"""
    gen = torch.Generator().manual_seed(int(seed))
    std = 1.0 / math.sqrt(dim)
    with torch.no_grad():
        for name, param in model.named_parameters():
            owner = model.get_submodule(name.rsplit(".", 1)[0]) if "." in name else model
            if isinstance(owner, nn.LayerNorm):
                param.copy_(torch.ones_like(param) if name.endswith("weight") else torch.zeros_like(param))
            elif name.endswith("bias"):
                param.zero_()
            else:
                noise = torch.randn(param.shape, generator=gen, dtype=torch.float64) * std
                param.copy_(noise)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

class _PositionalDecoder(nn.Module):
    """Shared parameterization of CrossMPT and ECCT: 2n-k position rows, FC1, FC2"""

    def __init__(self, config, pcm):
        super().__init__()
        h = as_bits(pcm)
        self.config = config
        self.m, self.n = h.shape
        self.register_buffer("pcm", torch.as_tensor(h), persistent=False)
        self.position = nn.Parameter(torch.empty(self.n + self.m, config.dim))
        self.layers = nn.ModuleList(DecoderBlock(config) for _ in range(config.n_layers))
        self.final_norm = LayerNorm(config.dim)
        self.fc1 = nn.Linear(config.dim, 1)
        self.fc2 = nn.Linear(self.n + self.m, self.n, bias=config.fc2_bias)

    def embed(self, magnitude, syndrome):
        if magnitude.shape[-1] != self.n or syndrome.shape[-1] != self.m:
            raise DimensionError(f"model expects n={self.n}, n-k={self.m}; got "
                                 f"{magnitude.shape[-1]} and {syndrome.shape[-1]}")
        mag = magnitude.unsqueeze(-1) * self.position[:self.n]
        syn = syndrome.unsqueeze(-1) * self.position[self.n:]
        return mag, syn

    def head(self, magnitude, syndrome):
        x = self.final_norm(torch.cat([magnitude, syndrome], dim=-2))
        return self.fc2(self.fc1(x).squeeze(-1))


class CrossMPT(_PositionalDecoder):

    def __init__(self, config, pcm):
        super().__init__(config, pcm)
        pcm_t = PcmTensors.from_pcm(pcm)
        self.register_buffer("mag_mask", pcm_t.mag_mask)
        self.register_buffer("syn_mask", pcm_t.syn_mask)
        init_weights(self, config.dim, config.seed)

    def forward(self, magnitude, syndrome, return_attention=False):
        mag, syn = self.embed(magnitude, syndrome)
        maps = []
        for block in self.layers:
            mag, syn, weights = crossmpt_layer(block, mag, syn, self.mag_mask, self.syn_mask)
            maps.append(weights)
        logits = self.head(mag, syn)
        return (logits, maps) if return_attention else logits


class ECCT(_PositionalDecoder):
    """Self-attention baseline; `masked=True` keeps only the cross blocks and the diagonal"""

    def __init__(self, config, pcm, masked=False):
        super().__init__(config, pcm)
        mask = build_ecct_masked_mask(pcm) if masked else build_ecct_mask(pcm)
        self.register_buffer("self_mask", torch.as_tensor(mask.values, dtype=torch.float32))
        init_weights(self, config.dim, config.seed)

    def forward(self, magnitude, syndrome, return_attention=False):
        mag, syn = self.embed(magnitude, syndrome)
        x = torch.cat([mag, syn], dim=-2)
        maps = []
        for block in self.layers:
            x, weights = block(x, None, self.self_mask)
            maps.append(weights)
        logits = self.head(x[..., :self.n, :], x[..., self.n:, :])
        return (logits, maps) if return_attention else logits


class FoundationCrossMPT(nn.Module):
    """CrossMPT with one embedding vector per input kind; no parameter depends on n or k"""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.embed_mag = nn.Parameter(torch.empty(config.dim))
        self.embed_syn = nn.Parameter(torch.empty(config.dim))
        self.layers = nn.ModuleList(DecoderBlock(config) for _ in range(config.n_layers))
        self.final_norm = LayerNorm(config.dim)
        self.head = nn.Linear(config.dim, 1)
        init_weights(self, config.dim, config.seed)

    def pcm_tensors(self, pcm):
        """PcmTensors in the model dtype; accepts a PCM array or PcmTensors"""
        if isinstance(pcm, PcmTensors):
            if pcm.h_t.dtype == self.embed_mag.dtype:
                return pcm
            pcm = pcm.h
        return PcmTensors.from_pcm(pcm, dtype=self.embed_mag.dtype)

    def embed(self, magnitude, syndrome):
        return magnitude.unsqueeze(-1) * self.embed_mag, syndrome.unsqueeze(-1) * self.embed_syn

    def run_tower(self, mag, syn, pcm, maps=None):
        for block in self.layers:
            mag, syn, weights = crossmpt_layer(block, mag, syn, pcm.mag_mask, pcm.syn_mask)
            if maps is not None:
                maps.append(weights)
        return mag, syn

    def resize(self, mag, syn, pcm):
        """norm(M) + Hᵀ·norm(S): an n x d embedding"""
        return self.final_norm(mag) + matmul(pcm.h_t, self.final_norm(syn))

    def forward(self, magnitude, syndrome, pcm, return_attention=False):
        pcm = self.pcm_tensors(pcm)
        if magnitude.shape[-1] != pcm.n or syndrome.shape[-1] != pcm.m:
            raise DimensionError(f"PCM is {pcm.m}x{pcm.n}; inputs have "
                                 f"{magnitude.shape[-1]} and {syndrome.shape[-1]} positions")
        mag, syn = self.embed(magnitude, syndrome)
        maps = [] if return_attention else None
        mag, syn = self.run_tower(mag, syn, pcm, maps)
        logits = self.head(self.resize(mag, syn, pcm)).squeeze(-1)
        return (logits, maps) if return_attention else logits


def build_model(config, pcm=None, dtype=torch.float32):
    """Instantiate the decoder for `config`; code-specific variants need a PCM"""
    if config.variant.code_specific and pcm is None:
        raise ConfigError(f"variant: {config.variant.value} is code-specific and needs a PCM")
    if config.variant is Variant.CROSSMPT:
        model = CrossMPT(config, pcm)
    elif config.variant is Variant.ECCT:
        model = ECCT(config, pcm)
    elif config.variant is Variant.ECCT_MASKED:
        model = ECCT(config, pcm, masked=True)
    else:
        model = FoundationCrossMPT(config)
    return model.to(dtype)


def model_dtype(model):
    return next(model.parameters()).dtype


def sample_inputs(model, sample, pcm_index=0):
    """(magnitude, syndrome) tensors for one PCM of a ChannelSample"""
    dtype = model_dtype(model)
    magnitude = torch.as_tensor(sample.mag, dtype=dtype)
    syndrome = torch.as_tensor(sample.syndromes[pcm_index].astype(np.float64), dtype=dtype)
    return magnitude, syndrome


def forward(model, sample, pcm=None, return_attention=False):
    """Logits (B, n) for a ChannelSample; FCrossMPT needs the PCM used for the syndrome"""
    magnitude, syndrome = sample_inputs(model, sample)
    if isinstance(model, FoundationCrossMPT):
        if pcm is None:
            raise ConfigError("pcm: FCrossMPT forward needs the code's PCM")
        return model(magnitude, syndrome, pcm, return_attention=return_attention)
    return model(magnitude, syndrome, return_attention=return_attention)


def decide(y, logits):
    """x̂ = y_b XOR (f < 0): a negative logit flips the hard decision"""
    if isinstance(logits, torch.Tensor):
        logits = logits.detach().cpu().numpy()
    y = np.asarray(y)
    logits = np.asarray(logits)
    if y.shape != logits.shape:
        raise DimensionError(f"y shape {y.shape} != logits shape {logits.shape}")
    return ((y < 0) ^ (logits < 0)).astype(np.uint8)


def param_count(config, code=None):
    """Exact number of trainable scalars"""
    model = build_model(config, None if code is None else code.pcm)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model, config, code_names, pcms, seed, step=0, **extra):
    """Self-describing checkpoint: header, config, codes, PCMs, counters, weights"""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": config.to_dict(),
        "code_names": list(code_names),
        "pcms": [torch.as_tensor(as_bits(h)) for h in pcms],
        "seed": int(seed),
        "step": int(step),
        "dtype": str(model_dtype(model)).replace("torch.", ""),
        "state_dict": model.state_dict(),
    }
    payload.update(extra)
    torch.save(payload, path)
    return path


def load_checkpoint(path):
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {payload.get('version')} "
                              f"(supported: {CHECKPOINT_VERSION})")
    payload["model_config"] = ModelConfig.from_dict(payload["model_config"])
    payload["pcms"] = [t.numpy().astype(np.uint8) for t in payload["pcms"]]
    return payload


def restore_model(payload):
    """Rebuild a single-PCM model from a loaded checkpoint"""
    config = payload["model_config"]
    pcm = payload["pcms"][0] if config.variant.code_specific else None
    model = build_model(config, pcm, dtype=getattr(torch, payload.get("dtype", "float32")))
    model.load_state_dict(payload["state_dict"])
    return model
