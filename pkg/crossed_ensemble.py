#!/usr/bin/env python3
"""
CrossED: p CrossMPT towers with shared weights, one per parity-check matrix,
fused by addition before a single output projection.

The PCMs are the systematic form and its cyclic column shifts by multiples
of n-k, so the identity blocks of the branches sit on different bit ranges.
Codes that are not cyclic fall back to diagonalizing each target range by
row operations. Trained over a code mixture the same model is FCrossED.
"""

import math
from dataclasses import dataclass, field

import torch

from decoder_models import (FoundationCrossMPT, ModelConfig, Variant, build_model,
                            crossmpt_layer, forward, sample_inputs)
from gf2_codes import (ConfigError, DimensionError, ShiftRangeError, complementary_pcm,
                       diagonalize, shift_identity_columns, systematic_form)

FUSIONS = ("output", "layer")


@dataclass(frozen=True)
class EnsembleConfig:
    """Branch PCMs (carried by `code`), their identity columns and the shared model config"""
    code: object
    p: int
    shifts: tuple
    identity_columns: tuple
    base: ModelConfig = field(default_factory=lambda: ModelConfig(variant=Variant.FCROSSMPT))
    fuse: str = "output"

    @property
    def pcms(self):
        return self.code.pcms

    @property
    def pcm(self):
        return self.code.pcm

    @property
    def n(self):
        return self.code.n


def max_branches(code):
    return math.ceil(code.n / code.m)


def build_ensemble(code, p, base=None, fuse="output", verbose=False):
    """[H_sys, H_c^1, ..., H_c^{p-1}] plus the identity columns of each branch"""
    base = base or ModelConfig(variant=Variant.FCROSSMPT)
    if base.variant is not Variant.FCROSSMPT:
        raise ConfigError(f"variant: ensemble branches use fcrossmpt, got {base.variant.value}")
    if fuse not in FUSIONS:
        raise ConfigError(f"fuse: use {' or '.join(FUSIONS)}, got '{fuse}'")
    p_max = max_branches(code)
    if not 1 <= p <= p_max:
        raise ShiftRangeError(f"p={p} outside 1..{p_max} for {code.name}")

    m, n = code.m, code.n
    sys = systematic_form(code.pcm)
    pcms, covered = [], []
    if code.cyclic and sys.complete:
        for shift in range(p):
            pcms.append(complementary_pcm(sys.matrix, shift, cyclic=True))
            covered.append(shift_identity_columns(m, n, shift))
    else:
        for shift in range(p):
            form = diagonalize(code.pcm, shift_identity_columns(m, n, shift))
            pcms.append(form.matrix)
            covered.append(form.covered_columns)
            if verbose and not form.complete:
                print(f"   ⚠️  branch {shift}: {form.identity_columns}/{m} identity columns")

    ens = EnsembleConfig(code.with_pcms(pcms), p, tuple(range(p)), tuple(covered), base, fuse)
    if verbose:
        report = coverage_report(ens)
        print(f"✅ {code.name}: {p} PCMs, {report.covered_count}/{n} bits covered by identity columns")
    return ens


@dataclass(frozen=True)
class CoverageReport:
    covered_by: tuple
    uncovered: tuple

    @property
    def covered_count(self):
        return sum(1 for branches in self.covered_by if branches)


def coverage_report(ens):
    """For each bit, the branches whose identity block contains it"""
    covered_by = [[] for _ in range(ens.n)]
    for branch, columns in enumerate(ens.identity_columns):
        for col in columns:
            covered_by[col].append(branch)
    return CoverageReport(
        covered_by=tuple(tuple(b) for b in covered_by),
        uncovered=tuple(i for i, b in enumerate(covered_by) if not b),
    )


def branch_order(pcms):
    """Canonical branch order (by PCM bytes); the fused sum is taken in this order"""
    return sorted(range(len(pcms)), key=lambda j: (pcms[j].shape, pcms[j].tobytes()))


class CrossEnsembleDecoder(FoundationCrossMPT):
    """Same parameters as FCrossMPT; only the forward pass differs"""

    def __init__(self, config, fuse="output"):
        if fuse not in FUSIONS:
            raise ConfigError(f"fuse: use {' or '.join(FUSIONS)}, got '{fuse}'")
        super().__init__(config)
        self.fuse = fuse

    def embedding(self, magnitude, syndromes, pcms, maps=None):
        """Fused n x d embedding ahead of the shared head"""
        if len(syndromes) != len(pcms):
            raise DimensionError(f"{len(syndromes)} syndromes for {len(pcms)} PCMs")
        pcms = [self.pcm_tensors(h) for h in pcms]
        order = branch_order([p.h for p in pcms])
        if maps is not None:
            maps.extend([] for _ in pcms)

        if self.fuse == "output":
            fused = None
            for j in order:
                mag, syn = self.embed(magnitude, syndromes[j])
                mag, syn = self.run_tower(mag, syn, pcms[j], None if maps is None else maps[j])
                part = self.resize(mag, syn, pcms[j])
                fused = part if fused is None else fused + part
            return fused

        mag = magnitude.unsqueeze(-1) * self.embed_mag
        syns = [s.unsqueeze(-1) * self.embed_syn for s in syndromes]
        for block in self.layers:
            mag_sum = None
            for j in order:
                mag_j, syns[j], weights = crossmpt_layer(block, mag, syns[j],
                                                         pcms[j].mag_mask, pcms[j].syn_mask)
                if maps is not None:
                    maps[j].append(weights)
                mag_sum = mag_j if mag_sum is None else mag_sum + mag_j
            mag = mag_sum
        fused = None
        for j in order:
            part = self.resize(mag, syns[j], pcms[j])
            fused = part if fused is None else fused + part
        return fused

    def forward(self, magnitude, syndromes, pcms, return_attention=False):
        maps = [] if return_attention else None
        logits = self.head(self.embedding(magnitude, syndromes, pcms, maps)).squeeze(-1)
        return (logits, maps) if return_attention else logits


def ensemble_inputs(model, sample, ens):
    if len(sample.syndromes) != ens.p:
        raise DimensionError(f"sample carries {len(sample.syndromes)} syndromes, ensemble has {ens.p} PCMs")
    magnitude, _ = sample_inputs(model, sample)
    syndromes = [sample_inputs(model, sample, j)[1] for j in range(ens.p)]
    return magnitude, syndromes


def crossed_forward(model, sample, ens, return_attention=False):
    magnitude, syndromes = ensemble_inputs(model, sample, ens)
    return model(magnitude, syndromes, list(ens.pcms), return_attention=return_attention)


def build_decoder(config, target, dtype=torch.float32):
    """Model for a Code (CrossMPT/FCrossMPT/ECCT) or an EnsembleConfig (CrossED)"""
    if isinstance(target, EnsembleConfig):
        return CrossEnsembleDecoder(target.base, target.fuse).to(dtype)
    return build_model(config, target.pcm, dtype=dtype)


def compute_logits(model, sample, target, return_attention=False):
    """Dispatch a ChannelSample to the right forward pass"""
    if isinstance(model, CrossEnsembleDecoder):
        if not isinstance(target, EnsembleConfig):
            raise ConfigError("CrossED decoding needs an EnsembleConfig target")
        return crossed_forward(model, sample, target, return_attention)
    if isinstance(model, FoundationCrossMPT):
        return forward(model, sample, target.pcm, return_attention)
    return forward(model, sample, return_attention=return_attention)


def ensemble_param_count(ens):
    model = CrossEnsembleDecoder(ens.base, ens.fuse)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
