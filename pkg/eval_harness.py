#!/usr/bin/env python3
"""
Monte-Carlo BER/FER estimation and decoder analysis.
- chunked sampling with per-(seed, SNR, chunk) streams, merged in chunk order
- Wilson intervals, -ln(BER), per-bit error tallies
- bitwise BER joined with the identity coverage of an ensemble
- attention-map dumps with per-column sums
- mask densities and FLOPs for CrossMPT vs ECCT
"""

import csv
import math
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path

import numpy as np
import torch
from scipy.stats import chisquare, norm

from bp_reference import BpConfig, TannerGraph, bp_decode, channel_llr
from channel_sim import NoiseSpec, build_sample, sample, stream_rng
from crossed_ensemble import CrossEnsembleDecoder, compute_logits, coverage_report
from decoder_models import ECCT, decide
from gf2_codes import ConfigError, DimensionError, build_crossmpt_masks, build_ecct_mask

# Published mask densities in percent: (ECCT, CrossMPT)
PUBLISHED_MASK_DENSITY = {
    "bch_31_16": (38.6, 30.1),
    "bch_63_45": (53.09, 32.45),
    "ldpc_49_24": (27.7, 14.3),
    "ldpc_121_60": (25.5, 9.1),
    "ldpc_121_70": (24.01, 9.09),
    "ldpc_121_80": (21.94, 9.09),
}

DENSITY_TOLERANCE = 0.05  # percentage points


# ---------------------------------------------------------------------------
# Decoders as picklable callables: ChannelSample -> x̂ (B, n)
# ---------------------------------------------------------------------------

class UncodedDecoder:
    """x̂ = y_b"""

    def __call__(self, data):
        return data.y_b


class OracleDecoder:
    def __call__(self, data):
        return data.x


class BpDecoder:
    def __init__(self, code, cfg=BpConfig()):
        self.graph = TannerGraph.from_pcm(code.pcm)
        self.cfg = cfg

    def __call__(self, data):
        return bp_decode(channel_llr(data.y, data.sigma), self.graph, self.cfg).bits


class NeuralDecoder:
    """Any trained model plus the Code or EnsembleConfig it decodes"""

    def __init__(self, model, target):
        self.model = model.eval()
        self.target = target

    def __call__(self, data):
        with torch.no_grad():
            logits = compute_logits(self.model, data, self.target)
        return decide(data.y, logits)


# ---------------------------------------------------------------------------
# BER estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StopRule:
    """Stop an SNR point at min_errors bit errors or max_bits bits, whichever first"""
    min_errors: int = 100
    max_bits: int = 10 ** 7
    chunk_size: int = 1000

    def __post_init__(self):
        for key in ("min_errors", "max_bits", "chunk_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1, got {getattr(self, key)}")

    def done(self, bit_errors, bits_sent):
        return bit_errors >= self.min_errors or bits_sent >= self.max_bits


def wilson_interval(errors, trials, confidence=0.95):
    if trials == 0:
        return 0.0, 1.0
    z = norm.ppf(0.5 + confidence / 2)
    p = errors / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    low = 0.0 if errors == 0 else max(0.0, centre - half)
    high = 1.0 if errors == trials else min(1.0, centre + half)
    return low, high


def uncoded_ber(ebn0_db, rate):
    """Q(sqrt(2 R Eb/N0)) for hard-decision BPSK"""
    return float(norm.sf(math.sqrt(2 * rate * 10 ** (ebn0_db / 10))))


@dataclass
class BerRow:
    ebn0_db: float
    bits_sent: int = 0
    bit_errors: int = 0
    frames_sent: int = 0
    frame_errors: int = 0
    per_bit_errors: np.ndarray = None

    @property
    def ber(self):
        return self.bit_errors / self.bits_sent if self.bits_sent else 0.0

    @property
    def fer(self):
        return self.frame_errors / self.frames_sent if self.frames_sent else 0.0

    @property
    def neg_ln_ber(self):
        return -math.log(self.ber) if self.ber > 0 else math.inf

    @property
    def wilson_ci(self):
        return wilson_interval(self.bit_errors, self.bits_sent)


@dataclass
class BerReport:
    code_name: str
    n: int
    rows: list = field(default_factory=list)

    @property
    def per_bit_errors(self):
        return sum((r.per_bit_errors for r in self.rows), np.zeros(self.n, dtype=np.int64))

    @property
    def per_bit_frames(self):
        return sum(r.frames_sent for r in self.rows)


def _run_chunk(job):
    decoder, code, noise, policy, chunk_size, seed, snr_idx, chunk_idx = job
    rng = stream_rng(seed, snr_idx, chunk_idx)
    data = sample(code, noise, policy, chunk_size, rng=rng)
    x_hat = np.asarray(decoder(data))
    if x_hat.shape != data.x.shape:
        raise DimensionError(f"decoder returned {x_hat.shape}, expected {data.x.shape}")
    errors = x_hat != data.x
    return errors.sum(axis=0).astype(np.int64), int(errors.any(axis=1).sum())


def estimate_ber(decoder, code, ebn0_list, stop_rule=StopRule(), policy="random", seed=0,
                 workers=1, verbose=False):
    """
    Monte-Carlo BER per Eb/N0 point. Chunks are drawn in waves of `workers`
    and merged in chunk order, so the counts do not depend on `workers`.
    """
    report = BerReport(code.name, code.n)
    pool = Pool(workers) if workers > 1 else None
    try:
        for snr_idx, ebn0 in enumerate(ebn0_list):
            row = BerRow(float(ebn0), per_bit_errors=np.zeros(code.n, dtype=np.int64))
            noise = NoiseSpec.fixed(ebn0, code.rate, seed)
            chunk_idx = 0
            while not stop_rule.done(row.bit_errors, row.bits_sent):
                wave = [(decoder, code, noise, policy, stop_rule.chunk_size, seed, snr_idx, chunk_idx + i)
                        for i in range(workers)]
                results = pool.map(_run_chunk, wave) if pool else [_run_chunk(wave[0])]
                for per_bit, frame_errors in results:
                    row.per_bit_errors += per_bit
                    row.bit_errors += int(per_bit.sum())
                    row.bits_sent += stop_rule.chunk_size * code.n
                    row.frames_sent += stop_rule.chunk_size
                    row.frame_errors += frame_errors
                    chunk_idx += 1
                    if stop_rule.done(row.bit_errors, row.bits_sent):
                        break
            report.rows.append(row)
            if verbose:
                print(f"   📊 {ebn0:.2f} dB: BER={row.ber:.3e} FER={row.fer:.3e} "
                      f"({row.bit_errors} errors / {row.bits_sent:,} bits)")
    finally:
        if pool:
            pool.close()
            pool.join()
    return report


def _fmt(value):
    return "censored" if math.isinf(value) else f"{value:.6g}"


BER_FIELDS = ["ebn0_db", "bits_sent", "bit_errors", "frames_sent", "frame_errors",
              "ber", "fer", "neg_ln_ber", "ci_low", "ci_high"]


def write_ber_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=BER_FIELDS)
        writer.writeheader()
        for row in report.rows:
            low, high = row.wilson_ci
            writer.writerow({
                "ebn0_db": f"{row.ebn0_db:g}",
                "bits_sent": row.bits_sent,
                "bit_errors": row.bit_errors,
                "frames_sent": row.frames_sent,
                "frame_errors": row.frame_errors,
                "ber": f"{row.ber:.6e}",
                "fer": f"{row.fer:.6e}",
                "neg_ln_ber": _fmt(row.neg_ln_ber),
                "ci_low": f"{low:.6e}",
                "ci_high": f"{high:.6e}",
            })
    return path


# ---------------------------------------------------------------------------
# Bitwise BER
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BitwiseRow:
    position: int
    bit_errors: int
    bits: int
    covered_by: tuple

    @property
    def ber(self):
        return self.bit_errors / self.bits if self.bits else 0.0


def bitwise_ber(report, ens=None):
    """Per-position BER over all SNR rows, annotated with identity coverage"""
    covered_by = coverage_report(ens).covered_by if ens is not None else ((),) * report.n
    if len(covered_by) != report.n:
        raise DimensionError(f"ensemble has {len(covered_by)} positions, report has {report.n}")
    errors = report.per_bit_errors
    frames = report.per_bit_frames
    return [BitwiseRow(i, int(errors[i]), frames, tuple(covered_by[i])) for i in range(report.n)]


def coverage_means(rows):
    """(mean BER of covered positions, mean BER of uncovered positions)"""
    covered = [r.ber for r in rows if r.covered_by]
    uncovered = [r.ber for r in rows if not r.covered_by]
    mean = lambda values: float(np.mean(values)) if values else math.nan
    return mean(covered), mean(uncovered)


def uniformity_pvalue(rows):
    """Chi-square p-value for equal per-position error counts"""
    counts = np.array([r.bit_errors for r in rows], dtype=np.float64)
    if counts.sum() == 0:
        return 1.0
    return float(chisquare(counts).pvalue)


def write_bitwise_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["position", "bit_errors", "bits", "ber",
                                               "covered", "covered_by"])
        writer.writeheader()
        for r in rows:
            writer.writerow({
                "position": r.position,
                "bit_errors": r.bit_errors,
                "bits": r.bits,
                "ber": f"{r.ber:.6e}",
                "covered": int(bool(r.covered_by)),
                "covered_by": ";".join(str(b) for b in r.covered_by),
            })
    return path


# ---------------------------------------------------------------------------
# Attention dumps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttentionLayer:
    """Head-averaged maps of one layer for the first vector of the batch"""
    layer: int
    maps: dict

    def column_sums(self, side):
        return self.maps[side].sum(axis=0)


def forced_error_sample(code, position, magnitude=1.0):
    """Noise-free all-zero transmission with one flipped bit (none when position is None)"""
    if position is not None and not 0 <= position < code.n:
        raise ConfigError(f"error_position: {position} outside 0..{code.n - 1}")
    y = np.full((1, code.n), magnitude)
    if position is not None:
        y[0, position] = -magnitude
    return build_sample(code.pcms, np.zeros((1, code.n), dtype=np.uint8), y, [0.0], code.rate)


def dump_attention(model, data, target, layers=None):
    """Per-layer attention maps; CrossED dumps its first branch"""
    with torch.no_grad():
        _, maps = compute_logits(model, data, target, return_attention=True)
    if isinstance(model, CrossEnsembleDecoder):
        maps = maps[0]
    n_layers = len(maps)
    wanted = range(1, n_layers + 1) if layers is None else layers
    dumps = []
    for layer in wanted:
        if not 1 <= layer <= n_layers:
            raise ConfigError(f"layers: {layer} outside 1..{n_layers}")
        weights = maps[layer - 1]
        if isinstance(model, ECCT):
            dumps.append(AttentionLayer(layer, {"self": weights[0].mean(dim=0).numpy()}))
        else:
            mag, syn = weights
            dumps.append(AttentionLayer(layer, {"mag": mag[0].mean(dim=0).numpy(),
                                                "syn": syn[0].mean(dim=0).numpy()}))
    return dumps


def write_attention(dumps, out_dir):
    """layer<l>_<side>.csv (full map) and layer<l>_<side>_colsum.csv per side"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for dump in dumps:
        for side, matrix in dump.maps.items():
            path = out_dir / f"layer{dump.layer}_{side}.csv"
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                for row in matrix:
                    writer.writerow([f"{v:.6e}" for v in row])
            sums = out_dir / f"layer{dump.layer}_{side}_colsum.csv"
            with open(sums, "w", newline="", encoding="utf-8") as f:
                writer = csv.DictWriter(f, fieldnames=["column", "sum"])
                writer.writeheader()
                for col, value in enumerate(dump.column_sums(side)):
                    writer.writerow({"column": col, "sum": f"{value:.6e}"})
            written += [path, sums]
    return written


# ---------------------------------------------------------------------------
# Complexity
# ---------------------------------------------------------------------------

def flops_estimate(config, code, decoder_kind):
    """
    FLOPs of one forward pass, 2 per multiply-accumulate, softmax 5 per entry.
    Norms and embeddings are not counted. Returns a breakdown dict with 'total'.
    """
    n, m, d, e = code.n, code.m, config.dim, config.ffn_expansion
    tokens = n + m
    edges = int(code.pcm.sum())
    if decoder_kind in ("crossmpt", "fcrossmpt"):
        unmasked = 2 * edges
    elif decoder_kind == "ecct":
        unmasked = build_ecct_mask(code.pcm).unmasked_count
    else:
        raise ConfigError(f"decoder_kind: use crossmpt, fcrossmpt or ecct, got '{decoder_kind}'")

    per_layer = {
        "projection": 6 * d * d * tokens,
        "attention": (4 * d + 5) * unmasked,
        "ffn": 4 * e * d * d * tokens,
    }
    if decoder_kind == "fcrossmpt":
        head = 2 * edges * d + 2 * d * n
    else:
        head = 2 * d * tokens + 2 * tokens * n
    breakdown = {key: config.n_layers * value for key, value in per_layer.items()}
    breakdown["head"] = head
    breakdown["total"] = sum(breakdown.values())
    return breakdown


@dataclass(frozen=True)
class ComplexityRow:
    decoder: str
    unmasked_count: int
    mask_density: float
    flops: int
    attention_map_area: int


@dataclass(frozen=True)
class ComplexityReport:
    code_name: str
    crossmpt: ComplexityRow
    ecct: ComplexityRow

    @property
    def h(self):
        return self.ecct.unmasked_count

    @property
    def h_tilde(self):
        return self.crossmpt.unmasked_count // 2

    @property
    def h_exceeds_two_h_tilde(self):
        return self.h > 2 * self.h_tilde

    @property
    def crossmpt_cheaper(self):
        return self.crossmpt.flops < self.ecct.flops


def complexity_report(code, config):
    mag_mask, _ = build_crossmpt_masks(code.pcm)
    ecct_mask = build_ecct_mask(code.pcm)
    n, m = code.n, code.m
    return ComplexityReport(
        code_name=code.name,
        crossmpt=ComplexityRow("crossmpt", 2 * mag_mask.unmasked_count, mag_mask.density,
                               flops_estimate(config, code, "crossmpt")["total"], 2 * n * m),
        ecct=ComplexityRow("ecct", ecct_mask.unmasked_count, ecct_mask.density,
                           flops_estimate(config, code, "ecct")["total"], (n + m) ** 2),
    )


def density_discrepancies(report):
    """Messages for densities that differ from the published table"""
    if report.code_name not in PUBLISHED_MASK_DENSITY:
        return []
    published = dict(zip(("ecct", "crossmpt"), PUBLISHED_MASK_DENSITY[report.code_name]))
    messages = []
    for row in (report.ecct, report.crossmpt):
        ours = 100 * row.mask_density
        if abs(ours - published[row.decoder]) > DENSITY_TOLERANCE:
            messages.append(f"{report.code_name} {row.decoder}: density {ours:.2f}% "
                            f"vs published {published[row.decoder]:.2f}%")
    return messages


COMPLEXITY_FIELDS = ["code", "decoder", "unmasked_count", "mask_density_pct", "flops",
                     "attention_map_area", "h_gt_2h_tilde", "crossmpt_cheaper",
                     "published_density_pct"]


def write_complexity_csv(reports, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=COMPLEXITY_FIELDS)
        writer.writeheader()
        for report in reports:
            published = dict(zip(("ecct", "crossmpt"), PUBLISHED_MASK_DENSITY.get(report.code_name, ("", ""))))
            for row in (report.crossmpt, report.ecct):
                writer.writerow({
                    "code": report.code_name,
                    "decoder": row.decoder,
                    "unmasked_count": row.unmasked_count,
                    "mask_density_pct": f"{100 * row.mask_density:.2f}",
                    "flops": row.flops,
                    "attention_map_area": row.attention_map_area,
                    "h_gt_2h_tilde": int(report.h_exceeds_two_h_tilde),
                    "crossmpt_cheaper": int(report.crossmpt_cheaper),
                    "published_density_pct": published[row.decoder],
                })
    return path
