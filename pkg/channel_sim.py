#!/usr/bin/env python3
"""
BPSK over AWGN with the pre/post-processing every decoder shares.
- codeword selection (all-zero or uniform random)
- modulation, noise at a given Eb/N0, hard decisions
- magnitude / syndrome inputs and the multiplicative-noise training target
"""

from dataclasses import dataclass

import numpy as np

from gf2_codes import ConfigError, DimensionError, NotACodewordError, as_bits

POLICIES = ("all_zero", "random")


def stream_rng(seed, *stream):
    """Independent generator for one (seed, stream...) coordinate"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]))


def modulate(x):
    """BPSK: 0 -> +1, 1 -> -1"""
    return 1.0 - 2.0 * as_bits(x, "codeword").astype(np.float64)


def hard_decision(y):
    """bin(sign(y)) with sign(0) = +1"""
    return (np.asarray(y) < 0).astype(np.uint8)


def ebn0_to_sigma(ebn0_db, rate):
    """sigma = sqrt(1 / (2 R 10^(Eb/N0 / 10)))"""
    ebn0 = 10.0 ** (np.asarray(ebn0_db, dtype=np.float64) / 10.0)
    return np.sqrt(1.0 / (2.0 * rate * ebn0))


def syndromes(pcms, y_b):
    """One (B, n-k) syndrome array per PCM"""
    y_b = np.atleast_2d(as_bits(y_b, "hard decision")).astype(np.int64)
    out = []
    for h in pcms:
        if h.shape[1] != y_b.shape[1]:
            raise DimensionError(f"PCM has {h.shape[1]} columns, word has {y_b.shape[1]} bits")
        out.append(((y_b @ h.T.astype(np.int64)) % 2).astype(np.uint8))
    return tuple(out)


@dataclass(frozen=True)
class NoiseSpec:
    """Eb/N0 range (dB) sampled per vector, code rate and base seed"""
    ebn0_range_db: tuple
    rate: float
    seed: int = 0
    per_sample: bool = True

    def __post_init__(self):
        lo, hi = self.ebn0_range_db
        if lo > hi:
            raise ConfigError(f"Eb/N0 range ({lo}, {hi}) is reversed")
        if not 0.0 < self.rate <= 1.0:
            raise ConfigError(f"code rate {self.rate} outside (0, 1]")

    @classmethod
    def fixed(cls, ebn0_db, rate, seed=0):
        return cls((float(ebn0_db), float(ebn0_db)), rate, seed)

    def draw_ebn0(self, batch_size, rng):
        lo, hi = self.ebn0_range_db
        if lo == hi:
            return np.full(batch_size, float(lo))
        if self.per_sample:
            return rng.uniform(lo, hi, size=batch_size)
        return np.full(batch_size, rng.uniform(lo, hi))


@dataclass(frozen=True)
class ChannelSample:
    """A batch of transmissions; every array has the batch on axis 0"""
    x: np.ndarray
    x_s: np.ndarray
    y: np.ndarray
    y_b: np.ndarray
    mag: np.ndarray
    syndromes: tuple
    target: np.ndarray
    ebn0_db: np.ndarray
    rate: float

    @property
    def batch_size(self):
        return self.x.shape[0]

    @property
    def n(self):
        return self.x.shape[1]

    @property
    def sigma(self):
        return ebn0_to_sigma(self.ebn0_db, self.rate)

    @property
    def syndrome(self):
        return self.syndromes[0]

    def row(self, index):
        """Single-vector view as a batch of one"""
        sl = slice(index, index + 1)
        return ChannelSample(self.x[sl], self.x_s[sl], self.y[sl], self.y_b[sl], self.mag[sl],
                             tuple(s[sl] for s in self.syndromes), self.target[sl],
                             self.ebn0_db[sl], self.rate)


def build_sample(pcms, x, y, ebn0_db, rate):
    """Derive hard decisions, magnitude, syndromes and target from (x, y)"""
    x = np.atleast_2d(as_bits(x, "codeword"))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise DimensionError(f"codeword shape {x.shape} != channel output shape {y.shape}")
    x_s = modulate(x)
    y_b = hard_decision(y)
    return ChannelSample(
        x=x, x_s=x_s, y=y, y_b=y_b,
        mag=np.abs(y),
        syndromes=syndromes(pcms, y_b),
        target=hard_decision(y * x_s),
        ebn0_db=np.broadcast_to(np.asarray(ebn0_db, dtype=np.float64), (x.shape[0],)).copy(),
        rate=rate,
    )


def random_codewords(code, count, rng):
    """Uniform codewords u·G"""
    u = rng.integers(0, 2, size=(count, code.k), dtype=np.int64)
    return ((u @ code.generator.astype(np.int64)) % 2).astype(np.uint8)


def sample(code, noise, policy="all_zero", batch_size=1, rng=None):
    """Draw `batch_size` transmissions through the channel"""
    if policy not in POLICIES:
        raise ConfigError(f"unknown codeword policy '{policy}' (use {' or '.join(POLICIES)})")
    if batch_size < 1:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    rng = rng if rng is not None else stream_rng(noise.seed)

    if policy == "random":
        x = random_codewords(code, batch_size, rng)
    else:
        x = np.zeros((batch_size, code.n), dtype=np.uint8)
    ebn0_db = noise.draw_ebn0(batch_size, rng)
    sigma = ebn0_to_sigma(ebn0_db, noise.rate)
    y = modulate(x) + rng.standard_normal((batch_size, code.n)) * sigma[:, None]
    return build_sample(code.pcms, x, y, ebn0_db, noise.rate)


def is_codeword(code, x):
    x = np.atleast_2d(as_bits(x, "codeword")).astype(np.int64)
    return not ((x @ code.pcm.T.astype(np.int64)) % 2).any()


def make_invariance_pair(code, noise_pattern, new_codeword):
    """
    Re-transmit the multiplicative noise of `noise_pattern` on another codeword.
    The result has the same magnitude, syndromes and target.
    """
    if not is_codeword(code, new_codeword):
        raise NotACodewordError(f"vector is not a codeword of {code.name}")
    z_s = noise_pattern.y * noise_pattern.x_s
    x_new = np.broadcast_to(np.atleast_2d(as_bits(new_codeword)), noise_pattern.x.shape)
    y_new = modulate(x_new) * z_s
    return build_sample(code.pcms, x_new, y_new, noise_pattern.ebn0_db, noise_pattern.rate)
