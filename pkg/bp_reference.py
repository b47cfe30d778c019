#!/usr/bin/env python3
"""
Belief propagation baseline (flooding schedule) on the Tanner graph of a PCM.
Messages live in dense (batch, checks, bits) arrays masked by the PCM.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from gf2_codes import ConfigError, DimensionError, as_bits

TANH_CLIP = 1.0 - 1e-12
LOG_FLOOR = 1e-300


class Algorithm(str, Enum):
    SUM_PRODUCT = "sum_product"
    MIN_SUM = "min_sum"


@dataclass(frozen=True)
class TannerGraph:
    h: np.ndarray
    check_vars: tuple
    var_checks: tuple

    @classmethod
    def from_pcm(cls, h):
        h = as_bits(h)
        return cls(
            h=h,
            check_vars=tuple(np.flatnonzero(row) for row in h),
            var_checks=tuple(np.flatnonzero(col) for col in h.T),
        )

    @property
    def m(self):
        return self.h.shape[0]

    @property
    def n(self):
        return self.h.shape[1]

    @property
    def edge_count(self):
        return int(self.h.sum())

    @property
    def edges(self):
        return np.asarray(self.h, dtype=bool)


@dataclass(frozen=True)
class BpConfig:
    max_iters: int = 20
    algorithm: Algorithm = Algorithm.SUM_PRODUCT
    early_stop: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError(f"max_iters: must be >= 1, got {self.max_iters}")
        try:
            object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        except ValueError:
            raise ConfigError(f"algorithm: use sum_product or min_sum, got '{self.algorithm}'")


@dataclass(frozen=True)
class BpResult:
    bits: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    posterior: np.ndarray  # LLRs the decisions were taken from; 0 decides bit 0


def channel_llr(y, sigma):
    """2y / sigma^2 (positive favours bit 0)"""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim == 1:
        sigma = sigma[:, None]
    return 2.0 * np.asarray(y, dtype=np.float64) / sigma ** 2


def _syndrome_ok(bits, h):
    return ~(((bits.astype(np.int64) @ h.T.astype(np.int64)) % 2).any(axis=1))


def _check_sum_product(v2c, edges):
    t = np.clip(np.tanh(v2c / 2.0), -TANH_CLIP, TANH_CLIP)
    t = np.where(edges, t, 1.0)
    sign = np.where(t < 0, -1.0, 1.0)
    log_mag = np.log(np.maximum(np.abs(t), LOG_FLOOR))
    total_sign = np.prod(sign, axis=2, keepdims=True)
    total_log = np.sum(log_mag, axis=2, keepdims=True)
    others = total_sign * sign * np.exp(total_log - log_mag)
    others = np.clip(others, -TANH_CLIP, TANH_CLIP)
    return np.where(edges, 2.0 * np.arctanh(others), 0.0)


def _check_min_sum(v2c, edges):
    mag = np.where(edges, np.abs(v2c), np.inf)
    sign = np.where(edges & (v2c < 0), -1.0, 1.0)
    total_sign = np.prod(sign, axis=2, keepdims=True)
    first = np.argmin(mag, axis=2)[..., None]
    min1 = np.take_along_axis(mag, first, axis=2)
    masked = mag.copy()
    np.put_along_axis(masked, first, np.inf, axis=2)
    min2 = np.min(masked, axis=2, keepdims=True)
    cols = np.arange(mag.shape[2])[None, None, :]
    others = np.where(cols == first, min2, min1)
    return np.where(edges, total_sign * sign * others, 0.0)


def bp_decode(llr, graph, cfg=BpConfig()):
    """
    Decode a batch of channel LLRs. A zero-syndrome channel decision is
    accepted at iteration 1; otherwise messages flow until the posterior
    decision satisfies every check or max_iters is reached.
    """
    llr = np.atleast_2d(np.asarray(llr, dtype=np.float64))
    if llr.shape[1] != graph.n:
        raise DimensionError(f"LLR length {llr.shape[1]} != n={graph.n}")
    if not np.isfinite(llr).all():
        raise ConfigError("llr: channel LLRs must be finite")

    batch = llr.shape[0]
    edges = graph.edges[None, :, :]
    check_update = _check_sum_product if cfg.algorithm is Algorithm.SUM_PRODUCT else _check_min_sum

    decision = (llr < 0).astype(np.uint8)
    bits = decision.copy()
    final = llr.copy()
    iterations = np.full(batch, cfg.max_iters, dtype=np.int64)
    converged = np.zeros(batch, dtype=bool)
    active = np.ones(batch, dtype=bool)
    if cfg.early_stop:
        ok = _syndrome_ok(decision, graph.h)
        iterations[ok] = 1
        converged[ok] = True
        active &= ~ok

    c2v = np.zeros((batch, graph.m, graph.n))
    posterior = llr
    for it in range(1, cfg.max_iters + 1):
        if not active.any():
            break
        posterior = llr + c2v.sum(axis=1)
        v2c = np.where(edges, posterior[:, None, :] - c2v, 0.0)
        c2v = check_update(v2c, edges)
        posterior = llr + c2v.sum(axis=1)
        decision = (posterior < 0).astype(np.uint8)
        ok = _syndrome_ok(decision, graph.h)
        if cfg.early_stop:
            done = active & ok
            bits[done] = decision[done]
            final[done] = posterior[done]
            iterations[done] = it
            converged[done] = True
            active &= ~ok

    bits[active] = decision[active]
    final[active] = posterior[active]
    if not cfg.early_stop:
        converged = _syndrome_ok(bits, graph.h)
    return BpResult(bits, iterations, converged, final)
