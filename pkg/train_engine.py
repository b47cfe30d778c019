#!/usr/bin/env python3
"""
Training loop for the syndrome decoders.
- all-zero codeword, Eb/N0 drawn per sample from a range
- loss over the multiplicative-noise target, Adam, cosine learning-rate decay
- one code per batch for multi-code (foundation) training
- checkpoints that resume bitwise-deterministically
"""

import csv
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from autodiff_numerics import (NumericalError, adam_step, check_finite, cosine_lr,
                               make_optimizer)
from channel_sim import NoiseSpec, sample, stream_rng
from crossed_ensemble import (CrossEnsembleDecoder, EnsembleConfig, build_decoder,
                              build_ensemble, compute_logits, max_branches)
from decoder_models import (CheckpointError, ModelConfig, load_checkpoint, restore_model,
                            save_checkpoint)
from gf2_codes import ConfigError, get_code

PROFILES = {
    "desk": {"epochs": 20, "batches_per_epoch": 200, "batch_size": 128,
             "lr0": 5e-4, "lr_min": 5e-7, "n_layers": 2, "dim": 32},
    "paper": {"epochs": 1000, "batches_per_epoch": 1000, "batch_size": 128,
              "lr0": 1e-4, "lr_min": 5e-7, "n_layers": 6, "dim": 128},
}

SAMPLING = ("uniform", "proportional")

# Fields a resumed run may change without altering the trajectory
RESUME_FREE_KEYS = ("checkpoint_every",)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batches_per_epoch: int = 200
    batch_size: int = 128
    lr0: float = 1e-4
    lr_min: float = 5e-7
    ebn0_range: tuple = (3.0, 7.0)
    per_sample_ebn0: bool = True  # False draws one Eb/N0 per batch
    codes: tuple = ("bch_31_16",)
    code_sampling: str = "uniform"
    seed: int = 0
    checkpoint_every: int = 0
    grad_clip: float = 1.0
    ensemble_p: int = 1
    fuse: str = "output"
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "codes", tuple(self.codes))
        object.__setattr__(self, "ebn0_range", tuple(float(v) for v in self.ebn0_range))
        for key in ("epochs", "batches_per_epoch", "batch_size", "ensemble_p"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1, got {getattr(self, key)}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every: must be >= 0, got {self.checkpoint_every}")
        if not self.lr0 > self.lr_min > 0:
            raise ConfigError(f"lr0/lr_min: need lr0 > lr_min > 0, got {self.lr0} / {self.lr_min}")
        if len(self.ebn0_range) != 2 or self.ebn0_range[0] > self.ebn0_range[1]:
            raise ConfigError(f"ebn0_range: need [lo, hi] with lo <= hi, got {self.ebn0_range}")
        if not self.codes:
            raise ConfigError("codes: at least one code name is required")
        if self.code_sampling not in SAMPLING:
            raise ConfigError(f"code_sampling: use uniform or proportional, got '{self.code_sampling}'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype: use float32 or float64, got '{self.dtype}'")

    @property
    def total_steps(self):
        return self.epochs * self.batches_per_epoch

    def to_dict(self):
        d = asdict(self)
        d["codes"] = list(self.codes)
        d["ebn0_range"] = list(self.ebn0_range)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_profile(cls, name, **overrides):
        """Profile values, then overrides; model keys in the profile are ignored here"""
        if name not in PROFILES:
            raise ConfigError(f"profile: unknown '{name}' (known: {', '.join(PROFILES)})")
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in PROFILES[name].items() if k in known}
        values.update(overrides)
        return cls(**values)


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [v.strip() for v in raw.replace(":", ",").split(",") if v.strip()]
            return tuple(float(v) for v in items) if key == "ebn0_range" else tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse '{raw}'")


MODEL_KEYS = {f.name: f for f in fields(ModelConfig)}
TRAIN_KEYS = {f.name: f for f in fields(TrainConfig)}


def load_config_file(path):
    """Flat 'key = value' file ('#' comments) -> (train overrides, model overrides)"""
    train_values, model_values = {}, {}
    train_defaults, model_defaults = TrainConfig(), ModelConfig()
    with open(path, "r", encoding="utf-8") as f:
        for no, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{no}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key == "seed":
                train_values[key] = model_values[key] = _coerce(key, raw, 0)
            elif key in TRAIN_KEYS:
                train_values[key] = _coerce(key, raw, getattr(train_defaults, key))
            elif key == "variant" or key == "norm_order":
                model_values[key] = raw
            elif key in MODEL_KEYS:
                model_values[key] = _coerce(key, raw, getattr(model_defaults, key))
            elif key == "profile":
                train_values[key] = raw
            else:
                raise ConfigError(f"{key}: unknown config key ({path}:{no})")
    return train_values, model_values


@dataclass
class TrainReport:
    epoch_losses: list
    lr_trace: list
    wall_time: float
    checkpoint_path: str = None
    epochs_completed: int = 0


def loss(logits, target):
    """
    Per-vector sum of -[z log(1 - sigmoid(f)) + (1 - z) log sigmoid(f)],
    averaged over the batch. z = 1 marks a sign flip.
    """
    target = torch.as_tensor(target, dtype=logits.dtype)
    if target.shape != logits.shape:
        raise ConfigError(f"target: shape {tuple(target.shape)} != logits {tuple(logits.shape)}")
    per_bit = F.binary_cross_entropy_with_logits(logits, 1.0 - target, reduction="none")
    return per_bit.sum(dim=-1).mean()


def resolve_targets(cfg, model_cfg):
    """Codes (or per-code ensembles) the run trains on"""
    codes = [get_code(name) for name in cfg.codes]
    if model_cfg.variant.code_specific:
        if len(codes) > 1:
            raise ConfigError(f"codes: {model_cfg.variant.value} is code-specific; "
                              f"multi-code training needs fcrossmpt")
        if cfg.ensemble_p > 1:
            raise ConfigError("ensemble_p: ensembles are built on fcrossmpt branches")
        return codes
    if cfg.ensemble_p > 1:
        return [build_ensemble(code, cfg.ensemble_p, model_cfg, cfg.fuse) for code in codes]
    return codes


def _target_code(target):
    return target.code if isinstance(target, EnsembleConfig) else target


def pick_target(cfg, targets, rng):
    if len(targets) == 1:
        return targets[0]
    if cfg.code_sampling == "uniform":
        return targets[rng.integers(len(targets))]
    # proportional to code length
    weights = np.array([_target_code(t).n for t in targets], dtype=np.float64)
    return targets[rng.choice(len(targets), p=weights / weights.sum())]


def train_step(model, optimizer, cfg, targets, epoch, batch, step):
    """One batch; returns (loss value, learning rate)"""
    rng = stream_rng(cfg.seed, epoch, batch)
    target = pick_target(cfg, targets, rng)
    code = _target_code(target)
    noise = NoiseSpec(cfg.ebn0_range, code.rate, cfg.seed, cfg.per_sample_ebn0)
    data = sample(code, noise, "all_zero", cfg.batch_size, rng=rng)

    logits = compute_logits(model, data, target)
    value = loss(logits, data.target)
    try:
        check_finite("loss", value)
    except NumericalError as e:
        raise NumericalError(f"{e} at epoch {epoch + 1}, batch {batch + 1} ({code.name})")

    optimizer.zero_grad()
    value.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    lr = cosine_lr(step, max(cfg.total_steps - 1, 1), cfg.lr0, cfg.lr_min)
    adam_step(optimizer, lr)
    return float(value.detach()), lr


def _checkpoint(path, model, optimizer, cfg, model_cfg, targets, epoch, report):
    pcms = [h for t in targets for h in _target_code(t).pcms]
    save_checkpoint(
        path, model, model_cfg, list(cfg.codes), pcms, cfg.seed,
        step=epoch * cfg.batches_per_epoch,
        epoch=epoch,
        train_config=cfg.to_dict(),
        ensemble_p=cfg.ensemble_p,
        fuse=cfg.fuse,
        optimizer=optimizer.state_dict(),
        epoch_losses=list(report.epoch_losses),
        lr_trace=list(report.lr_trace),
    )
    report.checkpoint_path = str(path)


def _write_log(path, report, cfg):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "mean_loss", "lr"])
        writer.writeheader()
        for epoch, mean_loss in enumerate(report.epoch_losses, 1):
            last = min(epoch * cfg.batches_per_epoch, len(report.lr_trace)) - 1
            writer.writerow({"epoch": epoch, "mean_loss": f"{mean_loss:.6f}",
                             "lr": f"{report.lr_trace[last]:.6e}"})


def _run(model, optimizer, cfg, model_cfg, targets, report, start_epoch, out_dir,
         stop_after, verbose):
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    last_epoch = cfg.epochs if stop_after is None else min(stop_after, cfg.epochs)
    started = time.time()

    for epoch in range(start_epoch, last_epoch):
        total = 0.0
        for batch in range(cfg.batches_per_epoch):
            step = epoch * cfg.batches_per_epoch + batch
            value, lr = train_step(model, optimizer, cfg, targets, epoch, batch, step)
            total += value
            report.lr_trace.append(lr)
        report.epoch_losses.append(total / cfg.batches_per_epoch)
        report.epochs_completed = epoch + 1
        if verbose:
            print(f"   Epoch {epoch + 1}/{cfg.epochs}: loss={report.epoch_losses[-1]:.4f} "
                  f"lr={report.lr_trace[-1]:.2e}")
        if out_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            _checkpoint(out_dir / f"checkpoint_epoch{epoch + 1}.pt", model, optimizer, cfg,
                        model_cfg, targets, epoch + 1, report)
            if verbose:
                print(f"   💾 Checkpoint: epoch {epoch + 1}")

    report.wall_time += time.time() - started
    if out_dir:
        _checkpoint(out_dir / "checkpoint.pt", model, optimizer, cfg, model_cfg, targets,
                    report.epochs_completed, report)
        _write_log(out_dir / "train_log.csv", report, cfg)
        if verbose:
            print(f"💾 Saved checkpoint to: {report.checkpoint_path}")
    return report


def train(cfg, model_cfg, out_dir=None, stop_after=None, verbose=False):
    """
    Train from scratch. `stop_after` ends the run after that many epochs
    (the cosine schedule still spans cfg.epochs) so it can be resumed.
    Returns (model, report).
    """
    targets = resolve_targets(cfg, model_cfg)
    model = build_decoder(model_cfg, targets[0], dtype=getattr(torch, cfg.dtype))
    optimizer = make_optimizer(model.parameters(), cfg.lr0)
    if verbose:
        names = ", ".join(cfg.codes)
        count = sum(p.numel() for p in model.parameters())
        print(f"🚀 Training {model_cfg.variant.value} (N={model_cfg.n_layers}, d={model_cfg.dim}, "
              f"{count:,} params) on {names}")
        print(f"   {cfg.epochs} epochs x {cfg.batches_per_epoch} batches x {cfg.batch_size} samples")
    report = TrainReport([], [], 0.0)
    report = _run(model, optimizer, cfg, model_cfg, targets, report, 0, out_dir, stop_after, verbose)
    return model, report


def check_resume_compatible(payload, cfg):
    """Refuse a resume whose config would change the trajectory"""
    saved = TrainConfig.from_dict(payload["train_config"]).to_dict()
    requested = cfg.to_dict()
    for key in saved:
        if key in RESUME_FREE_KEYS:
            continue
        if saved[key] != requested[key]:
            raise CheckpointError(f"{key}: checkpoint has {saved[key]!r}, resume asked for "
                                  f"{requested[key]!r}")


def resume(checkpoint_path, cfg=None, out_dir=None, stop_after=None, verbose=False):
    """Continue a checkpointed run; cfg defaults to the saved one"""
    payload = load_checkpoint(checkpoint_path)
    if "train_config" not in payload:
        raise CheckpointError(f"{checkpoint_path} carries no training state")
    cfg = cfg or TrainConfig.from_dict(payload["train_config"])
    check_resume_compatible(payload, cfg)
    model_cfg = payload["model_config"]

    targets = resolve_targets(cfg, model_cfg)
    saved_pcms = payload["pcms"]
    pcms = [h for t in targets for h in _target_code(t).pcms]
    if len(pcms) != len(saved_pcms) or any(not np.array_equal(a, b) for a, b in zip(pcms, saved_pcms)):
        raise CheckpointError("codes: registry PCMs differ from the checkpoint's")

    model = build_decoder(model_cfg, targets[0], dtype=getattr(torch, cfg.dtype))
    model.load_state_dict(payload["state_dict"])
    optimizer = make_optimizer(model.parameters(), cfg.lr0)
    optimizer.load_state_dict(payload["optimizer"])
    report = TrainReport(list(payload["epoch_losses"]), list(payload["lr_trace"]), 0.0,
                         str(checkpoint_path), payload["epoch"])
    if verbose:
        print(f"🚀 Resuming from epoch {payload['epoch']} of {cfg.epochs}")
    report = _run(model, optimizer, cfg, model_cfg, targets, report, payload["epoch"], out_dir,
                  stop_after, verbose)
    return model, report


def restore_decoder(payload, code=None):
    """
    Rebuild a trained decoder from a checkpoint. Code-specific models decode
    only their own code; FCrossMPT/CrossED models take any `code`.
    Returns (model, decoding target).
    """
    model_cfg = payload["model_config"]
    p = payload.get("ensemble_p", 1)
    if model_cfg.variant.code_specific:
        model = restore_model(payload)
        saved = payload["pcms"][0]
        names = payload["code_names"]
        if code is not None and (code.pcm.shape != saved.shape or not np.array_equal(code.pcm, saved)):
            raise CheckpointError(f"{model_cfg.variant.value} checkpoint was trained on "
                                  f"{', '.join(names)}, not {code.name}")
        target = code if code is not None else get_code(names[0])
        return model, target

    code = code if code is not None else get_code(payload["code_names"][0])
    if p == 1:
        return restore_model(payload), code
    ens = build_ensemble(code, min(p, max_branches(code)), model_cfg, payload.get("fuse", "output"))
    model = CrossEnsembleDecoder(model_cfg, ens.fuse).to(getattr(torch, payload.get("dtype", "float32")))
    model.load_state_dict(payload["state_dict"])
    return model, ens
