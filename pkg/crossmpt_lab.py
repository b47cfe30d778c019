#!/usr/bin/env python3
"""
Command-line entry point for the syndrome-decoder lab.

Subcommands:
  train            train CrossMPT / FCrossMPT / ECCT / CrossED
  eval             BER/FER of a checkpoint, BP or uncoded BPSK
  analyze          mask densities, unmasked counts and FLOPs
  dump-attention   per-layer attention maps of a checkpoint
  build-ensemble   complementary PCMs and identity coverage
  codes            list or validate codes

Every run writes its artifacts and one manifest.json under --out
(default: $CROSSMPT_OUT/<command>, falling back to ./runs/<command>).
"""

import argparse
import json
import os
import sys
from pathlib import Path

from autodiff_numerics import NumericalError
from bp_reference import Algorithm, BpConfig
from channel_sim import NoiseSpec, sample, stream_rng
from crossed_ensemble import EnsembleConfig, build_ensemble, coverage_report
from decoder_models import ModelConfig, Variant, load_checkpoint
from eval_harness import (BpDecoder, NeuralDecoder, StopRule, UncodedDecoder, bitwise_ber,
                          complexity_report, density_discrepancies, dump_attention,
                          estimate_ber, forced_error_sample, write_attention, write_ber_csv,
                          write_bitwise_csv, write_complexity_csv)
from gf2_codes import (CodeClass, ConfigError, LabError, code_fingerprint,
                       get_code, list_codes, load_code, save_code)
from train_engine import (PROFILES, TrainConfig, load_config_file, restore_decoder, resume,
                          train)

TOOL_VERSION = "1.0.0"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def banner(title):
    print("\n" + "=" * 70)
    print(title)
    print("=" * 70 + "\n")


def output_dir(args):
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get("CROSSMPT_OUT", "runs")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out, command, config, codes, seed, artifacts):
    manifest = {
        "command": command,
        "config": config,
        "codes": {code.name: code_fingerprint(code) for code in codes},
        "seed": seed,
        "artifacts": sorted(str(Path(a).name) for a in artifacts),
        "tool_version": TOOL_VERSION,
    }
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f"💾 Manifest: {path}")
    return path


def resolve_code(args):
    if getattr(args, "pcm_file", None):
        return load_code(args.pcm_file, code_class=CodeClass(args.code_class),
                         cyclic=args.cyclic, drop_redundant_rows=args.drop_redundant_rows)
    if not getattr(args, "code", None):
        raise ConfigError("code: give --code or --pcm-file")
    return get_code(args.code)


def parse_layers(text):
    """'2' -> [2], '1..3' or '1-3' -> [1, 2, 3]"""
    if text is None:
        return None
    for sep in ("..", "-"):
        if sep in text:
            lo, hi = text.split(sep, 1)
            return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",")]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def resolve_train_configs(args):
    """defaults < profile < config file < flags"""
    file_train, file_model = load_config_file(args.config) if args.config else ({}, {})
    profile = args.profile or file_train.pop("profile", None)
    file_train.pop("profile", None)

    train_values, model_values = {}, {}
    if profile:
        if profile not in PROFILES:
            raise ConfigError(f"profile: unknown '{profile}' (known: {', '.join(PROFILES)})")
        for key, value in PROFILES[profile].items():
            (model_values if key in ("n_layers", "dim") else train_values)[key] = value
    train_values.update(file_train)
    model_values.update(file_model)

    codes = args.codes.split(",") if args.codes else ([args.code] if args.code else None)
    flags = {
        "codes": codes, "epochs": args.epochs, "batches_per_epoch": args.batches,
        "batch_size": args.batch_size, "lr0": args.lr0, "lr_min": args.lr_min,
        "seed": args.seed, "checkpoint_every": args.checkpoint_every,
        "ensemble_p": args.ensemble_p, "fuse": args.fuse, "code_sampling": args.code_sampling,
        "dtype": args.dtype, "per_sample_ebn0": False if args.per_batch_ebn0 else None,
    }
    train_values.update({k: v for k, v in flags.items() if v is not None})
    if args.ebn0_range:
        train_values["ebn0_range"] = tuple(float(v) for v in args.ebn0_range.split(":"))
    model_flags = {"variant": args.variant, "n_layers": args.n_layers, "dim": args.dim,
                   "heads": args.heads, "norm_order": args.norm_order, "seed": args.seed}
    model_values.update({k: v for k, v in model_flags.items() if v is not None})
    if "codes" not in train_values:
        raise ConfigError("codes: give --code, --codes or 'codes =' in the config file")
    return TrainConfig(**train_values), ModelConfig(**model_values)


def cmd_train(args):
    banner("🧠 CROSSMPT TRAINING")
    out = output_dir(args)
    if args.resume:
        payload = load_checkpoint(args.resume)
        cfg = TrainConfig.from_dict(payload["train_config"])
        model_cfg = payload["model_config"]
        _, report = resume(args.resume, cfg, out_dir=out, verbose=True)
    else:
        cfg, model_cfg = resolve_train_configs(args)
        _, report = train(cfg, model_cfg, out_dir=out, verbose=True)

    codes = [get_code(name) for name in cfg.codes]
    write_manifest(out, "train", {"train": cfg.to_dict(), "model": model_cfg.to_dict()},
                   codes, cfg.seed, [report.checkpoint_path, out / "train_log.csv"])

    banner("📊 SUMMARY")
    print(f"✅ Epochs completed: {report.epochs_completed}/{cfg.epochs}")
    print(f"📉 Loss: {report.epoch_losses[0]:.4f} -> {report.epoch_losses[-1]:.4f}")
    print(f"⏱️  Wall time: {report.wall_time:.1f} s")
    return EXIT_OK


def build_eval_decoder(args, code):
    """(decoder, code whose PCM list the channel samples use, ensemble or None)"""
    if args.decoder == "uncoded":
        return UncodedDecoder(), code, None
    if args.decoder == "bp":
        cfg = BpConfig(max_iters=args.iters, algorithm=Algorithm(args.algorithm))
        return BpDecoder(code, cfg), code, None
    if not args.checkpoint:
        raise ConfigError("checkpoint: --decoder model needs --checkpoint")
    payload = load_checkpoint(args.checkpoint)
    model, target = restore_decoder(payload, code)
    if isinstance(target, EnsembleConfig):
        return NeuralDecoder(model, target), target.code, target
    return NeuralDecoder(model, target), target, None


def cmd_eval(args):
    banner("📈 BER EVALUATION")
    code = resolve_code(args)
    decoder, sample_code, ens = build_eval_decoder(args, code)
    stop = StopRule(args.min_errors, args.max_bits, args.chunk_size)
    print(f"📖 {code.name} (n={code.n}, k={code.k}), decoder={args.decoder}")

    report = estimate_ber(decoder, sample_code, args.snr, stop, policy=args.policy,
                          seed=args.seed, workers=args.workers, verbose=True)
    out = output_dir(args)
    artifacts = [write_ber_csv(report, out / "ber_report.csv")]
    print(f"💾 Saved: {artifacts[0]}")
    if args.bitwise:
        rows = bitwise_ber(report, ens)
        artifacts.append(write_bitwise_csv(rows, out / "bitwise.csv"))
        print(f"💾 Saved: {artifacts[-1]}")

    config = {k: v for k, v in vars(args).items() if k != "func"}
    write_manifest(out, "eval", config, [sample_code], args.seed, artifacts)
    return EXIT_OK


def cmd_analyze(args):
    banner("🔍 MASK DENSITY AND COMPLEXITY")
    if args.pcm_file:
        codes = [resolve_code(args)]
    else:
        codes = [get_code(name) for name in (args.code or list_codes())]
    config = ModelConfig(n_layers=args.n_layers, dim=args.dim)

    reports = []
    for code in codes:
        report = complexity_report(code, config)
        reports.append(report)
        print(f"📖 {code.name}")
        print(f"   CrossMPT: density {100 * report.crossmpt.mask_density:.2f}%, "
              f"2h̃={report.crossmpt.unmasked_count}, FLOPs={report.crossmpt.flops:,}")
        print(f"   ECCT:     density {100 * report.ecct.mask_density:.2f}%, "
              f"h={report.ecct.unmasked_count}, FLOPs={report.ecct.flops:,}")
        if not report.h_exceeds_two_h_tilde or not report.crossmpt_cheaper:
            print("   ⚠️  CrossMPT is not cheaper than ECCT for this PCM")
        for message in density_discrepancies(report):
            print(f"   ⚠️  {message}")

    out = output_dir(args)
    path = write_complexity_csv(reports, out / "complexity.csv")
    print(f"\n💾 Saved: {path}")
    write_manifest(out, "analyze", {"n_layers": args.n_layers, "dim": args.dim}, codes, None, [path])
    return EXIT_OK


def cmd_dump_attention(args):
    banner("🔬 ATTENTION DUMP")
    payload = load_checkpoint(args.checkpoint)
    code = resolve_code(args) if (args.code or args.pcm_file) else None
    model, target = restore_decoder(payload, code)
    sample_code = target.code if isinstance(target, EnsembleConfig) else target

    if args.error_position is not None:
        data = forced_error_sample(sample_code, args.error_position - 1)
        print(f"📍 Single-bit error at position {args.error_position}")
    elif args.snr is not None:
        noise = NoiseSpec.fixed(args.snr, sample_code.rate, args.seed)
        data = sample(sample_code, noise, "all_zero", 1, rng=stream_rng(args.seed))
    else:
        data = forced_error_sample(sample_code, None)
        print("📍 Error-free transmission")

    dumps = dump_attention(model, data, target, parse_layers(args.layers))
    out = output_dir(args)
    written = write_attention(dumps, out)
    print(f"💾 Wrote {len(written)} files for {len(dumps)} layers to {out}")
    config = {k: v for k, v in vars(args).items() if k != "func"}
    write_manifest(out, "dump-attention", config, [sample_code], args.seed, written)
    return EXIT_OK


def cmd_build_ensemble(args):
    banner("🧩 COMPLEMENTARY PCM ENSEMBLE")
    code = resolve_code(args)
    ens = build_ensemble(code, args.p, verbose=True)
    report = coverage_report(ens)
    out = output_dir(args)
    written = []
    for branch, columns in enumerate(ens.identity_columns):
        span = f"{min(columns)}-{max(columns)}" if columns else "none"
        print(f"   PCM {branch}: {len(columns)} identity columns ({span})")
        path = out / f"pcm_{branch}.txt"
        save_code(ens.code, path, fmt="dense", pcm_index=branch)
        written.append(path)
    print(f"📊 Covered: {report.covered_count}/{code.n}")
    if report.uncovered:
        print(f"⚠️  Uncovered positions: {', '.join(str(i) for i in report.uncovered)}")
    write_manifest(out, "build-ensemble", {"code": code.name, "p": args.p}, [code], None, written)
    return EXIT_OK


def cmd_codes(args):
    banner("📚 CODES")
    if args.action == "list":
        for name in list_codes():
            code = get_code(name)
            print(f"   {name:<14} n={code.n:<4} k={code.k:<4} rate={code.rate:.3f} "
                  f"{'cyclic' if code.cyclic else ''}")
        return EXIT_OK

    if args.pcm_file:
        code = resolve_code(args)
        code.validate()
        print(f"✅ {args.pcm_file}: valid ({code.name})")
        return EXIT_OK
    names = [args.code] if args.code else list_codes()
    for name in names:
        get_code(name).validate()
        print(f"✅ {name}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_code_args(p, multiple=False):
    if multiple:
        p.add_argument("--code", action="append", help="Registry code name (repeatable)")
    else:
        p.add_argument("--code", help="Registry code name, e.g. bch_31_16")
    p.add_argument("--pcm-file", help="alist or dense-text PCM file")
    p.add_argument("--code-class", default="other", choices=[c.value for c in CodeClass])
    p.add_argument("--cyclic", action="store_true", help="Mark a --pcm-file code as cyclic")
    p.add_argument("--drop-redundant-rows", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(description="Syndrome-based transformer decoder lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train a decoder")
    p.add_argument("--code", help="Registry code name")
    p.add_argument("--codes", help="Comma-separated code names (foundation training)")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--n-layers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--norm-order", choices=["pre", "post"])
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--config", help="Flat key = value config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--lr-min", type=float)
    p.add_argument("--ebn0-range", help="lo:hi in dB")
    p.add_argument("--per-batch-ebn0", action="store_true", help="One Eb/N0 draw per batch")
    p.add_argument("--code-sampling", choices=["uniform", "proportional"])
    p.add_argument("--ensemble-p", type=int, help="CrossED branch count (fcrossmpt)")
    p.add_argument("--fuse", choices=["output", "layer"])
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", help="Continue from a checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Monte-Carlo BER/FER")
    _add_code_args(p)
    p.add_argument("--decoder", choices=["model", "bp", "uncoded"], default="model")
    p.add_argument("--checkpoint")
    p.add_argument("--snr", type=float, nargs="+", required=True, help="Eb/N0 points in dB")
    p.add_argument("--iters", type=int, default=20, help="BP iterations (20, 50, 100)")
    p.add_argument("--algorithm", choices=[a.value for a in Algorithm], default="sum_product")
    p.add_argument("--min-errors", type=int, default=100)
    p.add_argument("--max-bits", type=int, default=10 ** 7)
    p.add_argument("--chunk-size", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--policy", choices=["random", "all_zero"], default="random")
    p.add_argument("--bitwise", action="store_true", help="Also write bitwise.csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="Mask density and FLOPs")
    _add_code_args(p, multiple=True)
    p.add_argument("--n-layers", type=int, default=6)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("dump-attention", help="Per-layer attention maps")
    _add_code_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--error-position", type=int, help="1-based bit for a single forced error")
    p.add_argument("--snr", type=float, help="Draw a noisy all-zero sample instead")
    p.add_argument("--layers", help="e.g. 1..2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("build-ensemble", help="Complementary PCMs and coverage")
    _add_code_args(p)
    p.add_argument("-p", type=int, required=True, help="Number of PCMs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_ensemble)

    p = sub.add_parser("codes", help="List or validate codes")
    p.add_argument("action", choices=["list", "validate"])
    _add_code_args(p)
    p.set_defaults(func=cmd_codes)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"❌ Numerical failure: {e}")
        return EXIT_NUMERIC
    except LabError as e:
        print(f"❌ {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
