"""Command-line surface: exit codes, artifacts and manifests."""

import csv
import json

import numpy as np
import pytest
import torch

import train_engine
from crossed_ensemble import build_ensemble
from crossmpt_lab import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main, parse_layers
from gf2_codes import get_code, load_code

TINY_TRAIN = ["--epochs", "1", "--batches", "3", "--batch-size", "8", "--n-layers", "2",
              "--dim", "8", "--seed", "4"]


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def crossmpt_checkpoint(tmp_path):
    out = tmp_path / "train"
    assert main(["train", "--code", "hamming_7_4", "--variant", "crossmpt", *TINY_TRAIN,
                 "--out", str(out)]) == EXIT_OK
    return out / "checkpoint.pt"


class TestCodes:

    def test_list(self, capsys):
        assert main(["codes", "list"]) == EXIT_OK
        assert "bch_31_16" in capsys.readouterr().out

    def test_validate_registry_code(self):
        assert main(["codes", "validate", "--code", "ldpc_49_24"]) == EXIT_OK

    def test_validate_file(self, codes_dir):
        assert main(["codes", "validate", "--pcm-file", str(codes_dir / "hamming_7_4.alist")]) == EXIT_OK

    def test_malformed_file(self, codes_dir, capsys):
        assert main(["codes", "validate", "--pcm-file", str(codes_dir / "bad_row_list.alist")]) == EXIT_CONFIG
        assert "bad_row_list.alist:14:" in capsys.readouterr().out

    def test_unknown_code(self):
        assert main(["codes", "validate", "--code", "bch_7_3"]) == EXIT_CONFIG

    def test_takes_no_output_directory(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["codes", "list", "--out", str(tmp_path)])


class TestAnalyze:

    def test_writes_complexity_and_manifest(self, tmp_path):
        assert main(["analyze", "--code", "bch_31_16", "--code", "hamming_7_4",
                     "--out", str(tmp_path)]) == EXIT_OK
        rows = _read_csv(tmp_path / "complexity.csv")
        assert [r["decoder"] for r in rows] == ["crossmpt", "ecct", "crossmpt", "ecct"]
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["command"] == "analyze"
        assert sorted(manifest["codes"]) == ["bch_31_16", "hamming_7_4"]
        assert manifest["artifacts"] == ["complexity.csv"]

    def test_default_output_directory(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CROSSMPT_OUT", str(tmp_path))
        assert main(["analyze", "--code", "hamming_7_4"]) == EXIT_OK
        assert (tmp_path / "analyze" / "complexity.csv").exists()


class TestEval:

    def test_uncoded_report(self, tmp_path):
        assert main(["eval", "--decoder", "uncoded", "--code", "hamming_7_4", "--snr", "1", "2", "3", "4",
                     "--min-errors", "1000000", "--max-bits", "70000", "--chunk-size", "1000",
                     "--out", str(tmp_path)]) == EXIT_OK
        rows = _read_csv(tmp_path / "ber_report.csv")
        assert [r["ebn0_db"] for r in rows] == ["1", "2", "3", "4"]
        bers = [float(r["ber"]) for r in rows]
        assert bers == sorted(bers, reverse=True)

    def test_bp_with_bitwise(self, tmp_path):
        assert main(["eval", "--decoder", "bp", "--code", "bch_31_21", "--snr", "3", "--iters", "5",
                     "--algorithm", "min_sum", "--min-errors", "20", "--chunk-size", "200",
                     "--bitwise", "--out", str(tmp_path)]) == EXIT_OK
        assert len(_read_csv(tmp_path / "bitwise.csv")) == 31
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["artifacts"] == ["ber_report.csv", "bitwise.csv"]

    def test_rerun_gives_identical_bytes(self, tmp_path):
        args = ["eval", "--decoder", "uncoded", "--code", "bch_15_7", "--snr", "2", "--seed", "9",
                "--min-errors", "30", "--chunk-size", "100"]
        assert main([*args, "--out", str(tmp_path / "a")]) == EXIT_OK
        assert main([*args, "--out", str(tmp_path / "b")]) == EXIT_OK
        assert ((tmp_path / "a" / "ber_report.csv").read_bytes()
                == (tmp_path / "b" / "ber_report.csv").read_bytes())

    def test_model_without_checkpoint(self, tmp_path):
        assert main(["eval", "--code", "hamming_7_4", "--snr", "3", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_trained_model(self, crossmpt_checkpoint, tmp_path):
        assert main(["eval", "--checkpoint", str(crossmpt_checkpoint), "--code", "hamming_7_4",
                     "--snr", "3", "--min-errors", "10", "--chunk-size", "100",
                     "--out", str(tmp_path)]) == EXIT_OK

    def test_code_specific_checkpoint_on_other_code(self, crossmpt_checkpoint, tmp_path, capsys):
        assert main(["eval", "--checkpoint", str(crossmpt_checkpoint), "--code", "bch_15_7",
                     "--snr", "3", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "hamming_7_4" in capsys.readouterr().out

    def test_foundation_checkpoint_on_unseen_code(self, tmp_path):
        out = tmp_path / "train"
        assert main(["train", "--codes", "hamming_7_4,bch_15_7", "--variant", "fcrossmpt", *TINY_TRAIN,
                     "--out", str(out)]) == EXIT_OK
        assert main(["eval", "--checkpoint", str(out / "checkpoint.pt"), "--code", "bch_31_21",
                     "--snr", "4", "--min-errors", "10", "--chunk-size", "100",
                     "--out", str(tmp_path / "eval")]) == EXIT_OK


class TestTrain:

    def test_artifacts_and_manifest(self, crossmpt_checkpoint):
        out = crossmpt_checkpoint.parent
        assert (out / "train_log.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["model"]["variant"] == "crossmpt"
        assert manifest["config"]["train"]["epochs"] == 1
        assert manifest["seed"] == 4
        assert len(manifest["codes"]["hamming_7_4"]) == 64

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("codes = hamming_7_4\nvariant = crossmpt\nepochs = 5\nbatches_per_epoch = 2\n"
                       "batch_size = 8\nn_layers = 1\ndim = 8\n")
        out = tmp_path / "out"
        assert main(["train", "--config", str(cfg), "--epochs", "1", "--out", str(out)]) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["train"]["epochs"] == 1
        assert manifest["config"]["train"]["batches_per_epoch"] == 2

    def test_config_file_seed_and_per_batch_flag(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("codes = hamming_7_4\nseed = 21\nepochs = 1\nbatches_per_epoch = 2\n"
                       "batch_size = 8\nn_layers = 1\ndim = 8\n")
        out = tmp_path / "out"
        assert main(["train", "--config", str(cfg), "--per-batch-ebn0", "--out", str(out)]) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["model"]["seed"] == 21
        assert manifest["config"]["train"]["seed"] == 21
        assert manifest["config"]["train"]["per_sample_ebn0"] is False

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("codes = hamming_7_4\nwarmup = 10\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "warmup" in capsys.readouterr().out

    def test_missing_code(self, tmp_path):
        assert main(["train", "--epochs", "1", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_multi_code_code_specific_model(self, tmp_path):
        assert main(["train", "--codes", "hamming_7_4,bch_15_7", "--variant", "ecct", *TINY_TRAIN,
                     "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_nan_loss_exit_code(self, tmp_path, monkeypatch):
        monkeypatch.setattr(train_engine, "compute_logits",
                            lambda model, data, target: torch.full(data.x.shape, float("nan")))
        assert main(["train", "--code", "hamming_7_4", *TINY_TRAIN, "--out", str(tmp_path)]) == EXIT_NUMERIC

    def test_resume(self, tmp_path, crossmpt_checkpoint):
        out = tmp_path / "resumed"
        assert main(["train", "--resume", str(crossmpt_checkpoint), "--out", str(out)]) == EXIT_OK
        assert (out / "checkpoint.pt").exists()


class TestDumpAttention:

    def test_forced_error_dump(self, crossmpt_checkpoint, tmp_path):
        assert main(["dump-attention", "--checkpoint", str(crossmpt_checkpoint), "--error-position", "1",
                     "--layers", "1..2", "--out", str(tmp_path)]) == EXIT_OK
        for layer in (1, 2):
            for side in ("mag", "syn"):
                assert (tmp_path / f"layer{layer}_{side}.csv").exists()
                assert len(_read_csv(tmp_path / f"layer{layer}_{side}_colsum.csv")) == (3 if side == "mag" else 7)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert len(manifest["artifacts"]) == 8

    def test_position_out_of_range(self, crossmpt_checkpoint, tmp_path):
        assert main(["dump-attention", "--checkpoint", str(crossmpt_checkpoint), "--error-position", "8",
                     "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_checkpoint(self, tmp_path):
        assert main(["dump-attention", "--checkpoint", str(tmp_path / "none.pt"),
                     "--out", str(tmp_path)]) == EXIT_CONFIG


class TestBuildEnsemble:

    def test_writes_one_pcm_per_branch(self, tmp_path):
        assert main(["build-ensemble", "--code", "bch_31_21", "-p", "3", "--out", str(tmp_path)]) == EXIT_OK
        expected = build_ensemble(get_code("bch_31_21"), 3)
        for branch in range(3):
            loaded = load_code(tmp_path / f"pcm_{branch}.txt")
            np.testing.assert_array_equal(loaded.pcm, expected.pcms[branch])

    def test_too_many_branches(self, tmp_path):
        assert main(["build-ensemble", "--code", "bch_31_21", "-p", "5", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_parse_layers():
    assert parse_layers("1..3") == [1, 2, 3]
    assert parse_layers("2") == [2]
    assert parse_layers("1,3") == [1, 3]
    assert parse_layers(None) is None
