"""Complementary-PCM ensembles and the CrossED decoder."""

import numpy as np
import pytest
import torch

from channel_sim import NoiseSpec, build_sample, modulate, random_codewords, sample, stream_rng
from crossed_ensemble import (CrossEnsembleDecoder, EnsembleConfig, branch_order, build_decoder,
                              build_ensemble, compute_logits, coverage_report, crossed_forward,
                              ensemble_param_count, max_branches)
from decoder_models import FoundationCrossMPT, ModelConfig, Variant, forward, param_count
from gf2_codes import ConfigError, ShiftRangeError, get_code, same_row_space

TINY = ModelConfig(variant=Variant.FCROSSMPT, n_layers=1, dim=8, seed=1)


def _noisy(code, batch=3, seed=0):
    return sample(code, NoiseSpec.fixed(2.0, code.rate), "random", batch, stream_rng(seed))


class TestBuildEnsemble:

    def test_identity_blocks_of_bch_31_21(self, bch_31_21):
        ens = build_ensemble(bch_31_21, 3, TINY)
        assert ens.identity_columns == (tuple(range(10)), tuple(range(10, 20)), tuple(range(20, 30)))
        for h, cols in zip(ens.pcms, ens.identity_columns):
            np.testing.assert_array_equal(h[:, list(cols)], np.eye(10, dtype=np.uint8))
            assert same_row_space(h, bch_31_21.pcm)
        assert coverage_report(ens).uncovered == (30,)

    def test_wrapping_branch_covers_the_last_bit(self, bch_31_21):
        ens = build_ensemble(bch_31_21, 4, TINY)
        report = coverage_report(ens)
        assert report.covered_count == 31
        assert report.covered_by[0] == (0, 3)

    def test_too_many_branches(self, bch_31_21):
        assert max_branches(bch_31_21) == 4
        with pytest.raises(ShiftRangeError):
            build_ensemble(bch_31_21, 5, TINY)
        with pytest.raises(ShiftRangeError):
            build_ensemble(bch_31_21, 0, TINY)

    @pytest.mark.parametrize("name", ["bch_15_7", "bch_63_30"])
    def test_full_ensemble_covers_every_bit(self, name):
        code = get_code(name)
        ens = build_ensemble(code, max_branches(code), TINY)
        assert coverage_report(ens).uncovered == ()

    def test_single_branch_covers_n_minus_k_bits(self, bch_31_21):
        assert coverage_report(build_ensemble(bch_31_21, 1, TINY)).covered_count == 10

    def test_non_cyclic_code_uses_row_reduction(self):
        code = get_code("ldpc_32_16")
        ens = build_ensemble(code, 2, TINY)
        assert len(ens.pcms) == 2
        for h in ens.pcms:
            assert same_row_space(h, code.pcm)
        for cols, target in zip(ens.identity_columns, (set(range(16)), set(range(16, 32)))):
            assert set(cols) <= target

    def test_branch_config_must_be_foundation(self, hamming):
        with pytest.raises(ConfigError, match="variant"):
            build_ensemble(hamming, 1, ModelConfig(variant=Variant.CROSSMPT))

    def test_unknown_fusion(self, hamming):
        with pytest.raises(ConfigError, match="fuse"):
            build_ensemble(hamming, 1, TINY, fuse="mean")


class TestCrossEnsembleDecoder:

    def test_same_parameters_as_foundation_model(self, bch_31_21):
        ens = build_ensemble(bch_31_21, 3, TINY)
        assert ensemble_param_count(ens) == param_count(TINY)

    @pytest.mark.parametrize("fuse", ["output", "layer"])
    def test_one_branch_equals_foundation_model(self, bch_31_21, fuse):
        ens = build_ensemble(bch_31_21, 1, TINY, fuse=fuse)
        single = FoundationCrossMPT(TINY).double()
        crossed = build_decoder(None, ens, dtype=torch.float64)
        crossed.load_state_dict(single.state_dict())
        data = _noisy(ens.code)
        assert torch.equal(crossed_forward(crossed, data, ens), forward(single, data, ens.pcm))

    @pytest.mark.parametrize("fuse", ["output", "layer"])
    def test_branch_order_does_not_matter(self, bch_31_21, fuse):
        ens = build_ensemble(bch_31_21, 3, TINY, fuse=fuse)
        model = build_decoder(None, ens, dtype=torch.float64)
        data = _noisy(ens.code)
        mag = torch.as_tensor(data.mag)
        syns = [torch.as_tensor(s.astype(np.float64)) for s in data.syndromes]
        pcms = list(ens.pcms)
        forward_order = model(mag, syns, pcms)
        reverse_order = model(mag, syns[::-1], pcms[::-1])
        assert torch.equal(forward_order, reverse_order)

    def test_identical_branches_add_up(self, hamming):
        model = CrossEnsembleDecoder(TINY).double()
        mag = torch.rand(2, 7)
        syn = torch.tensor([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
        single = model.embedding(mag, [syn], [hamming.pcm])
        triple = model.embedding(mag, [syn] * 3, [hamming.pcm] * 3)
        torch.testing.assert_close(triple, 3 * single)

    def test_attention_maps_per_branch(self, bch_31_21):
        ens = build_ensemble(bch_31_21, 2, TINY)
        model = build_decoder(None, ens, dtype=torch.float64)
        logits, maps = compute_logits(model, _noisy(ens.code), ens, return_attention=True)
        assert logits.shape == (3, 31)
        assert len(maps) == 2
        assert all(len(branch) == TINY.n_layers for branch in maps)

    def test_wrong_target_type(self, hamming):
        ens = build_ensemble(hamming, 1, TINY)
        model = build_decoder(None, ens)
        with pytest.raises(ConfigError):
            compute_logits(model, _noisy(hamming), hamming)

    def test_noise_free_input_has_zero_syndromes(self, bch_31_21):
        ens = build_ensemble(bch_31_21, 3, TINY)
        x = random_codewords(bch_31_21, 4, stream_rng(2))
        data = build_sample(ens.pcms, x, modulate(x), np.zeros(4), bch_31_21.rate)
        assert len(data.syndromes) == 3
        assert not any(s.any() for s in data.syndromes)


def test_branch_order_is_by_content(hamming):
    a, b = hamming.pcm, hamming.pcm[::-1].copy()
    first = [a, b][branch_order([a, b])[0]]
    first_swapped = [b, a][branch_order([b, a])[0]]
    np.testing.assert_array_equal(first, first_swapped)


def test_ensemble_config_exposes_code(bch_31_21):
    ens = build_ensemble(bch_31_21, 2, TINY)
    assert isinstance(ens, EnsembleConfig)
    assert ens.n == 31 and ens.p == 2 and ens.shifts == (0, 1)
