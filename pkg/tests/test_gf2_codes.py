"""GF(2) algebra, code registry, PCM files and attention masks."""

import numpy as np
import pytest

from gf2_codes import (NEG_INF, CodeFormatError, ConfigError, DimensionError, NotCyclicError,
                       RankError, ShiftRangeError, build_crossmpt_masks, build_ecct_mask,
                       build_ecct_masked_mask, complementary_pcm, gf2_matmul, gf2_rank,
                       generator_from_pcm, get_code, list_codes, load_code, make_code,
                       same_row_space, save_code, systematic_form)

BINARY_ORDER_HAMMING = np.array([
    [0, 0, 0, 1, 1, 1, 1],
    [0, 1, 1, 0, 0, 1, 1],
    [1, 0, 1, 0, 1, 0, 1],
], dtype=np.uint8)

TOY_PCM = np.array([
    [1, 1, 0, 1, 0, 0],
    [0, 1, 1, 0, 1, 0],
    [1, 0, 1, 0, 0, 1],
], dtype=np.uint8)


class TestBinaryAlgebra:

    def test_generator_is_orthogonal_to_pcm(self, hamming):
        assert not gf2_matmul(hamming.generator, hamming.pcm.T).any()

    def test_matmul_matches_integer_product_mod_2(self, rng):
        a = rng.integers(0, 2, size=(5, 9))
        b = rng.integers(0, 2, size=(9, 4))
        np.testing.assert_array_equal(gf2_matmul(a, b), (a @ b) % 2)

    def test_matmul_rejects_mismatched_shapes(self):
        with pytest.raises(DimensionError):
            gf2_matmul(np.ones((3, 7)), np.ones((6, 2)))

    def test_matmul_rejects_non_binary_entries(self):
        with pytest.raises(DimensionError):
            gf2_matmul(np.array([[2]]), np.array([[1]]))

    def test_rank(self, hamming):
        assert gf2_rank(hamming.pcm) == 3
        assert gf2_rank(np.vstack([hamming.pcm, hamming.pcm[0] ^ hamming.pcm[1]])) == 3


class TestSystematicForm:

    def test_cyclic_hamming_reduces_to_leading_identity(self, hamming):
        form = systematic_form(hamming.pcm)
        assert form.complete
        np.testing.assert_array_equal(form.matrix[:, :3], np.eye(3, dtype=np.uint8))
        assert same_row_space(form.matrix, hamming.pcm)

    def test_binary_order_is_best_effort(self):
        form = systematic_form(BINARY_ORDER_HAMMING)
        assert form.identity_columns == 2
        assert form.covered_columns == (0, 1)
        assert not form.complete
        assert same_row_space(form.matrix, BINARY_ORDER_HAMMING)

    def test_rank_deficient_pcm_is_rejected(self):
        h = np.vstack([BINARY_ORDER_HAMMING[:2], BINARY_ORDER_HAMMING[0]])
        with pytest.raises(RankError):
            systematic_form(h)

    def test_generator_falls_back_to_null_space(self):
        g = generator_from_pcm(BINARY_ORDER_HAMMING)
        assert g.shape == (4, 7)
        assert gf2_rank(g) == 4
        assert not gf2_matmul(g, BINARY_ORDER_HAMMING.T).any()


class TestComplementaryPcm:

    def test_identity_block_moves_by_n_minus_k(self, bch_31_21):
        h_sys = systematic_form(bch_31_21.pcm).matrix
        for p in range(1, 4):
            shifted = complementary_pcm(h_sys, p)
            cols = [(p * 10 + i) % 31 for i in range(10)]
            np.testing.assert_array_equal(shifted[:, cols], np.eye(10, dtype=np.uint8))
            assert same_row_space(shifted, bch_31_21.pcm)

    def test_zero_shift_is_the_systematic_form(self, bch_31_21):
        h_sys = systematic_form(bch_31_21.pcm).matrix
        np.testing.assert_array_equal(complementary_pcm(h_sys, 0), h_sys)

    def test_shift_beyond_range(self, bch_31_21):
        h_sys = systematic_form(bch_31_21.pcm).matrix
        with pytest.raises(ShiftRangeError):
            complementary_pcm(h_sys, 4)

    def test_non_cyclic_code_is_refused(self):
        code = get_code("ldpc_32_16")
        with pytest.raises(NotCyclicError):
            complementary_pcm(systematic_form(code.pcm).matrix, 1, cyclic=code.cyclic)


class TestRegistry:

    @pytest.mark.parametrize("name", list_codes())
    def test_dimensions_match_name(self, name):
        code = get_code(name)
        _, n, k = name.rsplit("_", 2)
        assert (code.n, code.k) == (int(n), int(k))
        assert code.pcm.shape == (code.m, code.n)
        code.validate()

    def test_array_ldpc_row_weight(self):
        code = get_code("ldpc_121_80")
        assert set(code.pcm.sum(axis=1)) == {11}

    def test_unknown_name(self):
        with pytest.raises(ConfigError, match="unknown code"):
            get_code("bch_7_3")

    def test_rank_deficient_code_is_rejected(self):
        with pytest.raises(RankError):
            make_code("dup", np.vstack([TOY_PCM, TOY_PCM[0]]))


class TestPcmFiles:

    def test_alist(self, codes_dir):
        code = load_code(codes_dir / "hamming_7_4.alist", code_class="hamming")
        np.testing.assert_array_equal(code.pcm, BINARY_ORDER_HAMMING)
        assert (code.n, code.k) == (7, 4)

    def test_dense_text(self, codes_dir, hamming):
        code = load_code(codes_dir / "hamming_7_4.txt")
        np.testing.assert_array_equal(code.pcm, hamming.pcm)

    def test_inconsistent_row_list_names_the_line(self, codes_dir):
        with pytest.raises(CodeFormatError, match=r"bad_row_list.alist:14:"):
            load_code(codes_dir / "bad_row_list.alist")

    def test_dense_bad_entry_names_the_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 4\n1 0 1 1\n0 1 2 1\n")
        with pytest.raises(CodeFormatError, match=r"bad.txt:3:"):
            load_code(path)

    def test_dense_wrong_row_count(self, tmp_path):
        path = tmp_path / "short.txt"
        path.write_text("3 4\n1 0 1 1\n0 1 0 1\n")
        with pytest.raises(CodeFormatError, match="header says 3 rows"):
            load_code(path)

    @pytest.mark.parametrize("fmt,suffix", [("alist", ".alist"), ("dense", ".txt")])
    def test_save_then_load(self, tmp_path, fmt, suffix):
        code = get_code("ldpc_49_24")
        path = tmp_path / f"code{suffix}"
        save_code(code, path, fmt=fmt)
        np.testing.assert_array_equal(load_code(path).pcm, code.pcm)


class TestMasks:

    def test_crossmpt_masks_follow_pcm(self, hamming):
        mag, syn = build_crossmpt_masks(hamming.pcm)
        assert (mag.rows, mag.cols) == (7, 3)
        assert (syn.rows, syn.cols) == (3, 7)
        np.testing.assert_array_equal(mag.allowed, hamming.pcm.T == 1)
        assert np.all(mag.values[hamming.pcm.T == 0] == NEG_INF)

    def test_single_check_of_all_ones_is_unmasked(self):
        mag, syn = build_crossmpt_masks(np.ones((1, 4), dtype=np.uint8))
        assert mag.density == syn.density == 1.0

    def test_masked_variant_embeds_crossmpt_masks(self, hamming):
        mag, syn = build_crossmpt_masks(hamming.pcm)
        full = build_ecct_masked_mask(hamming.pcm).values
        n = hamming.n
        np.testing.assert_array_equal(full[:n, n:], mag.values)
        np.testing.assert_array_equal(full[n:, :n], syn.values)
        np.testing.assert_array_equal(np.diag(full), np.zeros(n + hamming.m))
        off_diagonal = ~np.eye(n, dtype=bool)
        assert np.all(full[:n, :n][off_diagonal] == NEG_INF)

    def test_toy_counts(self):
        mag, _ = build_crossmpt_masks(TOY_PCM)
        ecct = build_ecct_mask(TOY_PCM)
        assert mag.unmasked_count == 9
        assert mag.density == pytest.approx(0.5)
        assert ecct.unmasked_count == 45
        assert (ecct.rows, ecct.cols) == (9, 9)

    def test_ecct_mask_is_symmetric(self, bch_31_21):
        values = build_ecct_mask(bch_31_21.pcm).values
        np.testing.assert_array_equal(values, values.T)

    def test_square_pcm_is_rejected(self):
        with pytest.raises(DimensionError):
            build_crossmpt_masks(np.eye(3, dtype=np.uint8))
