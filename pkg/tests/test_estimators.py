import warnings

import numpy as np
import pytest

from adlmvdr.errors import DimensionError, FormatError, NumericError, ParameterError
from adlmvdr.estimators import (
    ComplexRatioFilter,
    DegenerateCovarianceWarning,
    EstimatorSource,
    apply_crf,
    chunk_covariance,
    current_index,
    filter_estimates,
    framewise_covariance,
    oracle_crf,
    oracle_crm,
    oracle_estimates,
    passthrough_estimates,
    read_crf,
    recursive_covariance,
    stack_mcmf,
    stack_multiframe,
    write_crf,
)

from oracles import loop_covariance, loop_crf, loop_stack


def _spec(rng, M=3, T=7, F=6):
    return rng.standard_normal((M, T, F)) + 1j * rng.standard_normal((M, T, F))


class TestCrm:
    def test_recovers_target_at_reference(self):
        rng = np.random.default_rng(0)
        Y, X = _spec(rng), _spec(rng)
        filt = oracle_crm(Y, 0.3 * Y, reference=1)
        np.testing.assert_allclose(filt.center_mask, 0.3)
        X = 0.5 * Y
        np.testing.assert_allclose(apply_crf(Y, oracle_crm(Y, X)), X, atol=1e-12)

    def test_clamped_and_zero_safe(self):
        Y = np.ones((1, 2, 3), complex)
        Y[0, 0, 0] = 0.0
        X = 100.0 * np.ones((1, 2, 3), complex)
        mask = oracle_crm(Y, X, clamp=10.0).center_mask
        assert mask[0, 0] == 0.0
        np.testing.assert_allclose(np.abs(mask[mask != 0]), 10.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            oracle_crm(np.ones((1, 2, 3)), np.ones((1, 2, 4)))


class TestCrf:
    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(1)
        Y = _spec(rng, 2, 6, 5)
        for (j1, j2), (k1, k2) in [((1, 1), (1, 1)), ((2, 0), (0, 1)), ((0, 0), (2, 2))]:
            taps = rng.standard_normal((6, 5, j1 + j2 + 1, k1 + k2 + 1)) + 1j * rng.standard_normal(
                (6, 5, j1 + j2 + 1, k1 + k2 + 1))
            out = apply_crf(Y, ComplexRatioFilter(taps, (j1, j2), (k1, k2)))
            np.testing.assert_allclose(out, loop_crf(Y, taps, j1, k1), atol=1e-12)

    def test_center_tap_only_equals_crm(self):
        rng = np.random.default_rng(2)
        Y = _spec(rng)
        mask = rng.standard_normal((7, 6)) + 1j * rng.standard_normal((7, 6))
        taps = np.zeros((7, 6, 3, 3), complex)
        taps[:, :, 1, 1] = mask
        a = apply_crf(Y, ComplexRatioFilter(taps, (1, 1), (1, 1)))
        b = apply_crf(Y, ComplexRatioFilter.from_mask(mask))
        assert np.abs(a - b).max() <= 1e-12

    def test_oracle_fit_reproduces_filtered_target(self):
        # with 12 channels the 9 taps per bin are overdetermined and the fit is exact
        rng = np.random.default_rng(3)
        Y = _spec(rng, 12, 6, 5)
        taps = rng.standard_normal((6, 5, 3, 3)) + 1j * rng.standard_normal((6, 5, 3, 3))
        X = loop_crf(Y, taps, 1, 1)
        fit = oracle_crf(Y, X, ridge=0.0)
        np.testing.assert_allclose(apply_crf(Y, fit), X, atol=1e-9)
        # interior taps are identifiable; edge taps multiply zero padding
        np.testing.assert_allclose(fit.taps[1:-1, 1:-1], taps[1:-1, 1:-1], atol=1e-9)

    def test_underdetermined_fit_without_ridge(self):
        rng = np.random.default_rng(3)
        Y = _spec(rng, 1, 6, 5)
        with pytest.raises(NumericError):
            oracle_crf(Y, Y, ridge=0.0)

    def test_bigger_filter_fits_at_least_as_well(self):
        rng = np.random.default_rng(4)
        Y, X = _spec(rng, 2, 8, 6), _spec(rng, 2, 8, 6)
        err1 = np.linalg.norm(apply_crf(Y, oracle_crf(Y, X, (0, 0), (0, 0))) - X)
        err3 = np.linalg.norm(apply_crf(Y, oracle_crf(Y, X, (1, 1), (1, 1))) - X)
        assert err3 <= err1 + 1e-9

    def test_bad_taps_shape(self):
        with pytest.raises(DimensionError):
            ComplexRatioFilter(np.zeros((2, 2, 3, 3)), (1, 1), (0, 0))

    def test_negative_extent(self):
        with pytest.raises(ParameterError):
            ComplexRatioFilter(np.zeros((2, 2, 1, 1)), (-1, 1), (0, 0))

    def test_filter_grid_mismatch(self):
        with pytest.raises(DimensionError):
            apply_crf(np.ones((1, 3, 3)), ComplexRatioFilter.from_mask(np.ones((2, 3))))

    def test_file_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        taps = rng.standard_normal((4, 5, 3, 1)) + 1j * rng.standard_normal((4, 5, 3, 1))
        filt = ComplexRatioFilter(taps, (2, 0), (0, 0))
        write_crf(filt, tmp_path / "f.crf")
        back = read_crf(tmp_path / "f.crf")
        np.testing.assert_array_equal(back.taps, taps)
        assert back.time_extent == (2, 0) and back.freq_extent == (0, 0)

    def test_file_truncated(self, tmp_path):
        write_crf(ComplexRatioFilter.from_mask(np.ones((4, 5))), tmp_path / "f.crf")
        raw = (tmp_path / "f.crf").read_bytes()
        (tmp_path / "g.crf").write_bytes(raw[:-3])
        with pytest.raises(FormatError):
            read_crf(tmp_path / "g.crf")


class TestEstimates:
    def test_ideal_is_exact(self):
        rng = np.random.default_rng(6)
        Y, X = _spec(rng), _spec(rng)
        est = oracle_estimates(Y, X, "ideal")
        np.testing.assert_array_equal(est.speech, X)
        np.testing.assert_allclose(est.speech + est.noise, Y)
        assert est.source is EstimatorSource.ORACLE

    def test_unknown_method(self):
        with pytest.raises(ParameterError):
            oracle_estimates(np.ones((1, 2, 3)), np.ones((1, 2, 3)), "irm")

    def test_passthrough(self):
        Y = _spec(np.random.default_rng(7))
        est = passthrough_estimates(Y)
        np.testing.assert_array_equal(est.speech, Y)
        assert not est.noise.any()
        assert est.source is EstimatorSource.PASSTHROUGH

    def test_loaded_filters(self):
        rng = np.random.default_rng(8)
        Y = _spec(rng)
        fx = ComplexRatioFilter.from_mask(np.full((7, 6), 0.25))
        fn = ComplexRatioFilter.from_mask(np.full((7, 6), 0.75))
        est = filter_estimates(Y, fx, fn)
        np.testing.assert_allclose(est.speech + est.noise, Y)
        assert est.source is EstimatorSource.LOADED_FILTER


class TestCovariance:
    def test_chunk_matches_loop_oracle(self):
        rng = np.random.default_rng(9)
        S = _spec(rng)
        # unmasked: plain time average
        np.testing.assert_allclose(chunk_covariance(S), loop_covariance(S), atol=1e-12)
        # real-mask weighting
        m = rng.uniform(0.1, 1.0, (7, 6))
        np.testing.assert_allclose(chunk_covariance(S, m, "rm"), loop_covariance(S, m), atol=1e-12)

    def test_crm_normalizer_is_mask_power(self):
        rng = np.random.default_rng(10)
        S = _spec(rng)
        m = rng.standard_normal((7, 6)) + 1j * rng.standard_normal((7, 6))
        cov = chunk_covariance(S, m)
        for f in range(6):
            num = sum(np.outer(S[:, t, f], S[:, t, f].conj()) for t in range(7))
            np.testing.assert_allclose(cov[f], num / np.sum(np.abs(m[:, f]) ** 2), atol=1e-12)

    def test_hermitian_psd(self):
        cov = chunk_covariance(_spec(np.random.default_rng(11)))
        np.testing.assert_allclose(cov, np.conj(np.swapaxes(cov, -1, -2)), atol=1e-14)
        assert np.all(np.linalg.eigvalsh(cov) >= -1e-12)

    def test_framewise_sums_to_chunk(self):
        rng = np.random.default_rng(12)
        S = _spec(rng)
        m = rng.uniform(0.2, 1.0, (7, 6))
        seq = framewise_covariance(S, m)
        assert seq.matrices.shape == (7, 6, 3, 3)
        np.testing.assert_allclose(seq.matrices.sum(axis=0), chunk_covariance(S, m), atol=1e-12)

    def test_framewise_frequency_subset(self):
        S = _spec(np.random.default_rng(13))
        full = framewise_covariance(S)
        sub = framewise_covariance(S, freqs=[1, 4])
        np.testing.assert_allclose(sub.matrices, full.matrices[:, [1, 4]])

    def test_zero_mask_warns(self):
        S = _spec(np.random.default_rng(14))
        with pytest.warns(DegenerateCovarianceWarning):
            cov = chunk_covariance(S, np.zeros((7, 6)))
        assert np.all(np.isfinite(cov))

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            chunk_covariance(np.ones((1, 2, 3)), kind="ibm")


class TestStacking:
    @pytest.mark.parametrize("L1,L2", [(1, 0), (3, 2), (2, 1), (1, 3)])
    def test_matches_loop_oracle(self, L1, L2):
        Y = _spec(np.random.default_rng(15), 2, 5, 3)
        np.testing.assert_array_equal(stack_mcmf(Y, L1, L2), loop_stack(Y, L1, L2))

    def test_single_frame_is_input(self):
        Y = _spec(np.random.default_rng(16))
        np.testing.assert_array_equal(stack_mcmf(Y, 1, 0), Y)

    def test_current_index_selects_current_frame(self):
        Y = _spec(np.random.default_rng(17), 3, 5, 2)
        st = stack_mcmf(Y, 3, 1)
        for ref in range(3):
            np.testing.assert_array_equal(st[current_index(3, 3, ref)], Y[ref])

    def test_multiframe_needs_single_channel(self):
        with pytest.raises(DimensionError):
            stack_multiframe(np.ones((2, 3, 4)), 2, 0)
        assert stack_multiframe(np.ones((3, 4)), 2, 1).shape == (3, 3, 4)

    def test_rejects_bad_sizes(self):
        with pytest.raises(ParameterError):
            stack_mcmf(np.ones((1, 3, 4)), 0, 1)


class TestRecursive:
    def test_block_count_and_map(self):
        S = _spec(np.random.default_rng(18), 2, 100, 3)
        seq = recursive_covariance(S, None, 30, 10, 0.9)
        assert seq.matrices.shape[0] == 8
        assert seq.frame_map[0] == 0 and seq.frame_map[-1] == 7
        assert seq.dense().shape == (100, 3, 2, 2)

    def test_recursion_formula(self):
        S = _spec(np.random.default_rng(19), 2, 25, 3)
        seq = recursive_covariance(S, None, 10, 5, 0.7)
        blocks = [chunk_covariance(S[:, b * 5:b * 5 + 10]) for b in range(4)]
        state = blocks[0]
        np.testing.assert_allclose(seq.matrices[0], state)
        for b in range(1, 4):
            state = 0.7 * state + 0.3 * blocks[b]
            np.testing.assert_allclose(seq.matrices[b], state, atol=1e-12)

    def test_short_input_single_block(self):
        S = _spec(np.random.default_rng(20), 2, 5, 3)
        seq = recursive_covariance(S, None, 30, 10)
        np.testing.assert_allclose(seq.matrices[0], chunk_covariance(S))

    @pytest.mark.parametrize("kw", [{"block_frames": 0}, {"hop_frames": 0}, {"forgetting": 1.0}])
    def test_rejects_bad_parameters(self, kw):
        with pytest.raises(ParameterError):
            recursive_covariance(np.ones((1, 5, 2)), **kw)

    def test_no_warning_on_silent_block(self):
        S = _spec(np.random.default_rng(21), 1, 40, 2)
        m = np.ones((40, 2))
        m[:10] = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            recursive_covariance(S, m, 10, 10)
