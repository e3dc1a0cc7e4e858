import numpy as np
import pytest

from adlmvdr.beamform import chunk_mvdr, doa_steering, mf_mvdr_separate, recursive_mvdr
from adlmvdr.errors import ParameterError
from adlmvdr.estimators import ComponentEstimates, oracle_estimates
from adlmvdr.metrics import si_snr_db
from adlmvdr.room import ArrayGeometry
from adlmvdr.signal_core import istft

from oracles import lagrangian_mvdr


def _enhanced_si_snr(scene, out):
    Y = scene["Y"]
    n = scene["mix"].mixture.num_samples
    x_hat = istft(Y.with_bins(out[None]), length=n).samples[0]
    return si_snr_db(x_hat, scene["mix"].target.samples[0])


def _rank_one_estimates(rng, M=3, T=40, F=5):
    """Speech = fixed per-bin steering times a random source; white-ish noise."""
    v = rng.standard_normal((M, 1, F)) + 1j * rng.standard_normal((M, 1, F))
    s = rng.standard_normal((1, T, F)) + 1j * rng.standard_normal((1, T, F))
    n = 0.3 * (rng.standard_normal((M, T, F)) + 1j * rng.standard_normal((M, T, F)))
    ones = np.ones((T, F), dtype=np.complex128)
    return ComponentEstimates(v * s, n, ones, ones.copy()), v[:, 0, :].T, v * s + n


class TestChunk:
    def test_improves_on_scene(self, small_scene):
        est = oracle_estimates(small_scene["Y"].bins, small_scene["X"].bins)
        res = chunk_mvdr(small_scene["Y"].bins, est)
        base = si_snr_db(small_scene["mix"].mixture.samples[0], small_scene["mix"].target.samples[0])
        assert _enhanced_si_snr(small_scene, res.output) > base + 1.0
        assert res.weights.chunk and res.weights.weights.shape == (257, 3)

    def test_steering_weights_match_constrained_optimum(self):
        rng = np.random.default_rng(0)
        est, v, Y = _rank_one_estimates(rng)
        res = chunk_mvdr(Y, est, "doa", steering=v, loading=0.0)
        for f in range(v.shape[0]):
            phi_n = np.einsum("mt,nt->mn", est.noise[:, :, f], np.conj(est.noise[:, :, f])) / est.noise.shape[1]
            np.testing.assert_allclose(res.weights.weights[f], lagrangian_mvdr(phi_n, v[f]), rtol=1e-8, atol=1e-10)

    def test_rank_one_speech_solutions_agree(self):
        rng = np.random.default_rng(1)
        est, v, Y = _rank_one_estimates(rng)
        a = chunk_mvdr(Y, est, "steering", loading=0.0).weights.weights
        b = chunk_mvdr(Y, est, "reference", loading=0.0).weights.weights
        np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-9)

    def test_distortionless_toward_reference(self):
        rng = np.random.default_rng(2)
        est, v, Y = _rank_one_estimates(rng)
        w = chunk_mvdr(Y, est, "steering", loading=0.0).weights.weights
        gain = np.einsum("fm,fm->f", np.conj(w), v / v[:, :1])
        np.testing.assert_allclose(gain, 1.0, atol=1e-8)

    def test_doa_needs_steering(self):
        rng = np.random.default_rng(3)
        est, _, Y = _rank_one_estimates(rng)
        with pytest.raises(ParameterError):
            chunk_mvdr(Y, est, "doa")
        with pytest.raises(ParameterError):
            chunk_mvdr(Y, est, "eigen")

    def test_doa_steering_shape(self):
        sv = doa_steering(ArrayGeometry.linear(4), 60.0, [0.0, 1000.0])
        assert sv.shape == (2, 4)
        np.testing.assert_allclose(sv[0], 1.0)


class TestRecursive:
    def test_single_block_equals_chunk(self, small_scene):
        est = oracle_estimates(small_scene["Y"].bins, small_scene["X"].bins)
        T = small_scene["Y"].num_frames
        rec = recursive_mvdr(small_scene["Y"].bins, est, block_frames=T, hop_frames=5)
        ch = chunk_mvdr(small_scene["Y"].bins, est)
        np.testing.assert_allclose(rec.weights.weights, np.broadcast_to(ch.weights.weights, rec.weights.weights.shape),
                                   atol=1e-10)

    def test_weights_constant_within_hop(self, small_scene):
        est = oracle_estimates(small_scene["Y"].bins, small_scene["X"].bins)
        w = recursive_mvdr(small_scene["Y"].bins, est, block_frames=20, hop_frames=8).weights.weights
        np.testing.assert_array_equal(w[0], w[7])
        assert not np.allclose(w[7], w[8])

    def test_improves_on_scene(self, small_scene):
        est = oracle_estimates(small_scene["Y"].bins, small_scene["X"].bins)
        res = recursive_mvdr(small_scene["Y"].bins, est, block_frames=20, hop_frames=8)
        base = si_snr_db(small_scene["mix"].mixture.samples[0], small_scene["mix"].target.samples[0])
        assert _enhanced_si_snr(small_scene, res.output) > base

    def test_doa_rejected(self, small_scene):
        est = oracle_estimates(small_scene["Y"].bins, small_scene["X"].bins)
        with pytest.raises(ParameterError):
            recursive_mvdr(small_scene["Y"].bins, est, solution="doa")


class TestMultiFrame:
    def test_single_frame_is_identity(self, small_scene):
        Y = small_scene["Y"].bins
        est = oracle_estimates(Y, small_scene["X"].bins)
        res = mf_mvdr_separate(Y, est, L1=1, L2=0)
        np.testing.assert_array_equal(res.weights.weights, 1.0)
        np.testing.assert_array_equal(res.output, Y[0])

    def test_shapes_and_ifc_constraint(self, small_scene):
        Y = small_scene["Y"].bins
        est = oracle_estimates(Y, small_scene["X"].bins)
        res = mf_mvdr_separate(Y, est, L1=3, L2=2)
        assert res.weights.layout == "MF" and res.weights.weights.shape == (257, 5)
        assert res.output.shape == Y.shape[1:]
        assert np.all(np.isfinite(res.output))
