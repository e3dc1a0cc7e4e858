"""Conventional beamformer pipelines: chunk, recursive and multi-frame MVDR.

Each pipeline takes the mixture spectrogram bins ``(M, T, F)`` and a
:class:`ComponentEstimates` and returns the enhanced reference-channel
spectrogram ``(T, F)`` with the weights that produced it.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ParameterError
from .estimators import (
    ComponentEstimates,
    chunk_covariance,
    current_index,
    recursive_covariance,
    stack_mcmf,
)
from .mvdr import (
    DEFAULT_LOADING,
    BeamformerWeights,
    apply_weights,
    ifc_vector,
    mf_mvdr,
    mvdr_reference_channel,
    mvdr_steering,
    plane_wave_steering,
    steering_from_covariance,
)
from .room import ArrayGeometry

SOLUTIONS = ("steering", "reference", "doa")


class BeamformResult(NamedTuple):
    output: np.ndarray
    weights: BeamformerWeights


def _spatial_weights(speech_cov, noise_cov, solution, reference, loading, steering=None):
    if solution == "doa":
        if steering is None:
            raise ParameterError("the doa solution needs explicit steering vectors")
        return mvdr_steering(noise_cov, steering, loading)
    if solution == "steering":
        v = steering_from_covariance(speech_cov, "reference", reference)
        return mvdr_steering(noise_cov, v, loading)
    if solution == "reference":
        return mvdr_reference_channel(noise_cov, speech_cov, reference, loading)
    raise ParameterError(f"unknown MVDR solution {solution!r}; expected one of {SOLUTIONS}")


def doa_steering(geometry: ArrayGeometry, theta_deg: float, freqs_hz) -> np.ndarray:
    """Far-field steering vectors ``(F, M)`` toward a known direction."""
    return np.concatenate([plane_wave_steering(geometry, theta_deg, f) for f in freqs_hz])


def chunk_mvdr(mixture: np.ndarray, est: ComponentEstimates, solution: str = "steering", reference: int = 0,
               loading: float = DEFAULT_LOADING, steering: np.ndarray | None = None) -> BeamformResult:
    """One weight vector per frequency from utterance-level covariances.

    ``solution``: ``steering`` (principal eigenvector of the speech
    covariance, normalized at the reference mic), ``reference`` (trace form)
    or ``doa`` (caller-supplied ``steering`` vectors ``(F, M)``).
    """
    phi_x = chunk_covariance(est.speech, est.speech_mask)
    phi_n = chunk_covariance(est.noise, est.noise_mask)
    w = _spatial_weights(phi_x, phi_n, solution, reference, loading, steering)
    return BeamformResult(apply_weights(w, mixture), BeamformerWeights(w, "MC"))


def recursive_mvdr(mixture: np.ndarray, est: ComponentEstimates, block_frames: int = 30, hop_frames: int = 10,
                   forgetting: float = 0.9, solution: str = "steering", reference: int = 0,
                   loading: float = DEFAULT_LOADING) -> BeamformResult:
    """Mini-block recursive covariances, weights constant within each block."""
    phi_x = recursive_covariance(est.speech, est.speech_mask, block_frames, hop_frames, forgetting)
    phi_n = recursive_covariance(est.noise, est.noise_mask, block_frames, hop_frames, forgetting)
    if solution == "doa":
        raise ParameterError("recursive MVDR estimates its steering vectors; use steering or reference")
    w_blocks = _spatial_weights(phi_x.matrices, phi_n.matrices, solution, reference, loading)
    w = w_blocks[phi_x.frame_map]
    return BeamformResult(apply_weights(w, mixture), BeamformerWeights(w, "MC"))


def mf_mvdr_separate(mixture: np.ndarray, est: ComponentEstimates, L1: int = 3, L2: int = 2, reference: int = 0,
                     loading: float = DEFAULT_LOADING) -> BeamformResult:
    """Single-channel multi-frame MVDR on the reference channel.

    The undesired component is ``stack(Y) - stack(Xhat)``. Both stacked
    covariances are utterance-level, so ``gamma`` and the weights are
    constant over time.
    """
    y = mixture[reference:reference + 1]
    y_bar = stack_mcmf(y, L1, L2)
    x_bar = stack_mcmf(est.speech[reference:reference + 1], L1, L2)
    phi_x = chunk_covariance(x_bar, est.speech_mask)
    phi_v = chunk_covariance(y_bar - x_bar, est.noise_mask)
    gamma = ifc_vector(phi_x, current_index(L1))
    w = mf_mvdr(phi_v, gamma, loading)
    return BeamformResult(apply_weights(w, y_bar), BeamformerWeights(w, "MF"))
