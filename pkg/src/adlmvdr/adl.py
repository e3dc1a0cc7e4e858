"""All-deep-learning MVDR: GRU nets that map frame-wise covariance streams to
steering / IFC vectors and inverse covariances, then frame-level weights.

Covariances enter the nets flattened row-major as ``[Re(Phi); Im(Phi)]``
(``2 D^2`` reals); vector outputs are ``[Re(v); Im(v)]`` and matrix outputs
use the same layout as the inputs. Hidden states are independent per
frequency bin and reset for every utterance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DimensionError, ParameterError
from .estimators import ComponentEstimates, CovarianceSequence, current_index, framewise_covariance, stack_mcmf
from .gru import GruNetParams, gru_backward, gru_forward
from .metrics import si_snr_grad
from .mvdr import BeamformerWeights, apply_weights
from .room import CHANNEL_PRESETS
from .signal_core import MultiChannelSpectrogram, istft, istft_adjoint

MODES = ("MC", "MF", "MCMF")
GUARD_REL = 1e-8
FREQ_BLOCK = 64


@dataclass(frozen=True)
class AdlMvdrConfig:
    """Layout and net sizes for one ADL-MVDR system.

    ``channels`` index the full array; ``reference`` indexes into
    ``channels``. MF uses only the reference channel.
    """

    mode: str = "MC"
    channels: tuple = CHANNEL_PRESETS["15ch"]
    frames: tuple = (1, 0)
    crf_time: tuple = (1, 1)
    crf_freq: tuple = (1, 1)
    v_hidden: tuple = (500, 250)
    inv_hidden: tuple = (500, 500)
    reference: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown ADL-MVDR mode {self.mode!r}; expected one of {MODES}")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "frames", tuple(int(f) for f in self.frames))
        for name in ("crf_time", "crf_freq", "v_hidden", "inv_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        L1, L2 = self.frames
        if L1 < 1 or L2 < 0:
            raise ConfigurationError(f"frames (L1, L2) = {self.frames}: need L1 >= 1 and L2 >= 0")
        if self.mode == "MC" and self.frames != (1, 0):
            raise ConfigurationError("MC mode uses a single frame; set frames to (1, 0)")
        if not self.channels or len(set(self.channels)) != len(self.channels):
            raise ConfigurationError("channels must be a non-empty list of distinct indices")
        if not 0 <= self.reference < len(self.channels):
            raise ConfigurationError(f"reference {self.reference} outside the {len(self.channels)} selected channels")
        if len(self.v_hidden) < 1 or len(self.inv_hidden) < 1:
            raise ConfigurationError("each GRU net needs at least one layer")

    @property
    def num_frames(self) -> int:
        return sum(self.frames)

    @property
    def num_channels(self) -> int:
        return 1 if self.mode == "MF" else len(self.channels)

    @property
    def dim(self) -> int:
        return self.num_channels * self.num_frames

    @property
    def input_size(self) -> int:
        return 2 * self.dim ** 2

    @property
    def v_output(self) -> int:
        return 2 * self.dim

    @property
    def inv_output(self) -> int:
        return 2 * self.dim ** 2

    @property
    def current(self) -> int:
        """Index of the current frame's reference entry in the stacked vector."""
        if self.mode == "MF":
            return current_index(self.frames[0])
        return current_index(self.frames[0], self.num_channels, self.reference)

    def init_params(self, seed: int = 0) -> tuple[GruNetParams, GruNetParams]:
        v = GruNetParams.init(self.input_size, self.v_hidden, self.v_output, seed, f"{self.mode}-v")
        inv = GruNetParams.init(self.input_size, self.inv_hidden, self.inv_output, seed + 1, f"{self.mode}-inv")
        return v, inv

    def check_params(self, v_params: GruNetParams, inv_params: GruNetParams) -> None:
        for name, p, out in (("vector", v_params, self.v_output), ("inverse", inv_params, self.inv_output)):
            if p.input_size != self.input_size or p.output_size != out:
                raise ConfigurationError(f"{name} net maps {p.input_size} -> {p.output_size}, "
                                         f"config needs {self.input_size} -> {out}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "AdlMvdrConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown ADL-MVDR config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "MC-15ch": AdlMvdrConfig("MC", CHANNEL_PRESETS["15ch"], (1, 0), (1, 1), (1, 1), (500, 250), (500, 500)),
    "MF-L5": AdlMvdrConfig("MF", (0,), (3, 2), (1, 1), (1, 1), (128, 128), (128, 128)),
    "MCMF-9ch-3fr": AdlMvdrConfig("MCMF", CHANNEL_PRESETS["9ch"], (2, 1), (1, 1), (1, 1), (500, 250), (500, 500)),
}


# ------------------------------------------------------------ packing

def pack_covariance(mats: np.ndarray) -> np.ndarray:
    """``(..., D, D)`` complex -> ``(..., 2 D^2)`` real."""
    m = np.asarray(mats)
    flat = m.reshape(m.shape[:-2] + (-1,))
    return np.concatenate([flat.real, flat.imag], axis=-1)


def unpack_vector(out: np.ndarray, D: int) -> np.ndarray:
    if out.shape[-1] != 2 * D:
        raise DimensionError(f"vector head emits {out.shape[-1]} values, expected {2 * D}")
    return out[..., :D] + 1j * out[..., D:]


def unpack_matrix(out: np.ndarray, D: int) -> np.ndarray:
    if out.shape[-1] != 2 * D * D:
        raise DimensionError(f"matrix head emits {out.shape[-1]} values, expected {2 * D * D}")
    flat = out[..., :D * D] + 1j * out[..., D * D:]
    return flat.reshape(out.shape[:-1] + (D, D))


@dataclass(frozen=True)
class CoefficientStream:
    """Per-frame estimates: ``vector (T, F, D)`` and ``inverse (T, F, D, D)``."""

    vector: np.ndarray
    inverse: np.ndarray

    def __post_init__(self):
        T, F, D = self.vector.shape
        if self.inverse.shape != (T, F, D, D):
            raise DimensionError(f"inverse {self.inverse.shape} does not match vector {self.vector.shape}")


def _cov_array(cov) -> np.ndarray:
    return cov.dense() if isinstance(cov, CovarianceSequence) else np.asarray(cov)


def gru_net_forward(params: GruNetParams, cov, kind: str = "vector") -> np.ndarray:
    """Run a GRU net over a covariance stream ``(T, F, D, D)``, one state per bin.

    Returns complex ``(T, F, D)`` for ``kind="vector"`` or ``(T, F, D, D)``
    for ``kind="matrix"``.
    """
    mats = _cov_array(cov)
    D = mats.shape[-1]
    if params.input_size != 2 * D * D:
        raise ConfigurationError(f"net input size {params.input_size} != 2*D^2 = {2 * D * D}")
    out = gru_forward(params, pack_covariance(mats))
    if kind == "vector":
        return unpack_vector(out, D)
    if kind == "matrix":
        return unpack_matrix(out, D)
    raise ParameterError(f"unknown output kind {kind!r}")


# ------------------------------------------------------------ weights

class AdlWeights(NamedTuple):
    weights: BeamformerWeights
    flags: np.ndarray


def _raw_weights(vector, inverse):
    num = np.einsum("...ij,...j->...i", inverse, vector)
    den = np.einsum("...i,...i->...", np.conj(vector), num)
    scale = np.linalg.norm(num, axis=-1) * np.linalg.norm(vector, axis=-1)
    bad = ~(np.abs(den) > GUARD_REL * scale) | ~np.isfinite(den)
    h = num / np.where(bad, 1.0, den)[..., None]
    return h, bad, num, den


def adl_weights(coeffs: CoefficientStream, layout: str = "MC", fallback_index: int = 0) -> AdlWeights:
    """Frame-level ``h = P v / (v^H P v)`` with ``P`` the estimated inverse.

    Frames whose denominator is below ``1e-8 |P v| |v|`` are flagged and reuse
    the previous frame's weights (the unit selector at ``t = 0``).
    """
    h, bad, _, _ = _raw_weights(coeffs.vector, coeffs.inverse)
    if np.any(bad):
        T, F, D = h.shape
        prev = np.zeros((F, D), dtype=np.complex128)
        prev[:, fallback_index] = 1.0
        for t in range(T):
            h[t, bad[t]] = prev[bad[t]]
            prev = h[t]
    return AdlWeights(BeamformerWeights(h, layout), bad)


# ------------------------------------------------------------ separation

class AdlStreams(NamedTuple):
    observed: np.ndarray
    speech: np.ndarray
    noise: np.ndarray


def adl_streams(mixture, est: ComponentEstimates, config: AdlMvdrConfig) -> AdlStreams:
    """Observed, speech and noise (undesired) stacks ``(D, T, F)`` for the mode."""
    Y = mixture.bins if isinstance(mixture, MultiChannelSpectrogram) else np.asarray(mixture)
    if max(config.channels) >= Y.shape[0]:
        raise ConfigurationError(f"channels {config.channels} exceed the {Y.shape[0]}-channel mixture")
    L1, L2 = config.frames
    if config.mode == "MF":
        ref = config.channels[config.reference]
        y = stack_mcmf(Y[ref:ref + 1], L1, L2)
        x = stack_mcmf(est.speech[ref:ref + 1], L1, L2)
        return AdlStreams(y, x, y - x)
    ch = list(config.channels)
    return AdlStreams(stack_mcmf(Y[ch], L1, L2), stack_mcmf(est.speech[ch], L1, L2),
                      stack_mcmf(est.noise[ch], L1, L2))


class AdlResult(NamedTuple):
    output: np.ndarray
    weights: BeamformerWeights
    flags: np.ndarray


def adl_mvdr_separate(mixture, est: ComponentEstimates, v_params: GruNetParams, inv_params: GruNetParams,
                      config: AdlMvdrConfig, freq_block: int = FREQ_BLOCK) -> AdlResult:
    """Covariance streams -> two GRU nets -> frame-level weights -> ``h^H Y``.

    Frequencies are processed in blocks to bound memory; bins never interact,
    so the block size only changes results at rounding level.
    """
    config.check_params(v_params, inv_params)
    streams = adl_streams(mixture, est, config)
    D, T, F = streams.observed.shape
    out = np.empty((T, F), dtype=np.complex128)
    weights = np.empty((T, F, D), dtype=np.complex128)
    flags = np.empty((T, F), dtype=bool)
    for lo in range(0, F, freq_block):
        fs = np.arange(lo, min(lo + freq_block, F))
        phi_x = framewise_covariance(streams.speech, est.speech_mask, config.mode, freqs=fs)
        phi_n = framewise_covariance(streams.noise, est.noise_mask, config.mode, freqs=fs)
        coeffs = CoefficientStream(gru_net_forward(v_params, phi_x, "vector"),
                                   gru_net_forward(inv_params, phi_n, "matrix"))
        w = adl_weights(coeffs, config.mode, config.current)
        weights[:, fs], flags[:, fs] = w.weights.weights, w.flags
        out[:, fs] = apply_weights(w.weights, streams.observed[:, :, fs])
    return AdlResult(out, BeamformerWeights(weights, config.mode), flags)


# ------------------------------------------------ end-to-end fine-tuning

class EndToEndGradient(NamedTuple):
    loss: float
    v_grad: GruNetParams
    inv_grad: GruNetParams


def end_to_end_gradient(mixture: MultiChannelSpectrogram, est: ComponentEstimates, target, v_params: GruNetParams,
                        inv_params: GruNetParams, config: AdlMvdrConfig) -> EndToEndGradient:
    """Negative Si-SNR of the separated waveform and its gradient w.r.t. both nets.

    Back-propagates through the waveform synthesis, ``h^H Y``, the weight
    formula and both GRU nets. Flagged frames use fixed fallback weights and
    carry no gradient. Meant for toy scenes (small D, short audio).
    """
    config.check_params(v_params, inv_params)
    streams = adl_streams(mixture, est, config)
    D, T, F = streams.observed.shape
    phi_x = framewise_covariance(streams.speech, est.speech_mask, config.mode).matrices
    phi_n = framewise_covariance(streams.noise, est.noise_mask, config.mode).matrices
    out_v, cache_v = gru_forward(v_params, pack_covariance(phi_x), keep_cache=True)
    out_p, cache_p = gru_forward(inv_params, pack_covariance(phi_n), keep_cache=True)
    v, P = unpack_vector(out_v, D), unpack_matrix(out_p, D)
    w = adl_weights(CoefficientStream(v, P), config.mode, config.current)
    _, bad, num, den = _raw_weights(v, P)
    X = apply_weights(w.weights, streams.observed)

    ref = np.asarray(getattr(target, "samples", target), dtype=np.float64)
    ref = ref[0] if ref.ndim == 2 else ref
    x_hat = istft(mixture.with_bins(X[None]), length=ref.size).samples[0]
    loss, g_time = si_snr_grad(x_hat, ref)

    G_X = istft_adjoint(g_time, mixture.config, T)[0]
    # dL = 2 Re sum_i a_i dh_i with a = G_X conj(Y) / 2
    a = 0.5 * G_X[..., None] * np.conj(np.moveaxis(streams.observed, 0, -1))
    a[bad] = 0.0
    s = np.where(bad, 1.0, den)
    alpha = a / s[..., None]
    beta = np.einsum("...i,...i->...", a, num) / s ** 2
    coef = alpha - beta[..., None] * np.conj(v)
    G_P = 2.0 * np.conj(coef[..., :, None] * v[..., None, :])
    c1 = np.einsum("...a,...ab->...b", coef, P)
    G_v = 2.0 * np.conj(c1) - 2.0 * beta[..., None] * num

    d_v = np.concatenate([G_v.real, G_v.imag], axis=-1)
    flat = G_P.reshape(G_P.shape[:-2] + (-1,))
    d_p = np.concatenate([flat.real, flat.imag], axis=-1)
    return EndToEndGradient(loss, gru_backward(v_params, cache_v, d_v), gru_backward(inv_params, cache_p, d_p))
