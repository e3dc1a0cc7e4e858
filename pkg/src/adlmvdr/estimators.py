"""Component estimation with complex ratio masks/filters and covariance builders.

Spectrogram arrays are ``(M, T, F)``; masks and filters are indexed ``(T, F)``.
Stacked multi-frame vectors list frames ``t-L1+1 .. t+L2`` in ascending
order, so the current frame sits at index ``L1-1``; MCMF stacks are
frame-major with the channels of one frame contiguous (entry ``l*M + m``).
"""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, NumericError, ParameterError
from .signal_core import MultiChannelSpectrogram

DEFAULT_CLAMP = 10.0
DEFAULT_RIDGE = 1e-6
ZERO_LOAD = 1e-10


class DegenerateCovarianceWarning(RuntimeWarning):
    pass


class EstimatorSource(enum.Enum):
    ORACLE = "oracle"
    LOADED_FILTER = "loaded-filter"
    PASSTHROUGH = "passthrough"


def _bins(x) -> np.ndarray:
    if isinstance(x, MultiChannelSpectrogram):
        return x.bins
    x = np.asarray(x, dtype=np.complex128)
    return x[None] if x.ndim == 2 else x


@dataclass(frozen=True)
class ComplexRatioFilter:
    """Taps ``(T, F, J1+J2+1, K1+K2+1)``; tap ``[.., j, k]`` multiplies
    ``Y(t + j - J1, f + k - K1)``."""

    taps: np.ndarray
    time_extent: tuple = (0, 0)
    freq_extent: tuple = (0, 0)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.complex128)
        (j1, j2), (k1, k2) = self.time_extent, self.freq_extent
        if min(j1, j2, k1, k2) < 0:
            raise ParameterError("filter extents must be non-negative")
        if taps.ndim != 4 or taps.shape[2:] != (j1 + j2 + 1, k1 + k2 + 1):
            raise DimensionError(f"taps shape {taps.shape} does not match extents {self.time_extent}/{self.freq_extent}")
        if not np.all(np.isfinite(taps)):
            raise ParameterError("filter taps must be finite")
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "time_extent", (int(j1), int(j2)))
        object.__setattr__(self, "freq_extent", (int(k1), int(k2)))

    @property
    def center_mask(self) -> np.ndarray:
        return self.taps[:, :, self.time_extent[0], self.freq_extent[0]]

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "ComplexRatioFilter":
        return cls(np.asarray(mask)[:, :, None, None], (0, 0), (0, 0))


def oracle_crm(mixture, target, clamp: float = DEFAULT_CLAMP, reference: int = 0) -> ComplexRatioFilter:
    """``X / Y`` at the reference channel, magnitude clamped; zero where ``Y`` is."""
    Y = _bins(mixture)[reference]
    X = _bins(target)[reference]
    if X.shape != Y.shape:
        raise DimensionError("mixture and target spectrograms differ in shape")
    nz = np.abs(Y) > 1e-300
    mask = np.zeros_like(Y)
    mask[nz] = X[nz] / Y[nz]
    mag = np.abs(mask)
    over = mag > clamp
    mask[over] *= clamp / mag[over]
    return ComplexRatioFilter.from_mask(mask)


def _neighbourhoods(Y: np.ndarray, time_extent, freq_extent) -> np.ndarray:
    """``(M, T, F, K)`` stack of zero-padded shifted copies, K in tap order."""
    (j1, j2), (k1, k2) = time_extent, freq_extent
    M, T, F = Y.shape
    pad = np.zeros((M, T + j1 + j2, F + k1 + k2), dtype=np.complex128)
    pad[:, j1:j1 + T, k1:k1 + F] = Y
    views = [pad[:, j:j + T, k:k + F] for j in range(j1 + j2 + 1) for k in range(k1 + k2 + 1)]
    return np.stack(views, axis=-1)


def apply_crf(spec, filt: ComplexRatioFilter) -> np.ndarray:
    """``Xhat(t, f) = sum cRF(t, f, j, k) Y(t + j, f + k)`` on every channel."""
    Y = _bins(spec)
    if filt.taps.shape[:2] != Y.shape[1:]:
        raise DimensionError(f"filter covers {filt.taps.shape[:2]} bins, spectrogram has {Y.shape[1:]}")
    if filt.time_extent == (0, 0) and filt.freq_extent == (0, 0):
        return filt.taps[None, :, :, 0, 0] * Y
    (j1, j2), (k1, k2) = filt.time_extent, filt.freq_extent
    M, T, F = Y.shape
    pad = np.zeros((M, T + j1 + j2, F + k1 + k2), dtype=np.complex128)
    pad[:, j1:j1 + T, k1:k1 + F] = Y
    out = np.zeros_like(Y)
    for j in range(j1 + j2 + 1):
        for k in range(k1 + k2 + 1):
            out += filt.taps[None, :, :, j, k] * pad[:, j:j + T, k:k + F]
    return out


def oracle_crf(mixture, target, time_extent=(1, 1), freq_extent=(1, 1), ridge: float = DEFAULT_RIDGE) -> ComplexRatioFilter:
    """Per-bin ridge least-squares taps mapping the mixture neighbourhood to the target.

    One tap set per (t, f), shared across channels and fitted jointly over
    them. The ridge term is ``ridge`` times the mean diagonal of the Gram
    matrix, keeping the fit scale-free.
    """
    Y, X = _bins(mixture), _bins(target)
    if X.shape != Y.shape:
        raise DimensionError("mixture and target spectrograms differ in shape")
    A = _neighbourhoods(Y, time_extent, freq_extent)
    K = A.shape[-1]
    gram = np.einsum("mtfk,mtfl->tfkl", np.conj(A), A)
    rhs = np.einsum("mtfk,mtf->tfk", np.conj(A), X)
    lam = ridge * np.real(np.trace(gram, axis1=-2, axis2=-1)) / K + 1e-300
    gram = gram + lam[..., None, None] * np.eye(K)
    try:
        taps = np.linalg.solve(gram, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericError("cRF normal equations are singular; use a positive ridge") from exc
    T, F = Y.shape[1:]
    shape = (T, F, sum(time_extent) + 1, sum(freq_extent) + 1)
    return ComplexRatioFilter(taps.reshape(shape), tuple(time_extent), tuple(freq_extent))


@dataclass(frozen=True)
class ComponentEstimates:
    """Estimated speech and noise (or undesired) components with their center masks."""

    speech: np.ndarray
    noise: np.ndarray
    speech_mask: np.ndarray
    noise_mask: np.ndarray
    source: EstimatorSource = EstimatorSource.ORACLE
    method: str = "crm"

    def select(self, channels) -> "ComponentEstimates":
        ch = list(channels)
        return ComponentEstimates(self.speech[ch], self.noise[ch], self.speech_mask, self.noise_mask,
                                  self.source, self.method)


def oracle_estimates(mixture, target, method: str = "crm", time_extent=(1, 1), freq_extent=(1, 1),
                     clamp: float = DEFAULT_CLAMP, reference: int = 0) -> ComponentEstimates:
    """Oracle speech / noise components; noise target is ``Y - X``.

    ``method="ideal"`` returns the true components themselves with unit masks,
    so covariances are plain time averages.
    """
    Y, X = _bins(mixture), _bins(target)
    N = Y - X
    if method == "ideal":
        ones = np.ones(Y.shape[1:], dtype=np.complex128)
        return ComponentEstimates(X.copy(), N, ones, ones.copy(), EstimatorSource.ORACLE, method)
    if method == "crm":
        fx = oracle_crm(Y, X, clamp, reference)
        fn = oracle_crm(Y, N, clamp, reference)
    elif method == "crf":
        fx = oracle_crf(Y, X, time_extent, freq_extent)
        fn = oracle_crf(Y, N, time_extent, freq_extent)
    else:
        raise ParameterError(f"unknown oracle method {method!r}")
    return ComponentEstimates(apply_crf(Y, fx), apply_crf(Y, fn), fx.center_mask, fn.center_mask,
                              EstimatorSource.ORACLE, method)


def filter_estimates(mixture, speech_filter: ComplexRatioFilter, noise_filter: ComplexRatioFilter) -> ComponentEstimates:
    Y = _bins(mixture)
    return ComponentEstimates(apply_crf(Y, speech_filter), apply_crf(Y, noise_filter), speech_filter.center_mask,
                              noise_filter.center_mask, EstimatorSource.LOADED_FILTER, "crf")


def passthrough_estimates(mixture) -> ComponentEstimates:
    """Speech = mixture, noise = zero; unit masks."""
    Y = _bins(mixture)
    ones = np.ones(Y.shape[1:], dtype=np.complex128)
    return ComponentEstimates(Y.copy(), np.zeros_like(Y), ones, np.zeros_like(ones),
                              EstimatorSource.PASSTHROUGH, "passthrough")


# -------------------------------------------------------------- covariances

@dataclass(frozen=True)
class CovarianceSequence:
    """Per-frame covariances ``(T, F, D, D)``.

    When ``frame_map`` is set, ``matrices`` holds one entry per block and
    frame ``t`` uses block ``frame_map[t]``.
    """

    matrices: np.ndarray
    layout: str = "MC"
    normalizer: np.ndarray | None = None
    frame_map: np.ndarray | None = None

    @property
    def num_frames(self) -> int:
        return len(self.frame_map) if self.frame_map is not None else self.matrices.shape[0]

    @property
    def dim(self) -> int:
        return self.matrices.shape[-1]

    def dense(self) -> np.ndarray:
        return self.matrices if self.frame_map is None else self.matrices[self.frame_map]


def mask_power(mask, num_frames: int, num_bins: int) -> np.ndarray:
    """``sum_t |mask(t, f)|^2`` per bin, or ``T`` without a mask."""
    if mask is None:
        return np.full(num_bins, float(num_frames))
    return np.sum(np.abs(np.asarray(mask)) ** 2, axis=0)


def _guard_normalizer(norm: np.ndarray) -> np.ndarray:
    bad = norm <= 0
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} bins have zero mask power; returning loaded zero covariances",
                      DegenerateCovarianceWarning, stacklevel=3)
    return bad


def chunk_covariance(component, mask=None, kind: str = "crm") -> np.ndarray:
    """Chunk-level covariance per frequency, ``(F, D, D)``.

    ``kind="crm"``: ``component`` is an estimated signal and the sum of outer
    products is divided by the center-mask power. ``kind="rm"``: ``component``
    is the mixture and frames are weighted by the squared real mask.
    """
    S = _bins(component)
    D, T, F = S.shape
    if kind == "crm":
        num = np.einsum("itf,jtf->fij", S, np.conj(S))
        norm = mask_power(mask, T, F)
    elif kind == "rm":
        w = np.ones((T, F)) if mask is None else np.asarray(mask, dtype=float) ** 2
        num = np.einsum("tf,itf,jtf->fij", w, S, np.conj(S))
        norm = w.sum(axis=0)
    else:
        raise ParameterError(f"unknown covariance kind {kind!r}")
    bad = _guard_normalizer(norm)
    cov = num / np.where(bad, 1.0, norm)[:, None, None]
    cov[bad] = ZERO_LOAD * np.eye(D)
    return cov


def framewise_covariance(component, mask=None, layout: str = "MC", freqs=None) -> CovarianceSequence:
    """``S(t, f) S^H(t, f) / sum_t |mask(t, f)|^2`` for every frame."""
    S = _bins(component)
    D, T, F = S.shape
    norm = mask_power(mask, T, F)
    if freqs is not None:
        S, norm = S[:, :, freqs], norm[freqs]
    bad = _guard_normalizer(norm)
    mats = np.einsum("itf,jtf->tfij", S, np.conj(S)) / np.where(bad, 1.0, norm)[None, :, None, None]
    mats[:, bad] = ZERO_LOAD * np.eye(D)
    return CovarianceSequence(mats, layout, norm)


def stack_mcmf(spec, L1: int, L2: int) -> np.ndarray:
    """Stack frames ``t-L1+1 .. t+L2`` of every channel: ``(M*L, T, F)``.

    Frames outside the signal are zero.
    """
    if L1 < 1 or L2 < 0:
        raise ParameterError(f"need L1 >= 1 (current frame included) and L2 >= 0, got {L1}, {L2}")
    S = _bins(spec)
    M, T, F = S.shape
    L = L1 + L2
    out = np.zeros((L, M, T, F), dtype=np.complex128)
    for l in range(L):
        off = l - (L1 - 1)
        lo, hi = max(0, -off), min(T, T - off)
        if lo < hi:
            out[l, :, lo:hi] = S[:, lo + off:hi + off]
    return out.reshape(L * M, T, F)


def stack_multiframe(spec, L1: int, L2: int) -> np.ndarray:
    """Single-channel stack ``(L, T, F)``; input ``(T, F)`` or ``(1, T, F)``."""
    S = _bins(spec)
    if S.shape[0] != 1:
        raise DimensionError("multi-frame stacking takes a single channel")
    return stack_mcmf(S, L1, L2)


def current_index(L1: int, M: int = 1, reference: int = 0) -> int:
    """Position of the current frame's reference channel in a stacked vector."""
    return (L1 - 1) * M + reference


def recursive_covariance(component, mask=None, block_frames: int = 30, hop_frames: int = 10,
                         forgetting: float = 0.9) -> CovarianceSequence:
    """Mini-block covariances blended as ``Phi_b = beta Phi_{b-1} + (1 - beta) Phi_block``.

    Block ``b`` spans frames ``[b*hop, b*hop + block)``; frame ``t`` is
    assigned block ``min(t // hop, B - 1)``.
    """
    if block_frames < 1 or hop_frames < 1:
        raise ParameterError("block and hop sizes must be at least one frame")
    if not 0.0 <= forgetting < 1.0:
        raise ParameterError("forgetting factor must lie in [0, 1)")
    S = _bins(component)
    D, T, F = S.shape
    m = None if mask is None else np.asarray(mask)
    n_blocks = 1 if T <= block_frames else int(np.ceil((T - block_frames) / hop_frames)) + 1
    mats = np.empty((n_blocks, F, D, D), dtype=np.complex128)
    state = None
    for b in range(n_blocks):
        sl = slice(b * hop_frames, min(b * hop_frames + block_frames, T))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateCovarianceWarning)
            block = chunk_covariance(S[:, sl], None if m is None else m[sl])
        state = block if state is None else forgetting * state + (1.0 - forgetting) * block
        mats[b] = state
    frame_map = np.minimum(np.arange(T) // hop_frames, n_blocks - 1)
    return CovarianceSequence(mats, "MC", mask_power(m, T, F), frame_map)


# --------------------------------------------------------- filter file I/O

_CRF_MAGIC = b"CRF1"


def write_crf(filt: ComplexRatioFilter, path) -> None:
    """Binary layout: magic ``CRF1``, uint32 J1, J2, K1, K2, T, F, then
    little-endian float64 (re, im) pairs in (t, f, j, k) order."""
    T, F = filt.taps.shape[:2]
    body = np.empty(filt.taps.shape + (2,), dtype="<f8")
    body[..., 0], body[..., 1] = filt.taps.real, filt.taps.imag
    with open(path, "wb") as fh:
        fh.write(_CRF_MAGIC + struct.pack("<6I", *filt.time_extent, *filt.freq_extent, T, F))
        fh.write(body.tobytes())


def read_crf(path) -> ComplexRatioFilter:
    raw = Path(path).read_bytes()
    if len(raw) < 28 or raw[:4] != _CRF_MAGIC:
        raise FormatError(f"{path}: not a cRF file")
    j1, j2, k1, k2, T, F = struct.unpack("<6I", raw[4:28])
    shape = (T, F, j1 + j2 + 1, k1 + k2 + 1, 2)
    if len(raw) - 28 != 8 * int(np.prod(shape)):
        raise FormatError(f"{path}: body size does not match header")
    body = np.frombuffer(raw[28:], dtype="<f8")
    if body.size != int(np.prod(shape)):
        raise FormatError(f"{path}: body size does not match header")
    body = body.reshape(shape)
    return ComplexRatioFilter(body[..., 0] + 1j * body[..., 1], (j1, j2), (k1, k2))
