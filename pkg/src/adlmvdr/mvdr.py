"""Closed-form MVDR machinery.

All functions broadcast over leading axes: covariances are ``(..., D, D)``
and vectors ``(..., D)``, typically with ``...`` = ``(F,)`` for chunk-level
weights or ``(T, F)`` for frame-level ones.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, FormatError, NumericError, UnsupportedLayoutError, ValidationError
from .room import SPEED_OF_SOUND, ArrayGeometry

DEFAULT_LOADING = 1e-5
HERMITIAN_TOL = 1e-10
LAYOUTS = ("MC", "MF", "MCMF")


def _hermitian_residual(H: np.ndarray) -> np.ndarray:
    scale = np.linalg.norm(H, axis=(-2, -1))
    diff = np.linalg.norm(H - np.conj(np.swapaxes(H, -1, -2)), axis=(-2, -1))
    return diff / np.maximum(scale, 1e-300)


def check_hermitian(H: np.ndarray, tol: float = HERMITIAN_TOL) -> np.ndarray:
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {H.shape}")
    if np.any(_hermitian_residual(H) > tol):
        raise ValidationError("matrix is not Hermitian within tolerance")
    return H


class EigenPair(NamedTuple):
    vector: np.ndarray
    value: np.ndarray
    converged: np.ndarray
    iterations: int


def fix_gauge(v: np.ndarray, rel_floor: float = 1e-10) -> np.ndarray:
    """Rotate each vector so its first non-negligible entry is real positive."""
    v = np.asarray(v, dtype=np.complex128)
    mag = np.abs(v)
    big = mag > rel_floor * np.max(mag, axis=-1, keepdims=True)
    first = np.argmax(big, axis=-1)
    pivot = np.take_along_axis(v, first[..., None], axis=-1)
    phase = np.where(np.abs(pivot) > 0, pivot / np.maximum(np.abs(pivot), 1e-300), 1.0)
    return v * np.conj(phase)


def principal_eigenvector(H: np.ndarray, tol: float = 1e-10, max_iter: int = 500) -> EigenPair:
    """Dominant eigenpair of Hermitian matrices by power iteration.

    The matrix is shifted by its Gershgorin bound so the largest algebraic
    eigenvalue dominates, then powered by repeated squaring: iteration ``k``
    applies ``A ** (2 ** k)`` (Frobenius-normalized) until successive powers
    change by less than ``tol``. The converged power is a scaled projector on
    the dominant eigenspace; the iterate is its first column (the image of
    ``e1``), or the column of largest norm when ``e1`` is (nearly) orthogonal
    to that space. Vectors are unit norm with the gauge of :func:`fix_gauge`.
    """
    H = check_hermitian(H)
    squeeze = H.ndim == 2
    if squeeze:
        H = H[None]
    D = H.shape[-1]
    eye = np.eye(D)
    shift = np.max(np.sum(np.abs(H), axis=-1), axis=-1)
    A = H + shift[..., None, None] * eye
    norm = np.linalg.norm(A, axis=(-2, -1), keepdims=True)
    A = A / np.maximum(norm, 1e-300)
    converged = np.zeros(H.shape[:-2], dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        A2 = A @ A
        A2 /= np.maximum(np.linalg.norm(A2, axis=(-2, -1), keepdims=True), 1e-300)
        delta = np.linalg.norm(A2 - A, axis=(-2, -1))
        A = np.where(converged[..., None, None], A, A2)
        converged |= delta < tol
        if converged.all():
            break
    cols = np.linalg.norm(A, axis=-2)
    pick = np.where(cols[..., 0] >= 1e-3 * cols.max(axis=-1), 0, np.argmax(cols, axis=-1))
    v = np.take_along_axis(A, pick[..., None, None], axis=-1)[..., 0]
    zero = np.linalg.norm(v, axis=-1) == 0
    v = np.where(zero[..., None], eye[0], v)
    # one plain power step with the shifted matrix polishes rounding in the projector
    v = np.einsum("...ij,...j->...i", H + shift[..., None, None] * eye, v)
    v = np.where((np.linalg.norm(v, axis=-1) == 0)[..., None], eye[0], v)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    v = fix_gauge(v)
    value = np.real(np.einsum("...i,...ij,...j->...", np.conj(v), H, v))
    if squeeze:
        return EigenPair(v[0], value[0], converged[0], it)
    return EigenPair(v, value, converged, it)


def regularized_inverse(H: np.ndarray, loading: float = DEFAULT_LOADING) -> np.ndarray:
    """Inverse of ``H + delta I`` with ``delta = loading * Re tr(H) / D``.

    LU factorization with partial pivoting (LAPACK ``gesv``).
    """
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {H.shape}")
    loaded = diagonal_load(H, loading)
    D = H.shape[-1]
    try:
        inv = np.linalg.solve(loaded, np.broadcast_to(np.eye(D), loaded.shape))
    except np.linalg.LinAlgError as exc:
        raise NumericError("matrix is singular even after diagonal loading") from exc
    resid = np.linalg.norm(loaded @ inv - np.eye(D), axis=(-2, -1))
    if not np.all(np.isfinite(inv)) or np.any(resid > 1e-6):
        raise NumericError("matrix is numerically singular even after diagonal loading")
    return inv


def diagonal_load(H: np.ndarray, loading: float) -> np.ndarray:
    D = H.shape[-1]
    delta = loading * np.real(np.trace(H, axis1=-2, axis2=-1)) / D
    return H + delta[..., None, None] * np.eye(D)


def _solve(cov: np.ndarray, rhs: np.ndarray, loading: float) -> np.ndarray:
    loaded = diagonal_load(np.asarray(cov, dtype=np.complex128), loading)
    try:
        x = np.linalg.solve(loaded, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError("covariance is singular; increase diagonal loading") from exc
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite result when solving against the covariance")
    return x


@dataclass(frozen=True)
class SteeringVector:
    """Steering vectors ``(..., D)``; normalization is ``unit`` or ``reference``."""

    v: np.ndarray
    normalization: str = "unit"
    reference: int = 0


def steering_from_covariance(speech_cov: np.ndarray, normalization: str = "unit", reference: int = 0) -> SteeringVector:
    """Principal eigenvector of the speech covariance.

    ``reference`` normalization divides by the reference entry, giving the
    relative transfer function (unit gain toward the reference mic).
    """
    v = principal_eigenvector(speech_cov).vector
    if normalization == "reference":
        piv = v[..., reference:reference + 1]
        ok = np.abs(piv) > 1e-8
        v = np.where(ok, v / np.where(ok, piv, 1.0), v)
    elif normalization != "unit":
        raise ValueError(f"unknown normalization {normalization!r}")
    return SteeringVector(v, normalization, reference)


def _constrained(cov, vec, loading):
    vec = np.asarray(vec, dtype=np.complex128)
    if cov.shape[-1] != vec.shape[-1] or cov.shape[-2] != vec.shape[-1]:
        raise DimensionError(f"covariance {cov.shape} and vector {vec.shape} disagree")
    if vec.shape[-1] == 1:
        # scalar case: the covariance cancels, h = 1 / conj(v) exactly
        _solve(cov, vec[..., None], loading)  # keeps the singularity checks
        if np.any(vec == 0):
            raise NumericError("zero denominator in the MVDR solution")
        return 1.0 / np.conj(vec)
    num = _solve(cov, vec[..., None], loading)[..., 0]
    den = np.einsum("...i,...i->...", np.conj(vec), num)
    scale = np.linalg.norm(num, axis=-1) * np.linalg.norm(vec, axis=-1)
    if np.any(np.abs(den) <= 1e-14 * np.maximum(scale, 1e-300)) or np.any(scale == 0):
        raise NumericError("zero denominator in the MVDR solution")
    return num / den[..., None]


def mvdr_steering(noise_cov: np.ndarray, steering, loading: float = DEFAULT_LOADING) -> np.ndarray:
    """``h = Phi^-1 v / (v^H Phi^-1 v)``; satisfies ``h^H v = 1``."""
    v = steering.v if isinstance(steering, SteeringVector) else steering
    return _constrained(np.asarray(noise_cov, dtype=np.complex128), v, loading)


def mvdr_reference_channel(noise_cov: np.ndarray, speech_cov: np.ndarray, reference: int = 0,
                           loading: float = DEFAULT_LOADING) -> np.ndarray:
    """``h = Phi_NN^-1 Phi_XX u / tr(Phi_NN^-1 Phi_XX)``."""
    noise_cov = np.asarray(noise_cov, dtype=np.complex128)
    speech_cov = np.asarray(speech_cov, dtype=np.complex128)
    if noise_cov.shape != speech_cov.shape:
        raise DimensionError("noise and speech covariances differ in shape")
    W = _solve(noise_cov, speech_cov, loading)
    tr = np.trace(W, axis1=-2, axis2=-1)
    if np.any(np.abs(tr) <= 1e-300):
        raise NumericError("zero trace in the reference-channel MVDR solution")
    return W[..., :, reference] / tr[..., None]


def mf_mvdr(undesired_cov: np.ndarray, ifc: np.ndarray, loading: float = DEFAULT_LOADING) -> np.ndarray:
    """Multi-frame MVDR ``h = Phi_VV^-1 g / (g^H Phi_VV^-1 g)`` per (t, f)."""
    return _constrained(np.asarray(undesired_cov, dtype=np.complex128), ifc, loading)


def ifc_vector(mf_speech_cov: np.ndarray, current_index: int, current_power: np.ndarray | None = None,
               eps_rel: float = 1e-10) -> np.ndarray:
    """Interframe correlation vector: current-frame column over current-frame power.

    The expected current-frame power defaults to the framewise covariance's
    own diagonal entry (mask-normalized instantaneous power), so the
    current-frame element is exactly 1. A relative floor ``eps`` enters as
    ``(Phi e + eps e) / (p + eps)``, which tends to the selector ``e`` as the
    power vanishes.
    """
    cov = np.asarray(mf_speech_cov, dtype=np.complex128)
    L = cov.shape[-1]
    if not 0 <= current_index < L:
        raise DimensionError(f"current index {current_index} outside stack of {L}")
    col = cov[..., :, current_index]
    p = np.real(cov[..., current_index, current_index]) if current_power is None else np.asarray(current_power, float)
    eps = eps_rel * float(np.mean(np.abs(p))) + 1e-300
    e = np.zeros(L)
    e[current_index] = 1.0
    gamma = (col + eps * e) / (p + eps)[..., None]
    if current_power is None:
        gamma[..., current_index] = 1.0
    return gamma


# ------------------------------------------------------------------ weights

@dataclass(frozen=True)
class BeamformerWeights:
    """Weights ``(F, D)`` (chunk) or ``(T, F, D)`` (frame-level)."""

    weights: np.ndarray
    layout: str = "MC"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.complex128)
        if w.ndim not in (2, 3):
            raise DimensionError(f"weights must be (F, D) or (T, F, D), got {w.shape}")
        if self.layout not in LAYOUTS:
            raise DimensionError(f"unknown layout {self.layout!r}")
        if not np.all(np.isfinite(w)):
            raise NumericError("weights contain non-finite values")
        object.__setattr__(self, "weights", w)

    @property
    def chunk(self) -> bool:
        return self.weights.ndim == 2

    @property
    def dim(self) -> int:
        return self.weights.shape[-1]


def apply_weights(weights, stacked: np.ndarray) -> np.ndarray:
    """``X(t, f) = h^H(t, f) Y(t, f)`` for ``stacked`` shaped ``(D, T, F)``."""
    w = weights.weights if isinstance(weights, BeamformerWeights) else np.asarray(weights, dtype=np.complex128)
    Y = np.asarray(stacked)
    if Y.ndim != 3:
        raise DimensionError(f"expected (D, T, F) input, got {Y.shape}")
    D, T, F = Y.shape
    if w.ndim == 2:
        if w.shape != (F, D):
            raise DimensionError(f"chunk weights {w.shape} do not match input (F={F}, D={D})")
        return np.einsum("fd,dtf->tf", np.conj(w), Y)
    if w.ndim == 3:
        if w.shape != (T, F, D):
            raise DimensionError(f"frame weights {w.shape} do not match input (T={T}, F={F}, D={D})")
        return np.einsum("tfd,dtf->tf", np.conj(w), Y)
    raise DimensionError(f"weights must be (F, D) or (T, F, D), got {w.shape}")


_LAYOUT_CODE = {"MC": 1, "MF": 2, "MCMF": 3}
_WEIGHTS_MAGIC = b"BFWT"


def write_weights(bw: BeamformerWeights, path) -> None:
    """Binary dump: magic ``BFWT``, uint8 version, uint8 layout, uint8 chunk,
    uint32 T (0 for chunk weights), uint32 F, uint32 D, then little-endian
    float64 pairs (re, im) in (t, f, d) order."""
    w = bw.weights if not bw.chunk else bw.weights[None]
    T, F, D = w.shape
    body = np.empty((T, F, D, 2), dtype="<f8")
    body[..., 0], body[..., 1] = w.real, w.imag
    with open(path, "wb") as fh:
        fh.write(_WEIGHTS_MAGIC + struct.pack("<BBBIII", 1, _LAYOUT_CODE[bw.layout], int(bw.chunk),
                                                0 if bw.chunk else T, F, D))
        fh.write(body.tobytes())


def read_weights(path) -> BeamformerWeights:
    raw = Path(path).read_bytes()
    head = 4 + struct.calcsize("<BBBIII")
    if len(raw) < head or raw[:4] != _WEIGHTS_MAGIC:
        raise FormatError(f"{path}: not a weights dump")
    version, layout, chunk, T, F, D = struct.unpack("<BBBIII", raw[4:head])
    if version != 1:
        raise FormatError(f"{path}: unsupported version {version}")
    rows = 1 if chunk else T
    body = np.frombuffer(raw[head:], dtype="<f8")
    if body.size != rows * F * D * 2:
        raise FormatError(f"{path}: truncated body")
    w = body.reshape(rows, F, D, 2)
    w = w[..., 0] + 1j * w[..., 1]
    names = {v: k for k, v in _LAYOUT_CODE.items()}
    return BeamformerWeights(w[0] if chunk else w, names[layout])


# ------------------------------------------------------------- beam pattern

def plane_wave_steering(geometry: ArrayGeometry, theta_deg, f_hz: float, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Far-field steering vectors ``(angles, M)``, element 0 at zero phase."""
    theta = np.deg2rad(np.atleast_1d(np.asarray(theta_deg, dtype=float)))
    offsets = (geometry.mic_positions - geometry.mic_positions[0]) @ geometry.axis
    return np.exp(2j * np.pi * f_hz * offsets[None, :] * np.cos(theta)[:, None] / c)


def beam_pattern(weights, geometry: ArrayGeometry, f_hz: float, t: int = 0, angle_grid=None,
                 bin_index: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Power response ``|h^H a(theta, f)|^2`` in dB over the angle grid.

    ``weights`` is a single ``(M,)`` vector or :class:`BeamformerWeights`, in
    which case ``bin_index`` (and ``t`` for frame-level weights) select it.
    """
    angles = np.arange(0.0, 181.0, 1.0) if angle_grid is None else np.asarray(angle_grid, dtype=float)
    if isinstance(weights, BeamformerWeights):
        if weights.layout != "MC":
            raise UnsupportedLayoutError(f"beam patterns need spatial (MC) weights, got {weights.layout}")
        if bin_index is None:
            raise DimensionError("bin_index is required with a weight set")
        w = weights.weights[bin_index] if weights.chunk else weights.weights[t, bin_index]
    else:
        w = np.asarray(weights, dtype=np.complex128)
    if w.shape != (geometry.num_mics,):
        raise DimensionError(f"weight vector of length {w.shape} for {geometry.num_mics} mics")
    a = plane_wave_steering(geometry, angles, f_hz)
    resp = np.abs(a @ np.conj(w)) ** 2
    return angles, 10.0 * np.log10(np.maximum(resp, 1e-30))


def write_beam_pattern_csv(path, angles: np.ndarray, gains_db: np.ndarray) -> None:
    lines = ["angle_deg,gain_db"] + [f"{a:.1f},{g:.6f}" for a, g in zip(angles, gains_db)]
    Path(path).write_text("\n".join(lines) + "\n")
