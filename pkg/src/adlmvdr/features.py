"""Log-power spectra, inter-channel phase differences and directional features.

The target-dependent phase difference uses physical frequency in Hz,
``TPD = 2 pi f_Hz d_p cos(theta) / c``, where ``d_p`` is the signed spacing
of pair ``(m1, m2)`` projected on the array axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .room import SPEED_OF_SOUND, ArrayGeometry
from .signal_core import MultiChannelSpectrogram

LPS_FLOOR = 1e-12
DEFAULT_PAIRS = ((0, 14), (1, 13), (2, 11), (4, 11), (6, 8))


def _bins(spec) -> np.ndarray:
    b = spec.bins if isinstance(spec, MultiChannelSpectrogram) else np.asarray(spec, dtype=np.complex128)
    if b.ndim != 3:
        raise DimensionError(f"expected (M, T, F) bins, got shape {b.shape}")
    return b


def _check_pairs(pairs, num_channels: int) -> tuple:
    pairs = tuple((int(a), int(b)) for a, b in pairs)
    for a, b in pairs:
        if not (0 <= a < num_channels and 0 <= b < num_channels):
            raise IndexError(f"pair ({a}, {b}) outside {num_channels} channels")
    return pairs


def wrap_phase(x: np.ndarray) -> np.ndarray:
    """Wrap to ``(-pi, pi]``."""
    w = np.mod(x + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def compute_lps(spec, channel: int = 0) -> np.ndarray:
    """``log(|Y|^2 + 1e-12)`` for one channel, shape ``(T, F)``."""
    b = _bins(spec)
    if not 0 <= channel < b.shape[0]:
        raise IndexError(f"channel {channel} outside {b.shape[0]} channels")
    return np.log(np.abs(b[channel]) ** 2 + LPS_FLOOR)


def compute_ipd(spec, pairs=DEFAULT_PAIRS) -> np.ndarray:
    """``angle(Y_m1) - angle(Y_m2)`` per pair, wrapped; shape ``(P, T, F)``."""
    b = _bins(spec)
    pairs = _check_pairs(pairs, b.shape[0])
    phase = np.angle(b)
    return np.stack([wrap_phase(phase[a] - phase[c]) for a, c in pairs])


def pair_spacing(geometry: ArrayGeometry, pairs) -> np.ndarray:
    """Signed spacing ``(p_m1 - p_m2) . axis`` of each pair, in meters."""
    pairs = _check_pairs(pairs, geometry.num_mics)
    pos = geometry.mic_positions @ geometry.axis
    return np.array([pos[a] - pos[b] for a, b in pairs])


def compute_tpd(theta_deg: float, geometry: ArrayGeometry, pairs=DEFAULT_PAIRS, f_hz=None,
                c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Expected phase difference ``(P, F)`` of a far-field source at ``theta``.

    A plane wave from ``theta`` reaches mic ``m`` with phase
    ``2 pi f x_m cos(theta) / c`` relative to the origin, matching the sign of
    :func:`compute_ipd` for STFT bins.
    """
    theta = float(theta_deg)
    if not 0.0 <= theta <= 180.0:
        raise ParameterError(f"DOA {theta} outside [0, 180] degrees")
    try:
        spacing = pair_spacing(geometry, pairs)
    except IndexError as exc:
        raise ParameterError(str(exc)) from exc
    f = np.atleast_1d(np.asarray(f_hz, dtype=float))
    return 2.0 * np.pi * spacing[:, None] * f[None, :] * np.cos(np.deg2rad(theta)) / c


def compute_df(spec, theta_deg: float, geometry: ArrayGeometry, pairs=DEFAULT_PAIRS, f_hz=None) -> np.ndarray:
    """Directional feature ``sum_p cos(TPD_p - IPD_p)``, shape ``(T, F)``."""
    if f_hz is None:
        if not isinstance(spec, MultiChannelSpectrogram):
            raise ParameterError("bin frequencies are needed when passing raw bins")
        f_hz = spec.config.bin_frequencies(spec.sample_rate)
    ipd = compute_ipd(spec, pairs)
    tpd = compute_tpd(theta_deg, geometry, pairs, f_hz)
    if tpd.shape[1] != ipd.shape[2]:
        raise DimensionError(f"{tpd.shape[1]} frequencies for {ipd.shape[2]} bins")
    return np.sum(np.cos(tpd[:, None, :] - ipd), axis=0)


@dataclass(frozen=True)
class FeaturePack:
    lps: np.ndarray
    ipd: np.ndarray
    df: np.ndarray | None
    pair_list: tuple


def compute_features(spec: MultiChannelSpectrogram, geometry: ArrayGeometry | None = None,
                     theta_deg: float | None = None, pairs=DEFAULT_PAIRS, channel: int = 0) -> FeaturePack:
    """LPS at ``channel``, IPDs, and DF when a geometry and DOA are given."""
    pairs = _check_pairs(pairs, spec.bins.shape[0])
    df = None
    if geometry is not None and theta_deg is not None:
        df = compute_df(spec, theta_deg, geometry, pairs)
    return FeaturePack(compute_lps(spec, channel), compute_ipd(spec, pairs), df, pairs)
