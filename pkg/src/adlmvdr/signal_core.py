"""Time signals, STFT/iSTFT and WAV I/O.

Spectrogram layout throughout the package is ``(channel, frame, bin)``.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ConfigurationError, DimensionError, FormatError, ParameterError

DEFAULT_SAMPLE_RATE = 16000
COLA_FLOOR = 1e-8


@dataclass(frozen=True)
class TimeSignal:
    """Multichannel real signal, ``samples`` shaped ``(M, n)``."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise DimensionError(f"expected (M, n) samples, got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    def channel(self, m: int) -> np.ndarray:
        return self.samples[m]

    def select(self, channels) -> "TimeSignal":
        return TimeSignal(self.samples[list(channels)], self.sample_rate)


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    window_length: int = 512
    hop_length: int = 256
    window_kind: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop_length <= self.window_length <= self.fft_size):
            raise ConfigurationError(
                "need 0 < hop_length <= window_length <= fft_size, got "
                f"{self.hop_length}/{self.window_length}/{self.fft_size}"
            )
        if self.window_kind not in _WINDOWS:
            raise ConfigurationError(f"unknown window kind {self.window_kind!r}")
        env = cola_envelope(self)
        if env.min() < COLA_FLOOR:
            raise ConfigurationError("window/hop combination leaves gaps in the overlap-add envelope")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        return _WINDOWS[self.window_kind](self.window_length)

    def bin_frequencies(self, sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
        return np.arange(self.num_bins) * sample_rate / self.fft_size


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _sqrt_hann(n: int) -> np.ndarray:
    return np.sqrt(_periodic_hann(n))


_WINDOWS = {
    "hann": _periodic_hann,
    "sqrt-hann": _sqrt_hann,
    "rect": np.ones,
}


def cola_envelope(cfg: StftConfig) -> np.ndarray:
    """Steady-state sum of squared shifted windows over one hop period."""
    w2 = cfg.window() ** 2
    env = np.zeros(cfg.hop_length)
    for start in range(0, cfg.window_length, cfg.hop_length):
        seg = w2[start:start + cfg.hop_length]
        env[: len(seg)] += seg
    return env


@dataclass(frozen=True)
class MultiChannelSpectrogram:
    """One-sided complex spectrogram, ``bins`` shaped ``(M, T, F)``."""

    bins: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)
    sample_rate: int = DEFAULT_SAMPLE_RATE
    num_samples: int | None = None

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim == 2:
            bins = bins[None]
        if bins.ndim != 3:
            raise DimensionError(f"expected (M, T, F) bins, got shape {bins.shape}")
        if bins.shape[2] != self.config.num_bins:
            raise DimensionError(f"bin count {bins.shape[2]} != fft_size/2+1 = {self.config.num_bins}")
        object.__setattr__(self, "bins", bins)

    @property
    def num_channels(self) -> int:
        return self.bins.shape[0]

    @property
    def num_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def num_bins(self) -> int:
        return self.bins.shape[2]

    def with_bins(self, bins: np.ndarray) -> "MultiChannelSpectrogram":
        return MultiChannelSpectrogram(bins, self.config, self.sample_rate, self.num_samples)

    def select(self, channels) -> "MultiChannelSpectrogram":
        return self.with_bins(self.bins[list(channels)])


def _frame_count(n: int, cfg: StftConfig) -> int:
    pad = cfg.window_length // 2
    return int(np.ceil(max(n + 2 * pad - cfg.window_length, 0) / cfg.hop_length)) + 1


def stft(signal: TimeSignal, cfg: StftConfig | None = None) -> MultiChannelSpectrogram:
    """Windowed STFT with half-window zero padding on both ends.

    Frame ``t`` covers original samples ``[t*hop - W/2, t*hop + W/2)``.
    """
    cfg = cfg or StftConfig()
    if not isinstance(signal, TimeSignal):
        signal = TimeSignal(signal)
    x = signal.samples
    n = x.shape[1]
    if n == 0:
        raise ParameterError("cannot transform an empty signal")
    pad = cfg.window_length // 2
    T = _frame_count(n, cfg)
    total = (T - 1) * cfg.hop_length + cfg.window_length
    padded = np.zeros((x.shape[0], total))
    padded[:, pad:pad + n] = x
    idx = np.arange(cfg.window_length)[None, :] + cfg.hop_length * np.arange(T)[:, None]
    frames = padded[:, idx] * cfg.window()
    bins = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    return MultiChannelSpectrogram(bins, cfg, signal.sample_rate, n)


def istft(spec: MultiChannelSpectrogram, cfg: StftConfig | None = None, length: int | None = None) -> TimeSignal:
    """Weighted overlap-add inverse of :func:`stft`.

    Divides by the squared-window envelope (floored at ``COLA_FLOOR``).
    """
    if cfg is not None and cfg != spec.config:
        raise DimensionError("spectrogram was produced with a different STFT configuration")
    cfg = spec.config
    if spec.num_bins != cfg.num_bins:
        raise DimensionError("bin count does not match the configuration")
    win = cfg.window()
    T = spec.num_frames
    frames = np.fft.irfft(spec.bins, n=cfg.fft_size, axis=-1)[..., : cfg.window_length] * win
    total = (T - 1) * cfg.hop_length + cfg.window_length
    out = np.zeros((spec.num_channels, total))
    env = np.zeros(total)
    w2 = win ** 2
    for t in range(T):
        s = t * cfg.hop_length
        out[:, s:s + cfg.window_length] += frames[:, t]
        env[s:s + cfg.window_length] += w2
    out /= np.maximum(env, COLA_FLOOR)
    pad = cfg.window_length // 2
    if length is None:
        length = spec.num_samples if spec.num_samples is not None else total - 2 * pad
    out = out[:, pad:pad + length]
    if out.shape[1] < length:
        out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    return TimeSignal(out, spec.sample_rate)


def istft_adjoint(grad: np.ndarray, cfg: StftConfig, num_frames: int) -> np.ndarray:
    """Back-propagate ``dL/dx`` through :func:`istft` to the bins.

    ``grad`` is ``(n,)`` or ``(M, n)``; the result holds
    ``dL/dRe X + j dL/dIm X`` per bin, shaped ``(M, T, F)``.
    """
    g = np.atleast_2d(np.asarray(grad, dtype=np.float64))
    win = cfg.window()
    W, hop, N = cfg.window_length, cfg.hop_length, cfg.fft_size
    total = (num_frames - 1) * hop + W
    pad = W // 2
    env = np.zeros(total)
    for t in range(num_frames):
        env[t * hop:t * hop + W] += win ** 2
    full = np.zeros((g.shape[0], total))
    n = min(g.shape[1], total - pad)
    full[:, pad:pad + n] = g[:, :n]
    full /= np.maximum(env, COLA_FLOOR)
    idx = np.arange(W)[None, :] + hop * np.arange(num_frames)[:, None]
    frames = full[:, idx] * win
    G = np.fft.rfft(frames, n=N, axis=-1) * (2.0 / N)
    G[..., 0] *= 0.5
    if N % 2 == 0:
        G[..., -1] *= 0.5
    return G


# ---------------------------------------------------------------- WAV I/O

_ENCODINGS = {"float32": np.float32, "float64": np.float64, "pcm16": np.int16}


def write_wav(signal: TimeSignal, path, encoding: str = "float32") -> None:
    if encoding not in _ENCODINGS:
        raise FormatError(f"unsupported encoding {encoding!r}")
    data = signal.samples.T
    if encoding == "pcm16":
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = data.astype(_ENCODINGS[encoding])
    if data.shape[1] == 1:
        data = data[:, 0]
    try:
        wavfile.write(str(path), signal.sample_rate, np.ascontiguousarray(data))
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def _expected_data_bytes(path: Path) -> int | None:
    """Declared size of the ``data`` chunk, or None when absent."""
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] not in (b"RIFF", b"RIFX") or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        if cid == b"data":
            if pos + 8 + size > len(raw):
                raise FormatError(f"{path}: truncated data chunk ({len(raw) - pos - 8} of {size} bytes)")
            return size
        pos += 8 + size + (size & 1)
    raise FormatError(f"{path}: no data chunk")


def read_wav(path) -> TimeSignal:
    """Read 16-bit PCM or float WAV; PCM is scaled to [-1, 1)."""
    path = Path(path)
    try:
        _expected_data_bytes(path)
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            rate, data = wavfile.read(str(path))
    except FormatError:
        raise
    except (ValueError, wavfile.WavFileWarning, OSError, struct.error, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample type {data.dtype}")
    samples = samples[:, None] if samples.ndim == 1 else samples
    return TimeSignal(samples.T, rate)


# ------------------------------------------------------- binary spectrogram

def write_spectrogram(spec: MultiChannelSpectrogram, path) -> None:
    """Little-endian dump: uint32 M, T, F then interleaved float64 (re, im)."""
    M, T, F = spec.bins.shape
    body = np.empty((M, T, F, 2), dtype="<f8")
    body[..., 0] = spec.bins.real
    body[..., 1] = spec.bins.imag
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3I", M, T, F))
        fh.write(body.tobytes())


def read_spectrogram(path, config: StftConfig | None = None, sample_rate: int = DEFAULT_SAMPLE_RATE) -> MultiChannelSpectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: header too short")
    M, T, F = struct.unpack("<3I", raw[:12])
    body = np.frombuffer(raw[12:], dtype="<f8")
    if body.size != M * T * F * 2:
        raise FormatError(f"{path}: body holds {body.size} floats, header implies {M * T * F * 2}")
    body = body.reshape(M, T, F, 2)
    cfg = config or StftConfig(fft_size=2 * (F - 1), window_length=2 * (F - 1), hop_length=(F - 1))
    return MultiChannelSpectrogram(body[..., 0] + 1j * body[..., 1], cfg, sample_rate)
