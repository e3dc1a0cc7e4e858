"""Synthetic speech-like dry sources.

Voiced segments are harmonic series on a drifting pitch contour, shaped by
three formant resonances and a syllable-rate envelope; unvoiced segments are
high-passed noise bursts. Enough spectro-temporal sparsity for mask-based
beamforming experiments without a speech corpus.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import butter, lfilter

from .signal_core import DEFAULT_SAMPLE_RATE, TimeSignal


def _formant_gain(freqs, formants, bandwidths):
    g = np.zeros_like(freqs)
    for fc, bw in zip(formants, bandwidths):
        g += 1.0 / (1.0 + ((freqs - fc) / bw) ** 2)
    return g


def synthetic_speech(seed: int, duration: float = 3.0, sample_rate: int = DEFAULT_SAMPLE_RATE) -> TimeSignal:
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0_base = rng.uniform(90.0, 240.0)
    f0 = f0_base * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * t + rng.uniform(0, 2 * np.pi)))
    f0 *= 1.0 + 0.02 * np.sin(2 * np.pi * 5.0 * t)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    # syllables: alternating voiced / unvoiced / silent segments
    seg_bounds = [0]
    while seg_bounds[-1] < n:
        seg_bounds.append(seg_bounds[-1] + int(rng.uniform(0.08, 0.3) * sample_rate))
    seg_bounds[-1] = n
    voiced_env = np.zeros(n)
    unvoiced_env = np.zeros(n)
    formant_track = np.zeros((n, 3))
    for a, b in zip(seg_bounds[:-1], seg_bounds[1:]):
        kind = rng.choice(3, p=[0.6, 0.15, 0.25])
        ramp = np.sin(np.linspace(0, np.pi, b - a)) ** 0.5
        if kind == 0:
            voiced_env[a:b] = ramp * rng.uniform(0.5, 1.0)
        elif kind == 1:
            unvoiced_env[a:b] = ramp * rng.uniform(0.1, 0.3)
        formant_track[a:b] = [rng.uniform(300, 900), rng.uniform(900, 2300), rng.uniform(2300, 3300)]

    voiced = np.zeros(n)
    n_harm = int(min(40, 7500 // f0_base))
    # formants are piecewise constant, so evaluate gains per segment
    for a, b in zip(seg_bounds[:-1], seg_bounds[1:]):
        if not voiced_env[a:b].any():
            continue
        fmt = formant_track[a]
        for k in range(1, n_harm + 1):
            fk = k * f0[a:b]
            gain = _formant_gain(fk, fmt, (80.0, 120.0, 200.0)) / k ** 0.5
            voiced[a:b] += gain * np.sin(k * phase[a:b])
    voiced *= voiced_env

    bb, ab = butter(4, 2500 / (sample_rate / 2), btype="high")
    unvoiced = lfilter(bb, ab, rng.standard_normal(n)) * unvoiced_env

    x = voiced + 3.0 * unvoiced
    x /= np.max(np.abs(x)) + 1e-12
    return TimeSignal(0.5 * x, sample_rate)
