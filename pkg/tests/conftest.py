import numpy as np
import pytest

from adlmvdr.corpus import synthetic_speech
from adlmvdr.room import ArrayGeometry, random_scene, synthesize_mixture
from adlmvdr.signal_core import stft


@pytest.fixture(scope="session")
def small_scene():
    """Seeded 3-mic, 2-speaker, one-second scene with its spectrograms."""
    scene, geo = random_scene(11, geometry=ArrayGeometry.linear(3, spacing=0.05), num_sources=2)
    mix = synthesize_mixture(scene, geo, [synthetic_speech(21, 1.0), synthetic_speech(22, 1.0)])
    return {"scene": scene, "geometry": geo, "mix": mix, "Y": stft(mix.mixture), "X": stft(mix.target)}


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the terminal summary prints them all."""

    def record(number: int, text: str, ok: bool, detail: str = "") -> bool:
        status = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append((number, f"[{status}] criterion {number}: {text}" + (f" ({detail})" if detail else "")))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
