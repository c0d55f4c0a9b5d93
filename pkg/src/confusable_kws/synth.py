"""Deterministic stand-in for a TTS engine.

Each grapheme becomes a short two-tone segment. Vowels and consonants live in
separate frequency bands and, within a band, alphabetic neighbours get
neighbouring frequencies, so a class-preserving substitution changes the
sound only slightly. Word separators render as silence and apostrophes are
silent.
"""

from __future__ import annotations

import string
import zlib
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, AudioClip

VOWELS = "aeiou"
CONSONANTS = "".join(c for c in string.ascii_lowercase if c not in VOWELS)
SILENT = "'"

VOWEL_BAND_HZ = (300.0, 1000.0)
CONSONANT_BAND_HZ = (1500.0, 5000.0)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthVoice:
    base_pitch_hz: float
    speaking_rate: float
    timbre_seed: int

    def __post_init__(self):
        if not 60.0 <= self.base_pitch_hz <= 400.0:
            raise SynthError("base_pitch_hz must lie in [60, 400]")
        if not 0.7 <= self.speaking_rate <= 1.4:
            raise SynthError("speaking_rate must lie in [0.7, 1.4]")


@dataclass(frozen=True)
class SynthSettings:
    segment_ms: float = 60.0
    crossfade_ms: float = 10.0
    separator_ms: float = 40.0
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE


class Synthesizer(Protocol):
    """Anything that turns a transcript and a voice into audio."""

    def __call__(self, transcript: str, voice: SynthVoice, seed: int) -> AudioClip: ...


def random_voice(seed: int) -> SynthVoice:
    rng = np.random.default_rng([seed, 0x5EED])
    return SynthVoice(
        base_pitch_hz=float(rng.uniform(80.0, 300.0)),
        speaking_rate=float(rng.uniform(0.8, 1.25)),
        timbre_seed=int(rng.integers(0, 2**31 - 1)),
    )


def _band(letters: str, lo: float, hi: float) -> dict[str, float]:
    return dict(zip(letters, np.geomspace(lo, hi, len(letters))))


_BASE_FREQ = {**_band(VOWELS, *VOWEL_BAND_HZ), **_band(CONSONANTS, *CONSONANT_BAND_HZ)}


def grapheme_frequencies(grapheme: str, timbre_seed: int) -> tuple[float, float]:
    """The two component frequencies for ``grapheme`` under a given timbre."""
    if grapheme not in _BASE_FREQ:
        raise SynthError(f"cannot synthesise {grapheme!r}")
    rng = np.random.default_rng([timbre_seed, 0x7133])
    # per-voice formant shifts, shared by every grapheme of a class
    vowel_shift, consonant_shift, second = rng.uniform(0.96, 1.04), rng.uniform(0.96, 1.04), rng.uniform(1.35, 1.5)
    f1 = _BASE_FREQ[grapheme] * (vowel_shift if grapheme in VOWELS else consonant_shift)
    return f1, min(f1 * second, 7000.0)


def _crossfade_concat(segments: list[np.ndarray], fade: int) -> np.ndarray:
    if not segments:
        return np.zeros(0)
    total = sum(len(s) for s in segments) - fade * (len(segments) - 1)
    out = np.zeros(total)
    ramp = np.sin(0.5 * np.pi * (np.arange(fade) + 0.5) / fade) ** 2 if fade else np.zeros(0)
    pos = 0
    for k, seg in enumerate(segments):
        seg = seg.copy()
        if fade and k > 0:
            seg[:fade] *= ramp
        if fade and k < len(segments) - 1:
            seg[-fade:] *= ramp[::-1]
        out[pos : pos + len(seg)] += seg
        pos += len(seg) - fade
    return out


def synth(transcript: str, voice: SynthVoice, seed: int = 0, settings: SynthSettings = SynthSettings()) -> AudioClip:
    """Render ``transcript`` deterministically; ``seed`` only sets component phases."""
    text = transcript.lower()
    if not text.strip(" " + SILENT):
        raise SynthError("empty transcript")
    sr = settings.sample_rate_hz
    seg_n = int(round(settings.segment_ms / voice.speaking_rate * sr / 1000))
    sep_n = int(round(settings.separator_ms * sr / 1000))
    fade = int(round(settings.crossfade_ms * sr / 1000))
    rng = np.random.default_rng([seed, zlib.crc32(text.encode())])
    t = np.arange(seg_n) / sr
    pitch = 0.15 * np.sin(2 * np.pi * voice.base_pitch_hz * t)
    segments = []
    for c in text:
        if c == SILENT:
            continue
        if c == " ":
            segments.append(np.zeros(sep_n))
            continue
        f1, f2 = grapheme_frequencies(c, voice.timbre_seed)
        p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
        segments.append(np.sin(2 * np.pi * f1 * t + p1) + 0.5 * np.sin(2 * np.pi * f2 * t + p2) + pitch)
    audio = _crossfade_concat(segments, fade)
    peak = np.max(np.abs(audio))
    if peak > 0:
        audio = 0.9 * audio / peak
    return AudioClip(audio, sr)


def expected_length(transcript: str, voice: SynthVoice, settings: SynthSettings = SynthSettings()) -> int:
    sr = settings.sample_rate_hz
    seg_n = int(round(settings.segment_ms / voice.speaking_rate * sr / 1000))
    sep_n = int(round(settings.separator_ms * sr / 1000))
    fade = int(round(settings.crossfade_ms * sr / 1000))
    units = [c for c in transcript.lower() if c != SILENT]
    return sum(sep_n if c == " " else seg_n for c in units) - fade * (len(units) - 1)
