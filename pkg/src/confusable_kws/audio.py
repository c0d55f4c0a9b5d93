"""Mono PCM clips and 16-bit WAV I/O."""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 1:
            raise ValueError("AudioClip holds mono samples only")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.round(np.clip(samples, -1.0, 1.0) * 32767.0).astype("<i2")


def write_wav(path, clip: AudioClip) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate_hz)
        w.writeframes(to_pcm16(clip.samples).tobytes())


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        rate = w.getframerate()
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return AudioClip(data.astype(np.float64) / 32767.0, rate)
