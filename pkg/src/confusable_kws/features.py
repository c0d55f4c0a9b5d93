"""Log-mel filterbank features with frame stacking.

25 ms Hann windows every 10 ms, 512-point FFT power spectrum, 40 triangular
mel filters over 125-7500 Hz, natural log with a small floor, then three
consecutive frames concatenated into 120-dimensional vectors. No
pre-emphasis and no mean normalisation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import AudioClip

FEATURE_MAGIC = 0x4B575346  # "KWSF"
FEATURE_VERSION = 1


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    num_mel_channels: int = 40
    stack_frames: int = 3
    fft_size: int = 512
    sample_rate_hz: int = 16000
    log_floor: float = 1e-10
    low_hz: float = 125.0
    high_hz: float = 7500.0

    def __post_init__(self):
        if self.window_samples > self.fft_size:
            raise FeatureError("window longer than the FFT size")
        if self.stack_frames < 1 or self.num_mel_channels < 1:
            raise FeatureError("stack_frames and num_mel_channels must be >= 1")
        if not 0 <= self.low_hz < self.high_hz <= self.sample_rate_hz / 2:
            raise FeatureError("mel band edges must lie within [0, Nyquist]")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * self.sample_rate_hz / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate_hz / 1000))

    @property
    def dim(self) -> int:
        return self.num_mel_channels * self.stack_frames


DEFAULT_FEATURES = FeatureConfig()


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(config.low_hz), hz_to_mel(config.high_hz), config.num_mel_channels + 2))
    return edges[1:-1]


@lru_cache(maxsize=8)
def mel_filterbank(config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """[num_mel_channels x fft_size//2+1] triangular filters with unit peaks."""
    edges = mel_to_hz(np.linspace(hz_to_mel(config.low_hz), hz_to_mel(config.high_hz), config.num_mel_channels + 2))
    freqs = np.arange(config.fft_size // 2 + 1) * config.sample_rate_hz / config.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.flags.writeable = False
    return fb


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def num_frames(num_samples: int, config: FeatureConfig = DEFAULT_FEATURES) -> int:
    if num_samples < config.window_samples:
        return 0
    return (num_samples - config.window_samples) // config.hop_samples + 1


def log_mel(clip: AudioClip, config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    if clip.sample_rate_hz != config.sample_rate_hz:
        raise FeatureError(f"clip is {clip.sample_rate_hz} Hz, features expect {config.sample_rate_hz} Hz")
    x = clip.samples
    t = num_frames(len(x), config)
    if t == 0:
        raise FeatureError("clip is shorter than one analysis window")
    win, hop = config.window_samples, config.hop_samples
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:t] * _hann(win)
    power = np.abs(np.fft.rfft(frames, config.fft_size)) ** 2
    return np.log(power @ mel_filterbank(config).T + config.log_floor)


def stack(features: np.ndarray, stack_frames: int = 3) -> np.ndarray:
    """Row t of the result is rows t..t+stack_frames-1 of the input, concatenated."""
    features = np.asarray(features)
    t = features.shape[0]
    if stack_frames < 1:
        raise FeatureError("stack_frames must be >= 1")
    if t < stack_frames:
        raise FeatureError(f"{t} frames cannot be stacked {stack_frames} at a time")
    out_len = t - stack_frames + 1
    return np.concatenate([features[i : i + out_len] for i in range(stack_frames)], axis=1)


def extract(clip: AudioClip, config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """Clip to stacked feature sequence [T x dim]."""
    return stack(log_mel(clip, config), config.stack_frames)


def silence_frame(config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    return np.full(config.dim, np.log(config.log_floor))


def write_features(path, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    t, d = features.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<4i", FEATURE_MAGIC, FEATURE_VERSION, t, d))
        f.write(features.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, version, t, d = struct.unpack("<4i", f.read(16))
        if magic != FEATURE_MAGIC:
            raise FeatureError(f"{path}: not a feature file")
        if version != FEATURE_VERSION:
            raise FeatureError(f"{path}: unsupported feature file version {version}")
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != t * d:
        raise FeatureError(f"{path}: truncated feature file")
    return data.reshape(t, d).astype(np.float64)
