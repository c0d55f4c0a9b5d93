"""Transcript datasets and audio augmentation.

Source transcripts carry a placeholder keyword ("Hey Indy, what's the
weather?"). Positives splice in the target keyword, negatives drop the
placeholder, and confusable examples splice in a generated confusable.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import random
import re
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio import AudioClip, read_wav
from .grapheme import Confusable

DEFAULT_PLACEHOLDER = "Hey Indy"
NOISE_SOURCES = ("white", "pink", "recorded-file")


class DatasetError(ValueError):
    pass


class MalformedSourceError(DatasetError):
    pass


class Label(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    CONFUSABLE = "confusable"

    @property
    def target(self) -> int:
        """Binary training target: only positives are 1."""
        return 1 if self is Label.POSITIVE else 0


@dataclass(frozen=True)
class TranscriptExample:
    id: str
    transcript: str
    label: Label | None = None
    keyword_text: str | None = None
    source_ref: str | None = None

    def to_json(self) -> str:
        d = asdict(self)
        d["label"] = self.label.value if self.label else None
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TranscriptExample":
        d = json.loads(line)
        return cls(d["id"], d["transcript"], Label(d["label"]) if d.get("label") else None, d.get("keyword_text"), d.get("source_ref"))


def write_jsonl(examples: Iterable[TranscriptExample], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ex in examples:
            f.write(ex.to_json() + "\n")
            n += 1
    return n


def read_jsonl(path) -> list[TranscriptExample]:
    with open(path, encoding="utf-8") as f:
        return [TranscriptExample.from_json(line) for line in f if line.strip()]


def config_hash(config) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def write_manifest(path, split: str, count: int, config, seed: int) -> None:
    manifest = {"split": split, "count": count, "config_hash": config_hash(config), "seed": seed}
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


_NON_TEXT = re.compile(r"[^a-z0-9' ]+")
_STRAY_APOSTROPHE = re.compile(r"(?<![a-z])'|'(?![a-z])")


def normalize(text: str) -> str:
    """Lowercase, drop punctuation (keeping in-word apostrophes), collapse spaces."""
    text = _NON_TEXT.sub(" ", text.lower())
    text = _STRAY_APOSTROPHE.sub(" ", text)
    return " ".join(text.split())


def _split_placeholder(source: TranscriptExample, placeholder: str) -> tuple[list[str], list[str]]:
    words = normalize(source.transcript).split()
    key = normalize(placeholder).split()
    hits = [i for i in range(len(words) - len(key) + 1) if words[i : i + len(key)] == key]
    if len(hits) != 1:
        what = "missing" if not hits else "repeated"
        raise MalformedSourceError(f"{source.id}: placeholder {placeholder!r} is {what}")
    i = hits[0]
    return words[:i], words[i + len(key) :]


def _splice(source: TranscriptExample, text: str, placeholder: str) -> str:
    before, after = _split_placeholder(source, placeholder)
    return " ".join(before + normalize(text).split() + after)


def make_positive(source: TranscriptExample, keyword: str, placeholder: str = DEFAULT_PLACEHOLDER) -> TranscriptExample:
    keyword = normalize(keyword)
    return TranscriptExample(
        f"{source.id}-pos", _splice(source, keyword, placeholder), Label.POSITIVE, keyword, source.source_ref
    )


def make_negative(source: TranscriptExample, placeholder: str = DEFAULT_PLACEHOLDER) -> TranscriptExample:
    before, after = _split_placeholder(source, placeholder)
    query = " ".join(before + after)
    if not query:
        raise DatasetError(f"{source.id}: removing the placeholder leaves an empty transcript")
    return TranscriptExample(f"{source.id}-neg", query, Label.NEGATIVE, None, source.source_ref)


def make_confusable(
    source: TranscriptExample,
    confusable: Confusable | str,
    keyword: str | None = None,
    placeholder: str = DEFAULT_PLACEHOLDER,
) -> TranscriptExample:
    text = normalize(confusable.text if isinstance(confusable, Confusable) else confusable)
    if keyword is not None and text == normalize(keyword):
        raise DatasetError(f"confusable {text!r} is the keyword itself")
    tag = hashlib.sha1(text.encode()).hexdigest()[:8]
    return TranscriptExample(
        f"{source.id}-conf-{tag}", _splice(source, text, placeholder), Label.CONFUSABLE, text, source.source_ref
    )


@dataclass(frozen=True)
class MixSpec:
    confusable_ratio: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confusable_ratio <= 1.0:
            raise DatasetError("confusable_ratio must lie in [0, 1]")


def replacement_count(n: int, ratio: float) -> int:
    """round-half-up(ratio * n)."""
    return int(math.floor(ratio * n + 0.5))


def mix_negatives(
    negatives: Sequence[TranscriptExample], confusables: Sequence[TranscriptExample], spec: MixSpec
) -> list[TranscriptExample]:
    """Replace a seeded subset of ``negatives`` with confusable examples.

    Confusables are drawn with replacement, so a handful of them can fill a
    large negative set; each placed copy gets a slot-specific id.
    """
    k = replacement_count(len(negatives), spec.confusable_ratio)
    out = list(negatives)
    if k == 0:
        return out
    if not confusables:
        raise DatasetError("a nonzero confusable ratio needs at least one confusable example")
    rng = random.Random(spec.seed)
    slots = sorted(rng.sample(range(len(negatives)), k))
    for slot in slots:
        pick = confusables[rng.randrange(len(confusables))]
        out[slot] = replace(pick, id=f"{pick.id}-r{slot}")
    return out


@dataclass(frozen=True)
class AugmentSpec:
    variation_count: int = 25
    snr_range_db: tuple[float, float] = (5.0, 20.0)
    gain_range_db: tuple[float, float] = (-6.0, 6.0)
    noise_source: str = "white"
    noise_file: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.variation_count < 1:
            raise DatasetError("variation_count must be >= 1")
        for lo, hi in (self.snr_range_db, self.gain_range_db):
            if not lo <= hi:
                raise DatasetError("ranges must be nonempty (lo <= hi)")
        if self.noise_source not in NOISE_SOURCES:
            raise DatasetError(f"unknown noise source {self.noise_source!r}")
        if self.noise_source == "recorded-file" and not self.noise_file:
            raise DatasetError("recorded-file noise needs noise_file")


def _uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    # also covers the infinite-SNR sentinel (inf, inf)
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def variation_params(spec: AugmentSpec, salt: int = 0) -> list[tuple[float, float]]:
    """(gain_db, snr_db) for every variation; deterministic in (seed, salt)."""
    rng = np.random.default_rng([spec.seed, salt, 1])
    return [(_uniform(rng, *spec.gain_range_db), _uniform(rng, *spec.snr_range_db)) for _ in range(spec.variation_count)]


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spectrum), dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spectrum / np.sqrt(f), n)


def make_noise(n: int, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.noise_source == "white":
        return rng.standard_normal(n)
    if spec.noise_source == "pink":
        return pink_noise(n, rng)
    recorded = read_wav(spec.noise_file).samples
    if not len(recorded):
        raise DatasetError(f"{spec.noise_file} is empty")
    start = int(rng.integers(0, len(recorded)))
    return np.resize(np.roll(recorded, -start), n)


def mix_at_snr(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    if math.isinf(snr_db) and snr_db > 0:
        return signal.copy()
    p_signal = np.mean(signal**2)
    p_noise = np.mean(noise**2)
    if p_signal == 0 or p_noise == 0:
        return signal.copy()
    scale = math.sqrt(p_signal / (p_noise * 10 ** (snr_db / 10)))
    return signal + scale * noise


def augment_variations(clip: AudioClip, spec: AugmentSpec, salt: int = 0) -> list[AudioClip]:
    """Gain plus additive noise at seeded SNRs; rescaled only if the peak exceeds 1.

    ``salt`` decorrelates the draws of different clips sharing one spec.
    """
    if not len(clip):
        raise DatasetError("cannot augment an empty clip")
    rng = np.random.default_rng([spec.seed, salt, 2])
    out = []
    for gain_db, snr_db in variation_params(spec, salt):
        clean = clip.samples * 10 ** (gain_db / 20)
        mixed = mix_at_snr(clean, make_noise(len(clean), spec, rng), snr_db)
        peak = np.max(np.abs(mixed))
        if peak > 1.0:
            mixed = mixed / peak
        out.append(AudioClip(mixed, clip.sample_rate_hz))
    return out


QUERY_WORDS = (
    "play some music", "what's the weather", "set a timer", "turn off the lights", "call mom",
    "what time is it", "read my messages", "stop", "volume up", "tell me a joke", "good morning",
    "navigate home", "open the door", "how tall is the tower", "add milk to the list",
    "pause", "next song", "remind me tomorrow", "is it raining", "lock the car",
)


def make_sources(n: int, seed: int, placeholder: str = DEFAULT_PLACEHOLDER, prefix: str = "src") -> list[TranscriptExample]:
    """Synthetic source transcripts, each with its own voice seed as source_ref."""
    rng = random.Random(seed)
    sources = []
    for i in range(n):
        query = rng.choice(QUERY_WORDS)
        if rng.random() < 0.3:
            query += " " + rng.choice(("please", "now", "again", "today"))
        voice_seed = rng.randrange(2**31)
        sources.append(TranscriptExample(f"{prefix}{seed}-{i:06d}", f"{placeholder}, {query}?", None, None, f"voice:{voice_seed}"))
    return sources


def voice_seed_of(example: TranscriptExample) -> int:
    """Voice seed recorded in ``source_ref``, falling back to a hash of the id."""
    if example.source_ref and example.source_ref.startswith("voice:"):
        return int(example.source_ref.split(":", 1)[1])
    return int(hashlib.sha1(example.id.encode()).hexdigest()[:8], 16)
