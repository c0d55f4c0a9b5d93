import numpy as np
import pytest

from confusable_kws.audio import AudioClip, read_wav, write_wav
from confusable_kws.features import log_mel
from confusable_kws.grapheme import sample_unique
from confusable_kws.synth import SynthError, SynthVoice, expected_length, grapheme_frequencies, random_voice, synth


def test_random_voice_deterministic_and_in_range():
    assert random_voice(3) == random_voice(3)
    voices = [random_voice(s) for s in range(100)]
    assert len(set(voices)) >= 99
    for v in voices:
        assert 60 <= v.base_pitch_hz <= 400
        assert 0.7 <= v.speaking_rate <= 1.4


def test_voice_validation():
    with pytest.raises(SynthError):
        SynthVoice(40.0, 1.0, 0)
    with pytest.raises(SynthError):
        SynthVoice(100.0, 2.0, 0)


def test_synth_rejects_empty_and_unknown():
    v = random_voice(0)
    with pytest.raises(SynthError):
        synth("", v)
    with pytest.raises(SynthError):
        synth("hey 9oogle", v)


def test_synth_deterministic_and_normalised():
    v = random_voice(1)
    a, b = synth("hey google", v, 4), synth("hey google", v, 4)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert np.max(np.abs(a.samples)) <= 1.0
    assert a.sample_rate_hz == 16000


def test_duration_linear_in_grapheme_count():
    v = SynthVoice(120.0, 1.0, 0)
    seg, fade = 960, 160
    for n in range(1, 12):
        clip = synth("a" * n, v)
        assert len(clip) == expected_length("a" * n, v)
        assert abs(len(clip) - n * (seg - fade)) <= fade


def test_separator_is_silent_and_apostrophe_skipped():
    v = SynthVoice(120.0, 1.0, 0)
    assert len(synth("whats", v)) == len(synth("what's", v))
    clip = synth("a a", v)
    mid = clip.samples[960 : 960 + 640 - 160]
    assert np.max(np.abs(mid[200:-200])) == 0.0


def test_class_bands_are_separate():
    vowel = max(grapheme_frequencies(c, 0)[0] for c in "aeiou")
    consonant = min(grapheme_frequencies(c, 0)[0] for c in "bcdfghjklmnpqrstvwxyz")
    assert vowel < consonant


def frame_distance(a, b):
    n = min(len(a), len(b))
    return float(np.mean(np.linalg.norm(a[:n] - b[:n], axis=1)))


def test_acoustic_proximity_monotone_in_edit_distance():
    means = []
    for d in (1, 2, 3):
        confs = sample_unique("hey google", d, 100, seed=11)
        dists = []
        for s in range(5):
            v = random_voice(s)
            k = log_mel(synth("hey google", v))
            dists += [frame_distance(k, log_mel(synth(c.text, v))) for c in confs]
        means.append(np.mean(dists))
    assert means[0] < means[1] < means[2]


def test_wav_roundtrip(tmp_path):
    clip = synth("hey", random_voice(2))
    write_wav(tmp_path / "x.wav", clip)
    back = read_wav(tmp_path / "x.wav")
    assert back.sample_rate_hz == 16000
    assert np.allclose(back.samples, clip.samples, atol=1 / 32767 + 1e-9)
    assert isinstance(back, AudioClip)
