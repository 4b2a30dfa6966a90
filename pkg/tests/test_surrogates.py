import itertools
import json
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from audioadv.audio import AudioClip
from audioadv.errors import AudioTooShort, ModelError, UnsupportedSampleRate, UntokenizableTarget
from audioadv.surrogates.base import adversarial_loss, loss_gradient, matches_target, transcribe
from audioadv.surrogates.conformance import check_conformance, finite_difference_error
from audioadv.surrogates.ensemble import SurrogateEnsemble, validate_on_all
from audioadv.surrogates.mock import ThresholdMock, always_accept, always_reject
from audioadv.surrogates.registry import SurrogateRegistry, load_from_manifest


def window_signal(mean, n=1000):
    return np.full(n, mean) * np.where(np.arange(n) % 2, 1, -1)


def test_mock_transcribe_rule():
    m = ThresholdMock("m", "play music", 0.3)
    assert transcribe(m, window_signal(0.35)) == "play music"
    assert transcribe(m, window_signal(0.1)) == ""


def test_mock_loss_examples():
    m = ThresholdMock("m", "play music", 0.3)
    assert adversarial_loss(m, window_signal(0.3, n=2), "play music") == 0.0  # mean is exactly 0.3
    assert adversarial_loss(m, window_signal(0.1), "play music") == pytest.approx(0.04)
    assert not np.any(loss_gradient(m, window_signal(0.9), "play music"))


def test_mock_window_only_counts_inside():
    m = ThresholdMock("m", "t", 0.2, start=100, end=200)
    x = np.zeros(300)
    x[100:200] = 0.25
    assert transcribe(m, x) == "t"
    x[100:200] = 0.0
    x[:100] = 1.0
    assert transcribe(m, x) == ""
    assert np.all(loss_gradient(m, x, "t")[:100] == 0)


def test_mock_gradient_matches_finite_differences(rng):
    m = ThresholdMock("m", "t", 0.6, start=10, end=90)
    x = rng.uniform(-0.5, 0.5, 100)
    x[np.abs(x) < 1e-3] = 0.01  # keep clear of the |x| kink
    assert finite_difference_error(m, x, "t", np.arange(100), step=1e-7) < 1e-6


def test_model_checks_clip_rate_and_length():
    m = ThresholdMock("m", "t", 0.0, start=0, end=50)
    with pytest.raises(UnsupportedSampleRate):
        transcribe(m, AudioClip(np.ones(100), 8000))
    with pytest.raises(AudioTooShort):
        transcribe(m, np.ones(10))
    with pytest.raises(UntokenizableTarget):
        adversarial_loss(m, np.ones(100), "play müsic!")


def test_validate_on_all():
    x = np.ones(10)
    accept = [always_accept("a", "play music"), always_accept("b", "Play  Music")]
    assert validate_on_all(accept, x, "play music")
    assert not validate_on_all(accept + [always_reject("c")], x, "play music")
    assert matches_target("Play Music", "play music")
    assert not matches_target("play music.", "play music")


def test_ensemble_ids_unique():
    with pytest.raises(ValueError):
        SurrogateEnsemble([always_reject("a"), always_reject("a")])
    with pytest.raises(ValueError):
        SurrogateEnsemble([])


def test_shuffle_single_member_and_reproducible():
    one = SurrogateEnsemble([always_reject("a")], rng_seed=3)
    assert one.shuffle().ids == ["a"]
    members = [always_reject(c) for c in "abcde"]
    e1, e2 = SurrogateEnsemble(members, 7), SurrogateEnsemble(members, 7)
    seq1 = [tuple(e1.shuffle().ids) for _ in range(20)]
    seq2 = [tuple(e2.shuffle().ids) for _ in range(20)]
    assert seq1 == seq2
    assert all(sorted(s) == list("abcde") for s in seq1)


def test_shuffle_is_uniform():
    e = SurrogateEnsemble([always_reject(c) for c in "abc"], rng_seed=11)
    counts = Counter(tuple(e.shuffle().ids) for _ in range(10_000))
    perms = list(itertools.permutations("abc"))
    freq = np.array([counts[p] for p in perms]) / 10_000
    assert np.all(np.abs(freq - 1 / 6) <= 0.02)
    assert chisquare([counts[p] for p in perms]).pvalue > 1e-3


def test_transcribe_invariant_under_shuffle(rng):
    members = [ThresholdMock(c, "t", th) for c, th in zip("abc", (0.1, 0.2, 0.3))]
    e = SurrogateEnsemble(members, 5)
    x = rng.uniform(-0.5, 0.5, 200)
    before = {m.id: transcribe(m, x) for m in e}
    e.shuffle()
    assert {m.id: transcribe(m, x) for m in e} == before


def test_registry_builtins_bind_target():
    reg = SurrogateRegistry("/nonexistent")
    m = reg.load("mock-accept", "open the door")
    assert transcribe(m, np.zeros(10)) == "open the door"
    assert transcribe(reg.load("mock-reject", "open the door"), np.ones(10)) == ""
    with pytest.raises(ModelError):
        reg.load("nope")


def test_registry_manifest_validation(tmp_path):
    base = {"id": "w", "adapter": "threshold_mock", "category": "MOCK", "decoder_kind": "THRESHOLD_MOCK",
            "sample_rate": 16000, "params": {"threshold": 0.2, "start": 0, "end": 100}}
    m = load_from_manifest(base, tmp_path, "send a text")
    assert m.text == "send a text" and m.end == 100
    with pytest.raises(ModelError):
        load_from_manifest({**base, "category": "CNN_BASED"}, tmp_path, "t")
    with pytest.raises(ModelError):
        load_from_manifest({k: v for k, v in base.items() if k != "sample_rate"}, tmp_path, "t")
    with pytest.raises(ModelError):
        load_from_manifest({**base, "adapter": "missing"}, tmp_path, "t")
    (tmp_path / "w.json").write_text(json.dumps(base))
    assert SurrogateRegistry(tmp_path).load("w", "t").threshold == 0.2


def test_mock_passes_conformance():
    assert check_conformance(ThresholdMock("m", "t", 0.9, start=0, end=4000), "t") == []


# --- toy CTC ----------------------------------------------------------------


def test_toy_models_memorize_training_utterances(toy_models, corpus):
    for m in toy_models:
        for e in corpus["commands"]:
            assert transcribe(m, e["clip"]) == e["text"], (m.id, e["text"])


def test_toy_loss_lower_on_matching_audio(toy_models, corpus, rng):
    clip = next(e["clip"] for e in corpus["commands"] if e["text"] == "play music")
    noise = rng.uniform(-0.5, 0.5, len(clip))
    for m in toy_models:
        good = adversarial_loss(m, clip, "play music")
        assert 0 <= good < adversarial_loss(m, noise, "play music")


def test_toy_models_differ_by_seed(toy_models):
    assert toy_models[0].parameter_digest() != toy_models[1].parameter_digest()


def test_toy_models_pass_conformance(toy_models_dir):
    out, models = toy_models_dir
    reg = SurrogateRegistry(out)
    assert set(models) <= set(reg.ids())
    for id, model in models.items():
        loaded = reg.load(id)
        assert loaded.parameter_digest() == model.parameter_digest()
        assert check_conformance(loaded, "play music", length=8000) == []
