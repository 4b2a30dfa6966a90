"""Synthetic command corpus and carrier "songs".

Each character of a command is rendered as a short two-tone chirp (a DTMF-like
alphabet), so a small convolutional CTC model can genuinely learn to read the
commands back. Carriers are simple harmonic melodies over a sustained drone.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, AudioClip, normalize, read_wav, write_wav
from .seeding import rng_for

COMMANDS = (
    "call my wife",
    "make it warmer",
    "navigate to my home",
    "open the door",
    "open the website",
    "play music",
    "send a text",
    "take a picture",
    "turn off the light",
    "turn on airplane mode",
)

ALPHABET = "abcdefghijklmnopqrstuvwxyz "
LOW_TONES = (350.0, 480.0, 620.0, 780.0, 950.0, 1150.0)
HIGH_TONES = (1500.0, 1850.0, 2250.0, 2700.0, 3200.0)

CHAR_SECONDS = 0.040
GAP_SECONDS = 0.015
EDGE_SECONDS = 0.050
LABELS_FILE = "labels.json"


def slugify(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")


def char_tones(ch: str) -> tuple[float, float]:
    idx = ALPHABET.index(ch)
    return LOW_TONES[idx // len(HIGH_TONES)], HIGH_TONES[idx % len(HIGH_TONES)]


def _fade(n: int, sample_rate: int, seconds: float = 0.005) -> np.ndarray:
    k = min(n // 2, int(seconds * sample_rate))
    env = np.ones(n)
    if k:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
        env[:k] = ramp
        env[-k:] = ramp[::-1]
    return env


def synth_command(text: str, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE,
                  noise_std: float = 0.003) -> np.ndarray:
    """Render ``text`` in the tone alphabet; returns float64 samples peaking near 1."""
    n_char = int(CHAR_SECONDS * sample_rate)
    n_gap = int(GAP_SECONDS * sample_rate)
    n_edge = int(EDGE_SECONDS * sample_rate)
    t = np.arange(n_char) / sample_rate
    pieces = [np.zeros(n_edge)]
    for ch in text:
        lo, hi = char_tones(ch)
        detune = 1.0 + rng.uniform(-0.01, 0.01)
        glide = 1.0 + 0.03 * t / CHAR_SECONDS
        tone = (np.sin(2 * np.pi * lo * detune * np.cumsum(glide) / sample_rate)
                + np.sin(2 * np.pi * hi * detune * np.cumsum(glide) / sample_rate))
        pieces.append(0.5 * tone * _fade(n_char, sample_rate))
        pieces.append(np.zeros(n_gap))
    pieces.append(np.zeros(n_edge - n_gap))
    out = np.concatenate(pieces)
    return out + rng.normal(0.0, noise_std, out.size)


def synth_song(seconds: float, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """A pentatonic melody with harmonics over a drone; never silent."""
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    root = rng.uniform(100.0, 140.0)
    out = 0.25 * np.sin(2 * np.pi * root * t) + 0.12 * np.sin(2 * np.pi * 1.5 * root * t + rng.uniform(0, 6.28))
    scale = np.array([1.0, 9 / 8, 5 / 4, 3 / 2, 5 / 3, 2.0, 9 / 4, 5 / 2, 3.0, 10 / 3])
    pos = 0
    while pos < n:
        length = min(n - pos, int(rng.uniform(0.15, 0.3) * sample_rate))
        f0 = 2 * root * rng.choice(scale)
        tt = np.arange(length) / sample_rate
        note = sum(a * np.sin(2 * np.pi * h * f0 * tt) for h, a in ((1, 1.0), (2, 0.45), (3, 0.2)))
        env = np.exp(-tt * rng.uniform(2.0, 6.0)) * _fade(length, sample_rate, 0.01)
        out[pos:pos + length] += 0.5 * note * env
        pos += length
    return out + rng.normal(0.0, 0.002, n)


def make_corpus(out_dir, seed: int = 0, n_carriers: int = 2, carrier_seconds: float = 2.0,
                sample_rate: int = SAMPLE_RATE) -> Path:
    """Write the 10-command corpus, carrier songs and ``labels.json`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "commands").mkdir(parents=True, exist_ok=True)
    (out / "carriers").mkdir(parents=True, exist_ok=True)
    entries = []
    for text in COMMANDS:
        rng = rng_for(seed, "corpus", text)
        clip = normalize(AudioClip(synth_command(text, rng, sample_rate), sample_rate))
        rel = f"commands/{slugify(text)}.wav"
        write_wav(out / rel, clip)
        entries.append({"text": text, "file": rel})
    carriers = []
    for k in range(n_carriers):
        rng = rng_for(seed, "carrier", k)
        clip = normalize(AudioClip(synth_song(carrier_seconds, rng, sample_rate), sample_rate))
        rel = f"carriers/song_{k}.wav"
        write_wav(out / rel, clip)
        carriers.append(rel)
    labels = {"version": 1, "seed": seed, "sample_rate": sample_rate,
              "commands": entries, "carriers": carriers}
    (out / LABELS_FILE).write_text(json.dumps(labels, indent=2, sort_keys=True) + "\n")
    return out


def load_corpus(corpus_dir) -> dict:
    """Return the labels manifest with absolute paths and decoded clips attached."""
    root = Path(corpus_dir)
    labels = json.loads((root / LABELS_FILE).read_text())
    for entry in labels["commands"]:
        entry["path"] = str(root / entry["file"])
        entry["clip"] = read_wav(root / entry["file"])
    labels["carrier_paths"] = [str(root / c) for c in labels["carriers"]]
    return labels
