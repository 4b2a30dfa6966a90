"""Audio containers, normalization, resampling, spectral features and SNR.

Everything numeric here runs in float64. The MFCC path is written in torch so
the loss suite can backpropagate through it; the numpy-facing helpers simply
run that same graph without gradients, which keeps the two bitwise identical.
"""

from __future__ import annotations

import functools
import logging
import math
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import torch
from scipy import signal as sps

from .errors import AudioTooShort, DegenerateAudio, InvalidRate, LengthMismatch

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
PCM16_SCALE = 32767.0

ArrayLike = Union[np.ndarray, "AudioClip"]


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono float64 samples plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if samples.size == 0:
            raise DegenerateAudio("audio clip has no samples")
        if not np.all(np.isfinite(samples)):
            raise DegenerateAudio("audio clip contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise InvalidRate(f"sample rate must be positive, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


def as_array(x: ArrayLike) -> np.ndarray:
    if isinstance(x, AudioClip):
        return x.samples
    delta = getattr(x, "delta", None)
    if delta is not None:
        return np.asarray(delta, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def normalize(clip: AudioClip) -> AudioClip:
    """Scale so the largest absolute sample is exactly 0.5."""
    peak = np.max(np.abs(clip.samples))
    if peak == 0.0:
        raise DegenerateAudio("cannot normalize an all-zero clip")
    out = clip.samples * (0.5 / peak)
    # 0.5/peak*peak can land one ulp off the bound
    at_peak = np.abs(clip.samples) == peak
    out[at_peak] = np.copysign(0.5, clip.samples[at_peak])
    return clip.with_samples(out)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited rate conversion via a polyphase windowed-sinc FIR."""
    if int(target_rate) <= 0:
        raise InvalidRate(f"target rate must be positive, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    g = math.gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    out = sps.resample_poly(clip.samples, up, down)
    return AudioClip(out, target_rate)


# --------------------------------------------------------------------------
# Spectral features


@dataclass(frozen=True, eq=False)
class Spectrogram:
    frames: np.ndarray  # (T, F) magnitudes
    frame_length: int
    hop_length: int

    @property
    def shape(self):
        return self.frames.shape


@dataclass(frozen=True)
class MFCCConfig:
    sample_rate: int = SAMPLE_RATE
    frame_length: int = 400
    hop_length: int = 160
    n_mels: int = 80
    n_coeffs: int = 13
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-6
    pre_emphasis: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class MFCCFeatures:
    coeffs: np.ndarray  # (T, C)
    config: MFCCConfig = field(default_factory=MFCCConfig)

    @property
    def shape(self):
        return self.coeffs.shape


def num_frames(length: int, frame_length: int, hop_length: int) -> int:
    if length < frame_length:
        raise AudioTooShort(f"need at least {frame_length} samples, got {length}")
    return 1 + (length - frame_length) // hop_length


def _check_framing(frame_length: int, hop_length: int) -> None:
    if not frame_length >= hop_length >= 1:
        raise ValueError(f"need frame_length >= hop_length >= 1, got {frame_length}, {hop_length}")


@functools.lru_cache(maxsize=32)
def hann_window(frame_length: int) -> np.ndarray:
    # periodic Hann, the usual STFT convention
    w = sps.get_window("hann", frame_length, fftbins=True)
    w.setflags(write=False)
    return w


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=32)
def mel_filterbank(sample_rate: int, frame_length: int, n_mels: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters evaluated at FFT bin centres, shape (F, n_mels)."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    n_bins = frame_length // 2 + 1
    bin_freqs = np.arange(n_bins) * sample_rate / frame_length
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lower, centre, upper = edges[:-2], edges[1:-1], edges[2:]
    f = bin_freqs[:, None]
    rising = (f - lower) / (centre - lower)
    falling = (upper - f) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


@functools.lru_cache(maxsize=32)
def dct_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II basis restricted to the first ``n_out`` outputs, shape (n_in, n_out)."""
    n = np.arange(n_in)[:, None]
    k = np.arange(n_out)[None, :]
    basis = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    basis[:, 0] = np.sqrt(1.0 / n_in)
    basis.setflags(write=False)
    return basis


def stft(clip: ArrayLike, frame_length: int = 400, hop_length: int = 160) -> Spectrogram:
    """Magnitude of the Hann-windowed short-time Fourier transform."""
    _check_framing(frame_length, hop_length)
    x = as_array(clip)
    num_frames(x.size, frame_length, hop_length)
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_length)[::hop_length]
    mags = np.abs(np.fft.rfft(frames * hann_window(frame_length), axis=-1))
    return Spectrogram(mags, frame_length, hop_length)


def torch_magnitude(x: torch.Tensor, frame_length: int, hop_length: int) -> torch.Tensor:
    """Differentiable magnitude STFT; ``x`` is (..., n) and the result (..., T, F)."""
    if x.shape[-1] < frame_length:
        raise AudioTooShort(f"need at least {frame_length} samples, got {x.shape[-1]}")
    frames = x.unfold(-1, frame_length, hop_length)
    window = torch.tensor(hann_window(frame_length), dtype=x.dtype)
    return torch.abs(torch.fft.rfft(frames * window, dim=-1))


def torch_log_mel(x: torch.Tensor, cfg: MFCCConfig) -> torch.Tensor:
    if cfg.pre_emphasis:
        x = torch.cat([x[..., :1], x[..., 1:] - cfg.pre_emphasis * x[..., :-1]], dim=-1)
    mag = torch_magnitude(x, cfg.frame_length, cfg.hop_length)
    fb = torch.tensor(
        mel_filterbank(cfg.sample_rate, cfg.frame_length, cfg.n_mels, cfg.fmin, cfg.fmax),
        dtype=x.dtype,
    )
    return torch.log(mag @ fb + cfg.log_floor)


def torch_mfcc(x: torch.Tensor, cfg: MFCCConfig) -> torch.Tensor:
    dct = torch.tensor(dct_matrix(cfg.n_mels, cfg.n_coeffs), dtype=x.dtype)
    return torch_log_mel(x, cfg) @ dct


def mfcc(clip: ArrayLike, config: MFCCConfig | None = None) -> MFCCFeatures:
    cfg = config or MFCCConfig()
    _check_framing(cfg.frame_length, cfg.hop_length)
    x = torch.from_numpy(np.ascontiguousarray(as_array(clip), dtype=np.float64))
    with torch.no_grad():
        coeffs = torch_mfcc(x, cfg).numpy()
    return MFCCFeatures(coeffs, cfg)


# --------------------------------------------------------------------------
# SNR


def snr_db(carrier: ArrayLike, delta: ArrayLike) -> float:
    """Carrier-to-perturbation power ratio in dB; +inf for an all-zero perturbation."""
    x = as_array(carrier)
    d = as_array(delta)
    if x.shape != d.shape:
        raise LengthMismatch(f"carrier has {x.size} samples, perturbation {d.size}")
    signal_power = float(np.dot(x, x))
    if signal_power == 0.0:
        raise DegenerateAudio("SNR undefined for an all-zero carrier")
    noise_power = float(np.dot(d, d))
    if noise_power == 0.0:
        return math.inf
    return 10.0 * math.log10(signal_power / noise_power)


# --------------------------------------------------------------------------
# WAV I/O


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Map floats to the int16 grid used on disk (clips to [-1, 1])."""
    x = np.asarray(samples, dtype=np.float64)
    if np.any(np.abs(x) > 1.0):
        logger.warning("clipping %d samples outside [-1, 1] before PCM16 write",
                       int(np.sum(np.abs(x) > 1.0)))
        x = np.clip(x, -1.0, 1.0)
    return np.round(x * PCM16_SCALE).astype("<i2")


def pcm16_roundtrip(samples: np.ndarray) -> np.ndarray:
    return quantize_pcm16(samples).astype(np.float64) / PCM16_SCALE


def write_wav(path, clip: AudioClip) -> Path:
    path = Path(path)
    pcm = quantize_pcm16(clip.samples)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(pcm.tobytes())
    return path


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / PCM16_SCALE, rate)
