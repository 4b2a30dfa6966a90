"""A small convolutional CTC recognizer trained on the synthetic corpus.

It stands in for real CNN-based CTC surrogates: the gradients flowing into the
attack are genuine CTC gradients through a log-mel front end, just on a model
that trains in about a minute on one CPU.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..audio import MFCCConfig, torch_log_mel
from ..errors import AudioTooShort, NonConvergence
from ..seeding import int_seed, rng_for
from .base import CHAR_VOCAB, Category, DecoderKind, SurrogateModel

logger = logging.getLogger(__name__)

BLANK = 0


@dataclass(frozen=True)
class ToyCTCConfig:
    n_mels: int = 40
    frame_length: int = 400
    hop_length: int = 160
    hidden: int = 64
    kernel: int = 5

    def front_end(self) -> MFCCConfig:
        return MFCCConfig(frame_length=self.frame_length, hop_length=self.hop_length,
                          n_mels=self.n_mels, n_coeffs=1, fmax=4000.0, log_floor=1e-4)


class ToyCTCNet(nn.Module):
    def __init__(self, cfg: ToyCTCConfig, n_symbols: int = len(CHAR_VOCAB) + 1):
        super().__init__()
        self.cfg = cfg
        self.front = cfg.front_end()
        pad = cfg.kernel // 2
        self.conv1 = nn.Conv1d(cfg.n_mels, cfg.hidden, cfg.kernel, padding=pad)
        self.conv2 = nn.Conv1d(cfg.hidden, cfg.hidden, cfg.kernel, padding=pad)
        self.head = nn.Conv1d(cfg.hidden, n_symbols, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, n) samples -> (B, T, V) log-probabilities."""
        feats = torch_log_mel(x, self.front) * 0.25
        h = F.gelu(self.conv1(feats.transpose(1, 2)))
        h = F.gelu(self.conv2(h))
        return F.log_softmax(self.head(h).transpose(1, 2), dim=-1)


def encode(text: str) -> list[int]:
    return [CHAR_VOCAB.index(c) + 1 for c in text]


def greedy_decode(logprobs: np.ndarray) -> str:
    best = np.argmax(logprobs, axis=-1)
    out, prev = [], BLANK
    for k in best:
        if k != prev and k != BLANK:
            out.append(CHAR_VOCAB[k - 1])
        prev = k
    return " ".join("".join(out).split())


def min_ctc_frames(labels: list[int]) -> int:
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


class ToyCTCModel(SurrogateModel):
    category = Category.CNN_BASED
    decoder_kind = DecoderKind.CTC

    def __init__(self, id: str, net: ToyCTCNet, seed: int | None = None):
        self.id = id
        self.net = net.double().eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.cfg = net.cfg
        self.seed = seed
        self.min_length = self.cfg.frame_length

    def _ctc(self, logprobs: torch.Tensor, target: str) -> torch.Tensor:
        labels = encode(target)
        n_frames = logprobs.shape[0]
        if n_frames < min_ctc_frames(labels):
            raise AudioTooShort(f"{self.id}: {n_frames} frames cannot align {len(labels)} labels")
        return F.ctc_loss(
            logprobs[:, None, :],
            torch.tensor(labels, dtype=torch.long),
            input_lengths=torch.tensor([n_frames]),
            target_lengths=torch.tensor([len(labels)]),
            blank=BLANK,
            reduction="sum",
        )

    def logprobs(self, x: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return self.net(torch.tensor(np.asarray(x, dtype=np.float64))[None])[0].numpy()

    def transcribe_array(self, x):
        return greedy_decode(self.logprobs(x))

    def loss_and_grad(self, x, target):
        xt = torch.tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
        loss = self._ctc(self.net(xt[None])[0], target)
        (grad,) = torch.autograd.grad(loss, xt)
        return float(loss.detach()), grad.numpy()

    def loss_value(self, x, target):
        with torch.no_grad():
            lp = self.net(torch.tensor(np.asarray(x, dtype=np.float64))[None])[0]
            return float(self._ctc(lp, target))

    def evaluate(self, x, target):
        with torch.no_grad():
            lp = self.net(torch.tensor(np.asarray(x, dtype=np.float64))[None])[0]
            return greedy_decode(lp.numpy()), float(self._ctc(lp, target))

    def parameter_digest(self) -> str:
        h = hashlib.sha256()
        for name, tensor in sorted(self.net.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().numpy().astype("<f8").tobytes())
        return h.hexdigest()

    def save(self, out_dir) -> Path:
        """Write ``<id>.pt`` and the adapter manifest ``<id>.json``; returns the manifest path."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / f"{self.id}.pt"
        buf = io.BytesIO()
        torch.save({"config": asdict(self.cfg), "state_dict": self.net.state_dict(),
                    "seed": self.seed}, buf)
        ckpt.write_bytes(buf.getvalue())
        manifest = {
            "id": self.id,
            "adapter": "toy_ctc",
            "category": self.category.value,
            "decoder_kind": self.decoder_kind.value,
            "sample_rate": self.sample_rate,
            "checkpoint": ckpt.name,
            "parameter_digest": self.parameter_digest(),
        }
        path = out / f"{self.id}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, id: str, checkpoint) -> "ToyCTCModel":
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        net = ToyCTCNet(ToyCTCConfig(**state["config"]))
        net.load_state_dict(state["state_dict"])
        return cls(id, net, seed=state.get("seed"))


# --------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 3e-3
    max_iters: int = 3000
    min_iters: int = 400
    eval_every: int = 100
    max_token_error: float = 0.05
    song_pool: int = 48


def _token_errors(hyp: str, ref: str) -> int:
    from ..evaluation import levenshtein
    return levenshtein(list(hyp), list(ref))


class _Augmenter:
    """Places corpus commands at random gains/offsets over random songs."""

    def __init__(self, commands: list[tuple[str, np.ndarray]], rng: np.random.Generator,
                 pool: int, sample_rate: int = 16000):
        from ..corpus import synth_song
        self.commands = commands
        self.rng = rng
        self.sample_rate = sample_rate
        self.max_len = max(len(a) for _, a in commands)
        self.songs = []
        for _ in range(pool):
            s = synth_song(self.max_len / sample_rate + 1.0, rng, sample_rate)
            self.songs.append(0.5 * s / np.max(np.abs(s)))

    def batch(self, size: int) -> tuple[np.ndarray, list[str]]:
        rng = self.rng
        length = self.max_len + int(rng.integers(0, int(0.6 * self.sample_rate)))
        xs, texts = [], []
        for _ in range(size):
            song = self.songs[rng.integers(len(self.songs))]
            off = rng.integers(0, song.size - length + 1)
            bg_gain = 0.0 if rng.random() < 0.25 else rng.uniform(0.2, 1.0)
            x = bg_gain * song[off:off + length]
            r = rng.random()
            if r < 0.15:
                text = ""
            elif r < 0.3:
                # the clean utterance itself, as stored in the corpus
                text, cmd = self.commands[rng.integers(len(self.commands))]
                x = np.zeros(length)
                x[:cmd.size] = cmd
            else:
                text, cmd = self.commands[rng.integers(len(self.commands))]
                pos = rng.integers(0, length - cmd.size + 1)
                x[pos:pos + cmd.size] += rng.uniform(0.15, 1.0) * cmd
            if r >= 0.3:
                x = x + rng.normal(0.0, rng.uniform(0.0, 0.01), length)
            xs.append(x)
            texts.append(text)
        return np.stack(xs), texts


def train_toy_ctc(commands: list[tuple[str, np.ndarray]], seed: int, id: str | None = None,
                  model_cfg: ToyCTCConfig | None = None, train_cfg: TrainConfig | None = None) -> ToyCTCModel:
    """Fit a toy CTC recognizer to ``(text, normalized samples)`` pairs.

    Stops once every clean utterance decodes exactly and the token error on a
    fixed augmented validation batch is within ``max_token_error``; raises
    :class:`NonConvergence` if that never happens within ``max_iters``.
    """
    model_cfg = model_cfg or ToyCTCConfig()
    tc = train_cfg or TrainConfig()
    torch.manual_seed(int_seed(seed, "training", "torch"))
    rng = rng_for(seed, "training", "data")
    aug = _Augmenter(commands, rng, tc.song_pool)
    val_x, val_t = aug.batch(64)
    net = ToyCTCNet(model_cfg)
    opt = torch.optim.Adam(net.parameters(), lr=tc.learning_rate)
    sched = torch.optim.lr_scheduler.MultiStepLR(
        opt, milestones=[tc.max_iters // 3, 2 * tc.max_iters // 3], gamma=0.3)

    def token_error(model: ToyCTCModel, xs, texts) -> float:
        errs = sum(_token_errors(model.transcribe_array(x), t) for x, t in zip(xs, texts))
        return errs / max(1, sum(len(t) for t in texts))

    clean_x = [a for _, a in commands]
    clean_t = [t for t, _ in commands]
    err = float("nan")
    for it in range(1, tc.max_iters + 1):
        xs, texts = aug.batch(tc.batch_size)
        lp = net(torch.from_numpy(xs).float())
        n_frames = lp.shape[1]
        labels = [encode(t) for t in texts]
        loss = F.ctc_loss(
            lp.transpose(0, 1),
            torch.tensor([k for lab in labels for k in lab], dtype=torch.long),
            input_lengths=torch.full((len(texts),), n_frames, dtype=torch.long),
            target_lengths=torch.tensor([len(lab) for lab in labels], dtype=torch.long),
            blank=BLANK, reduction="mean", zero_infinity=True,
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if it % tc.eval_every == 0:
            probe = ToyCTCModel(id or "probe", _clone(net, model_cfg))
            clean_err = token_error(probe, clean_x, clean_t)
            err = token_error(probe, val_x, val_t)
            logger.info("toy ctc seed=%d iter=%d loss=%.3f clean_err=%.4f val_err=%.4f",
                        seed, it, loss.item(), clean_err, err)
            if it >= tc.min_iters and clean_err == 0.0 and err <= tc.max_token_error:
                return ToyCTCModel(id or f"toyctc-{seed}", _clone(net, model_cfg), seed=seed)
    raise NonConvergence(f"toy CTC (seed {seed}) stopped at token error {err:.4f} "
                         f"after {tc.max_iters} iterations", error_rate=err)


def _clone(net: ToyCTCNet, cfg: ToyCTCConfig) -> ToyCTCNet:
    copy = ToyCTCNet(cfg)
    copy.load_state_dict(net.state_dict())
    return copy
