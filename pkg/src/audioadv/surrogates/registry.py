"""Adapter registry: JSON manifests -> loaded surrogate models.

A manifest looks like::

    {"id": "toyctc-a", "adapter": "toy_ctc", "category": "CNN_BASED",
     "decoder_kind": "CTC", "sample_rate": 16000, "checkpoint": "toyctc-a.pt"}

``checkpoint`` is resolved relative to the manifest. External pretrained
recognizers plug in through :func:`register_adapter`.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Callable

from ..errors import ModelError
from .base import Category, DecoderKind, SurrogateModel
from .mock import ThresholdMock, always_accept, always_reject
from .toyctc import ToyCTCModel

HOME_ENV = "AUDIOADV_HOME"
REQUIRED_KEYS = ("id", "category", "decoder_kind", "sample_rate")

Loader = Callable[[dict, Path, "str | None"], SurrogateModel]
_ADAPTERS: dict[str, Loader] = {}
_DEFAULT_ADAPTER = {DecoderKind.CTC.value: "toy_ctc", DecoderKind.THRESHOLD_MOCK.value: "threshold_mock"}


def register_adapter(name: str, loader: Loader) -> None:
    """Make ``loader(manifest, manifest_dir, target)`` available under ``name``."""
    _ADAPTERS[name] = loader


def _load_toy_ctc(manifest: dict, base: Path, target: str | None) -> SurrogateModel:
    if "checkpoint" not in manifest:
        raise ModelError(f"manifest {manifest['id']!r} has no checkpoint")
    ckpt = Path(manifest["checkpoint"])
    return ToyCTCModel.load(manifest["id"], ckpt if ckpt.is_absolute() else base / ckpt)


def _load_threshold_mock(manifest: dict, base: Path, target: str | None) -> SurrogateModel:
    params = dict(manifest.get("params", {}))
    text = params.pop("text", None)
    if text is None:
        if target is None:
            raise ModelError(f"mock {manifest['id']!r} has no text and no target to bind to")
        text = target
    return ThresholdMock(manifest["id"], text, sample_rate=manifest["sample_rate"], **params)


register_adapter("toy_ctc", _load_toy_ctc)
register_adapter("threshold_mock", _load_threshold_mock)

# fixtures addressable by id without a manifest; bound to the attack target
BUILTINS: dict[str, Callable[[str, "str | None"], SurrogateModel]] = {
    "mock-accept": lambda id, target: always_accept(id, target or ""),
    "mock-accept-2": lambda id, target: always_accept(id, target or ""),
    "mock-reject": lambda id, target: always_reject(id),
}


def default_home() -> Path:
    return Path(os.environ.get(HOME_ENV, Path.home() / ".cache" / "audioadv"))


def default_model_dir() -> Path:
    return default_home() / "models"


def load_manifest(path, target: str | None = None) -> SurrogateModel:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read adapter manifest {path}: {exc}") from exc
    return load_from_manifest(manifest, path.parent, target)


def load_from_manifest(manifest: dict, base: Path, target: str | None = None) -> SurrogateModel:
    missing = [k for k in REQUIRED_KEYS if k not in manifest]
    if missing:
        raise ModelError(f"adapter manifest lacks {missing}")
    try:
        category = Category(manifest["category"])
        kind = DecoderKind(manifest["decoder_kind"])
    except ValueError as exc:
        raise ModelError(str(exc)) from exc
    adapter = manifest.get("adapter", _DEFAULT_ADAPTER.get(kind.value))
    if adapter not in _ADAPTERS:
        raise ModelError(f"no adapter registered for {adapter!r} ({manifest['id']})")
    try:
        model = _ADAPTERS[adapter](manifest, Path(base), target)
    except ModelError:
        raise
    except Exception as exc:  # checkpoint corruption, bad params, ...
        raise ModelError(f"adapter {adapter!r} failed to load {manifest['id']!r}: {exc}") from exc
    if model.category != category or model.decoder_kind != kind:
        raise ModelError(f"{manifest['id']}: manifest declares {category.value}/{kind.value}, "
                         f"model is {model.category.value}/{model.decoder_kind.value}")
    if model.sample_rate != int(manifest["sample_rate"]):
        raise ModelError(f"{manifest['id']}: sample rate mismatch")
    return model


class SurrogateRegistry:
    """Looks surrogates up by id in a list of manifest directories, then in the builtins."""

    def __init__(self, *dirs):
        self.dirs = [Path(d) for d in (dirs or (default_model_dir(),))]

    def manifests(self) -> dict[str, Path]:
        found = {}
        for d in self.dirs:
            if d.is_dir():
                for p in sorted(d.glob("*.json")):
                    try:
                        found.setdefault(json.loads(p.read_text())["id"], p)
                    except (json.JSONDecodeError, KeyError, TypeError):
                        continue
        return found

    def ids(self) -> list[str]:
        return sorted(set(self.manifests()) | set(BUILTINS))

    def load(self, id: str, target: str | None = None) -> SurrogateModel:
        manifests = self.manifests()
        if id in manifests:
            return load_manifest(manifests[id], target)
        if id in BUILTINS:
            return BUILTINS[id](id, target)
        raise ModelError(f"unknown surrogate id {id!r}; known: {self.ids()}")

    def load_many(self, ids, target: str | None = None) -> list[SurrogateModel]:
        return [self.load(i, target) for i in ids]
