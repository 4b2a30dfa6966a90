"""Interface conformance checks any surrogate (in-repo or adapter-wrapped) must pass."""

from __future__ import annotations

import numpy as np

from ..errors import UntokenizableTarget
from .base import DecoderKind, SurrogateModel


def finite_difference_error(model: SurrogateModel, x: np.ndarray, target: str,
                            coords: np.ndarray, step: float = 1e-6) -> float:
    """Relative L2 error between the analytic gradient and central differences on ``coords``."""
    _, grad = model.loss_and_grad(x, target)
    fd = np.empty(coords.size)
    for n, i in enumerate(coords):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        fd[n] = (model.loss_value(xp, target) - model.loss_value(xm, target)) / (2 * step)
    ref = grad[coords]
    scale = max(np.linalg.norm(ref), np.linalg.norm(fd), 1e-300)
    return float(np.linalg.norm(ref - fd) / scale)


def check_conformance(model: SurrogateModel, target: str, length: int = 8000, seed: int = 0,
                      n_coords: int = 64, rel_tol: float = 1e-3) -> list[str]:
    """Run the contract checks; returns a list of failure messages (empty on success)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.5, 0.5, max(length, model.min_length))
    failures = []
    if model.transcribe_array(x) != model.transcribe_array(x.copy()):
        failures.append("transcribe is not deterministic")
    target = model.tokenize(target)
    loss, grad = model.loss_and_grad(x, target)
    if np.shape(grad) != x.shape:
        failures.append(f"gradient shape {np.shape(grad)} != input shape {x.shape}")
    if not np.all(np.isfinite(grad)) or not np.isfinite(loss):
        failures.append("non-finite loss or gradient")
    if model.decoder_kind == DecoderKind.CTC and loss < 0:
        failures.append(f"CTC negative log-likelihood is negative ({loss})")
    if abs(model.loss_value(x, target) - loss) > 1e-9 * max(1.0, abs(loss)):
        failures.append("loss_value disagrees with loss_and_grad")
    coords = rng.choice(x.size, size=min(n_coords, x.size), replace=False)
    err = finite_difference_error(model, x, target, coords)
    if err >= rel_tol:
        failures.append(f"gradient disagrees with finite differences (relative error {err:.2e})")
    try:
        model.tokenize("éé!")
        failures.append("untokenizable target accepted")
    except UntokenizableTarget:
        pass
    return failures
