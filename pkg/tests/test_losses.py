import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from audioadv.audio import MFCCConfig
from audioadv.errors import FrameCountMismatch, LengthMismatch
from audioadv.losses import (AttackLoss, FeatureReference, LossWeights, acoustic_feature_loss,
                             acoustic_feature_loss_and_grad, imperceptibility_loss,
                             imperceptibility_loss_and_grad, total_loss, total_loss_gradient)
from audioadv.surrogates.base import loss_gradient
from audioadv.surrogates.mock import ThresholdMock

TARGET = "take a picture"


def central_diff(f, x, coords, h):
    out = np.empty(len(coords))
    for n, i in enumerate(coords):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        out[n] = (f(xp) - f(xm)) / (2 * h)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b))


def test_imperceptibility_examples():
    x = np.array([0.5, 0.25])
    assert imperceptibility_loss(x, np.zeros(2)) == 0.0
    assert imperceptibility_loss(x, x) == pytest.approx(math.sqrt(2))
    assert imperceptibility_loss(x, np.array([0.05, 0.05])) == pytest.approx(math.sqrt(0.1**2 + 0.2**2))
    with pytest.raises(LengthMismatch):
        imperceptibility_loss(x, np.zeros(3))


def test_imperceptibility_handles_zero_carrier_samples():
    # the denominator is floored at 1e-4 with sign(0) = +1
    assert imperceptibility_loss(np.array([0.0, 0.5]), np.array([1e-4, 0.0])) == pytest.approx(1.0)


def test_imperceptibility_gradient_zero_at_origin():
    _, g = imperceptibility_loss_and_grad(np.array([0.1, -0.2]), np.zeros(2))
    assert not np.any(g)


@given(arrays(np.float64, 16, elements=st.floats(-0.5, 0.5, allow_subnormal=False)),
       st.just(0.0) | st.floats(1e-6, 50))
def test_imperceptibility_is_homogeneous(d, k):
    x = np.linspace(-0.5, 0.5, 16)
    assert imperceptibility_loss(x, k * d) == pytest.approx(k * imperceptibility_loss(x, d), rel=1e-9, abs=1e-300)


def test_feature_loss_zero_when_matching(rng):
    x = rng.uniform(-0.5, 0.5, 4000)
    cmd = rng.uniform(-0.5, 0.5, 4000)
    assert acoustic_feature_loss(x, cmd - x, cmd) == 0.0


def test_feature_loss_frame_mismatch(rng):
    with pytest.raises(FrameCountMismatch):
        acoustic_feature_loss(np.ones(4000), np.zeros(4000), rng.normal(size=2000))


@pytest.mark.parametrize("seed", range(3))
def test_imperceptibility_and_feature_gradients_fd(seed):
    rng = np.random.default_rng(seed)
    x, d, cmd = (rng.uniform(-0.5, 0.5, 8000) for _ in range(3))
    coords = rng.choice(8000, 32, replace=False)
    _, gp = imperceptibility_loss_and_grad(x, d)
    fd = central_diff(lambda dd: imperceptibility_loss(x, dd), d, coords, 1e-6)
    assert rel_err(gp[coords], fd) < 1e-4
    ref = FeatureReference(cmd)
    _, gf = acoustic_feature_loss_and_grad(x, d, cmd)
    fd = central_diff(lambda dd: ref.loss_and_grad(x + dd, need_grad=False)[0], d, coords, 1e-6)
    assert rel_err(gf[coords], fd) < 1e-4


def test_breakdown_identity_and_weights(rng):
    x = rng.uniform(-0.5, 0.5, 4000)
    d = rng.uniform(-0.01, 0.01, 4000)
    cmd = rng.uniform(-0.5, 0.5, 4000)
    m = ThresholdMock("m", TARGET, 0.6)
    b = total_loss(x, d, TARGET, m, LossWeights(0.05, 0.01), command_reference=cmd)
    assert b.total == pytest.approx(b.adversarial + 0.05 * b.imperceptibility + 0.01 * b.acoustic_feature)
    assert min(b.adversarial, b.imperceptibility, b.acoustic_feature) >= 0
    b2 = total_loss(x, d, TARGET, m, LossWeights(0.05, 0.02), command_reference=cmd)
    assert b2.total - b.total == pytest.approx(0.01 * b.acoustic_feature)
    b0 = total_loss(x, d, TARGET, m, LossWeights(0.0, 0.0), command_reference=cmd)
    assert b0.total == b0.adversarial
    assert total_loss(x, np.zeros(4000), TARGET, m).imperceptibility == 0.0


def test_unweighted_gradient_is_the_model_gradient(rng):
    x = rng.uniform(-0.5, 0.5, 4000)
    d = rng.uniform(-0.01, 0.01, 4000)
    m = ThresholdMock("m", TARGET, 0.6)
    g = total_loss_gradient(x, d, TARGET, m, LossWeights(0.0, 0.0))
    np.testing.assert_array_equal(g, loss_gradient(m, x + d, TARGET))


def test_gradient_is_weighted_sum_of_terms(rng):
    x, cmd = rng.uniform(-0.5, 0.5, 4000), rng.uniform(-0.5, 0.5, 4000)
    d = rng.uniform(-0.01, 0.01, 4000)
    m = ThresholdMock("m", TARGET, 0.6)
    w = LossWeights(0.3, 0.02)
    _, g = AttackLoss(x, cmd, w).loss_and_grad(d, m, TARGET)
    expected = (loss_gradient(m, x + d, TARGET) + 0.3 * imperceptibility_loss_and_grad(x, d)[1]
                + 0.02 * acoustic_feature_loss_and_grad(x, d, cmd)[1])
    np.testing.assert_allclose(g, expected, rtol=1e-12, atol=1e-15)
    _, g_adv = AttackLoss(x, cmd, w, adversarial_only=True).loss_and_grad(d, m, TARGET)
    np.testing.assert_array_equal(g_adv, loss_gradient(m, x + d, TARGET))


def test_composite_gradient_fd_with_toy_ctc(toy_models):
    rng = np.random.default_rng(7)
    model = toy_models[0]
    x, cmd = rng.uniform(-0.5, 0.5, 8000), rng.uniform(-0.5, 0.5, 8000)
    d = rng.uniform(-0.02, 0.02, 8000)
    loss = AttackLoss(x, cmd, LossWeights(0.05, 0.01))
    _, g = loss.loss_and_grad(d, model, TARGET)
    coords = rng.choice(8000, 32, replace=False)
    fd = central_diff(lambda dd: loss.breakdown(dd, model, TARGET).total, d, coords, 1e-6)
    assert rel_err(g[coords], fd) < 1e-3


def test_attack_loss_requires_padded_reference():
    with pytest.raises(LengthMismatch):
        AttackLoss(np.ones(4000), np.ones(3000), mfcc_config=MFCCConfig())
