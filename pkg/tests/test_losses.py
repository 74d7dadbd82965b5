import numpy as np
import pytest
from helpers import numeric_grad, rel_err

from poet import tensor as T
from poet.errors import InputError, UndefinedLossError
from poet.geometry import GEODESIC_EPS, axis_angle, decode_6d_tensor, random_rotation
from poet.losses import LossWeights, multitask_loss, rotation_loss, translation_loss

CLAMP = np.arccos(1 - GEODESIC_EPS)


def test_translation_loss_examples():
    assert translation_loss(np.zeros(3), np.zeros(3)).item() == 0.0
    assert translation_loss(np.zeros(3), np.array([3.0, 4.0, 0.0])).item() == 5.0


def test_translation_loss_gradient(rng):
    t = rng.normal(size=(4, 3))
    tp = T.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    T.backward(T.tsum(translation_loss(t, tp)))
    num = numeric_grad(lambda: translation_loss(t, T.Tensor(tp.data)).data.sum(), tp.data)
    assert np.max(np.abs(num - tp.grad)) < 1e-6


def test_translation_loss_zero_subgradient():
    tp = T.Tensor(np.zeros((1, 3)), requires_grad=True)
    T.backward(T.tsum(translation_loss(np.zeros((1, 3)), tp)))
    assert np.array_equal(tp.grad, np.zeros((1, 3)))


def test_rotation_loss_clamp_values():
    assert rotation_loss(np.eye(3), np.eye(3)).item() == pytest.approx(CLAMP, abs=1e-15)
    flip = axis_angle([0, 0, 1], np.pi)
    assert rotation_loss(np.eye(3), flip).item() == pytest.approx(np.pi - CLAMP, abs=1e-9)


def test_rotation_loss_gradient_through_6d(rng):
    R = random_rotation(rng, 3)
    r6 = rng.normal(size=(3, 6))

    def f(x):
        return T.tsum(rotation_loss(R, decode_6d_tensor(x)))

    x = T.Tensor(r6.copy(), requires_grad=True)
    T.backward(f(x))
    num = numeric_grad(lambda: f(T.Tensor(r6)).item(), r6)
    assert rel_err(x.grad, num, floor=1e-6) < 1e-4


def test_multitask_two_objects():
    t_gt = np.zeros((2, 3))
    t_pred = np.array([[1.0, 0, 0], [0, 3.0, 0]])
    R = np.stack([np.eye(3)] * 2)
    terms = multitask_loss(t_pred, R, t_gt, R, LossWeights(2.0, 1.0))
    assert terms.total.item() == pytest.approx(4.0 + CLAMP, abs=1e-12)
    assert terms.count == 2


def test_multitask_single_perfect():
    terms = multitask_loss(np.zeros((1, 3)), np.eye(3)[None], np.zeros((1, 3)), np.eye(3)[None])
    assert terms.total.item() == pytest.approx(CLAMP, abs=1e-15)


def test_multitask_permutation_and_weight_scaling(rng):
    n = 6
    tp, tg = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    Rp, Rg = random_rotation(rng, n), random_rotation(rng, n)
    base = multitask_loss(tp, Rp, tg, Rg)
    p = rng.permutation(n)
    perm = multitask_loss(tp[p], Rp[p], tg[p], Rg[p])
    assert perm.total.item() == pytest.approx(base.total.item(), abs=1e-12)
    scaled = multitask_loss(tp, Rp, tg, Rg, LossWeights(6.0, 1.0))
    assert scaled.total.item() - scaled.rotation.item() == pytest.approx(3 * (base.total.item() - base.rotation.item()), abs=1e-12)


def test_multitask_errors():
    with pytest.raises(UndefinedLossError):
        multitask_loss(np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros((0, 3, 3)))
    with pytest.raises(InputError):
        LossWeights(-1.0, 1.0)
    with pytest.raises(InputError):
        multitask_loss(np.zeros((2, 3)), np.stack([np.eye(3)] * 2), np.zeros((1, 3)), np.eye(3)[None])
