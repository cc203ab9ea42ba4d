import math

import numpy as np
import pytest
import torch

from e2easr import losses
from e2easr.numerics import check_gradients, tensor
from oracles import ctc_brute_force_nll, transducer_brute_force_nll


def test_ctc_hand_cases():
    assert losses.ctc_loss(np.zeros((1, 2)), [1]).loss == pytest.approx(math.log(2), abs=1e-14)
    assert losses.ctc_loss(np.zeros((2, 2)), [1]).loss == pytest.approx(math.log(4 / 3), abs=1e-14)


def test_ctc_matches_enumeration():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((4, 3))
    for target in ([1, 2], [1, 1], [2], []):
        got = losses.ctc_loss(logits, target).loss
        assert got == pytest.approx(ctc_brute_force_nll(logits, target), abs=1e-9)


def test_ctc_infeasible():
    with pytest.raises(losses.InfeasibleAlignmentError):
        losses.ctc_loss(np.zeros((2, 3)), [1, 1])
    with pytest.raises(ValueError):
        losses.ctc_loss(np.zeros((3, 3)), [0])


def test_transducer_hand_cases():
    assert losses.transducer_loss(np.zeros((1, 2, 2)), [1]).loss == pytest.approx(math.log(4), abs=1e-14)
    z = np.random.default_rng(1).standard_normal((2, 1, 3))
    lp_blank = z[:, 0, 0] - np.log(np.exp(z[:, 0]).sum(-1))
    assert losses.transducer_loss(z, []).loss == pytest.approx(-lp_blank.sum(), abs=1e-12)


def test_transducer_matches_ten_path_enumeration():
    z = np.random.default_rng(2).standard_normal((3, 3, 3))
    assert math.comb(5, 2) == 10
    got = losses.transducer_loss(z, [1, 2]).loss
    assert got == pytest.approx(transducer_brute_force_nll(z, [1, 2]), abs=1e-9)


def test_transducer_errors():
    with pytest.raises(ValueError):
        losses.transducer_loss(np.zeros((0, 1, 2)), [])
    with pytest.raises(ValueError):
        losses.transducer_loss(np.zeros((2, 2, 3)), [1, 2])


@pytest.mark.parametrize("seed", range(10))
def test_forward_backward_consistency(seed):
    rng = np.random.default_rng(seed)
    T, U, V = rng.integers(1, 6), rng.integers(0, 4), rng.integers(2, 5)
    target = list(rng.integers(1, V, size=U))
    lat = losses.transducer_loss(rng.standard_normal((T, U + 1, V)) * 3, target).lattice
    assert lat.log_likelihood_forward == pytest.approx(lat.log_likelihood_backward, abs=1e-8)
    T = max(T, 2 * U)
    lat = losses.ctc_loss(rng.standard_normal((T, V)) * 3, target).lattice
    assert lat.log_likelihood_forward == pytest.approx(lat.log_likelihood_backward, abs=1e-8)


def _fd_check(loss_fn, z, target):
    zt = tensor(z, requires_grad=True)

    class Wrap(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            res = loss_fn(x.detach().numpy(), target)
            ctx.save_for_backward(torch.from_numpy(res.grad))
            return x.new_tensor(res.loss)

        @staticmethod
        def backward(ctx, g):
            return ctx.saved_tensors[0] * g

    return check_gradients(lambda: Wrap.apply(zt), [zt])


@pytest.mark.parametrize("seed", range(5))
def test_lattice_loss_gradients(seed):
    rng = np.random.default_rng(seed)
    rep = _fd_check(losses.transducer_loss, rng.standard_normal((3, 3, 3)), [1, 2])
    assert rep.max_rel_error <= 1e-4
    rep = _fd_check(losses.ctc_loss, rng.standard_normal((4, 3)), [1, 1])
    assert rep.max_rel_error <= 1e-4


def test_gradient_sums_to_zero_per_node():
    rng = np.random.default_rng(5)
    g = losses.transducer_loss(rng.standard_normal((4, 3, 4)), [3, 1]).grad
    np.testing.assert_allclose(g.sum(-1), 0.0, atol=1e-12)
    g = losses.ctc_loss(rng.standard_normal((5, 4)), [3, 1]).grad
    np.testing.assert_allclose(g.sum(-1), 0.0, atol=1e-12)


def test_transducer_is_order_sensitive():
    rng = np.random.default_rng(6)
    for _ in range(20):
        z = rng.standard_normal((4, 3, 4))
        a = losses.transducer_loss(z, [1, 2]).loss
        b = losses.transducer_loss(z, [2, 1]).loss
        assert a != pytest.approx(b, abs=1e-9)


def test_joint_ctc_attention_loss():
    assert losses.joint_ctc_attention_loss(2.0, 1.0, 0.0) == 1.0
    assert losses.joint_ctc_attention_loss(2.0, 1.0, 1.0) == 2.0
    assert losses.joint_ctc_attention_loss(2.0, 1.0, 0.3) == pytest.approx(1.3)
    with pytest.raises(ValueError):
        losses.joint_ctc_attention_loss(2.0, 1.0, 1.5)


def test_sequence_cross_entropy():
    res = losses.sequence_cross_entropy(np.zeros((4, 33)), [1, 2, 3, 4])
    assert res.loss == pytest.approx(math.log(33), abs=1e-12)
    onehot = np.full((3, 5), -1000.0)
    onehot[np.arange(3), [0, 4, 2]] = 1000.0
    assert losses.sequence_cross_entropy(onehot, [0, 4, 2]).loss == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(7)
    z = rng.standard_normal((6, 4))
    t = rng.integers(0, 4, size=6)
    direct = -sum(z[i, t[i]] - math.log(sum(math.exp(v) for v in z[i])) for i in range(6)) / 6
    assert losses.sequence_cross_entropy(z, t).loss == pytest.approx(direct, abs=1e-12)
    with pytest.raises(ValueError):
        losses.sequence_cross_entropy(z, t[:3])


def test_batch_bridge_matches_per_utterance():
    rng = np.random.default_rng(8)
    lat = rng.standard_normal((2, 4, 3, 3))
    targets = [[1, 2], [2]]
    x = tensor(lat, requires_grad=True)
    loss = losses.transducer_loss_batch(x, [4, 3], targets)
    loss.backward()
    expected = losses.transducer_loss(lat[0], [1, 2]).loss + losses.transducer_loss(lat[1, :3, :2], [2]).loss
    assert loss.item() == pytest.approx(expected, abs=1e-12)
    assert torch.all(x.grad[1, 3] == 0) and torch.all(x.grad[1, :, 2] == 0)
