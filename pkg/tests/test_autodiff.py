import numpy as np
import pytest

import pase.autodiff as ad
from pase.autodiff import Tensor
from pase.errors import NotScalar, ShapeMismatch

from oracles import gradcheck, naive_conv1d

GRAD_TOL = 1e-4  # per-op bound; the acceptance gate is 1e-3


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def scalarize(t):
    return ad.mean(ad.mul(t, t))


def test_add_sub_mul_broadcast_grads(rng):
    a = leaf(rng, 3, 4, 5)
    b = leaf(rng, 4, 1)

    for op in (ad.add, ad.sub, ad.mul):
        err = gradcheck(lambda op=op: scalarize(op(a, b)), [a, b], rng=rng)
        assert err < GRAD_TOL


@pytest.mark.parametrize(
    "name,builder",
    [
        ("sigmoid", lambda x: ad.sigmoid(x)),
        ("tanh", lambda x: ad.tanh(x)),
        ("mean_all", lambda x: ad.mean(x)),
        ("mean_axis", lambda x: ad.mean(x, axis=2)),
        ("sum_axis", lambda x: ad.sum_(x, axis=(0, 2))),
        ("reshape", lambda x: ad.reshape(x, (2, 30))),
        ("transpose", lambda x: ad.transpose(x, (2, 0, 1))),
        ("narrow", lambda x: ad.narrow(x, 2, 1, 3)),
        ("subsample", lambda x: ad.subsample_time(x, 2)),
        ("pad1d", lambda x: ad.pad1d(x, 2, 1)),
    ],
)
def test_unary_op_grads(rng, name, builder):
    x = leaf(rng, 2, 3, 10)
    err = gradcheck(lambda: scalarize(builder(x)), [x], rng=rng)
    assert err < GRAD_TOL, name


def test_prelu_grads_and_identity(rng):
    x = leaf(rng, 2, 4, 9)
    alpha = Tensor(rng.uniform(0.1, 0.5, 4), requires_grad=True)
    err = gradcheck(lambda: scalarize(ad.prelu(x, alpha)), [x, alpha], rng=rng)
    assert err < GRAD_TOL

    ones = Tensor(np.ones(4))
    out = ad.prelu(Tensor(x.data), ones)
    assert np.array_equal(out.data, x.data)  # alpha = 1 -> identity

    flat = leaf(rng, 7, 4)
    err = gradcheck(lambda: scalarize(ad.prelu(flat, alpha)), [flat, alpha], rng=rng)
    assert err < GRAD_TOL


def test_concat_gather_take_grads(rng):
    a = leaf(rng, 4, 3)
    b = leaf(rng, 4, 2)
    err = gradcheck(lambda: scalarize(ad.concat([a, b], axis=1)), [a, b], rng=rng)
    assert err < GRAD_TOL

    x = leaf(rng, 3, 4, 6)
    bi = np.array([0, 2, 2, 1])
    ti = np.array([5, 0, 0, 3])  # repeated pick exercises scatter-add
    err = gradcheck(lambda: scalarize(ad.gather_frames(x, bi, ti)), [x], rng=rng)
    assert err < GRAD_TOL

    rows = leaf(rng, 5, 4)
    idx = np.array([4, 0, 0, 2])
    err = gradcheck(lambda: scalarize(ad.take_rows(rows, idx)), [rows], rng=rng)
    assert err < GRAD_TOL


def test_linear_grads(rng):
    x = leaf(rng, 6, 5)
    w = leaf(rng, 3, 5)
    b = leaf(rng, 3)
    err = gradcheck(lambda: scalarize(ad.linear(x, w, b)), [x, w, b], rng=rng)
    assert err < GRAD_TOL
    with pytest.raises(ShapeMismatch):
        ad.linear(x, Tensor(np.zeros((3, 4))))


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (3, 2), (1, 5)])
def test_conv1d_matches_naive_oracle(rng, stride, padding):
    x = rng.standard_normal((2, 3, 17))
    w = rng.standard_normal((4, 3, 5))
    got = ad.conv1d(Tensor(x), Tensor(w), stride=stride, padding=padding)
    want = naive_conv1d(x, w, stride=stride, padding=padding)
    assert got.data.shape == want.shape
    assert np.max(np.abs(got.data - want)) < 1e-10


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (5, 2)])
def test_conv1d_grads(rng, stride, padding):
    x = leaf(rng, 2, 3, 16)
    w = leaf(rng, 4, 3, 5)
    b = leaf(rng, 4)
    err = gradcheck(
        lambda: scalarize(ad.conv1d(x, w, b, stride=stride, padding=padding)),
        [x, w, b],
        rng=rng,
    )
    assert err < GRAD_TOL


def test_conv1d_shape_contracts(rng):
    x = Tensor(rng.standard_normal((1, 2, 9)))
    w_full = Tensor(rng.standard_normal((3, 2, 9)))
    assert ad.conv1d(x, w_full).data.shape == (1, 3, 1)  # K = T -> T' = 1

    ident = np.zeros((2, 2, 1))
    ident[0, 0, 0] = 1.0
    ident[1, 1, 0] = 1.0
    out = ad.conv1d(x, Tensor(ident))
    assert np.allclose(out.data, x.data)

    with pytest.raises(ShapeMismatch):
        ad.conv1d(x, Tensor(rng.standard_normal((3, 2, 20))))
    with pytest.raises(ShapeMismatch):
        ad.conv1d(x, Tensor(rng.standard_normal((3, 5, 3))))


def test_batchnorm_training_statistics(rng):
    x = Tensor(rng.standard_normal((8, 4, 50)))
    gamma = Tensor(np.ones(4), requires_grad=True)
    beta = Tensor(np.zeros(4), requires_grad=True)
    rm = np.zeros(4)
    rv = np.ones(4)
    out = ad.batchnorm1d(x, gamma, beta, rm, rv, training=True)
    mean = out.data.mean(axis=(0, 2))
    var = out.data.var(axis=(0, 2))
    assert np.max(np.abs(mean)) < 1e-6
    assert np.max(np.abs(var - 1.0)) < 1e-4
    assert not np.allclose(rm, 0.0)  # running stats updated in place


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_grads(rng, training):
    x = leaf(rng, 3, 4, 7)
    gamma = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)
    beta = Tensor(rng.standard_normal(4), requires_grad=True)
    rm = rng.standard_normal(4)
    rv = rng.uniform(0.5, 2.0, 4)

    def build():
        return scalarize(
            ad.batchnorm1d(x, gamma, beta, rm.copy(), rv.copy(), training=training)
        )

    err = gradcheck(build, [x, gamma, beta], rng=rng)
    assert err < GRAD_TOL


def test_fo_pool_grads(rng):
    z = leaf(rng, 2, 3, 8)
    f_raw = leaf(rng, 2, 3, 8)

    def build():
        return scalarize(ad.fo_pool(ad.tanh(z), ad.sigmoid(f_raw)))

    err = gradcheck(build, [z, f_raw], rng=rng)
    assert err < GRAD_TOL


def test_mse_loss_contracts(rng):
    p = Tensor(rng.standard_normal((4, 5)))
    assert ad.mse_loss(p, Tensor(p.data.copy())).item() == 0.0
    shifted = Tensor(p.data + 1.0)
    assert ad.mse_loss(shifted, p).item() == pytest.approx(1.0)

    a = rng.standard_normal((6, 7))
    b = rng.standard_normal((6, 7))
    direct = float(np.mean((a - b) ** 2))
    assert abs(ad.mse_loss(Tensor(a), Tensor(b)).item() - direct) < 1e-12
    with pytest.raises(ShapeMismatch):
        ad.mse_loss(Tensor(a), Tensor(np.zeros((6, 6))))


def test_mse_grads(rng):
    p = leaf(rng, 5, 4)
    t = leaf(rng, 5, 4)
    err = gradcheck(lambda: ad.mse_loss(p, t), [p, t], rng=rng)
    assert err < GRAD_TOL


def test_bce_logits_contracts(rng):
    zero = Tensor(np.zeros((1, 1)))
    assert ad.bce_logits_loss(zero, np.ones((1, 1))).item() == pytest.approx(np.log(2))

    big = Tensor(np.full((1, 1), 50.0))
    loss = ad.bce_logits_loss(big, np.ones((1, 1))).item()
    assert np.isfinite(loss) and loss < 1e-20

    very_neg = Tensor(np.full((1, 1), -500.0))
    assert np.isfinite(ad.bce_logits_loss(very_neg, np.ones((1, 1))).item())

    z = rng.standard_normal((8, 3))
    y = (rng.random((8, 3)) < 0.5).astype(np.float64)
    naive = float(np.mean(-(y * np.log(1 / (1 + np.exp(-z))) + (1 - y) * np.log(1 - 1 / (1 + np.exp(-z))))))
    assert abs(ad.bce_logits_loss(Tensor(z), y).item() - naive) < 1e-9


def test_bce_and_softmax_grads(rng):
    z = leaf(rng, 6, 2)
    y = (rng.random((6, 2)) < 0.5).astype(np.float64)
    err = gradcheck(lambda: ad.bce_logits_loss(z, y), [z], rng=rng)
    assert err < GRAD_TOL

    logits = leaf(rng, 7, 4)
    labels = rng.integers(0, 4, 7)
    err = gradcheck(lambda: ad.softmax_cross_entropy(logits, labels), [logits], rng=rng)
    assert err < GRAD_TOL


def test_backward_accumulation_exact(rng):
    x = leaf(rng, 5)
    a, b = 3.0, -7.0
    loss = ad.sum_(ad.add(ad.mul(x, Tensor(np.full(5, a))), ad.mul(x, Tensor(np.full(5, b)))))
    loss.backward()
    assert np.array_equal(x.grad, np.full(5, a + b))  # exact, not approximate


def test_sum_grad_is_ones(rng):
    x = leaf(rng, 4, 3)
    ad.sum_(x).backward()
    assert np.array_equal(x.grad, np.ones((4, 3)))


def test_unused_parameter_keeps_zero_grad(rng):
    x = leaf(rng, 3)
    unused = leaf(rng, 3)
    ad.sum_(x).backward()
    assert unused.grad is None or not np.any(unused.grad)


def test_backward_requires_scalar(rng):
    x = leaf(rng, 3)
    with pytest.raises(NotScalar):
        ad.mul(x, x).backward()


def test_no_grad_suppresses_graph(rng):
    x = leaf(rng, 3)
    with ad.no_grad():
        out = ad.mul(x, x)
    assert out._vjp is None and not out.requires_grad


def test_eval_determinism_bitwise(rng):
    x = Tensor(rng.standard_normal((2, 3, 20)).astype(np.float32))
    w = Tensor(rng.standard_normal((4, 3, 5)).astype(np.float32))
    a = ad.conv1d(x, w, stride=2, padding=1)
    b = ad.conv1d(x, w, stride=2, padding=1)
    assert np.array_equal(a.data, b.data)
