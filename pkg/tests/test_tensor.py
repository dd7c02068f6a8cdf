import numpy as np
import pytest

from ecgssl import tensor as T
from ecgssl.errors import DimensionError, DomainError, NumericError, ParameterError
from ecgssl.optim import SGD, Adam, adam_step, sgd_step, AdamState
from ecgssl.tensor import Tensor

from _oracles import numeric_grad, rel_err

SEEDS = range(20)


def _bn(x, g, b):
    rm, rv = np.zeros(g.shape[0]), np.ones(g.shape[0])
    return T.batch_norm(x, g, b, rm, rv, training=True)


def _bn_eval(x, g, b):
    rm = np.linspace(-0.5, 0.5, g.shape[0])
    rv = np.linspace(0.5, 2.0, g.shape[0])
    return T.batch_norm(x, g, b, rm, rv, training=False)


# name -> (input shapes or generator, forward)
OPS = {
    "add": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))], lambda a, b: a + b),
    "sub": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 1))], lambda a, b: a - b),
    "mul": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 4))], lambda a, b: a * b),
    "div": (lambda r: [r.normal(size=(3, 4)), r.uniform(0.5, 2.0, size=(3, 4))], lambda a, b: a / b),
    "relu": (lambda r: [r.normal(size=(5, 6))], T.relu),
    "sigmoid": (lambda r: [r.normal(size=(5, 6)) * 3], T.sigmoid),
    "tanh": (lambda r: [r.normal(size=(5, 6))], T.tanh),
    "exp": (lambda r: [r.normal(size=(5, 6))], T.exp),
    "log": (lambda r: [r.uniform(0.2, 3.0, size=(5, 6))], T.log),
    "clip": (lambda r: [r.normal(size=(5, 6))], lambda x: T.clip(x, -0.5, 0.5)),
    "sum_axis": (lambda r: [r.normal(size=(3, 4, 5))], lambda x: T.tsum(x, axis=1)),
    "mean": (lambda r: [r.normal(size=(3, 4, 5))], lambda x: T.mean(x, axis=(0, 2), keepdims=True)),
    "reshape": (lambda r: [r.normal(size=(3, 4))], lambda x: T.reshape(x, (2, 6)) * T.reshape(x, (2, 6))),
    "transpose": (lambda r: [r.normal(size=(2, 3, 4))], lambda x: T.transpose(x, (2, 0, 1))),
    "getitem": (lambda r: [r.normal(size=(4, 5))], lambda x: x[1:3, ::2] * x[np.array([0, 3])][:, :3]),
    "concat": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 5))], lambda a, b: T.concat([a, b], axis=1)),
    "gap": (lambda r: [r.normal(size=(2, 3, 4, 5))], T.global_avg_pool),
    "matmul": (lambda r: [r.normal(size=(4, 5)), r.normal(size=(5, 3))], T.matmul),
    "linear": (lambda r: [r.normal(size=(4, 5)), r.normal(size=(3, 5)), r.normal(size=(3,))], T.linear),
    "conv1d": (lambda r: [r.normal(size=(2, 3, 16)), r.normal(size=(4, 3, 3)), r.normal(size=(4,))],
               lambda x, w, b: T.conv1d(x, w, b, stride=1, pad=1)),
    "conv1d_stride": (lambda r: [r.normal(size=(2, 3, 17)), r.normal(size=(2, 3, 5))],
                      lambda x, w: T.conv1d(x, w, stride=2, pad=2)),
    "conv2d": (lambda r: [r.normal(size=(2, 2, 6, 5)), r.normal(size=(3, 2, 3, 3)), r.normal(size=(3,))],
               lambda x, w, b: T.conv2d(x, w, b, stride=1, pad=1)),
    "conv2d_stride": (lambda r: [r.normal(size=(1, 2, 7, 6)), r.normal(size=(2, 2, 3, 3))],
                      lambda x, w: T.conv2d(x, w, stride=2, pad=1)),
    "max_pool1d": (lambda r: [r.normal(size=(2, 3, 11))], lambda x: T.max_pool1d(x, 3, 2, 1)),
    "max_pool2d": (lambda r: [r.normal(size=(2, 2, 7, 6))], lambda x: T.max_pool2d(x, 3, 2, 1)),
    "batch_norm_train": (lambda r: [r.normal(size=(4, 3, 5)), r.normal(size=(3,)), r.normal(size=(3,))], _bn),
    "batch_norm_eval": (lambda r: [r.normal(size=(4, 3, 2, 2)), r.normal(size=(3,)), r.normal(size=(3,))],
                        _bn_eval),
    "softmax_t": (lambda r: [r.normal(size=(3, 6))], lambda z: T.softmax_t(z, 0.7)),
    "log_softmax_t": (lambda r: [r.normal(size=(3, 6))], lambda z: T.log_softmax_t(z, 0.3)),
}


def _check_op(make, fwd, seed, tol=1e-4):
    rng = np.random.default_rng(seed)
    arrays = [np.asarray(a, dtype=np.float64) for a in make(rng)]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fwd(*tensors)
    proj = rng.normal(size=out.shape)
    loss = T.tsum(out * Tensor(proj))
    loss.backward()

    def f():
        return float(np.sum(fwd(*[Tensor(a) for a in arrays]).data * proj))

    numeric = numeric_grad(f, arrays)
    for t, g in zip(tensors, numeric):
        assert rel_err(t.grad, g) < tol


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    make, fwd = OPS[name]
    for seed in SEEDS:
        _check_op(make, fwd, seed)


def test_cross_entropy_gradient():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(4, 5))
        target = rng.dirichlet(np.ones(5), size=4)
        z = Tensor(logits, requires_grad=True)
        T.cross_entropy(z, target).backward()
        (g,) = numeric_grad(lambda: T.cross_entropy(Tensor(logits), target).item(), [logits])
        assert rel_err(z.grad, g) < 1e-4


def test_composite_network_gradient():
    # conv -> relu -> matmul -> softmax -> cross-entropy
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 2, 10))
        w = rng.normal(size=(4, 2, 3))
        m = rng.normal(size=(40, 5))
        target = rng.dirichlet(np.ones(5), size=3)

        def net(x_, w_, m_):
            h = T.relu(T.conv1d(x_, w_, pad=1))
            return T.cross_entropy(T.matmul(T.reshape(h, (3, 40)), m_), target)

        ts = [Tensor(a, requires_grad=True) for a in (x, w, m)]
        net(*ts).backward()
        num = numeric_grad(lambda: net(Tensor(x), Tensor(w), Tensor(m)).item(), [x, w, m])
        for t, g in zip(ts, num):
            assert rel_err(t.grad, g) < 1e-4


# -- forward values ------------------------------------------------------------------

def test_matmul_examples():
    eye = Tensor(np.eye(2))
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(T.matmul(eye, b).data, b.data)
    assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_conv1d_examples():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 1, 9)))
    ident = Tensor(np.array([[[0.0, 1.0, 0.0]]]))
    np.testing.assert_allclose(T.conv1d(x, ident, pad=1).data, x.data)
    out = T.conv1d(Tensor([[[1.0, 2.0, 3.0]]]), Tensor([[[1.0, 1.0]]]))
    assert out.data.tolist() == [[[3.0, 5.0]]]
    # output length formula
    y = T.conv1d(Tensor(np.ones((1, 1, 17))), Tensor(np.ones((1, 1, 4))), stride=3, pad=2)
    assert y.shape[-1] == (17 + 4 - 4) // 3 + 1
    with pytest.raises(DimensionError):
        T.conv1d(Tensor(np.ones((1, 1, 2))), Tensor(np.ones((1, 1, 5))))


def test_conv2d_examples():
    x = Tensor(np.random.default_rng(1).normal(size=(1, 1, 4, 3)))
    np.testing.assert_allclose(T.conv2d(x, Tensor(np.ones((1, 1, 1, 1)))).data, x.data)
    out = T.conv2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), Tensor(np.ones((1, 1, 2, 2))))
    assert out.data.tolist() == [[[[10.0]]]]


def test_softmax_examples():
    assert np.allclose(T.softmax_t(Tensor([[0.0, 0.0]]), 0.3).data, [[0.5, 0.5]])
    np.testing.assert_allclose(T.softmax_t(Tensor([[np.log(3.0), 0.0]]), 1.0).data, [[0.75, 0.25]], atol=1e-12)
    seq = [T.softmax_t(Tensor([[1.0, 2.0]]), tau).data[0, 1] for tau in (1.0, 0.1, 0.01)]
    assert seq[0] < seq[1] < seq[2] and seq[2] > 1 - 1e-12
    with pytest.raises(ParameterError):
        T.softmax_t(Tensor([[1.0]]), 0.0)
    with pytest.raises(ParameterError):
        T.log_softmax_t(Tensor([[1.0]]), -1.0)


def test_softmax_rows_and_shift_invariance():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(8, 10)).astype(np.float32) * 20
    p = T.softmax_t(Tensor(z), 0.1).data
    assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-6)
    q = T.softmax_t(Tensor(z + 7.5), 0.1).data
    np.testing.assert_allclose(p, q, atol=1e-6)


def test_elementwise_examples():
    assert T.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert T.sigmoid(Tensor([0.0])).item() == 0.5
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.tsum(x * x).backward()
    assert np.array_equal(x.grad, 2 * x.data)
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        T.log(Tensor([-2.0]))


def test_nonfinite_values_raise():
    with pytest.raises(NumericError):
        Tensor([np.nan])
    with pytest.raises(NumericError):
        T.exp(Tensor([1000.0], dtype=np.float64))


def test_batch_norm_eval_deterministic_and_running_stats():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(2.0, 3.0, size=(64, 2, 8)))
    g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
    rm, rv = np.zeros(2), np.ones(2)
    T.batch_norm(x, g, b, rm, rv, training=True)
    n = 64 * 8
    mu = x.data.mean(axis=(0, 2))
    var = x.data.var(axis=(0, 2)) * n / (n - 1)
    np.testing.assert_allclose(rm, 0.1 * mu)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * var)
    a = T.batch_norm(x, g, b, rm, rv, training=False).data
    c = T.batch_norm(x, g, b, rm, rv, training=False).data
    assert np.array_equal(a, c)


# -- backward contract ---------------------------------------------------------------

def test_sum_gives_ones_and_accumulates():
    x = Tensor(np.ones((2, 3, 4)), requires_grad=True)
    T.tsum(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3, 4)))
    T.tsum(x).backward()
    assert np.array_equal(x.grad, 2 * np.ones((2, 3, 4)))
    x.zero_grad()
    assert x.grad is None


def test_backward_requires_scalar_and_is_noop_without_leaves():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(DimensionError):
        (x * 2.0).backward()
    y = Tensor(np.ones(3))
    T.tsum(y * 3.0).backward()      # nothing tracks gradients
    assert y.grad is None


def test_tape_released_after_backward():
    x = Tensor(np.ones(3), requires_grad=True)
    h = x * 2.0
    loss = T.tsum(h)
    loss.backward()
    assert h._parents == () and loss._parents == ()


def test_no_grad_context():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = x * 2.0
        assert not T.is_grad_enabled()
    assert not y.requires_grad
    assert T.is_grad_enabled()


def test_float32_default_dtype():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.ones(2, dtype=np.float64)).dtype == np.float64


# -- optimizers --------------------------------------------------------------------

def test_sgd_examples():
    p = Tensor([1.0], dtype=np.float64)
    sgd_step([p], [np.array([1.0])], 0.1)
    assert p.data[0] == pytest.approx(0.9)
    q = Tensor([0.3, -0.2])
    before = q.data.copy()
    sgd_step([q], [np.zeros(2)], 0.5)
    assert np.array_equal(q.data, before)
    with pytest.raises(ParameterError):
        sgd_step([q], [np.zeros(2)], 0.0)
    with pytest.raises(DimensionError):
        sgd_step([q], [], 0.1)


def test_adam_first_step_matches_hand_recurrence():
    p = Tensor([2.0], dtype=np.float64)
    state = AdamState([p])
    adam_step([p], [np.array([1.0])], state, lr=1e-3)
    m = 0.1 * 1.0
    v = 0.001 * 1.0
    step = 1e-3 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    assert p.data[0] == pytest.approx(2.0 - step, abs=1e-15)
    assert 2.0 - p.data[0] == pytest.approx(1e-3, rel=1e-6)
    with pytest.raises(ParameterError):
        adam_step([p], [np.array([1.0])], state, lr=-1.0)


def test_optimizer_classes_use_grads():
    p = Tensor([1.0, 1.0], requires_grad=True, dtype=np.float64)
    opt = SGD([p], lr=0.5)
    T.tsum(p * p).backward()
    opt.step()
    np.testing.assert_allclose(p.data, [0.0, 0.0])
    opt.zero_grad()
    assert p.grad is None
    a = Adam([p], lr=0.1)
    a.step()    # no gradient yet: parameters stay put
    np.testing.assert_allclose(p.data, [0.0, 0.0])
