import numpy as np
import pytest

from ecgssl import checkpoint, tensor as T
from ecgssl.augment import TIME, TIMEFREQ
from ecgssl.encoders import (EncoderConfig, Encoder1d, Encoder2d, ProjectionHead, SEBlock, build_encoder,
                             encode_1d, encode_2d, project, se_block)
from ecgssl.errors import DimensionError, ParameterError
from ecgssl.tensor import Tensor

from _oracles import numeric_grad, rel_err

TINY = dict(stages=[(4, 1, 2), (4, 1, 1)], feature_dim=3, input_channels=2, se_reduction=2)


def _end_to_end_check(encoder, x, seed, per_tensor=4):
    """Finite differences on the input and a random subset of every parameter's entries."""
    rng = np.random.default_rng(1000 + seed)
    params = encoder.parameters()
    proj = rng.normal(size=(x.shape[0], encoder.cfg.feature_dim))
    xt = Tensor(x, requires_grad=True)
    T.tsum(encoder(xt) * Tensor(proj)).backward()

    def f():
        return float(np.sum(encoder(Tensor(x)).data * proj))

    arrays = [x] + [p.data for p in params]
    picks = [rng.choice(a.size, size=min(per_tensor, a.size), replace=False) for a in arrays]
    numeric = numeric_grad(f, arrays, picks)
    analytic = [xt.grad] + [p.grad for p in params]
    for a, n, pos in zip(analytic, numeric, picks):
        assert rel_err(a, n, pos) < 1e-3


@pytest.mark.parametrize("seed", range(20))
def test_encoder_1d_gradient(seed):
    rng = np.random.default_rng(seed)
    enc = Encoder1d(EncoderConfig(**TINY), rng, dtype=np.float64)
    _end_to_end_check(enc, rng.normal(size=(3, 2, 16)), seed)


@pytest.mark.parametrize("seed", range(20))
def test_encoder_2d_gradient(seed):
    rng = np.random.default_rng(seed)
    enc = Encoder2d(EncoderConfig(**TINY), rng, dtype=np.float64)
    _end_to_end_check(enc, rng.normal(size=(3, 2, 6, 6)), seed)


def test_projection_head_gradient():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        head = ProjectionHead(5, rng, hidden=(7,), K=4, dtype=np.float64)
        f = rng.normal(size=(3, 5))
        ft = Tensor(f, requires_grad=True)
        proj = rng.normal(size=(3, 4))
        T.tsum(head(ft) * Tensor(proj)).backward()
        arrays = [f] + [p.data for p in head.parameters()]
        num = numeric_grad(lambda: float(np.sum(head(Tensor(f)).data * proj)), arrays)
        for a, n in zip([ft.grad] + [p.grad for p in head.parameters()], num):
            assert rel_err(a, n) < 1e-4


@pytest.mark.parametrize("modality,shape", [(TIME, (5, 12, 200)), (TIMEFREQ, (5, 12, 17, 12))])
def test_shape_contract_and_eval_determinism(modality, shape):
    rng = np.random.default_rng(0)
    enc = build_encoder(modality, EncoderConfig(), rng)
    x = rng.normal(size=shape).astype(np.float32)
    enc.eval()
    a = (encode_1d if modality == TIME else encode_2d)(x, enc).data
    b = (encode_1d if modality == TIME else encode_2d)(x, enc).data
    assert a.shape == (5, 64)
    assert np.array_equal(a, b)
    perm = rng.permutation(5)
    np.testing.assert_allclose(enc(Tensor(x[perm])).data, a[perm], rtol=1e-5, atol=1e-6)


def test_wrong_channel_count():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        Encoder1d(EncoderConfig(), rng)(Tensor(np.zeros((1, 3, 64))))
    with pytest.raises(DimensionError):
        Encoder2d(EncoderConfig(), rng)(Tensor(np.zeros((1, 12, 64))))


def test_config_validation():
    with pytest.raises(ParameterError):
        EncoderConfig(feature_dim=0)
    with pytest.raises(ParameterError):
        EncoderConfig(stages=[(2, 1, 1)], se_reduction=4)


def test_se_excitation_range_and_identity():
    rng = np.random.default_rng(1)
    se = SEBlock(8, 4, rng, dtype=np.float64)
    u = rng.normal(size=(3, 8, 4, 5))
    e = se.excitation(Tensor(u)).data
    assert np.all((e > 0) & (e < 1))
    # large positive bias saturates the sigmoid: excitation is 1 and the block is the identity
    se.fc2.weight.data[...] = 0
    se.fc2.bias.data[...] = 50.0
    np.testing.assert_allclose(se_block(u, se).data, u, rtol=1e-15)


def test_se_hand_case():
    se = SEBlock(2, 2, np.random.default_rng(0), dtype=np.float64)
    se.fc1.weight.data[...] = [[1.0, -1.0]]
    se.fc1.bias.data[...] = [0.5]
    se.fc2.weight.data[...] = [[2.0], [-1.0]]
    se.fc2.bias.data[...] = [0.0, 1.0]
    u = np.array([[[[3.0]], [[1.0]]]])          # 1 x 2 x 1 x 1
    h = max(0.0, 3.0 - 1.0 + 0.5)               # 2.5
    s = 1 / (1 + np.exp(-np.array([2.0 * h, -h + 1.0])))
    np.testing.assert_allclose(se(Tensor(u)).data.reshape(-1), [3.0 * s[0], 1.0 * s[1]], rtol=1e-14)


def test_se_off_matches_saturated_se():
    rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(3)
    cfg_se = EncoderConfig(**TINY)
    with_se = Encoder2d(cfg_se, rng_a, dtype=np.float64)
    for block in with_se.blocks:
        block.se.fc2.weight.data[...] = 0
        block.se.fc2.bias.data[...] = 60.0
    plain = Encoder2d(EncoderConfig(**{**TINY, "use_se": False}), rng_b, dtype=np.float64)
    state = {k: v for k, v in with_se.state_dict().items() if ".se." not in k}
    plain.load_state_dict(state)
    x = np.random.default_rng(4).normal(size=(2, 2, 6, 6))
    np.testing.assert_allclose(with_se(Tensor(x)).data, plain(Tensor(x)).data, rtol=1e-12)


def test_projection_head_zero_weights_uniform():
    head = ProjectionHead(6, np.random.default_rng(0), K=5)
    for p in head.parameters():
        p.data[...] = 0
    logits = project(np.ones((3, 6), np.float32), head)
    assert logits.shape == (3, 5)
    np.testing.assert_allclose(T.softmax_t(logits, 0.1).data, 0.2)


def test_student_teacher_shapes_and_checkpoint_roundtrip():
    cfg = EncoderConfig()
    a = build_encoder(TIMEFREQ, cfg, np.random.default_rng(0))
    b = build_encoder(TIMEFREQ, cfg, np.random.default_rng(1))
    sa, sb = a.state_dict(), b.state_dict()
    assert {k: v.shape for k, v in sa.items()} == {k: v.shape for k, v in sb.items()}
    blob = checkpoint.dumps(sa)
    b.load_state_dict(checkpoint.loads(blob))
    assert checkpoint.dumps(b.state_dict()) == blob
