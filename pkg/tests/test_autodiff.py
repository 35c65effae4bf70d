import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gda.autodiff import Adam, AdamState, Tensor, adam_step, grad_check, no_grad, ops
from gda.autodiff import nn
from gda.autodiff.checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from gda.autodiff.gradcheck import leaf


def naive_conv2d(x, w, b, stride, pad, groups=1):
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    og = o // groups
    for b_ in range(n):
        for oc in range(o):
            g = oc // og
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(cg):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[b_, g * cg + ic, i * stride + di, j * stride + dj] * w[oc, ic, di, dj]
                    out[b_, oc, i, j] = acc + (b[oc] if b is not None else 0.0)
    return out


def weighted_sum(y, rng):
    # random projection keeps gradients O(1) so relative error is meaningful
    return ops.tsum(ops.mul(y, Tensor(rng.normal(size=y.shape))))


# ---------------------------------------------------------------- forward values

def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ops.matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])


def test_mean_square_gradient_by_hand():
    x = leaf([1.0, -2.0, 3.0])
    loss = ops.mean(ops.mul(x, x))
    loss.backward()
    np.testing.assert_allclose(x.grad, [2 / 3, -4 / 3, 2.0], rtol=0, atol=1e-15)
    assert grad_check(lambda t: ops.mean(ops.mul(t, t)), [x]) < 1e-8


def test_softmax_constant_vector():
    x = leaf(np.full(5, 0.7))
    y = ops.softmax(x)
    np.testing.assert_allclose(y.data, 0.2, atol=1e-15)
    ops.tsum(y).backward()
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_softmax_rows_sum_to_one(seed):
    x = Tensor(np.random.default_rng(seed).normal(scale=5, size=(7, 9)))
    np.testing.assert_allclose(ops.softmax(x).data.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 6), st.integers(0, 10_000))
def test_cross_entropy_non_negative(n, k, seed):
    rng = np.random.default_rng(seed)
    logits = Tensor(rng.normal(scale=3, size=(n, k)))
    assert ops.cross_entropy_loss(logits, rng.integers(0, k, size=n)).item() >= 0.0


def test_cross_entropy_vanishes_only_for_confident_correct():
    labels = np.array([0, 2, 1])
    perfect = Tensor(np.eye(3)[labels] * 1000.0)
    assert ops.cross_entropy_loss(perfect, labels).item() == 0.0
    assert ops.cross_entropy_loss(Tensor(np.eye(3)[labels]), labels).item() > 0.0


@pytest.mark.parametrize("stride,padding,groups,shape", [
    (1, "same", 1, (2, 3, 8, 8)),
    (2, "same", 1, (2, 4, 9, 7)),
    (1, "valid", 1, (1, 2, 6, 6)),
    (2, "valid", 2, (2, 4, 8, 8)),
    (1, "same", 4, (2, 4, 5, 5)),
    (2, "same", 1, (2, 8, 16, 16)),
])
def test_conv2d_matches_naive_loops(stride, padding, groups, shape):
    rng = np.random.default_rng(1)
    x = rng.normal(size=shape)
    c = shape[1]
    w = rng.normal(size=(4, c // groups, 3, 3))
    b = rng.normal(size=4)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding, groups=groups).data
    pad = 1 if padding == "same" else 0
    np.testing.assert_allclose(got, naive_conv2d(x, w, b, stride, pad, groups), rtol=0, atol=1e-10)


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        ops.add(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_nan_in_forward_is_detected():
    with pytest.raises(FloatingPointError):
        ops.scale(Tensor([1.0, np.nan]), 2.0)


def test_no_grad_builds_no_graph():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = ops.mul(x, x)
    assert not y.requires_grad and y._parents == ()


# ---------------------------------------------------------------- gradient checks
# Each differentiable op is checked on 20 random instances.

INSTANCES = range(20)


def _rng(seed):
    return np.random.default_rng(1000 + seed)


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_elementwise_and_broadcast(seed):
    rng = _rng(seed)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(1, 4)))
    proj = rng.normal(size=(3, 4))
    f = lambda a, b: ops.tsum(ops.mul(ops.add(ops.mul(a, b), ops.scale(a, 0.3)), Tensor(proj)))
    assert grad_check(f, [a, b]) < 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_relu_silu(seed):
    rng = _rng(seed)
    x = rng.normal(size=(5, 6))
    x[np.abs(x) < 1e-3] = 0.5  # stay away from the relu kink
    t = leaf(x)
    proj = rng.normal(size=(5, 6))
    f = lambda t: ops.tsum(ops.mul(ops.add(ops.relu(t), ops.silu(t)), Tensor(proj)))
    assert grad_check(f, [t]) < 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_matmul_batched(seed):
    rng = _rng(seed)
    a, b = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(4, 5)))
    assert grad_check(lambda a, b: weighted_sum(ops.matmul(a, b), np.random.default_rng(seed)), [a, b]) < 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_conv2d(seed):
    rng = _rng(seed)
    stride = 1 + seed % 2
    groups = 2 if seed % 3 == 0 else 1
    x = leaf(rng.normal(size=(2, 4, 6, 5)))
    w = leaf(rng.normal(size=(4, 4 // groups, 3, 3)))
    b = leaf(rng.normal(size=4))
    f = lambda x, w, b: weighted_sum(ops.conv2d(x, w, b, stride=stride, groups=groups), np.random.default_rng(seed))
    assert grad_check(f, [x, w, b]) < 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_layer_norm(seed):
    rng = _rng(seed)
    x = leaf(rng.normal(size=(2, 3, 4, 4)))
    g, b = leaf(rng.normal(size=(1, 3, 1, 1))), leaf(rng.normal(size=(1, 3, 1, 1)))
    f = lambda x, g, b: weighted_sum(ops.layer_norm(x, g, b, axes=(1, 2, 3)), np.random.default_rng(seed))
    assert grad_check(f, [x, g, b]) < 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_softmax(seed):
    rng = _rng(seed)
    x = leaf(rng.normal(size=(3, 5)))
    assert grad_check(lambda x: weighted_sum(ops.softmax(x), np.random.default_rng(seed)), [x]) < 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_embedding(seed):
    rng = _rng(seed)
    table = leaf(rng.normal(size=(6, 3)))
    idx = rng.integers(0, 6, size=8)
    assert grad_check(lambda t: weighted_sum(ops.embedding(t, idx), np.random.default_rng(seed)), [table]) < 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_mean_mse_cross_entropy(seed):
    rng = _rng(seed)
    p, q = leaf(rng.normal(size=(4, 3))), leaf(rng.normal(size=(4, 3)))
    labels = rng.integers(0, 3, size=4)
    assert grad_check(lambda p, q: ops.mse_loss(p, q), [p, q]) < 1e-4
    assert grad_check(lambda p: ops.cross_entropy_loss(p, labels), [p]) < 1e-4
    assert grad_check(lambda p: ops.mean(ops.mul(p, p), axis=1).sum(), [p]) < 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_shape_ops(seed):
    rng = _rng(seed)
    x = leaf(rng.normal(size=(2, 3, 4, 4)))
    y = leaf(rng.normal(size=(2, 1, 4, 4)))

    def f(x, y):
        z = ops.concat([x, y], axis=1)
        z = ops.upsample2x(z)[:, :, ::2, 1::3]
        z = ops.transpose(z, (0, 2, 3, 1)).reshape(2, -1)
        return weighted_sum(z, np.random.default_rng(seed))

    assert grad_check(f, [x, y]) < 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_linear_mse(seed):
    rng = _rng(seed)
    layer = nn.Linear(5, 3).initialize(seed)
    x = Tensor(rng.normal(size=(7, 5)))
    target = Tensor(rng.normal(size=(7, 3)))
    params = [layer.weight, layer.bias]
    assert grad_check(lambda w, b: ops.mse_loss(layer(x), target), params) < 1e-6


@pytest.mark.parametrize("seed", INSTANCES)
def test_grad_attention_block(seed):
    rng = _rng(seed)
    block = nn.SelfAttention(8).initialize(seed)
    x = leaf(rng.normal(size=(1, 4, 8)))
    proj = rng.normal(size=(1, 4, 8))
    f = lambda x, *_: ops.mean(ops.mul(block(x), Tensor(proj)))
    assert grad_check(f, [x] + block.parameters()) < 1e-4


def test_grad_check_of_constant_is_zero():
    x = leaf([1.0, 2.0])
    assert grad_check(lambda x: ops.tsum(ops.scale(x, 0.0)), [x]) == 0.0


def test_grad_check_rejects_vector_output():
    with pytest.raises(ValueError):
        grad_check(lambda x: ops.scale(x, 2.0), [leaf([1.0, 2.0])])


# ---------------------------------------------------------------- Adam

def test_adam_zero_grad_leaves_params_unchanged():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState(lr=0.1))
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_is_about_lr():
    params = {"w": np.array([0.5])}
    state = AdamState(lr=0.001)
    adam_step(params, {"w": np.array([0.1])}, state)
    # m_hat = 0.1, v_hat = 0.01, update = lr * 0.1 / (0.1 + 1e-8)
    np.testing.assert_allclose(0.5 - params["w"][0], 0.001 * 0.1 / (0.1 + 1e-8), rtol=1e-12)
    assert state.step_count == 1
    assert np.all(state.v["w"] >= 0)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


def _train_tiny(seed):
    layer = nn.Linear(4, 2).initialize(seed)
    opt = Adam(layer.named_parameters(), lr=1e-2)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(16, 4)), rng.normal(size=(16, 2))
    for _ in range(30):
        opt.zero_grad()
        ops.mse_loss(layer(Tensor(x)), Tensor(y)).backward()
        opt.step()
    return layer.state_dict()


def test_training_is_bitwise_deterministic():
    a, b = _train_tiny(3), _train_tiny(3)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_init_streams_independent_of_creation_order():
    class A(nn.Module):
        def __init__(self):
            self.first = nn.Linear(3, 3)
            self.second = nn.Linear(3, 3)

    class B(nn.Module):
        def __init__(self):
            self.second = nn.Linear(3, 3)
            self.first = nn.Linear(3, 3)

    a, b = A().initialize(9).state_dict(), B().initialize(9).state_dict()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    assert not np.array_equal(a["first.weight"], a["second.weight"])


# ---------------------------------------------------------------- checkpoints

@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=12),
                       st.lists(st.integers(1, 4), min_size=0, max_size=3), max_size=4),
       st.integers(0, 2**63), st.integers(0, 2**40))
def test_checkpoint_round_trip(tmp_path_factory, shapes, seed, step):
    rng = np.random.default_rng(0)
    params = {k: rng.normal(size=tuple(s)) for k, s in shapes.items()}
    path = tmp_path_factory.mktemp("ck") / "m.gdam"
    write_checkpoint(path, params, seed=seed, step=step)
    got, meta = read_checkpoint(path)
    assert meta == {"seed": seed, "step": step}
    assert list(got) == list(params)
    for k in params:
        assert got[k].shape == params[k].shape
        assert got[k].tobytes() == params[k].tobytes()


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "m.gdam"
    write_checkpoint(path, {"w": np.ones((3, 3))})
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(path)
    path.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(path)
