import numpy as np
import pytest

from aisgraph import numerics as nx
from aisgraph.numerics import ParamStore, Tensor, adam_step, grad_check


def central_diff(f, x, eps=1e-5):
    """Independent finite-difference oracle on plain numpy functions."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        up = f(x)
        x[idx] = orig - eps
        down = f(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * eps)
    return g


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    y = x * x
    y.backward()
    assert x.grad == pytest.approx(6.0)


def test_linear_mse_matches_finite_differences():
    rng = np.random.default_rng(1)
    W0 = rng.normal(size=(2, 2))
    x = rng.normal(size=(2, 1))
    y = rng.normal(size=(2, 1))
    W = Tensor(W0.copy(), requires_grad=True)
    diff = W @ Tensor(x) - Tensor(y)
    loss = nx.mean(diff * diff)
    loss.backward()
    oracle = central_diff(lambda w: float(np.mean((w @ x - y) ** 2)), W0.copy())
    rel = np.abs(W.grad - oracle) / np.maximum(1e-8, np.abs(oracle))
    assert rel.max() < 1e-6


def test_constant_loss_gives_zero_grads():
    w = Tensor(np.ones(3), requires_grad=True)
    loss = nx.sum(w * 0.0) + 4.0
    loss.backward()
    assert np.all(w.grad == 0)


@pytest.mark.parametrize(
    "op, ref, domain",
    [
        (nx.sigmoid, lambda a: 1 / (1 + np.exp(-a)), (-4, 4)),
        (nx.tanh, np.tanh, (-2, 2)),
        (nx.exp, np.exp, (-2, 2)),
        (nx.log, np.log, (0.5, 3)),
        (nx.softplus, lambda a: np.log1p(np.exp(a)), (-3, 3)),
        (lambda t: nx.power(t, 1.5), lambda a: a ** 1.5, (0.5, 2)),
    ],
)
def test_unary_ops_against_finite_differences(op, ref, domain):
    rng = np.random.default_rng(2)
    x0 = rng.uniform(*domain, size=(3, 4))
    x = Tensor(x0.copy(), requires_grad=True)
    nx.sum(op(x) * Tensor(np.arange(12.0).reshape(3, 4))).backward()
    oracle = central_diff(lambda a: float(np.sum(ref(a) * np.arange(12.0).reshape(3, 4))), x0.copy())
    np.testing.assert_allclose(x.grad, oracle, rtol=1e-6, atol=1e-8)


def test_relu_and_clamp_gradients():
    x = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
    nx.sum(nx.relu(x) + nx.clamp(x, 0.0, 1.0)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 2.0, 1.0])


def test_shape_ops_round_trip_gradients():
    rng = np.random.default_rng(3)
    a0 = rng.normal(size=(2, 3, 4))
    a = Tensor(a0.copy(), requires_grad=True)
    b = nx.transpose(a, (0, 2, 1))
    c = nx.reshape(b, (8, 3))
    d = nx.concat([c[np.array([0, 0, 5])], c[1:3]], axis=0)
    nx.sum(d * d).backward()

    def f(v):
        cc = np.transpose(v, (0, 2, 1)).reshape(8, 3)
        dd = np.concatenate([cc[[0, 0, 5]], cc[1:3]])
        return float(np.sum(dd * dd))

    np.testing.assert_allclose(a.grad, central_diff(f, a0.copy()), rtol=1e-6, atol=1e-8)


def test_batched_matmul_and_scatter():
    rng = np.random.default_rng(4)
    a0, w0, v0 = rng.normal(size=(3, 4, 2)), rng.normal(size=(2, 5)), rng.normal(size=4)
    a = Tensor(a0.copy(), requires_grad=True)
    w = Tensor(w0.copy(), requires_grad=True)
    v = Tensor(v0.copy(), requires_grad=True)
    rows, cols = np.array([0, 1, 2, 0]), np.array([1, 2, 0, 1])
    s = nx.scatter(v, (rows, cols), (3, 3))
    loss = nx.sum(a @ w) + nx.sum(s @ s)
    loss.backward()

    def fa(x):
        return float(np.sum(x @ w0))

    def fv(x):
        m = np.zeros((3, 3))
        np.add.at(m, (rows, cols), x)
        return float(np.sum(m @ m))

    np.testing.assert_allclose(a.grad, central_diff(fa, a0.copy()), rtol=1e-6)
    np.testing.assert_allclose(w.grad, central_diff(lambda x: float(np.sum(a0 @ x)), w0.copy()), rtol=1e-6)
    np.testing.assert_allclose(v.grad, central_diff(fv, v0.copy()), rtol=1e-6, atol=1e-9)


def test_layer_norm_gradient():
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(4, 6))
    params = {
        "x": Tensor(x0, requires_grad=True),
        "g": Tensor(rng.normal(size=6), requires_grad=True),
        "b": Tensor(rng.normal(size=6), requires_grad=True),
    }
    weights = Tensor(rng.normal(size=(4, 6)))
    err = grad_check(lambda: nx.sum(nx.layer_norm(params["x"], params["g"], params["b"]) * weights), params)
    assert err < 1e-6


def test_implicit_broadcast_is_rejected():
    with pytest.raises(nx.ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones(3))
    with pytest.raises(nx.ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    # scalar * tensor is the one permitted broadcast
    assert (Tensor(np.ones((2, 3))) * 2.0).shape == (2, 3)


def test_grad_check_linear_layer():
    rng = np.random.default_rng(6)
    params = {"W": Tensor(rng.normal(size=(3, 2)), requires_grad=True),
              "b": Tensor(rng.normal(size=2), requires_grad=True)}
    X = Tensor(rng.normal(size=(5, 3)))
    y = rng.normal(size=(5, 2))

    def loss():
        out = X @ params["W"] + nx.expand(params["b"], (5, 2))
        d = out - Tensor(y)
        return nx.mean(d * d)

    assert grad_check(loss, params) < 1e-7


def test_grad_check_skips_relu_kink():
    p = {"x": Tensor(np.array([0.0, 1.0]), requires_grad=True)}
    err = grad_check(lambda: nx.sum(nx.relu(p["x"])), p, skip=lambda name, idx: p[name].data[idx] == 0.0)
    assert err < 1e-7


# -- Adam -------------------------------------------------------------------

def _store(value):
    s = ParamStore()
    s.add("p", np.array(value, dtype=float))
    return s


def test_adam_zero_grad_no_decay_is_identity():
    s = _store([1.0, -2.0])
    adam_step(s, {"p": np.zeros(2)}, weight_decay=0.0)
    np.testing.assert_array_equal(s["p"].data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    s = _store(0.5)
    adam_step(s, {"p": np.array(1.0)}, lr=1e-3, weight_decay=0.0)
    # bias-corrected m_hat = v_hat = 1 at t = 1
    assert s["p"].item() == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)


def test_adam_decoupled_decay_shrinks():
    s = _store([2.0, -4.0])
    adam_step(s, {"p": np.zeros(2)}, lr=1e-3, weight_decay=1e-5)
    np.testing.assert_allclose(s["p"].data, np.array([2.0, -4.0]) * (1 - 1e-3 * 1e-5), rtol=0, atol=1e-15)


def test_adam_only_moves_named_params():
    s = ParamStore()
    s.add("a", np.ones(2))
    s.add("b", np.ones(2))
    adam_step(s, {"a": np.ones(2)})
    assert s.steps == {"a": 1, "b": 0}
    np.testing.assert_array_equal(s["b"].data, np.ones(2))


def test_non_finite_parameter_raises():
    s = _store([1.0])
    with pytest.raises(nx.NumericError):
        adam_step(s, {"p": np.array([np.nan])})


def test_clip_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    norm = nx.clip_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(sum(np.sum(g * g) for g in grads.values()))
    assert total == pytest.approx(1.0)


def test_checkpoint_round_trip(tmp_path):
    path = tmp_path / "m.ckpt"
    tensors = {"w": np.arange(6.0).reshape(2, 3), "s": np.array(1.5), "e": np.zeros(0)}
    nx.save_checkpoint(path, tensors, {"width": 3})
    back, cfg = nx.load_checkpoint(path)
    assert cfg == {"width": 3}
    for k, v in tensors.items():
        np.testing.assert_array_equal(back[k], v)
    raw = path.read_bytes()
    assert raw[:4] == b"AGCK" and raw[4] == nx.CHECKPOINT_VERSION


def test_checkpoint_rejects_unknown_version(tmp_path):
    path = tmp_path / "m.ckpt"
    nx.save_checkpoint(path, {"w": np.ones(2)})
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="version"):
        nx.load_checkpoint(path)
