import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedgl import autodiff as ad
from fedgl.autodiff import Tensor
from fedgl.errors import AggregationError, DimensionError, TrainingError

from oracles import central_diff, grad_close


def check_unary(op, shape, rng, **kw):
    x = rng.standard_normal(shape)
    w = rng.standard_normal(op(Tensor(x), **kw).shape)  # random projection to a scalar
    leaf = Tensor(x, requires_grad=True)
    out = op(leaf, **kw)
    loss = ad.matmul(ad.reshape(ad.mul(out, Tensor(w)), 1, out.value.size), Tensor(np.ones((out.value.size, 1))))
    loss.backward()
    num = central_diff(lambda: float(np.sum(op(Tensor(x), **kw).value * w)), x)
    return leaf.grad, num


@pytest.mark.parametrize("name,op,shape", [
    ("relu", ad.relu, (4, 3)),
    ("sigmoid", ad.sigmoid, (4, 3)),
    ("row_avg_pool", ad.row_avg_pool, (5, 4)),
    ("col_avg_pool", ad.col_avg_pool, (5, 4)),
    ("transpose", ad.transpose, (3, 5)),
    ("reshape", lambda a: ad.reshape(a, 2, 6), (3, 4)),
])
def test_unary_ops_match_finite_differences(name, op, shape):
    rng = np.random.default_rng(1)
    ana, num = check_unary(op, shape, rng)
    assert grad_close(ana, num), name


def test_binary_ops_match_finite_differences():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    c = rng.standard_normal((4, 2))
    bias = rng.standard_normal((1, 4))
    s = np.array([[1.7]])
    m = (rng.random((3, 4)) < 0.5).astype(float)
    pos = rng.random((3, 4)) + 0.5

    def build(ta, tb, tc, tbias, ts, tpos):
        h = ad.add(ad.mul(ta, tb), tbias)
        h = ad.sub(h, ad.div(ta, tpos))
        h = ad.mask_apply(ad.scale(h, ts), m)
        return ad.softmax_cross_entropy(ad.matmul(h, tc), np.array([0, 1, 1]))

    arrays = [a, b, c, bias, s, pos]
    leaves = [Tensor(v, requires_grad=True) for v in arrays]
    build(*leaves).backward()
    for leaf, arr in zip(leaves, arrays):
        num = central_diff(lambda: float(build(*[Tensor(v) for v in arrays]).value[0, 0]), arr)
        assert grad_close(leaf.grad, num)


def test_dropout_gradient_with_fixed_mask():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 5))
    mask = (rng.random((4, 5)) >= 0.3).astype(float)
    leaf = Tensor(x, requires_grad=True)
    loss = ad.row_avg_pool(ad.dropout(leaf, 0.3, train=True, mask=mask))
    loss = ad.col_avg_pool(loss)
    loss.backward()
    num = central_diff(lambda: float(ad.col_avg_pool(ad.row_avg_pool(
        ad.dropout(Tensor(x), 0.3, train=True, mask=mask))).value[0, 0]), x)
    assert grad_close(leaf.grad, num)


def test_two_layer_network_gradient():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 5))
    params = {"W1": rng.standard_normal((5, 7)), "b1": rng.standard_normal((1, 7)),
              "W2": rng.standard_normal((7, 3)), "b2": rng.standard_normal((1, 3))}
    y = np.array([0, 2, 1, 1, 0, 2])

    def loss_of(p):
        h = ad.relu(ad.add(ad.matmul(Tensor(x), p["W1"]), p["b1"]))
        return ad.softmax_cross_entropy(ad.add(ad.matmul(h, p["W2"]), p["b2"]), y)

    leaves = ad.leaves(params)
    loss_of(leaves).backward()
    grads = ad.collect_grads(leaves)
    for name, arr in params.items():
        num = central_diff(lambda: float(loss_of({k: Tensor(v) for k, v in params.items()}).value[0, 0]), arr)
        assert grad_close(grads[name], num, rtol=1e-4), name


def test_closed_forms():
    assert ad.sigmoid(Tensor(0.0)).value[0, 0] == 0.5
    assert ad.relu(Tensor(-1.0)).value[0, 0] == 0.0
    for L in (2, 3, 7):
        loss = ad.softmax_cross_entropy(Tensor(np.zeros((4, L))), np.arange(4) % L)
        assert loss.value[0, 0] == pytest.approx(np.log(L), abs=1e-12)


def test_dropout_eval_is_identity():
    x = np.arange(12.0).reshape(3, 4)
    out = ad.dropout(Tensor(x), 0.5, rng=np.random.default_rng(0), train=False)
    assert np.array_equal(out.value, x)


def test_binarize_threshold_inclusive_and_straight_through():
    x = Tensor(np.array([[0.49, 0.5, 0.51]]), requires_grad=True)
    out = ad.binarize_ste(x, 0.5)
    assert out.value.tolist() == [[0.0, 1.0, 1.0]]
    ad.matmul(out, Tensor(np.array([[1.0], [2.0], [3.0]]))).backward()
    assert x.grad.tolist() == [[1.0, 2.0, 3.0]]


@pytest.mark.parametrize("op,a,b", [
    (ad.matmul, (2, 3), (2, 3)),
    (ad.add, (2, 3), (3, 2)),
    (ad.mul, (2, 3), (2, 4)),
])
def test_shape_mismatch_names_both_shapes(op, a, b):
    with pytest.raises(DimensionError) as exc:
        op(Tensor(np.zeros(a)), Tensor(np.zeros(b)))
    assert str(a) in str(exc.value) and str(b) in str(exc.value)


def test_backward_requires_scalar():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 2)), requires_grad=True).backward()


def test_gradient_shape_matches_value():
    rng = np.random.default_rng(5)
    w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    ad.col_avg_pool(ad.row_avg_pool(ad.sigmoid(w))).backward()
    assert w.grad.shape == w.value.shape


def test_forward_is_deterministic():
    def run():
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((4, 4)))
        return ad.dropout(ad.sigmoid(x), 0.2, rng=rng, train=True).value

    assert np.array_equal(run(), run())


# --- Adam ----------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([[1.0, -2.0]])}
    state = ad.AdamState()
    ad.adam_step(p, {"w": np.zeros((1, 2))}, state)
    assert p["w"].tolist() == [[1.0, -2.0]] and state.t == 1


def test_adam_descends_on_square():
    p = {"w": np.array([[1.0]])}
    ad.adam_step(p, {"w": 2 * p["w"]}, ad.AdamState(), lr=0.1)
    assert p["w"][0, 0] < 1.0


def test_adam_converges_on_quadratic():
    rng = np.random.default_rng(0)
    q = rng.standard_normal((4, 4))
    A = q @ q.T + 4 * np.eye(4)
    b = rng.standard_normal((4, 1))
    p = {"x": np.zeros((4, 1))}
    state = ad.AdamState()
    for _ in range(200):
        ad.adam_step(p, {"x": A @ p["x"] - b}, state, lr=0.1)
    # oracle: the exact minimiser
    assert np.linalg.norm(A @ p["x"] - b) < 1e-3
    assert np.allclose(p["x"], np.linalg.solve(A, b), atol=1e-3)


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(TrainingError, match="bias"):
        ad.adam_step({"bias": np.zeros((1, 1))}, {"bias": np.array([[np.nan]])}, ad.AdamState())


def test_adam_lr_zero_is_noop():
    p = {"w": np.array([[0.3]])}
    ad.adam_step(p, {"w": np.array([[5.0]])}, ad.AdamState(), lr=0.0)
    assert p["w"][0, 0] == 0.3


# --- parameter vectors ------------------------------------------------------

shapes = st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=4)


@settings(max_examples=50, deadline=None)
@given(shapes, st.integers(0, 2**31 - 1))
def test_flatten_unflatten_roundtrip(shape_list, seed):
    rng = np.random.default_rng(seed)
    params = {f"p{i}": rng.standard_normal(s) for i, s in enumerate(shape_list)}
    back = ad.unflatten(ad.flatten(params))
    assert list(back) == list(params)
    assert all(np.array_equal(back[k], params[k]) for k in params)


def test_average_params_examples():
    rng = np.random.default_rng(1)
    v = ad.flatten({"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((1, 2))})
    assert np.array_equal(ad.average_params([v]).values, v.values)
    neg = ad.ParamVector(v.layout, -v.values)
    assert np.all(ad.average_params([v, neg]).values == 0)
    vs = [ad.ParamVector(v.layout, rng.standard_normal(v.values.shape)) for _ in range(3)]
    naive = np.array([sum(x.values[i] for x in vs) / 3 for i in range(len(v.values))])
    assert np.array_equal(ad.average_params(vs).values, naive)


def test_average_params_errors():
    with pytest.raises(AggregationError):
        ad.average_params([])
    a = ad.flatten({"a": np.zeros((1, 2))})
    b = ad.flatten({"a": np.zeros((2, 1))})
    with pytest.raises(AggregationError):
        ad.average_params([a, b])


def test_save_load_params(tmp_path):
    rng = np.random.default_rng(2)
    pv = ad.flatten({"w": rng.standard_normal((3, 2)), "eps": np.zeros((1, 1))})
    ad.save_params(tmp_path / "p.npz", pv)
    back = ad.load_params(tmp_path / "p.npz")
    assert back.layout == pv.layout and np.array_equal(back.values, pv.values)
    assert back.checksum() == pv.checksum()
