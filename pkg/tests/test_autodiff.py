import numpy as np
import pytest

from neuralcloth import autodiff as ad
from neuralcloth.errors import ShapeError
from neuralcloth.gradcheck import relative_error


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def check(build, *shapes, seed=0, tol=1e-7):
    rng = np.random.default_rng(seed)
    leaves = [ad.Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
    out = ad.total(build(*leaves))
    out.backward()
    for leaf in leaves:
        num = numeric_grad(lambda: float(ad.value(ad.total(build(*[l.value for l in leaves])))), leaf.value)
        assert relative_error(leaf.grad, num) < tol


def test_linear_layer_3x4():
    check(lambda x, w, b: ad.add(ad.matmul(x, w), b), (5, 3), (3, 4), (4,), tol=1e-5)


def test_batched_matmul():
    check(lambda x, w: ad.matmul(x, w), (2, 3, 4), (4, 2))


@pytest.mark.parametrize("op", [ad.relu, ad.sigmoid, ad.tanh])
def test_unary(op):
    check(lambda x: ad.mul(op(x), x), (4, 3))


def test_broadcast_sub_mul():
    check(lambda a, b: ad.mul(ad.sub(a, b), ad.sub(1.0, b)), (3, 4), (1, 4))


def test_concat_stack_reshape_take():
    def build(a, b):
        c = ad.concat([a, b], axis=-1)
        s = ad.stack([c, ad.tanh(c)], axis=0)
        r = ad.reshape(s, (2, -1))
        return ad.mul(ad.take(r, np.array([0, 1, 1]), axis=0), ad.take(r, 1, axis=0))

    check(build, (3, 2), (3, 3))


def test_custom_vjp():
    def build(x):
        return ad.custom(ad.value(x) ** 3, (x,), (lambda g: 3 * ad.value(x) ** 2 * g,))

    check(build, (4,))


def test_duplicated_inputs_accumulate_once():
    x = ad.Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = ad.mul(x, x)
    z = ad.add(y, y)
    ad.total(z).backward()
    assert np.allclose(x.grad, 4 * x.value)
    # diamond: two paths through one shared intermediate
    x.grad = None
    h = ad.tanh(x)
    ad.total(ad.add(ad.mul(h, 2.0), ad.mul(h, h))).backward()
    t = np.tanh(x.value)
    assert np.allclose(x.grad, (2 + 2 * t) * (1 - t * t))


def test_backward_visits_each_node_once():
    calls = []
    x = ad.Tensor(np.ones(3), requires_grad=True)
    h = ad.tanh(x)
    inner = h.backward_fn
    h.backward_fn = lambda g: (calls.append(1), inner(g))
    ad.total(ad.add(ad.add(h, h), ad.mul(h, 3.0))).backward()
    assert len(calls) == 1


def test_graph_free_mode_returns_arrays():
    out = ad.matmul(np.ones((2, 3)), np.ones((3, 4)))
    assert isinstance(out, np.ndarray)
    s = ad.stop_gradient(ad.Tensor(np.ones(2), requires_grad=True))
    assert isinstance(s, np.ndarray)


def test_shape_errors():
    with pytest.raises(ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((4, 2)))
