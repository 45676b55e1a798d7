import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scglab import autodiff as ad
from helpers import finite_diff, rel_err


def grad_of(build, x0):
    """Analytic gradient of a scalar-valued graph w.r.t. its single leaf."""
    leaf = ad.Tensor(np.asarray(x0, dtype=np.float64), requires_grad=True)
    with ad.Tape() as tape:
        out = build(leaf)
        tape.backward(out)
    return leaf.grad


def test_relu_definition():
    out = ad.relu(ad.Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.values, [0.0, 0.0, 2.0])


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    out = ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(a))
    assert np.allclose(out.values, a)


def test_conv2d_ones_hand_summation():
    # oracle: direct summation of a 3x3 window of ones over a 5x5 ones image
    x = np.ones((1, 1, 5, 5))
    w = np.ones((1, 1, 3, 3))
    expect = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            expect[i, j] = x[0, 0, i : i + 3, j : j + 3].sum()
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(w))
    assert out.shape == (1, 1, 3, 3)
    assert np.array_equal(out.values[0, 0], expect)
    assert np.all(expect == 9.0)


def test_tempered_softmax_symmetry():
    out = ad.tempered_softmax(ad.Tensor([0.0, 0.0, 0.0]), 1.0)
    assert np.allclose(out.values, 1.0 / 3.0, atol=1e-12)


def test_tempered_softmax_scalar_oracle():
    logits = np.array([1.0, 2.0, 3.0])
    e = np.exp(logits)
    expect = e / e.sum()
    out = ad.tempered_softmax(ad.Tensor(logits), 1.0)
    assert rel_err(out.values, expect) < 1e-12


def test_tempered_softmax_high_temperature_limit():
    out = ad.tempered_softmax(ad.Tensor([1.0, 2.0, 3.0]), 1e6)
    assert np.all(np.abs(out.values - 1.0 / 3.0) < 1e-5)


def test_tempered_softmax_rejects_bad_temperature():
    with pytest.raises(ad.InvalidArgument):
        ad.tempered_softmax(ad.Tensor([0.0]), 0.0)
    with pytest.raises(ad.InvalidArgument):
        ad.tempered_softmax(ad.Tensor([0.0]), -2.0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
        min_size=1,
        max_size=8,
    ),
    st.floats(min_value=1e-3, max_value=1e6),
)
def test_softmax_simplex_property(logits, temp):
    out = ad.tempered_softmax(ad.Tensor(np.asarray(logits, dtype=np.float64)), temp).values
    assert np.all(out >= 0)
    assert abs(out.sum() - 1.0) <= 1e-9


def test_backward_square():
    leaf = ad.Tensor(3.0, requires_grad=True, dtype=np.float64)
    with ad.Tape() as tape:
        out = ad.mul(leaf, leaf)
        tape.backward(out)
    assert leaf.grad == pytest.approx(6.0, abs=1e-12)


def test_backward_cross_entropy_softmax_fd():
    rng = np.random.default_rng(7)
    logits0 = rng.normal(size=5)
    onehot = np.zeros(5)
    onehot[2] = 1.0

    def forward_np(x):
        z = x - x.max()
        p = np.exp(z) / np.exp(z).sum()
        return float(-(onehot * np.log(p)).sum())

    g = grad_of(lambda t: ad.neg(ad.sum_(ad.mul(ad.Tensor(onehot), ad.log_softmax(t)))), logits0)
    fd = finite_diff(lambda x: forward_np(x), logits0)
    assert rel_err(g, fd) < 1e-4


def test_backward_two_layer_conv_net_fd():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 2, 8, 8))
    w1 = rng.normal(size=(3, 2, 3, 3)) * 0.5
    w2 = rng.normal(size=(4, 3, 3, 3)) * 0.5

    def run(w1v, w2v):
        t1 = ad.Tensor(w1v, requires_grad=True)
        t2 = ad.Tensor(w2v, requires_grad=True)
        with ad.Tape() as tape:
            h = ad.relu(ad.conv2d(ad.Tensor(x), t1, stride=1, pad=1))
            h = ad.maxpool2d(h, 2)
            h = ad.relu(ad.conv2d(h, t2, stride=1, pad=0))
            loss = ad.mean(ad.mul(h, h))
            tape.backward(loss)
        return loss.item(), t1.grad, t2.grad

    _, g1, g2 = run(w1, w2)
    picks = [(np.unravel_index(i, w1.shape), 1) for i in rng.choice(w1.size, 5, replace=False)]
    picks += [(np.unravel_index(i, w2.shape), 2) for i in rng.choice(w2.size, 5, replace=False)]
    eps = 1e-4
    for idx, which in picks:
        wp = [w1.copy(), w2.copy()]
        wp[which - 1][idx] += eps
        hi = run(wp[0], wp[1])[0]
        wp = [w1.copy(), w2.copy()]
        wp[which - 1][idx] -= eps
        lo = run(wp[0], wp[1])[0]
        fd = (hi - lo) / (2 * eps)
        an = (g1 if which == 1 else g2)[idx]
        assert rel_err(np.array([an]), np.array([fd])) < 1e-3


def _fd_check_unary(op, np_op, make_input, n=100, seed=0):
    rng = np.random.default_rng(seed)
    proj_cache = {}
    worst = 0.0
    for _ in range(n):
        x0 = make_input(rng)
        proj = rng.normal(size=np.asarray(np_op(x0)).shape)
        g = grad_of(lambda t: ad.sum_(ad.mul(ad.Tensor(proj), op(t))), x0)
        fd = finite_diff(lambda x: float((proj * np_op(x)).sum()), x0)
        worst = max(worst, rel_err(g, fd))
    assert worst < 1e-3, worst


@pytest.mark.parametrize(
    "name,op,np_op,make",
    [
        ("neg", ad.neg, lambda x: -x, lambda r: r.normal(size=(3, 4))),
        ("relu", ad.relu, lambda x: np.maximum(x, 0),
         lambda r: r.normal(size=(3, 4)) + np.sign(r.normal(size=(3, 4))) * 0.01),
        ("exp", ad.exp, np.exp, lambda r: r.normal(size=(3, 4))),
        ("log", ad.log, np.log, lambda r: np.abs(r.normal(size=(3, 4))) + 0.5),
        ("sqrt", ad.sqrt, np.sqrt, lambda r: np.abs(r.normal(size=(3, 4))) + 0.5),
        ("sum_all", lambda t: ad.sum_(t), lambda x: x.sum(), lambda r: r.normal(size=(3, 4))),
        ("sum_axis", lambda t: ad.sum_(t, axis=1), lambda x: x.sum(axis=1), lambda r: r.normal(size=(3, 4))),
        ("mean_keep", lambda t: ad.mean(t, axis=0, keepdims=True),
         lambda x: x.mean(axis=0, keepdims=True), lambda r: r.normal(size=(3, 4))),
        ("reshape", lambda t: ad.reshape(t, (4, 3)), lambda x: x.reshape(4, 3), lambda r: r.normal(size=(3, 4))),
        ("l2norm", ad.l2_norm, lambda x: np.linalg.norm(x.ravel()),
         lambda r: r.normal(size=(3, 4)) + 3.0),
        ("softmax", lambda t: ad.tempered_softmax(t, 2.0),
         lambda x: np.exp((x - x.max()) / 2.0) / np.exp((x - x.max()) / 2.0).sum(),
         lambda r: r.normal(size=6)),
        ("logsoftmax", lambda t: ad.log_softmax(t),
         lambda x: (x - x.max()) - np.log(np.exp(x - x.max()).sum()),
         lambda r: r.normal(size=6)),
    ],
)
def test_fd_every_unary_primitive(name, op, np_op, make):
    _fd_check_unary(op, np_op, make, n=100, seed=hash(name) % 2**32)


@pytest.mark.parametrize(
    "name,shapes",
    [
        ("add", [(3, 4), (3, 4)]),
        ("add_broadcast", [(3, 4), (1, 4)]),
        ("sub", [(3, 4), (3, 1)]),
        ("mul", [(3, 4), (3, 4)]),
        ("mul_scalar", [(3, 4), ()]),
        ("div", [(3, 4), (3, 4)]),
    ],
)
def test_fd_binary_primitives(name, shapes):
    opname = name.split("_")[0]
    op = {"add": ad.add, "sub": ad.sub, "mul": ad.mul, "div": ad.div}[opname]
    np_op = {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide}[opname]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    worst = 0.0
    for _ in range(100):
        xs = [
            np.abs(rng.normal(size=s)) + 1.0 if opname == "div" and i == 1 else rng.normal(size=s)
            for i, s in enumerate(shapes)
        ]
        proj = rng.normal(size=np.broadcast_shapes(*shapes))
        for side in (0, 1):
            other = ad.Tensor(xs[1 - side])

            def build(t):
                args = [t, other] if side == 0 else [other, t]
                return ad.sum_(ad.mul(ad.Tensor(proj), op(*args)))

            def fwd(x):
                args = [x, xs[1]] if side == 0 else [xs[0], x]
                return float((proj * np_op(*args)).sum())

            g = grad_of(build, xs[side])
            fd = finite_diff(fwd, xs[side])
            worst = max(worst, rel_err(g, fd))
    assert worst < 1e-3, worst


def test_fd_matmul_concat_conv_pool():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        a0 = rng.normal(size=(3, 4))
        b = ad.Tensor(rng.normal(size=(4, 2)))
        proj = rng.normal(size=(3, 2))
        g = grad_of(lambda t: ad.sum_(ad.mul(ad.Tensor(proj), ad.matmul(t, b))), a0)
        fd = finite_diff(lambda x: float((proj * (x @ b.values)).sum()), a0)
        worst = max(worst, rel_err(g, fd))

        c0 = rng.normal(size=(2, 3))
        other = ad.Tensor(rng.normal(size=(2, 2)))
        projc = rng.normal(size=(2, 5))
        g = grad_of(lambda t: ad.sum_(ad.mul(ad.Tensor(projc), ad.concat([t, other], axis=1))), c0)
        fd = finite_diff(lambda x: float((projc * np.concatenate([x, other.values], axis=1)).sum()), c0)
        worst = max(worst, rel_err(g, fd))
    assert worst < 1e-3, worst

    for i in range(100):
        rng2 = np.random.default_rng(1000 + i)
        x0 = rng2.normal(size=(1, 2, 5, 5))
        w = ad.Tensor(rng2.normal(size=(2, 2, 3, 3)))
        stride, pad = (1, 1) if i % 2 == 0 else (2, 0)
        projy = rng2.normal(size=ad.conv2d(ad.Tensor(x0), w, stride, pad).shape)
        g = grad_of(lambda t: ad.sum_(ad.mul(ad.Tensor(projy), ad.conv2d(t, w, stride, pad))), x0)
        fd = finite_diff(
            lambda x: float((projy * ad.conv2d(ad.Tensor(x), w, stride, pad).values).sum()), x0
        )
        assert rel_err(g, fd) < 1e-3
        # weight side
        w0 = w.values
        xt = ad.Tensor(x0)
        g = grad_of(lambda t: ad.sum_(ad.mul(ad.Tensor(projy), ad.conv2d(xt, t, stride, pad))), w0)
        fd = finite_diff(
            lambda ww: float((projy * ad.conv2d(xt, ad.Tensor(ww), stride, pad).values).sum()), w0
        )
        assert rel_err(g, fd) < 1e-3

    for i in range(100):
        rng3 = np.random.default_rng(2000 + i)
        # keep window values separated so eps never flips the argmax
        x0 = rng3.permuted(np.arange(2 * 6 * 6, dtype=np.float64)).reshape(1, 2, 6, 6) * 0.1
        projp = rng3.normal(size=(1, 2, 3, 3))
        g = grad_of(lambda t: ad.sum_(ad.mul(ad.Tensor(projp), ad.maxpool2d(t, 2))), x0)
        fd = finite_diff(
            lambda x: float((projp * ad.maxpool2d(ad.Tensor(x), 2).values).sum()), x0
        )
        assert rel_err(g, fd) < 1e-3


def test_forward_determinism_bit_identical():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
    w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)

    def run():
        h = ad.relu(ad.conv2d(ad.Tensor(x), ad.Tensor(w), 1, 1))
        h = ad.maxpool2d(h, 2)
        return ad.tempered_softmax(ad.reshape(h, (2, -1)), 3.0).values

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()


def test_reduction_accumulates_in_float64():
    ones = ad.Tensor(np.ones(100_000_000 // 20, dtype=np.float32))  # 5e6 elements
    big = ad.mul(ones, 0.1)
    # naive float32 accumulation would drift well past 1e-1 here
    assert abs(ad.sum_(big).item() - 5e5) < 1.0


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ad.ShapeError) as ei:
        ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 3))))
    assert "matmul" in str(ei.value) and "(2, 3)" in str(ei.value)
    with pytest.raises(ad.ShapeError) as ei:
        ad.add(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4,))))
    assert "add" in str(ei.value)
    with pytest.raises(ad.ShapeError) as ei:
        ad.conv2d(ad.Tensor(np.zeros((1, 2, 4, 4))), ad.Tensor(np.zeros((1, 3, 3, 3))))
    assert "conv2d" in str(ei.value)


def test_backward_twice_errors():
    leaf = ad.Tensor(2.0, requires_grad=True)
    with ad.Tape() as tape:
        out = ad.mul(leaf, leaf)
    tape.backward(out)
    with pytest.raises(ad.TapeError):
        tape.backward(out)


def test_backward_nonscalar_errors():
    leaf = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        out = ad.mul(leaf, leaf)
    with pytest.raises(ad.TapeError):
        tape.backward(out)


def test_backward_foreign_output_errors():
    leaf = ad.Tensor(2.0, requires_grad=True)
    with ad.Tape() as t1:
        out = ad.mul(leaf, leaf)
    with ad.Tape() as t2:
        pass
    with pytest.raises(ad.TapeError):
        t2.backward(out)


def test_grad_accumulates_across_tapes_and_resets():
    leaf = ad.Tensor(3.0, requires_grad=True, dtype=np.float64)
    for _ in range(2):
        with ad.Tape() as tape:
            out = ad.mul(leaf, leaf)
            tape.backward(out)
    assert leaf.grad == pytest.approx(12.0)
    leaf.zero_grad()
    assert leaf.grad is None


def test_intermediate_gradient_exposed():
    leaf = ad.Tensor(2.0, requires_grad=True, dtype=np.float64)
    with ad.Tape() as tape:
        mid = ad.mul(leaf, leaf)  # mid = x^2
        out = ad.mul(mid, mid)    # out = mid^2 = x^4
        tape.backward(out)
    assert mid.grad == pytest.approx(8.0)   # d(out)/d(mid) = 2*mid = 8
    assert leaf.grad == pytest.approx(32.0)  # 4 x^3
