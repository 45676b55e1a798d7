"""Cross-backend agreement: numba kernels vs the pure-numpy reference."""

import numpy as np
import pytest

from scglab.kernels import _numpy_impl as knp

numba_impl = pytest.importorskip("scglab.kernels._numba_impl")


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_forward_matches(dtype, stride, pad):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 9, 8)).astype(dtype)
    w = rng.normal(size=(4, 3, 3, 3)).astype(dtype)
    a = knp.conv2d_forward(x, w, stride, pad)
    b = numba_impl.conv2d_forward(x, w, stride, pad)
    assert a.shape == b.shape
    tol = 1e-4 if dtype == np.float32 else 1e-12
    assert np.allclose(a, b, rtol=tol, atol=tol)


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0)])
def test_conv2d_backward_matches(stride, pad):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    y = knp.conv2d_forward(x, w, stride, pad)
    dy = rng.normal(size=y.shape)
    dx1, dw1 = knp.conv2d_backward(x, w, dy, stride, pad)
    dx2, dw2 = numba_impl.conv2d_backward(x, w, dy, stride, pad)
    assert np.allclose(dx1, dx2, rtol=1e-11, atol=1e-11)
    assert np.allclose(dw1, dw2, rtol=1e-11, atol=1e-11)


def test_maxpool_matches_exactly_including_ties():
    rng = np.random.default_rng(5)
    x = rng.integers(0, 3, size=(2, 2, 8, 8)).astype(np.float32)  # many ties
    y1, s1 = knp.maxpool2d_forward(x, 2, 2)
    y2, s2 = numba_impl.maxpool2d_forward(x, 2, 2)
    assert np.array_equal(y1, y2)
    assert np.array_equal(s1, s2)
    dy = rng.normal(size=y1.shape).astype(np.float32)
    dx1 = knp.maxpool2d_backward(dy, s1, 8, 8)
    dx2 = numba_impl.maxpool2d_backward(dy, s2, 8, 8)
    assert np.allclose(dx1, dx2, rtol=1e-6, atol=1e-6)


def test_slic_assign_matches_exactly():
    rng = np.random.default_rng(6)
    lab = rng.normal(size=(16, 16, 3))
    centers = np.column_stack(
        [
            rng.normal(size=6),
            rng.normal(size=6),
            rng.normal(size=6),
            rng.uniform(0, 16, size=6),
            rng.uniform(0, 16, size=6),
        ]
    )
    l1 = np.full((16, 16), -1, dtype=np.int64)
    d1 = np.full((16, 16), 1e30)
    knp.slic_assign(lab, centers, l1, d1, 8, 0.05)
    l2 = np.full((16, 16), -1, dtype=np.int64)
    d2 = np.full((16, 16), 1e30)
    numba_impl.slic_assign(lab, centers, l2, d2, 8, 0.05)
    assert np.array_equal(l1, l2)
    assert np.array_equal(d1, d2)
