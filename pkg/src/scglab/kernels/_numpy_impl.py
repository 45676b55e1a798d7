"""Pure-numpy implementations of the hot kernels.

Convolution uses the shift-and-matmul formulation (one GEMM per kernel tap)
so no im2col buffer is materialized. These are the reference semantics; the
numba implementations must match them to float tolerance, and exactly for
integer outputs (pool argmax, SLIC labels).
"""

from __future__ import annotations

import numpy as np


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    b, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    y = np.zeros((b, o, oh, ow), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride]
            # (b,ci,oh,ow) x (o,ci) -> (b,o,oh,ow)
            y += np.einsum("bcij,oc->boij", xs, w[:, :, u, v], optimize=True)
    return y


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray]:
    b, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    oh, ow = dy.shape[2], dy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride]
            dw[:, :, u, v] = np.einsum("boij,bcij->oc", dy, xs, optimize=True)
            dxp[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride] += np.einsum(
                "boij,oc->bcij", dy, w[:, :, u, v], optimize=True
            )
    dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
    return dx, dw


def maxpool2d_forward(x: np.ndarray, size: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    b, c, h, w = x.shape
    oh = (h - size) // stride + 1
    ow = (w - size) // stride + 1
    # windows: (b,c,oh,ow,size,size)
    win = np.lib.stride_tricks.sliding_window_view(x, (size, size), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    flat = win.reshape(b, c, oh, ow, size * size)
    idx = np.argmax(flat, axis=-1)  # first max wins ties
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    # convert window-local argmax to flat (h,w) index in the input
    u, v = idx // size, idx % size
    rows = (np.arange(oh) * stride)[None, None, :, None] + u
    cols = (np.arange(ow) * stride)[None, None, None, :] + v
    src = (rows * w + cols).astype(np.int64)
    return np.ascontiguousarray(y), src


def maxpool2d_backward(dy: np.ndarray, src: np.ndarray, h: int, w: int) -> np.ndarray:
    b, c = dy.shape[0], dy.shape[1]
    dx = np.zeros((b, c, h * w), dtype=dy.dtype)
    flat_src = src.reshape(b, c, -1)
    flat_dy = dy.reshape(b, c, -1)
    np.add.at(dx, (np.arange(b)[:, None, None], np.arange(c)[None, :, None], flat_src), flat_dy)
    return dx.reshape(b, c, h, w)


def slic_assign(
    lab: np.ndarray,
    centers: np.ndarray,
    labels: np.ndarray,
    dists: np.ndarray,
    window: int,
    inv_s2: float,
) -> None:
    """One SLIC assignment sweep, in place.

    Clusters are scanned in index order with a strict `<` update so the
    lowest-index cluster wins distance ties; the numba path replicates this.
    `dists` must be pre-filled with the cost of keeping the current label so
    the total assignment cost never increases even when a center drifts out
    of a pixel's search window.
    """
    h, w = lab.shape[0], lab.shape[1]
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    for k in range(centers.shape[0]):
        cl, ca, cb, cy, cx = centers[k]
        y0 = max(int(cy) - window, 0)
        y1 = min(int(cy) + window + 1, h)
        x0 = max(int(cx) - window, 0)
        x1 = min(int(cx) + window + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        patch = lab[y0:y1, x0:x1]
        dc = (
            (patch[:, :, 0] - cl) ** 2
            + (patch[:, :, 1] - ca) ** 2
            + (patch[:, :, 2] - cb) ** 2
        )
        dyy = (ys[y0:y1, None] - cy) ** 2
        dxx = (xs[None, x0:x1] - cx) ** 2
        d = dc + (dyy + dxx) * inv_s2
        sub_d = dists[y0:y1, x0:x1]
        sub_l = labels[y0:y1, x0:x1]
        better = d < sub_d
        sub_d[better] = d[better]
        sub_l[better] = k
