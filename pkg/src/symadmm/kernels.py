"""Hot image kernels: periodic convolution, periodic differences, 2-D shrinkage.

Each kernel has a numba implementation (``*_nb``) and a pure-numpy
implementation (``*_np``). The public names dispatch on
:data:`symadmm._accel.USE_NUMBA`. All kernels take and return 2-D float64
arrays of shape ``(m, n)``; kernel indices are centered at ``(size // 2)``.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "conv_periodic",
    "corr_periodic",
    "diff_forward",
    "diff_adjoint",
    "shrink2d",
]


# --------------------------------------------------------------------------
# numpy reference path


def conv_periodic_np(img, kernel):
    ka, kb = kernel.shape
    ca, cb = ka // 2, kb // 2
    out = np.zeros(img.shape)
    for a in range(ka):
        for b in range(kb):
            w = kernel[a, b]
            if w != 0.0:
                out += w * np.roll(img, (a - ca, b - cb), axis=(0, 1))
    return out


def corr_periodic_np(img, kernel):
    ka, kb = kernel.shape
    ca, cb = ka // 2, kb // 2
    out = np.zeros(img.shape)
    for a in range(ka):
        for b in range(kb):
            w = kernel[a, b]
            if w != 0.0:
                out += w * np.roll(img, (ca - a, cb - b), axis=(0, 1))
    return out


def diff_forward_np(img):
    d1 = np.roll(img, -1, axis=0) - img
    d2 = np.roll(img, -1, axis=1) - img
    return d1, d2


def diff_adjoint_np(d1, d2):
    return (np.roll(d1, 1, axis=0) - d1) + (np.roll(d2, 1, axis=1) - d2)


def shrink2d_np(w1, w2, thresh):
    nrm = np.hypot(w1, w2)
    scale = np.zeros_like(nrm)
    mask = nrm > thresh
    scale[mask] = (nrm[mask] - thresh) / nrm[mask]
    return scale * w1, scale * w2


# --------------------------------------------------------------------------
# numba path


@njit(cache=True)
def _pad_periodic(img, pa, pb):
    # P[r, s] = img[(r - pa) % m, (s - pb) % n]
    m, n = img.shape
    P = np.empty((n + 2 * pb, m + 2 * pa)).T
    for s in range(n + 2 * pb):
        js = (s - pb) % n
        for r in range(m + 2 * pa):
            P[r, s] = img[(r - pa) % m, js]
    return P


@njit(cache=True)
def _stencil(img, kernel, sign):
    # sign=-1: convolution, sign=+1: correlation
    m, n = img.shape
    ka, kb = kernel.shape
    ca, cb = ka // 2, kb // 2
    pa, pb = ka - 1, kb - 1
    P = _pad_periodic(img, pa, pb)
    out = np.zeros((n, m)).T
    for b in range(kb):
        ob = sign * (b - cb) + pb
        for a in range(ka):
            w = kernel[a, b]
            if w == 0.0:
                continue
            oa = sign * (a - ca) + pa
            for j in range(n):
                for i in range(m):
                    out[i, j] += w * P[i + oa, j + ob]
    return out


@njit(cache=True)
def conv_periodic_nb(img, kernel):
    return _stencil(img, kernel, -1)


@njit(cache=True)
def corr_periodic_nb(img, kernel):
    return _stencil(img, kernel, 1)


@njit(cache=True)
def diff_forward_nb(img):
    m, n = img.shape
    d1 = np.empty((n, m)).T
    d2 = np.empty((n, m)).T
    for j in range(n):
        jn = j + 1 if j + 1 < n else 0
        for i in range(m):
            inx = i + 1 if i + 1 < m else 0
            d1[i, j] = img[inx, j] - img[i, j]
            d2[i, j] = img[i, jn] - img[i, j]
    return d1, d2


@njit(cache=True)
def diff_adjoint_nb(d1, d2):
    m, n = d1.shape
    out = np.empty((n, m)).T
    for j in range(n):
        jp = j - 1 if j > 0 else n - 1
        for i in range(m):
            ip = i - 1 if i > 0 else m - 1
            out[i, j] = (d1[ip, j] - d1[i, j]) + (d2[i, jp] - d2[i, j])
    return out


@njit(cache=True)
def shrink2d_nb(w1, w2, thresh):
    m, n = w1.shape
    y1 = np.zeros((n, m)).T
    y2 = np.zeros((n, m)).T
    for j in range(n):
        for i in range(m):
            nrm = np.hypot(w1[i, j], w2[i, j])
            if nrm > thresh:
                s = (nrm - thresh) / nrm
                y1[i, j] = s * w1[i, j]
                y2[i, j] = s * w2[i, j]
    return y1, y2


if USE_NUMBA:
    conv_periodic = conv_periodic_nb
    corr_periodic = corr_periodic_nb
    diff_forward = diff_forward_nb
    diff_adjoint = diff_adjoint_nb
    shrink2d = shrink2d_nb
else:
    conv_periodic = conv_periodic_np
    corr_periodic = corr_periodic_np
    diff_forward = diff_forward_np
    diff_adjoint = diff_adjoint_np
    shrink2d = shrink2d_np
