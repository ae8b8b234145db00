"""ARD exponential kernel hot paths.

k(x, x') = sf2 * exp(-r),  r = sqrt(sum_m ((x_m - x'_m) / l_m)^2)

Two implementations of each kernel: a loop version that numba compiles and a
vectorized numpy fallback; ``_accel`` decides which one the public name binds
to. The gradient helper returns the pair-sum pieces that the marginal
likelihood gradient needs; the length-scale piece is defined as 0 at r = 0
(its two-sided limit), which covers both the diagonal and duplicated points.
"""

import numpy as np

from ._accel import USE_NUMBA, maybe_njit

_CHUNK = 256  # row block for the numpy fallbacks, caps the (b, n, d) temporaries


def _kernel_matrix_loops(xa, xb, inv_ls, sf2):
    na = xa.shape[0]
    nb = xb.shape[0]
    d = xa.shape[1]
    out = np.empty((na, nb))
    for i in range(na):
        for j in range(nb):
            s = 0.0
            for m in range(d):
                dd = (xa[i, m] - xb[j, m]) * inv_ls[m]
                s += dd * dd
            out[i, j] = sf2 * np.exp(-np.sqrt(s))
    return out


def _kernel_matrix_numpy(xa, xb, inv_ls, sf2):
    na = xa.shape[0]
    out = np.empty((na, xb.shape[0]))
    xbs = xb * inv_ls
    for lo in range(0, na, _CHUNK):
        hi = min(lo + _CHUNK, na)
        diff = xa[lo:hi, None, :] * inv_ls - xbs[None, :, :]
        out[lo:hi] = sf2 * np.exp(-np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))
    return out


def _grad_pieces_loops(x, inv_ls, k, w):
    n = x.shape[0]
    d = x.shape[1]
    sum_wk = 0.0
    g_l = np.zeros(d)
    for i in range(n):
        for j in range(n):
            wk = w[i, j] * k[i, j]
            sum_wk += wk
            s = 0.0
            for m in range(d):
                dd = (x[i, m] - x[j, m]) * inv_ls[m]
                s += dd * dd
            if s > 0.0:
                r = np.sqrt(s)
                for m in range(d):
                    dd = (x[i, m] - x[j, m]) * inv_ls[m]
                    g_l[m] += 0.5 * wk * dd * dd / r
    return sum_wk, g_l


def _grad_pieces_numpy(x, inv_ls, k, w):
    n, d = x.shape
    sum_wk = float(np.sum(w * k))
    g_l = np.zeros(d)
    xs = x * inv_ls
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        diff2 = (xs[lo:hi, None, :] - xs[None, :, :]) ** 2
        r = np.sqrt(diff2.sum(axis=2))
        wk_over_r = np.where(r > 0.0, (w[lo:hi] * k[lo:hi]) / np.where(r > 0.0, r, 1.0), 0.0)
        g_l += 0.5 * np.einsum("ij,ijm->m", wk_over_r, diff2)
    return sum_wk, g_l


_kernel_matrix_jit = maybe_njit(cache=True, nogil=True)(_kernel_matrix_loops)
_grad_pieces_jit = maybe_njit(cache=True, nogil=True)(_grad_pieces_loops)

kernel_matrix = _kernel_matrix_jit if USE_NUMBA else _kernel_matrix_numpy
grad_pieces = _grad_pieces_jit if USE_NUMBA else _grad_pieces_numpy
