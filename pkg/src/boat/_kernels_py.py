"""Pure-NumPy kernel fallback, bit-identical to the compiled core.

The loops below replay exactly the accumulation order documented in
``_kernels.pyx`` (serial left-to-right over the contraction axis, one
rounding per multiply and one per add), just vectorized over the output
elements.  ``threads`` is accepted for interface parity and ignored: results
never depend on it.
"""

import numpy as np


def matmul(a, b, out, threads):
    kdim = a.shape[1]
    for k in range(kdim):
        out += a[:, k, np.newaxis] * b[k]


def conv2d(x, w, bias, stride, groups, out, threads):
    cin_g, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    cout_g = w.shape[0] // groups
    oh_n, ow_n = out.shape[1], out.shape[2]
    out += bias[:, np.newaxis, np.newaxis]
    for g in range(groups):
        xs = x[g * cin_g:(g + 1) * cin_g]
        ws = w[g * cout_g:(g + 1) * cout_g]
        os = out[g * cout_g:(g + 1) * cout_g]
        for ci in range(cin_g):
            for ky in range(kh):
                for kx in range(kw):
                    patch = xs[ci,
                               ky:ky + (oh_n - 1) * stride + 1:stride,
                               kx:kx + (ow_n - 1) * stride + 1:stride]
                    os += patch[np.newaxis] * ws[:, ci, ky, kx, np.newaxis, np.newaxis]
