# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled matmul / conv2d kernels with a pinned reduction order.

Every output element is accumulated serially, left-to-right over the
contraction axis (k for matmul; (c_in, ky, kx) for conv2d).  Threads only
partition whole output rows / channels, so results are bit-identical for any
thread count and bit-identical to the NumPy fallback in ``_kernels_py``.
"""

from cython.parallel import prange

ctypedef fused real:
    float
    double


def matmul(real[:, ::1] a, real[:, ::1] b, real[:, ::1] out, int threads):
    """out[i, j] = sum_k a[i, k] * b[k, j], accumulated in increasing k.

    ``out`` must be zero-initialized by the caller.
    """
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t kdim = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    cdef Py_ssize_t i, k, j
    cdef real aik
    if threads < 1:
        threads = 1
    with nogil:
        for i in prange(m, num_threads=threads, schedule='static'):
            for k in range(kdim):
                aik = a[i, k]
                for j in range(n):
                    out[i, j] = out[i, j] + aik * b[k, j]


def conv2d(real[:, :, ::1] x, real[:, :, :, ::1] w, real[::1] bias,
           int stride, int groups, real[:, :, ::1] out, int threads):
    """Grouped 2-D cross-correlation on a pre-padded input.

    x: (C_in, H, W), w: (C_out, C_in/groups, kh, kw), out: (C_out, H', W').
    Accumulation per output element: bias first, then (ci, ky, kx) ascending.
    """
    cdef Py_ssize_t c_out = w.shape[0]
    cdef Py_ssize_t cin_g = w.shape[1]
    cdef Py_ssize_t kh = w.shape[2]
    cdef Py_ssize_t kw = w.shape[3]
    cdef Py_ssize_t oh_n = out.shape[1]
    cdef Py_ssize_t ow_n = out.shape[2]
    cdef Py_ssize_t cout_g = c_out / groups
    cdef Py_ssize_t co, g, ci, ci_abs, oh, ow, ky, kx
    cdef real acc
    if threads < 1:
        threads = 1
    with nogil:
        for co in prange(c_out, num_threads=threads, schedule='static'):
            g = co / cout_g
            for oh in range(oh_n):
                for ow in range(ow_n):
                    acc = bias[co]
                    for ci in range(cin_g):
                        ci_abs = g * cin_g + ci
                        for ky in range(kh):
                            for kx in range(kw):
                                acc = acc + x[ci_abs, oh * stride + ky,
                                              ow * stride + kx] * w[co, ci, ky, kx]
                    out[co, oh, ow] = acc
