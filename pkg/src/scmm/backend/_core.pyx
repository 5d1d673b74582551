# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution kernels. Same contracts as scmm.backend.pyref.

Stride-1 paths keep the position index innermost so every inner loop walks
unit-stride memory in both operands and auto-vectorizes; strided variants
fall back to plain scalar loops.
"""
import numpy as np

cimport cython


def conv1d_forward(double[:, :, ::1] x_pad, double[:, :, ::1] kernels, int stride):
    cdef Py_ssize_t batch = x_pad.shape[0]
    cdef Py_ssize_t cin = x_pad.shape[1]
    cdef Py_ssize_t lpad = x_pad.shape[2]
    cdef Py_ssize_t cout = kernels.shape[0]
    cdef Py_ssize_t k = kernels.shape[2]
    cdef Py_ssize_t out_len = (lpad - k) // stride + 1

    out_arr = np.zeros((batch, cout, out_len), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, c, pos, tap
    cdef double w

    with nogil:
        if stride == 1:
            for b in range(batch):
                for c in range(cin):
                    for o in range(cout):
                        for tap in range(k):
                            w = kernels[o, c, tap]
                            for pos in range(out_len):
                                out[b, o, pos] += w * x_pad[b, c, pos + tap]
        else:
            for b in range(batch):
                for c in range(cin):
                    for o in range(cout):
                        for tap in range(k):
                            w = kernels[o, c, tap]
                            for pos in range(out_len):
                                out[b, o, pos] += w * x_pad[b, c, pos * stride + tap]
    return out_arr


def conv1d_grad_kernels(double[:, :, ::1] x_pad, double[:, :, ::1] grad_out,
                        int kernel_size, int stride):
    cdef Py_ssize_t batch = x_pad.shape[0]
    cdef Py_ssize_t cin = x_pad.shape[1]
    cdef Py_ssize_t cout = grad_out.shape[1]
    cdef Py_ssize_t out_len = grad_out.shape[2]

    gk_arr = np.zeros((cout, cin, kernel_size), dtype=np.float64)
    cdef double[:, :, ::1] gk = gk_arr
    cdef Py_ssize_t b, o, c, pos, tap
    cdef double acc

    with nogil:
        if stride == 1:
            for b in range(batch):
                for o in range(cout):
                    for c in range(cin):
                        for tap in range(kernel_size):
                            acc = 0.0
                            for pos in range(out_len):
                                acc += grad_out[b, o, pos] * x_pad[b, c, pos + tap]
                            gk[o, c, tap] += acc
        else:
            for b in range(batch):
                for o in range(cout):
                    for c in range(cin):
                        for tap in range(kernel_size):
                            acc = 0.0
                            for pos in range(out_len):
                                acc += grad_out[b, o, pos] * x_pad[b, c, pos * stride + tap]
                            gk[o, c, tap] += acc
    return gk_arr


def conv1d_grad_input(double[:, :, ::1] grad_out, double[:, :, ::1] kernels,
                      int padded_length, int stride):
    cdef Py_ssize_t batch = grad_out.shape[0]
    cdef Py_ssize_t cout = grad_out.shape[1]
    cdef Py_ssize_t out_len = grad_out.shape[2]
    cdef Py_ssize_t cin = kernels.shape[1]
    cdef Py_ssize_t k = kernels.shape[2]

    gx_arr = np.zeros((batch, cin, padded_length), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, o, c, pos, tap
    cdef double w

    with nogil:
        if stride == 1:
            for b in range(batch):
                for o in range(cout):
                    for c in range(cin):
                        for tap in range(k):
                            w = kernels[o, c, tap]
                            for pos in range(out_len):
                                gx[b, c, pos + tap] += w * grad_out[b, o, pos]
        else:
            for b in range(batch):
                for o in range(cout):
                    for c in range(cin):
                        for tap in range(k):
                            w = kernels[o, c, tap]
                            for pos in range(out_len):
                                gx[b, c, pos * stride + tap] += w * grad_out[b, o, pos]
    return gx_arr
