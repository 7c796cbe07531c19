# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel dynamic filtering (forward + backward).

Same contract as kernels.numpy_backend; callers preallocate the outputs so
the fused float/double specializations stay dtype-agnostic here.
"""

ctypedef fused real:
    float
    double


def forward(real[:, :, :, ::1] x_pad, real[:, :, :, ::1] kern,
            real[:, :, :, ::1] out, Py_ssize_t k):
    cdef Py_ssize_t B = out.shape[0], C = out.shape[1]
    cdef Py_ssize_t H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t b, c, i, j, u, v
    cdef real acc
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(H):
                    for j in range(W):
                        acc = 0
                        for u in range(k):
                            for v in range(k):
                                acc = acc + kern[b, u * k + v, i, j] * x_pad[b, c, i + u, j + v]
                        out[b, c, i, j] = acc


def backward(real[:, :, :, ::1] x_pad, real[:, :, :, ::1] kern,
             real[:, :, :, ::1] grad_out,
             real[:, :, :, ::1] gx, real[:, :, :, ::1] gk, Py_ssize_t k):
    cdef Py_ssize_t B = grad_out.shape[0], C = grad_out.shape[1]
    cdef Py_ssize_t H = grad_out.shape[2], W = grad_out.shape[3]
    cdef Py_ssize_t b, c, i, j, u, v
    cdef real g, acc
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(H):
                    for j in range(W):
                        g = grad_out[b, c, i, j]
                        for u in range(k):
                            for v in range(k):
                                gx[b, c, i + u, j + v] = gx[b, c, i + u, j + v] + g * kern[b, u * k + v, i, j]
        for b in range(B):
            for u in range(k):
                for v in range(k):
                    for i in range(H):
                        for j in range(W):
                            acc = 0
                            for c in range(C):
                                acc = acc + grad_out[b, c, i, j] * x_pad[b, c, i + u, j + v]
                            gk[b, u * k + v, i, j] = acc
