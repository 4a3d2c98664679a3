# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrence kernels; see hmamba._scan for the contract."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def scan_forward(double[:, :, ::1] a, double[:, :, :, ::1] bx, M=None):
    cdef Py_ssize_t B = bx.shape[0], L = bx.shape[1], C = bx.shape[2], N = bx.shape[3]
    cdef Py_ssize_t b, t, c, n, e, i, j, G = 0, E = 0
    cdef double m
    cdef double[:, :, :, ::1] Mv
    cdef bint transport = M is not None
    cdef double[::1] tmp = np.zeros(N, dtype=np.float64)
    out = np.empty((B, L, C, N), dtype=np.float64)
    cdef double[:, :, :, ::1] h = out
    if transport:
        Mv = M
        G = Mv.shape[2]
        E = C // G
    with nogil:
        for b in range(B):
            for c in range(C):
                for n in range(N):
                    h[b, 0, c, n] = bx[b, 0, c, n]
            for t in range(1, L):
                if transport:
                    # state index n innermost so the row updates run over contiguous memory
                    for e in range(E):
                        for i in range(G):
                            for n in range(N):
                                tmp[n] = 0.0
                            for j in range(G):
                                m = Mv[b, t, i, j]
                                for n in range(N):
                                    tmp[n] = tmp[n] + m * h[b, t - 1, e * G + j, n]
                            for n in range(N):
                                h[b, t, e * G + i, n] = a[b, t, n] * tmp[n] + bx[b, t, e * G + i, n]
                else:
                    for c in range(C):
                        for n in range(N):
                            h[b, t, c, n] = a[b, t, n] * h[b, t - 1, c, n] + bx[b, t, c, n]
    return out


def scan_backward(double[:, :, ::1] a, M, double[:, :, :, ::1] h, double[:, :, :, ::1] gh):
    cdef Py_ssize_t B = h.shape[0], L = h.shape[1], C = h.shape[2], N = h.shape[3]
    cdef Py_ssize_t b, t, c, n, e, i, j, G = 0, E = 0
    cdef double m, s
    cdef double[::1] tmp = np.zeros(h.shape[3], dtype=np.float64)
    cdef double[:, :, :, ::1] Mv
    cdef double[:, :, :, ::1] gMv
    cdef bint transport = M is not None
    ga_arr = np.zeros((B, L, N), dtype=np.float64)
    gbx_arr = np.empty((B, L, C, N), dtype=np.float64)
    gM_arr = None
    cdef double[:, :, ::1] ga = ga_arr
    cdef double[:, :, :, ::1] gbx = gbx_arr
    g_arr = np.zeros((C, N), dtype=np.float64)
    q_arr = np.zeros((C, N), dtype=np.float64)
    cdef double[:, ::1] g = g_arr
    cdef double[:, ::1] q = q_arr
    if transport:
        Mv = M
        G = Mv.shape[2]
        E = C // G
        gM_arr = np.zeros((B, L, G, G), dtype=np.float64)
        gMv = gM_arr
    with nogil:
        for b in range(B):
            for c in range(C):
                for n in range(N):
                    g[c, n] = 0.0
            for t in range(L - 1, -1, -1):
                for c in range(C):
                    for n in range(N):
                        g[c, n] = g[c, n] + gh[b, t, c, n]
                        gbx[b, t, c, n] = g[c, n]
                if t == 0:
                    break
                if transport:
                    # grad wrt a uses the transported carry M h_{t-1}
                    for e in range(E):
                        for i in range(G):
                            for n in range(N):
                                tmp[n] = 0.0
                            for j in range(G):
                                m = Mv[b, t, i, j]
                                for n in range(N):
                                    tmp[n] = tmp[n] + m * h[b, t - 1, e * G + j, n]
                            for n in range(N):
                                ga[b, t, n] = ga[b, t, n] + g[e * G + i, n] * tmp[n]
                    for c in range(C):
                        for n in range(N):
                            q[c, n] = a[b, t, n] * g[c, n]
                    for i in range(G):
                        for j in range(G):
                            s = 0.0
                            for e in range(E):
                                for n in range(N):
                                    s = s + q[e * G + i, n] * h[b, t - 1, e * G + j, n]
                            gMv[b, t, i, j] = s
                    for e in range(E):
                        for j in range(G):
                            for n in range(N):
                                tmp[n] = 0.0
                            for i in range(G):
                                m = Mv[b, t, i, j]
                                for n in range(N):
                                    tmp[n] = tmp[n] + m * q[e * G + i, n]
                            for n in range(N):
                                g[e * G + j, n] = tmp[n]
                else:
                    for c in range(C):
                        for n in range(N):
                            ga[b, t, n] = ga[b, t, n] + g[c, n] * h[b, t - 1, c, n]
                            g[c, n] = a[b, t, n] * g[c, n]
    return ga_arr, gbx_arr, gM_arr
