# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Bellman backup; same contract as ``ecoacc._dp_py.bellman_stage``.

Boolean tables arrive as uint8 views. Torques are visited in ascending index
order with a strict improvement test, so ties resolve like ``np.argmin``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def bellman_stage(double[:, ::1] V_next, long[:, ::1] iv0, double[:, ::1] wv,
                  long[:, ::1] joff, double[:, ::1] wt, unsigned char[:, ::1] valid,
                  double[:, ::1] stage, cross_ok, Py_ssize_t j_lo, Py_ssize_t j_hi):
    cdef Py_ssize_t n_v = V_next.shape[0]
    cdef Py_ssize_t n_t = V_next.shape[1]
    cdef Py_ssize_t n_u = iv0.shape[1]
    V_arr = np.full((n_v, n_t), np.inf)
    U_arr = np.full((n_v, n_t), -1, dtype=np.int16)
    cdef double[:, ::1] V = V_arr
    cdef short[:, ::1] U = U_arr
    cdef unsigned char[:, :, ::1] cross
    cdef bint has_cross = cross_ok is not None
    if has_cross:
        cross = cross_ok
    cdef Py_ssize_t i, j, u, a, b, off, j_end
    cdef double q, x, y, w00, w10, w01, w11, s, c
    if j_hi > n_t - 1:
        j_hi = n_t - 1
    with nogil:
        for i in range(n_v):
            for u in range(n_u):
                if not valid[i, u]:
                    continue
                off = joff[i, u]
                y = wt[i, u]
                # last j whose neighbours stay on the grid
                j_end = n_t - 1 - off
                if y != 0.0:
                    j_end = j_end - 1
                if j_end > j_hi:
                    j_end = j_hi
                x = wv[i, u]
                a = iv0[i, u]
                b = a + 1
                if b > n_v - 1:
                    b = n_v - 1
                w00 = (1.0 - x) * (1.0 - y)
                w10 = x * (1.0 - y)
                w01 = (1.0 - x) * y
                w11 = x * y
                c = stage[i, u]
                for j in range(j_lo, j_end + 1):
                    if has_cross and not cross[i, u, j]:
                        continue
                    s = 0.0
                    if w00 > 0.0:
                        s = w00 * V_next[a, j + off]
                    if w10 > 0.0:
                        s = s + w10 * V_next[b, j + off]
                    if w01 > 0.0:
                        s = s + w01 * V_next[a, j + off + 1]
                    if w11 > 0.0:
                        s = s + w11 * V_next[b, j + off + 1]
                    q = c + s
                    if q < V[i, j]:
                        V[i, j] = q
                        U[i, j] = <short>u
    return V_arr, U_arr
