# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: batched triple scores and gradient accumulation.

Mirrors the numpy backend in ``_numpy.py`` function for function.  Plain
sequential loops: per-row results do not depend on batch size, and
gradient scatter-adds run in batch order, so training is reproducible.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


def scores_distmult(double[:, ::1] ent, double[:, ::1] rel,
                    long[::1] s, long[::1] p, long[::1] o):
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t d = ent.shape[1]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += ent[s[i], j] * ent[o[i], j] * rel[p[i], j]
        out_v[i] = acc
    return out


def grads_distmult(double[:, ::1] ent, double[:, ::1] rel,
                   long[::1] s, long[::1] p, long[::1] o,
                   double[::1] coef,
                   double[:, ::1] g_ent, double[:, ::1] g_rel):
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t d = ent.shape[1]
    cdef Py_ssize_t i, j
    cdef double c
    for i in range(n):
        c = coef[i]
        for j in range(d):
            g_ent[s[i], j] += c * rel[p[i], j] * ent[o[i], j]
            g_ent[o[i], j] += c * rel[p[i], j] * ent[s[i], j]
            g_rel[p[i], j] += c * ent[s[i], j] * ent[o[i], j]


def scores_complex(double[:, ::1] ent_re, double[:, ::1] ent_im,
                   double[:, ::1] rel_re, double[:, ::1] rel_im,
                   long[::1] s, long[::1] p, long[::1] o):
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t d = ent_re.shape[1]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += (ent_re[s[i], j] * ent_re[o[i], j] * rel_re[p[i], j]
                    + ent_im[s[i], j] * ent_im[o[i], j] * rel_re[p[i], j]
                    + ent_re[s[i], j] * ent_im[o[i], j] * rel_im[p[i], j]
                    - ent_im[s[i], j] * ent_re[o[i], j] * rel_im[p[i], j])
        out_v[i] = acc
    return out


def grads_complex(double[:, ::1] ent_re, double[:, ::1] ent_im,
                  double[:, ::1] rel_re, double[:, ::1] rel_im,
                  long[::1] s, long[::1] p, long[::1] o,
                  double[::1] coef,
                  double[:, ::1] g_ent_re, double[:, ::1] g_ent_im,
                  double[:, ::1] g_rel_re, double[:, ::1] g_rel_im):
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t d = ent_re.shape[1]
    cdef Py_ssize_t i, j
    cdef double c, sr, si, orr, oi, pr, pi
    for i in range(n):
        c = coef[i]
        for j in range(d):
            sr = ent_re[s[i], j]; si = ent_im[s[i], j]
            orr = ent_re[o[i], j]; oi = ent_im[o[i], j]
            pr = rel_re[p[i], j]; pi = rel_im[p[i], j]
            g_ent_re[s[i], j] += c * (pr * orr + pi * oi)
            g_ent_im[s[i], j] += c * (pr * oi - pi * orr)
            g_rel_re[p[i], j] += c * (sr * orr + si * oi)
            g_rel_im[p[i], j] += c * (sr * oi - si * orr)
            g_ent_re[o[i], j] += c * (sr * pr - si * pi)
            g_ent_im[o[i], j] += c * (si * pr + sr * pi)


def scores_rescal(double[:, ::1] ent, double[:, :, ::1] rel_mat,
                  long[::1] s, long[::1] p, long[::1] o):
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t d = ent.shape[1]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            for k in range(d):
                acc += (ent[s[i], j] * rel_mat[p[i], j, k]) * ent[o[i], k]
        out_v[i] = acc
    return out


def grads_rescal(double[:, ::1] ent, double[:, :, ::1] rel_mat,
                 long[::1] s, long[::1] p, long[::1] o,
                 double[::1] coef,
                 double[:, ::1] g_ent, double[:, :, ::1] g_rel_mat):
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t d = ent.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double c
    for i in range(n):
        c = coef[i]
        for j in range(d):
            for k in range(d):
                g_ent[s[i], j] += c * rel_mat[p[i], j, k] * ent[o[i], k]
                g_ent[o[i], k] += c * rel_mat[p[i], j, k] * ent[s[i], j]
                g_rel_mat[p[i], j, k] += c * ent[s[i], j] * ent[o[i], k]


def scores_multiway(double[:, ::1] ent, double[:, ::1] rel,
                    double[:, ::1] w_in, double[::1] w_out,
                    long[::1] s, long[::1] p, long[::1] o):
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t d = ent.shape[1]
    cdef Py_ssize_t dh = w_in.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef Py_ssize_t i, h, j
    cdef double z, acc
    for i in range(n):
        acc = 0.0
        for h in range(dh):
            z = 0.0
            for j in range(d):
                z += w_in[h, j] * ent[s[i], j]
            for j in range(d):
                z += w_in[h, d + j] * rel[p[i], j]
            for j in range(d):
                z += w_in[h, 2 * d + j] * ent[o[i], j]
            acc += w_out[h] * tanh(z)
        out_v[i] = acc
    return out


def grads_multiway(double[:, ::1] ent, double[:, ::1] rel,
                   double[:, ::1] w_in, double[::1] w_out,
                   long[::1] s, long[::1] p, long[::1] o,
                   double[::1] coef,
                   double[:, ::1] g_ent, double[:, ::1] g_rel,
                   double[:, ::1] g_w_in, double[::1] g_w_out):
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t d = ent.shape[1]
    cdef Py_ssize_t dh = w_in.shape[0]
    cdef Py_ssize_t i, h, j
    cdef double z, th, gz, c
    for i in range(n):
        c = coef[i]
        for h in range(dh):
            z = 0.0
            for j in range(d):
                z += w_in[h, j] * ent[s[i], j]
            for j in range(d):
                z += w_in[h, d + j] * rel[p[i], j]
            for j in range(d):
                z += w_in[h, 2 * d + j] * ent[o[i], j]
            th = tanh(z)
            g_w_out[h] += c * th
            gz = c * w_out[h] * (1.0 - th * th)
            for j in range(d):
                g_w_in[h, j] += gz * ent[s[i], j]
                g_w_in[h, d + j] += gz * rel[p[i], j]
                g_w_in[h, 2 * d + j] += gz * ent[o[i], j]
                g_ent[s[i], j] += gz * w_in[h, j]
                g_rel[p[i], j] += gz * w_in[h, d + j]
                g_ent[o[i], j] += gz * w_in[h, 2 * d + j]
