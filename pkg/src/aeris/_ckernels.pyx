# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled link-budget kernels.

Array layout shared with :mod:`aeris._pykernels`:

direct : float64[S, U, N]     real direct-path amplitude per (snapshot, UAV, UE)
coef   : complex128[S, U, R, N, M]  conj(h_ur[m]) * h_ri[m]
phases : float64[R, M]        (or [P, R, M] for the batched rate sum)
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, log2

cnp.import_array()


cdef inline void _trig(const double[:, ::1] phases, double[:, ::1] c, double[:, ::1] s) noexcept nogil:
    cdef Py_ssize_t r, m
    for r in range(phases.shape[0]):
        for m in range(phases.shape[1]):
            c[r, m] = cos(phases[r, m])
            s[r, m] = sin(phases[r, m])


cdef inline void _field(const double complex* row, const double* c, const double* sn, Py_ssize_t M,
                        double a, double* re_out, double* im_out) noexcept nogil:
    # a + sum_m row[m] * exp(j * phase_m), with (c, sn) the cosines and sines of the phases
    cdef const double* z = <const double*> row
    cdef double re = a, im = 0.0
    cdef Py_ssize_t m
    for m in range(M):
        re = re + z[2 * m] * c[m] - z[2 * m + 1] * sn[m]
        im = im + z[2 * m] * sn[m] + z[2 * m + 1] * c[m]
    re_out[0] = re
    im_out[0] = im


def best_snr(const double[:, :, ::1] direct, const double complex[:, :, :, :, ::1] coef,
             const double[:, ::1] phases, double scale):
    cdef Py_ssize_t S = direct.shape[0], U = direct.shape[1], N = direct.shape[2]
    cdef Py_ssize_t R = coef.shape[2], M = coef.shape[4]
    cdef Py_ssize_t s, u, r, i, m
    cdef double re, im, val, best
    cdef long bu, br
    snr_arr = np.zeros((S, N), dtype=np.float64)
    uav_arr = np.full((S, N), -1, dtype=np.int64)
    ris_arr = np.full((S, N), -1, dtype=np.int64)
    cdef double[:, ::1] snr = snr_arr
    cdef cnp.int64_t[:, ::1] uav = uav_arr
    cdef cnp.int64_t[:, ::1] ris = ris_arr
    c_arr = np.empty((R, M), dtype=np.float64)
    s_arr = np.empty((R, M), dtype=np.float64)
    cdef double[:, ::1] cs = c_arr
    cdef double[:, ::1] sn = s_arr
    with nogil:
        _trig(phases, cs, sn)
        for s in range(S):
            for i in range(N):
                best = -1.0
                bu = -1
                br = -1
                for u in range(U):
                    if R == 0:
                        val = scale * direct[s, u, i] * direct[s, u, i]
                        if val > best:
                            best = val
                            bu = u
                        continue
                    for r in range(R):
                        _field(&coef[s, u, r, i, 0], &cs[r, 0], &sn[r, 0], M, direct[s, u, i], &re, &im)
                        val = scale * (re * re + im * im)
                        if val > best:
                            best = val
                            bu = u
                            br = r
                if bu >= 0:
                    snr[s, i] = best
                    uav[s, i] = bu
                    ris[s, i] = br
    return snr_arr, uav_arr, ris_arr


def rate_sum_batch(const double[:, :, ::1] direct, const double complex[:, :, :, :, ::1] coef,
                   const double[:, :, ::1] phases, double scale, double bandwidth,
                   const double[::1] weights, const double[::1] thresholds, double bonus=0.0):
    cdef Py_ssize_t P = phases.shape[0]
    cdef Py_ssize_t S = direct.shape[0], U = direct.shape[1], N = direct.shape[2]
    cdef Py_ssize_t R = coef.shape[2], M = coef.shape[4]
    cdef Py_ssize_t p, s, u, r, i, m
    cdef double re, im, val, best, acc, slot
    cdef double extra = bonus / bandwidth
    out_arr = np.zeros(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    c_arr = np.empty((R, M), dtype=np.float64)
    s_arr = np.empty((R, M), dtype=np.float64)
    cdef double[:, ::1] cs = c_arr
    cdef double[:, ::1] sn = s_arr
    with nogil:
        for p in range(P):
            _trig(phases[p], cs, sn)
            acc = 0.0
            for s in range(S):
                slot = 0.0
                for i in range(N):
                    best = 0.0
                    for u in range(U):
                        if R == 0:
                            val = scale * direct[s, u, i] * direct[s, u, i]
                            if val > best:
                                best = val
                            continue
                        for r in range(R):
                            _field(&coef[s, u, r, i, 0], &cs[r, 0], &sn[r, 0], M, direct[s, u, i], &re, &im)
                            val = scale * (re * re + im * im)
                            if val > best:
                                best = val
                    if best >= thresholds[i]:
                        slot = slot + log2(1.0 + best) + extra
                acc = acc + weights[s] * slot
            out[p] = bandwidth * acc
    return out_arr
