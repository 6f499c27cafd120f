# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled path sampler; mirrors _pathsim_py.run_paths operation for operation.

The two kernels must keep the same draw order and float arithmetic so a fixed
(seed, index) produces bit-identical trajectories either way.
"""

from libc.math cimport log1p, INFINITY

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t

cnp.import_array()

cdef double _TINY = 5e-324


cdef inline long _ub1(double[::1] a, long lo, long hi, double v) nogil:
    cdef long mid
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] > v:
            hi = mid
        else:
            lo = mid + 1
    return lo


cdef inline long _ub_col(double[:, ::1] a, long col, long lo, long hi, double v) nogil:
    cdef long mid
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid, col] > v:
            hi = mid
        else:
            lo = mid + 1
    return lo


cdef inline long _ub_row3(double[:, :, ::1] a, long i, long j, long lo, long hi,
                          double v) nogil:
    cdef long mid
    while lo < hi:
        mid = (lo + hi) // 2
        if a[i, j, mid] > v:
            hi = mid
        else:
            lo = mid + 1
    return lo


def run_paths(tables, double horizon, long max_jumps, bitgen_factory,
              long idx_lo, long idx_hi, double est_h=0.0, long est_n=0,
              bint collect_paths=True):
    cdef double h = tables.h
    cdef long K = tables.n_cells
    cdef double[:, ::1] exit_r = tables.exit
    cdef double[:, ::1] cum = tables.cum_exit
    cdef double[:, :, ::1] cdf = tables.dest_cdf
    cdef double[::1] init_cdf = tables.init_cdf
    cdef long S = tables.exit.shape[1]

    cdef long n = idx_hi - idx_lo
    init_states_arr = np.zeros(n, dtype=np.int32)
    statuses_arr = np.zeros(n, dtype=np.int8)
    offsets_arr = np.zeros(n + 1, dtype=np.int64)
    cdef int[::1] init_states = init_states_arr
    cdef signed char[::1] statuses = statuses_arr
    cdef long long[::1] offsets = offsets_arr

    occ_arr = None
    cdef long long[:, ::1] occ
    cdef bint have_occ = est_n > 0
    if have_occ:
        occ_arr = np.zeros((est_n + 1, S), dtype=np.int64)
        occ = occ_arr

    buf_t_arr = np.empty(max_jumps)
    buf_s_arr = np.empty(max_jumps, dtype=np.int32)
    cdef double[::1] buf_t = buf_t_arr
    cdef int[::1] buf_s = buf_s_arr

    all_times = []
    all_states = []

    cdef bitgen_t *rng
    cdef long i, z, y, nj, k0, k1, kj, g, g_lo, g_hi
    cdef double t, t_next, t_end, u, e, target, lam
    cdef bint capped

    for i in range(n):
        bg = bitgen_factory(idx_lo + i)
        rng = <bitgen_t *> PyCapsule_GetPointer(bg.capsule, "BitGenerator")

        u = rng.next_double(rng.state)
        z = _ub1(init_cdf, 0, S, u)
        init_states[i] = <int> z
        if have_occ:
            occ[0, z] += 1
        t = 0.0
        nj = 0
        capped = False
        while True:
            u = rng.next_double(rng.state)
            e = -log1p(-u)
            if e <= 0.0:
                e = _TINY
            k0 = <long> (t / h)
            if k0 > K - 1:
                k0 = K - 1
            target = cum[k0, z] + exit_r[k0, z] * (t - k0 * h) + e
            if target < cum[K, z]:
                k1 = _ub_col(cum, z, 0, K + 1, target) - 1
                t_next = k1 * h + (target - cum[k1, z]) / exit_r[k1, z]
            else:
                lam = exit_r[K - 1, z]
                if lam > 0.0:
                    t_next = K * h + (target - cum[K, z]) / lam
                else:
                    t_next = INFINITY
            t_end = t_next if t_next < horizon else horizon
            if have_occ:
                # the 1e-9 nudge keeps exact grid-point hits on the left-limit side
                g_lo = <long> (t / est_h + 1e-9) + 1
                g_hi = <long> (t_end / est_h + 1e-9)
                if g_hi > est_n:
                    g_hi = est_n
                for g in range(g_lo, g_hi + 1):
                    occ[g, z] += 1
            if t_next > horizon:
                break
            kj = <long> (t_next / h)
            if kj > K - 1:
                kj = K - 1
            u = rng.next_double(rng.state)
            y = _ub_row3(cdf, kj, z, 0, S, u)
            buf_t[nj] = t_next
            buf_s[nj] = <int> y
            nj += 1
            t = t_next
            z = y
            if nj >= max_jumps:
                capped = True
                break
        statuses[i] = 1 if capped else 0
        offsets[i + 1] = offsets[i] + nj
        if collect_paths and nj:
            all_times.append(buf_t_arr[:nj].copy())
            all_states.append(buf_s_arr[:nj].copy())

    if collect_paths:
        times = np.concatenate(all_times) if all_times else np.empty(0)
        states = np.concatenate(all_states) if all_states else np.empty(0, dtype=np.int32)
    else:
        times = np.empty(0)
        states = np.empty(0, dtype=np.int32)
    return init_states_arr, statuses_arr, offsets_arr, times, states, occ_arr
