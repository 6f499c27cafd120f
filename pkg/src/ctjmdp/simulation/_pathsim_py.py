"""Pure-Python path sampler, the fallback for the compiled extension.

Keeps the exact same draw order and floating-point operations as the
extension so results are bit-identical; only the speed differs.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["run_paths"]

_TINY = 5e-324  # smallest subnormal; keeps sojourns strictly positive


def _upper_bound(a, lo: int, hi: int, v: float) -> int:
    """First index in [lo, hi) with a[index] > v."""
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] > v:
            hi = mid
        else:
            lo = mid + 1
    return lo


def run_paths(tables, horizon: float, max_jumps: int, bitgen_factory,
              idx_lo: int, idx_hi: int, est_h: float = 0.0, est_n: int = 0,
              collect_paths: bool = True):
    """Sample trajectories idx_lo..idx_hi-1.

    Returns (init_states, statuses, offsets, times, states, occupancy) where
    offsets index the flat jump arrays and occupancy is the left-limit state
    histogram on the estimation grid (or None).
    """
    h = tables.h
    K = tables.n_cells
    exit_r = tables.exit
    cum = tables.cum_exit
    cdf = tables.dest_cdf
    init_cdf = tables.init_cdf
    S = tables.n_states

    n = idx_hi - idx_lo
    init_states = np.zeros(n, dtype=np.int32)
    statuses = np.zeros(n, dtype=np.int8)  # 0 completed, 1 capped
    offsets = np.zeros(n + 1, dtype=np.int64)
    all_times: list = []
    all_states: list = []
    occ = np.zeros((est_n + 1, tables.n_states), dtype=np.int64) if est_n else None

    buf_t = np.empty(max_jumps)
    buf_s = np.empty(max_jumps, dtype=np.int32)

    for i in range(n):
        nd = np.random.Generator(bitgen_factory(idx_lo + i)).random

        u0 = nd()
        z = _upper_bound(init_cdf, 0, S, u0)
        init_states[i] = z
        if occ is not None:
            occ[0, z] += 1
        t = 0.0
        nj = 0
        capped = False
        while True:
            u = nd()
            e = -math.log1p(-u)
            if e <= 0.0:
                e = _TINY
            k0 = int(t / h)
            if k0 > K - 1:
                k0 = K - 1
            cz = cum[:, z]
            target = cum[k0, z] + exit_r[k0, z] * (t - k0 * h) + e
            if target < cz[K]:
                k1 = _upper_bound(cz, 0, K + 1, target) - 1
                t_next = k1 * h + (target - cz[k1]) / exit_r[k1, z]
            else:
                lam = exit_r[K - 1, z]
                if lam > 0.0:
                    t_next = K * h + (target - cz[K]) / lam
                else:
                    t_next = math.inf
            t_end = t_next if t_next < horizon else horizon
            if occ is not None:
                # the 1e-9 nudge keeps exact grid-point hits on the left-limit side
                g_lo = int(t / est_h + 1e-9) + 1
                g_hi = int(t_end / est_h + 1e-9)
                if g_hi > est_n:
                    g_hi = est_n
                for g in range(g_lo, g_hi + 1):
                    occ[g, z] += 1
            if t_next > horizon:
                break
            kj = int(t_next / h)
            if kj > K - 1:
                kj = K - 1
            v = nd()
            y = _upper_bound(cdf[kj, z], 0, S, v)
            buf_t[nj] = t_next
            buf_s[nj] = y
            nj += 1
            t = t_next
            z = y
            if nj >= max_jumps:
                capped = True
                break
        statuses[i] = 1 if capped else 0
        offsets[i + 1] = offsets[i] + nj
        if collect_paths and nj:
            all_times.append(buf_t[:nj].copy())
            all_states.append(buf_s[:nj].copy())

    if collect_paths:
        times = np.concatenate(all_times) if all_times else np.empty(0)
        states = np.concatenate(all_states) if all_states else np.empty(0, dtype=np.int32)
    else:
        # offsets still carry per-path jump counts
        times = np.empty(0)
        states = np.empty(0, dtype=np.int32)
    return init_states, statuses, offsets, times, states, occ
