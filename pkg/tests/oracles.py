"""Independent oracles used only by tests.

Everything here recomputes expected values by a route different from the code
under test: uniformization for transient CTMC probabilities, high-precision
partial fractions for sums of exponentials, closed forms where they exist.
"""

from __future__ import annotations

import numpy as np


def uniformization_curve(model, weights, gamma, grid, tail=1e-14):
    """Transient state probabilities of the time-homogeneous relaxed policy.

    Poisson mixture of powers of the uniformized transition matrix; truncation
    where the Poisson tail mass drops under ``tail``.
    """
    S = model.n_states
    flow = np.einsum("za,zay->zy", weights, model.rates)
    G = flow.copy()
    lam = float(np.einsum("za,za->z", weights, model.exit_rates).max())
    if lam == 0.0:
        return np.tile(gamma, (grid.n_points, 1))
    P_u = np.eye(S) + G / lam
    times = grid.points
    # per-time Poisson weights, advanced recursively
    probs = np.zeros((grid.n_points, S))
    v = np.asarray(gamma, dtype=float).copy()
    w = np.exp(-lam * times)
    acc = w.copy()
    probs += w[:, None] * v[None, :]
    k = 0
    while np.any(1.0 - acc > tail):
        k += 1
        v = v @ P_u
        w = w * (lam * times) / k
        acc += w
        probs += w[:, None] * v[None, :]
        if k > 100000:
            raise RuntimeError("uniformization failed to truncate")
    return probs


def birth_absorption_cdf(depth: int, t: float, dps: int = 400) -> float:
    """P(sum of Exp((n+1)^2), n < depth, is <= t) by exact partial fractions."""
    from mpmath import exp, mp, mpf

    mp.dps = dps
    lams = [mpf((n + 1) ** 2) for n in range(depth)]
    surv = mpf(0)
    for i, li in enumerate(lams):
        w = mpf(1)
        for j, lj in enumerate(lams):
            if j != i:
                w *= lj / (lj - li)
        surv += w * exp(-li * t)
    return float(1 - surv)


def flip_chain_prob(t, rate=1.0):
    """P(still in the initial state) for the symmetric two-state flip chain."""
    return 0.5 * (1.0 + np.exp(-2.0 * rate * np.asarray(t, dtype=float)))
