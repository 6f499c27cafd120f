"""Single-draw sampling operations: sojourn times and jump destinations.

Grid policies admit exact sampling by inverting the piecewise-constant
integrated intensity.  Callback policies go through thinning against the
state's rate envelope, which is exact for any intensity bounded by it.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import PolicyError
from ..model import ModelSpec, RelaxedAction, mixed_exit_rate, mixed_rate
from ..policies import (
    FiniteMemoryPolicy,
    GeneralPolicy,
    MarkovPolicyGrid,
    decision_at,
)

__all__ = ["sample_sojourn", "sample_destination"]


def sample_sojourn(rng: np.random.Generator, model: ModelSpec, policy, history,
                   t0: float, horizon: float = math.inf) -> float:
    """Sojourn time after t0 in the current state under the policy.

    Exact inversion for grid policies (piecewise-constant intensity);
    thinning against the max exit rate for callback policies.  Returns
    math.inf when the integrated intensity up to the horizon cannot reach
    the drawn exponential level (censoring).  ``history`` is
    (jump_times, jump_states, initial_state) with all jumps up to t0.
    """
    times, states, x0 = history
    z = int(states[-1]) if len(states) else int(x0)

    if isinstance(policy, GeneralPolicy):
        qbar = model.max_exit(z)
        if qbar <= 0.0:
            return math.inf
        t = t0
        while True:
            t += rng.exponential(1.0 / qbar)
            if t > horizon:
                return math.inf
            p = decision_at(model, policy, history, t).vector(model)
            lam = float(p @ model.exit_rates[z])
            if rng.random() * qbar < lam:
                return t - t0

    if isinstance(policy, MarkovPolicyGrid):
        def rate_at(t):
            return float(policy.table[policy.grid.cell_of(t), z] @ model.exit_rates[z])
    elif isinstance(policy, FiniteMemoryPolicy):
        # the memory is frozen during the sojourn
        m = policy.memory_after(int(x0), [int(s) for s in states])
        def rate_at(t):
            return float(policy.decision[policy.grid.cell_of(t), z, m]
                         @ model.exit_rates[z])
    else:
        raise PolicyError("UNSUPPORTED_ACTION", f"cannot sample {type(policy)!r}")

    e = -math.log1p(-rng.random())
    if e <= 0.0:
        e = 5e-324
    grid = policy.grid
    t = t0
    acc = 0.0
    while True:
        lam = rate_at(t)
        k = grid.cell_of(t)
        edge = (k + 1) * grid.step if k < grid.n_cells - 1 else math.inf
        seg_end = min(edge, horizon)
        if lam > 0.0 and acc + lam * (seg_end - t) >= e:
            return t + (e - acc) / lam - t0
        acc += lam * (seg_end - t)
        t = seg_end
        if t >= horizon:
            return math.inf


def sample_destination(rng: np.random.Generator, model: ModelSpec, z: int,
                       p: RelaxedAction | np.ndarray) -> int:
    """Jump destination from state z under the relaxed action p.

    Destination y != z is chosen with probability q(z, p, {y}) / q(z, p).
    """
    lam = mixed_exit_rate(model, z, p)
    if lam <= 0.0:
        raise PolicyError("ZERO_EXIT", f"state {model.states[z]!r} has zero exit rate")
    pv = p.vector(model) if isinstance(p, RelaxedAction) else np.asarray(p, float)
    flow = pv @ model.rates[z]
    flow[z] = 0.0
    cdf = np.cumsum(flow / flow.sum())
    cdf[-1] = 1.0
    return int(np.searchsorted(cdf, rng.random(), side="right"))


def _thinning_path(gen: np.random.Generator, model: ModelSpec, policy: GeneralPolicy,
                   z0: int, horizon: float, max_jumps: int):
    """Full path for a callback policy by repeated thinning."""
    times: list = []
    states: list = []
    z = z0
    t = 0.0
    capped = False
    while True:
        history = (np.array(times), np.array(states, dtype=np.int32), z0)
        qbar = model.max_exit(z)
        if qbar <= 0.0:
            break
        accepted = None
        tp = t
        while True:
            tp += gen.exponential(1.0 / qbar)
            if tp > horizon:
                break
            w = decision_at(model, policy, history, tp).vector(model)
            lam = float(w @ model.exit_rates[z])
            if gen.random() * qbar < lam:
                accepted = (tp, w)
                break
        if accepted is None:
            break
        t, w = accepted
        flow = w @ model.rates[z]
        flow[z] = 0.0
        cdf = np.cumsum(flow / flow.sum())
        cdf[-1] = 1.0
        z = int(np.searchsorted(cdf, gen.random(), side="right"))
        times.append(t)
        states.append(z)
        if len(times) >= max_jumps:
            capped = True
            break
    return np.array(times), np.array(states, dtype=np.int32), capped
