"""Sampled jump paths and the counting/intensity statistics defined on them.

The counting measures (jumps into / out of a state set) and their integrated
intensities along the realized path are the two sides of the compensator
identity: their means agree over independent trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from ..model import ModelSpec
from ..policies import FiniteMemoryPolicy, GeneralPolicy, MarkovPolicyGrid, decision_at

__all__ = [
    "TrajectoryStatus",
    "Trajectory",
    "count_into",
    "count_out_of",
    "integrated_intensity_into",
    "integrated_intensity_out_of",
]

# Sojourn-collapse heuristic for flagging explosion at the jump cap: the last
# sojourns must have shrunk by this factor relative to the first ones.
_COLLAPSE_RATIO = 0.01
_COLLAPSE_WINDOW = 10


class TrajectoryStatus(Enum):
    COMPLETED = "completed"
    TRUNCATED_JUMPS = "truncated_jumps"
    EXPLODED_PROXY = "exploded_proxy"


@dataclass
class Trajectory:
    """One sampled path: initial state, jump epochs and destinations.

    Jump times are strictly increasing; a path is COMPLETED when the horizon
    was reached, otherwise it hit the jump cap (with EXPLODED_PROXY when the
    sojourns were collapsing, the finite-sample stand-in for explosion).
    """

    initial_state: int
    times: np.ndarray
    states: np.ndarray
    status: TrajectoryStatus
    horizon: float

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    def state_at(self, t: float, left: bool = False) -> int:
        """State at time t (or its left limit)."""
        side = "left" if left else "right"
        i = int(np.searchsorted(self.times, t, side=side))
        return int(self.states[i - 1]) if i > 0 else self.initial_state

    def sojourns(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.times]))

    def history_until(self, t: float):
        """(times, states, initial) with jumps strictly before t, for policy queries."""
        i = int(np.searchsorted(self.times, t, side="left"))
        return self.times[:i], self.states[:i], self.initial_state


def classify_capped(times: np.ndarray, horizon: float) -> TrajectoryStatus:
    """Status of a path that hit the jump cap before the horizon."""
    w = _COLLAPSE_WINDOW
    if len(times) >= 2 * w:
        sojourns = np.diff(np.concatenate([[0.0], times]))
        head = sojourns[:w].mean()
        tail = sojourns[-w:].mean()
        if tail < _COLLAPSE_RATIO * head:
            return TrajectoryStatus.EXPLODED_PROXY
    return TrajectoryStatus.TRUNCATED_JUMPS


def count_into(traj: Trajectory, target: Iterable[int], t: float) -> int:
    """Number of jumps landing in the state set by time t (inclusive)."""
    target = set(target)
    upto = int(np.searchsorted(traj.times, t, side="right"))
    return int(sum(1 for y in traj.states[:upto] if int(y) in target))


def count_out_of(traj: Trajectory, target: Iterable[int], t: float) -> int:
    """Number of jumps leaving the state set by time t (inclusive)."""
    target = set(target)
    upto = int(np.searchsorted(traj.times, t, side="right"))
    sources = np.concatenate([[traj.initial_state], traj.states[:-1]]) if traj.n_jumps \
        else np.array([], dtype=int)
    return int(sum(1 for z in sources[:upto] if int(z) in target))


def _segments(traj: Trajectory, t: float):
    """(start, end, state) pieces of the path clipped to [0, t]."""
    start = 0.0
    z = traj.initial_state
    for tn, xn in zip(traj.times, traj.states):
        if tn >= t:
            break
        yield start, float(tn), z
        start, z = float(tn), int(xn)
    if start < t:
        yield start, t, z


def _policy_cells(policy):
    if isinstance(policy, (MarkovPolicyGrid, FiniteMemoryPolicy)):
        return policy.grid
    return None


def _integrate_rate(traj: Trajectory, model: ModelSpec, policy, t: float,
                    rate_of) -> float:
    """Integrate rate_of(weights, z) over the path, exactly per constant piece.

    The policy is piecewise constant on its grid, the state is constant per
    sojourn, so the integrand is constant on the intersections.
    """
    grid = _policy_cells(policy)
    total = 0.0
    for a, b, z in _segments(traj, t):
        if grid is None:
            # callback policies: single evaluation per segment midpoint is not
            # exact; refuse rather than silently approximate
            raise NotImplementedError("integrated intensities need a grid policy")
        lo = a
        while lo < b:
            k = grid.cell_of(lo)
            hi = min(b, (k + 1) * grid.step) if k < grid.n_cells - 1 else b
            if hi <= lo:
                hi = b
            w = _weights_for(traj, model, policy, z, lo)
            total += rate_of(w, z) * (hi - lo)
            lo = hi
    return total


def _weights_for(traj: Trajectory, model: ModelSpec, policy, z: int, t: float):
    if isinstance(policy, MarkovPolicyGrid):
        return policy.table[policy.grid.cell_of(t), z]
    if isinstance(policy, FiniteMemoryPolicy):
        upto = [int(x) for tn, x in zip(traj.times, traj.states) if tn <= t]
        m = policy.memory_after(traj.initial_state, upto)
        return policy.decision[policy.grid.cell_of(t), z, m]
    raise NotImplementedError(f"no weight table for {type(policy)!r}")


def integrated_intensity_into(traj: Trajectory, model: ModelSpec, policy,
                              target: Iterable[int], t: float) -> float:
    """Integral over [0, t] of the jump intensity from the current state into
    the target set (excluding the current state itself)."""
    target = set(int(i) for i in target)

    def rate(w, z):
        idx = [y for y in target if y != z]
        if not idx:
            return 0.0
        return float(w @ model.rates[z][:, idx].sum(axis=1))

    return _integrate_rate(traj, model, policy, t, rate)


def integrated_intensity_out_of(traj: Trajectory, model: ModelSpec, policy,
                                target: Iterable[int], t: float) -> float:
    """Integral over [0, t] of the exit intensity while the path sits in the set."""
    target = set(int(i) for i in target)

    def rate(w, z):
        if z not in target:
            return 0.0
        return float(w @ model.exit_rates[z])

    return _integrate_rate(traj, model, policy, t, rate)
