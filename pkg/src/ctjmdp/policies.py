"""Policies: Markov grid policies, finite-memory history policies, callbacks.

A Markov policy assigns a relaxed action per (state, time); it is stored
piecewise constant on a uniform grid with constant extension past the end.
A finite-memory policy routes history through a finite memory updated at each
jump; it admits exact marginals through the product-chain construction in
:func:`augment`.  A general callback policy can only be simulated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import GridMismatchError, ModelError, PolicyError
from .grid import TimeGrid
from .model import ModelSpec, RelaxedAction, validate_model

__all__ = [
    "MarkovPolicyGrid",
    "FiniteMemoryPolicy",
    "GeneralPolicy",
    "decision_at",
    "augment",
    "fallback_action",
    "load_policy",
    "save_policy",
]


@dataclass(frozen=True)
class MarkovPolicyGrid:
    """Relaxed action per (grid cell, state); constant beyond the grid.

    table[k, z, a] is the weight on action a at state z during cell k.
    """

    grid: TimeGrid
    table: np.ndarray  # (K, S, A)

    @staticmethod
    def build(model: ModelSpec, grid: TimeGrid, table: np.ndarray) -> "MarkovPolicyGrid":
        table = np.ascontiguousarray(table, dtype=np.float64)
        if table.shape != (grid.n_cells, model.n_states, model.n_actions):
            raise PolicyError("UNSUPPORTED_ACTION",
                              f"table shape {table.shape} does not match grid/model")
        if np.any(table < -1e-15):
            raise ModelError("BAD_DIST", "negative policy weight")
        if not np.allclose(table.sum(axis=2), 1.0, atol=1e-9):
            raise ModelError("BAD_DIST", "policy weights must sum to 1 per (cell, state)")
        stray = (table * ~model.feasible_mask[None, :, :]).sum()
        if stray > 1e-12:
            raise PolicyError("UNSUPPORTED_ACTION", "policy puts mass on infeasible actions")
        table.setflags(write=False)
        return MarkovPolicyGrid(grid, table)

    @staticmethod
    def homogeneous(model: ModelSpec, weights: Mapping[str, Mapping[str, float]],
                    grid: TimeGrid | None = None) -> "MarkovPolicyGrid":
        """Time-invariant policy from {state: {action: weight}}."""
        if grid is None:
            grid = TimeGrid(1.0, 1)
        row = np.zeros((model.n_states, model.n_actions))
        for s, ws in weights.items():
            for a, p in ws.items():
                row[model.state_index[s], model.action_index[a]] = p
        table = np.broadcast_to(row, (grid.n_cells,) + row.shape).copy()
        return MarkovPolicyGrid.build(model, grid, table)

    @staticmethod
    def uniform(model: ModelSpec, grid: TimeGrid | None = None) -> "MarkovPolicyGrid":
        """Uniform relaxed action over each feasible set; handy test policy."""
        row = model.feasible_mask / model.feasible_mask.sum(axis=1, keepdims=True)
        if grid is None:
            grid = TimeGrid(1.0, 1)
        table = np.broadcast_to(row, (grid.n_cells,) + row.shape).copy()
        return MarkovPolicyGrid.build(model, grid, table)

    def weights_at(self, z: int, t: float) -> np.ndarray:
        return self.table[self.grid.cell_of(t), z]


@dataclass(frozen=True)
class FiniteMemoryPolicy:
    """History policy that only sees (state, finite memory, time).

    The memory is updated deterministically at each jump via
    update[m, from_state, to_state] -> next memory.  Decisions live on a
    uniform time grid like Markov policies: decision[k, z, m, a].
    """

    memory_states: tuple
    initial_memory: int
    update: np.ndarray        # (M, S, S) int
    grid: TimeGrid
    decision: np.ndarray      # (K, S, M, A)

    @staticmethod
    def build(model: ModelSpec, memory_states, initial_memory, update, grid,
              decision) -> "FiniteMemoryPolicy":
        memory_states = tuple(memory_states)
        M, S, A = len(memory_states), model.n_states, model.n_actions
        update = np.ascontiguousarray(update, dtype=np.int64)
        decision = np.ascontiguousarray(decision, dtype=np.float64)
        if update.shape != (M, S, S):
            raise PolicyError("UNSUPPORTED_ACTION", "memory update table shape mismatch")
        if np.any(update < 0) or np.any(update >= M):
            raise PolicyError("UNSUPPORTED_ACTION", "memory update leaves the memory set")
        if decision.shape != (grid.n_cells, S, M, A):
            raise PolicyError("UNSUPPORTED_ACTION",
                              f"decision shape {decision.shape} does not match grid/model")
        if not np.allclose(decision.sum(axis=3), 1.0, atol=1e-9):
            raise ModelError("BAD_DIST", "decision weights must sum to 1")
        if np.any(decision < -1e-15):
            raise ModelError("BAD_DIST", "negative decision weight")
        stray = (decision * ~model.feasible_mask[None, :, None, :]).sum()
        if stray > 1e-12:
            raise PolicyError("UNSUPPORTED_ACTION", "decision puts mass on infeasible actions")
        update.setflags(write=False)
        decision.setflags(write=False)
        if not (0 <= int(initial_memory) < M):
            raise PolicyError("UNSUPPORTED_ACTION", "initial memory outside the memory set")
        return FiniteMemoryPolicy(memory_states, int(initial_memory), update, grid, decision)

    @property
    def n_memory(self) -> int:
        return len(self.memory_states)

    def memory_after(self, initial_state: int, jump_states) -> int:
        """Memory value after replaying the given jump destinations."""
        m = self.initial_memory
        prev = initial_state
        for y in jump_states:
            m = int(self.update[m, prev, y])
            prev = y
        return m

    def weights_at(self, z: int, m: int, t: float) -> np.ndarray:
        return self.decision[self.grid.cell_of(t), z, m]


@dataclass(frozen=True)
class GeneralPolicy:
    """Arbitrary history-dependent policy as a pure callable.

    ``choose(times, states, initial_state, t)`` must return a mapping
    action -> weight supported on the feasible set of the current state.
    Only the simulator (thinning sampler) accepts these.
    """

    choose: Callable


def fallback_action(model: ModelSpec, z: int) -> int:
    """Deterministic feasible action used where a conditional law is undefined.

    Tie-break: lowest index in the ordered action list.
    """
    return model.feasible[z][0]


def _history_state(history, t: float) -> int:
    """Current state strictly before time t given a (times, states) history."""
    times, states, x0 = history
    z = x0
    for tn, xn in zip(times, states):
        if tn < t:
            z = xn
        else:
            break
    return z


def decision_at(model: ModelSpec, policy, history, t: float) -> RelaxedAction:
    """Relaxed action the policy selects at time ``t`` given the jump history.

    ``history`` is (jump_times, jump_states, initial_state) with jump times
    strictly before ``t``.  Markov policies only read (current state, t).
    """
    times, states, x0 = history
    z = _history_state(history, t)
    if isinstance(policy, MarkovPolicyGrid):
        w = policy.weights_at(z, t)
    elif isinstance(policy, FiniteMemoryPolicy):
        upto = [x for tn, x in zip(times, states) if tn < t]
        m = policy.memory_after(x0, upto)
        w = policy.weights_at(z, m, t)
    elif isinstance(policy, GeneralPolicy):
        raw = policy.choose(tuple(times), tuple(states), x0, t)
        w = np.zeros(model.n_actions)
        for a, p in raw.items():
            ai = model.action_index[a] if isinstance(a, str) else int(a)
            w[ai] = p
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ModelError("BAD_DIST", "callback policy returned a non-distribution")
    else:
        raise PolicyError("UNSUPPORTED_ACTION", f"unknown policy type {type(policy)!r}")
    stray = w.copy()
    stray[list(model.feasible[z])] = 0.0
    if stray.sum() > 1e-12:
        raise PolicyError(
            "UNSUPPORTED_ACTION",
            f"policy mass outside A({model.states[z]!r}) at t={t}",
        )
    return RelaxedAction({model.actions[a]: float(w[a]) for a in np.nonzero(w)[0]})


def _aug_state_name(s: str, m: str) -> str:
    return f"{s}@{m}"


def augment(model: ModelSpec, fm: FiniteMemoryPolicy) -> tuple:
    """Product chain over (state, memory) turning a finite-memory policy Markov.

    The augmented model jumps from (z, m) under action a to
    (y, update[m, z, y]) at rate q(z, a, {y}); the decision table becomes a
    Markov grid policy on the product space.  Marginalizing the product
    occupancy over memory recovers the original process law, which is what
    makes exact forward solves possible for these policies.

    Returns (augmented model, Markov policy on it, index pairs) where
    index pairs[j] = (state index, memory index) for augmented state j.
    """
    S, M, A = model.n_states, fm.n_memory, model.n_actions
    pairs = [(z, m) for z in range(S) for m in range(M)]
    aug_index = {p: j for j, p in enumerate(pairs)}

    names = [_aug_state_name(model.states[z], fm.memory_states[m]) for z, m in pairs]
    d = {
        "states": names,
        "actions": list(model.actions),
        "feasible": {names[j]: [model.actions[a] for a in model.feasible[pairs[j][0]]]
                     for j in range(len(pairs))},
        "rates": [],
        "cost_rate": {},
        "instant_costs": [],
        "jump_costs": {},
    }
    for j, (z, m) in enumerate(pairs):
        for a in model.feasible[z]:
            row = {}
            for y in range(S):
                if y == z:
                    continue
                r = float(model.rates[z, a, y])
                if r != 0.0:
                    tgt = names[aug_index[(y, int(fm.update[m, z, y]))]]
                    row[tgt] = row.get(tgt, 0.0) + r
            if row:
                row[names[j]] = -sum(row.values())
                d["rates"].append({"state": names[j], "action": model.actions[a], "row": row})
            v = float(model.cost_rate[z, a])
            if v != 0.0:
                d["cost_rate"][f"{names[j]}|{model.actions[a]}"] = v
    for u, g in model.instant_costs:
        vals = {}
        for j, (z, m) in enumerate(pairs):
            for a in model.feasible[z]:
                if g[z, a] != 0.0:
                    vals[f"{names[j]}|{model.actions[a]}"] = float(g[z, a])
        d["instant_costs"].append({"time": u, "values": vals})
    for j, (z, m) in enumerate(pairs):
        for y in range(S):
            if y != z and model.jump_costs[z, y] != 0.0:
                tgt = names[aug_index[(y, int(fm.update[m, z, y]))]]
                d["jump_costs"][f"{names[j]}|{tgt}"] = float(model.jump_costs[z, y])

    aug_model = validate_model(d)
    table = np.zeros((fm.grid.n_cells, len(pairs), A))
    for j, (z, m) in enumerate(pairs):
        table[:, j, :] = fm.decision[:, z, m, :]
    aug_policy = MarkovPolicyGrid.build(aug_model, fm.grid, table)
    return aug_model, aug_policy, tuple(pairs)


def lift_distribution(model: ModelSpec, fm: FiniteMemoryPolicy,
                      gamma: np.ndarray, pairs) -> np.ndarray:
    """Initial law on the product chain: all mass starts at the initial memory."""
    out = np.zeros(len(pairs))
    for j, (z, m) in enumerate(pairs):
        if m == fm.initial_memory:
            out[j] = gamma[z]
    return out


# ---------------------------------------------------------------------------
# Policy files

def policy_to_dict(model: ModelSpec, policy) -> dict:
    if isinstance(policy, MarkovPolicyGrid):
        return {
            "type": "markov",
            "grid": {"h": policy.grid.step, "K": policy.grid.n_cells},
            "table": {
                s: [
                    {model.actions[a]: float(policy.table[k, z, a])
                     for a in np.nonzero(policy.table[k, z])[0]}
                    for k in range(policy.grid.n_cells)
                ]
                for z, s in enumerate(model.states)
            },
        }
    if isinstance(policy, FiniteMemoryPolicy):
        upd = []
        for m in range(policy.n_memory):
            for z in range(model.n_states):
                for y in range(model.n_states):
                    nxt = int(policy.update[m, z, y])
                    if nxt != m:
                        upd.append([policy.memory_states[m], model.states[z],
                                    model.states[y], policy.memory_states[nxt]])
        return {
            "type": "finite_memory",
            "grid": {"h": policy.grid.step, "K": policy.grid.n_cells},
            "memory_states": list(policy.memory_states),
            "initial_memory": policy.memory_states[policy.initial_memory],
            "update": upd,
            "decision": {
                f"{s}@{mm}": [
                    {model.actions[a]: float(policy.decision[k, z, m, a])
                     for a in np.nonzero(policy.decision[k, z, m])[0]}
                    for k in range(policy.grid.n_cells)
                ]
                for z, s in enumerate(model.states)
                for m, mm in enumerate(policy.memory_states)
            },
        }
    raise PolicyError("UNSUPPORTED_ACTION", f"cannot serialize {type(policy)!r}")


def policy_from_dict(model: ModelSpec, d: Mapping):
    grid = TimeGrid(float(d["grid"]["h"]), int(d["grid"]["K"]))
    if d["type"] == "markov":
        table = np.zeros((grid.n_cells, model.n_states, model.n_actions))
        for s, rows in d["table"].items():
            z = model.state_index[s]
            if len(rows) != grid.n_cells:
                raise GridMismatchError(f"policy table for {s!r} has {len(rows)} cells")
            for k, row in enumerate(rows):
                for a, w in row.items():
                    table[k, z, model.action_index[a]] = float(w)
        return MarkovPolicyGrid.build(model, grid, table)
    if d["type"] == "finite_memory":
        mem = list(d["memory_states"])
        midx = {m: i for i, m in enumerate(mem)}
        M, S = len(mem), model.n_states
        update = np.zeros((M, S, S), dtype=np.int64)
        for m in range(M):
            update[m, :, :] = m  # unnamed transitions keep the memory
        for entry in d.get("update", []):
            m, z, y, nxt = entry
            update[midx[m], model.state_index[z], model.state_index[y]] = midx[nxt]
        decision = np.zeros((grid.n_cells, S, M, model.n_actions))
        for key, rows in d["decision"].items():
            s, mm = key.rsplit("@", 1)
            z, m = model.state_index[s], midx[mm]
            for k, row in enumerate(rows):
                for a, w in row.items():
                    decision[k, z, m, model.action_index[a]] = float(w)
        return FiniteMemoryPolicy.build(model, mem, midx[d["initial_memory"]],
                                        update, grid, decision)
    raise PolicyError("UNSUPPORTED_ACTION", f"unknown policy type {d['type']!r}")


def load_policy(model: ModelSpec, path):
    with open(path) as f:
        return policy_from_dict(model, json.load(f))


def save_policy(model: ModelSpec, policy, path):
    with open(path, "w") as f:
        json.dump(policy_to_dict(model, policy), f, indent=1, sort_keys=True)
