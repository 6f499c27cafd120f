"""Finite CTJMDP model: states, per-state action sets, rate kernel, costs.

The rate kernel q(x, a, .) is a signed measure with zero total mass: the
off-diagonal entries are nonnegative jump rates and the diagonal entry equals
minus the exit rate q(x, a).  Relaxed (randomized) actions act linearly on the
kernel, so mixed rates are convex combinations of the per-action rows.

Everything numeric is indexed densely: states and actions are identifier
strings mapped to array indices at validation time, and all downstream code
works on the index arrays stored here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ModelError, PolicyError

__all__ = [
    "ModelSpec",
    "RelaxedAction",
    "validate_model",
    "load_model",
    "mixed_rate",
    "mixed_exit_rate",
    "max_exit_rate",
    "extend_with_initial_distribution",
]

ROW_SUM_TOL = 1e-9
WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class RelaxedAction:
    """Probability distribution over the actions feasible at one state."""

    weights: Mapping[str, float]

    def __post_init__(self):
        w = dict(self.weights)
        for a, p in w.items():
            if p < 0.0:
                raise ModelError("BAD_DIST", f"negative weight {p} on action {a!r}")
        s = sum(w.values())
        if abs(s - 1.0) > WEIGHT_SUM_TOL:
            raise ModelError("BAD_DIST", f"weights sum to {s}, not 1")
        object.__setattr__(self, "weights", w)

    def vector(self, model: "ModelSpec") -> np.ndarray:
        v = np.zeros(model.n_actions)
        for a, p in self.weights.items():
            if a not in model.action_index:
                raise ModelError("UNKNOWN_ID", f"unknown action {a!r}")
            v[model.action_index[a]] = p
        return v


@dataclass(frozen=True)
class ModelSpec:
    """Validated, immutable model.  Construct through :func:`validate_model`.

    rates[x, a, y] is q(x, a, {y}); rows over y sum to zero exactly and are
    zero for infeasible (x, a).  exit_rates[x, a] = -rates[x, a, x].
    """

    states: tuple
    actions: tuple
    feasible: tuple            # per state: tuple of feasible action indices
    rates: np.ndarray          # (S, A, S)
    cost_rate: np.ndarray      # (S, A)
    instant_costs: tuple       # ((time, (S, A) array), ...) strictly increasing times
    jump_costs: np.ndarray     # (S, S), zero diagonal
    state_index: dict = field(repr=False)
    action_index: dict = field(repr=False)
    exit_rates: np.ndarray = field(repr=False)   # (S, A)
    feasible_mask: np.ndarray = field(repr=False)  # (S, A) bool

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def max_exit(self, z: int) -> float:
        """Largest exit rate over the actions feasible at state index ``z``."""
        return float(self.exit_rates[z, list(self.feasible[z])].max())

    @property
    def q_bar(self) -> np.ndarray:
        out = np.zeros(self.n_states)
        for z in range(self.n_states):
            out[z] = self.max_exit(z)
        return out

    def is_absorbing(self, z: int) -> bool:
        return self.max_exit(z) == 0.0

    def to_dict(self) -> dict:
        rates = []
        for x, xs in enumerate(self.states):
            for a in self.feasible[x]:
                row = {self.states[y]: float(self.rates[x, a, y])
                       for y in range(self.n_states) if self.rates[x, a, y] != 0.0 or y == x}
                rates.append({"state": xs, "action": self.actions[a], "row": row})
        cost_rate = {}
        for x, xs in enumerate(self.states):
            for a in self.feasible[x]:
                v = float(self.cost_rate[x, a])
                if v != 0.0:
                    cost_rate[f"{xs}|{self.actions[a]}"] = v
        instants = []
        for u, g in self.instant_costs:
            vals = {}
            for x, xs in enumerate(self.states):
                for a in self.feasible[x]:
                    v = float(g[x, a])
                    if v != 0.0:
                        vals[f"{xs}|{self.actions[a]}"] = v
            instants.append({"time": u, "values": vals})
        jumps = {}
        for x, xs in enumerate(self.states):
            for y, ys in enumerate(self.states):
                if x != y and self.jump_costs[x, y] != 0.0:
                    jumps[f"{xs}|{ys}"] = float(self.jump_costs[x, y])
        return {
            "states": list(self.states),
            "actions": list(self.actions),
            "feasible": {xs: [self.actions[a] for a in self.feasible[x]]
                         for x, xs in enumerate(self.states)},
            "rates": rates,
            "cost_rate": cost_rate,
            "instant_costs": instants,
            "jump_costs": jumps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _parse_pair_key(key: str, what: str) -> tuple:
    parts = key.split("|")
    if len(parts) != 2:
        raise ModelError("UNKNOWN_ID", f"bad {what} key {key!r}, expected 'left|right'")
    return parts[0], parts[1]


def validate_model(raw: Mapping) -> ModelSpec:
    """Validate a raw model mapping (the JSON file layout) into a ModelSpec.

    Checks: declared identifiers only, nonempty feasible sets, nonnegative
    finite off-diagonal rates, and row sums within ROW_SUM_TOL of zero.  Rows
    are then renormalized so the diagonal equals exactly minus the off-diagonal
    sum, which keeps file round-trip noise out of downstream numerics.
    """
    states = list(raw["states"])
    actions = list(raw["actions"])
    if len(set(states)) != len(states):
        raise ModelError("UNKNOWN_ID", "duplicate state identifiers")
    if len(set(actions)) != len(actions):
        raise ModelError("UNKNOWN_ID", "duplicate action identifiers")
    sidx = {s: i for i, s in enumerate(states)}
    aidx = {a: i for i, a in enumerate(actions)}
    S, A = len(states), len(actions)

    feas_raw = raw.get("feasible", {})
    feasible = []
    for s in states:
        acts = feas_raw.get(s)
        if acts is None:
            raise ModelError("EMPTY_ACTIONS", f"state {s!r} has no feasible set")
        idxs = []
        for a in acts:
            if a not in aidx:
                raise ModelError("UNKNOWN_ID", f"feasible({s!r}) names unknown action {a!r}")
            idxs.append(aidx[a])
        if not idxs:
            raise ModelError("EMPTY_ACTIONS", f"feasible({s!r}) is empty")
        feasible.append(tuple(sorted(idxs)))
    mask = np.zeros((S, A), dtype=bool)
    for x, acts in enumerate(feasible):
        mask[x, list(acts)] = True

    rates = np.zeros((S, A, S))
    seen = np.zeros((S, A), dtype=bool)
    for entry in raw.get("rates", []):
        s, a = entry["state"], entry["action"]
        if s not in sidx:
            raise ModelError("UNKNOWN_ID", f"rate row for unknown state {s!r}")
        if a not in aidx:
            raise ModelError("UNKNOWN_ID", f"rate row for unknown action {a!r}")
        x, ai = sidx[s], aidx[a]
        if not mask[x, ai]:
            raise ModelError("UNKNOWN_ID", f"rate row for infeasible pair ({s!r}, {a!r})")
        row = np.zeros(S)
        for y, v in entry["row"].items():
            if y not in sidx:
                raise ModelError("UNKNOWN_ID", f"rate into unknown state {y!r}")
            row[sidx[y]] = float(v)
        off = row.copy()
        off[x] = 0.0
        if not np.all(np.isfinite(row)):
            raise ModelError("NEG_RATE", f"non-finite rate in row ({s!r}, {a!r})")
        if np.any(off < 0.0):
            raise ModelError("NEG_RATE", f"negative off-diagonal rate in row ({s!r}, {a!r})")
        if abs(row.sum()) > ROW_SUM_TOL:
            raise ModelError("ROW_SUM", f"row ({s!r}, {a!r}) sums to {row.sum():.3g}, not 0")
        row[x] = -off.sum()  # exact zero-sum after renormalization
        rates[x, ai] = row
        seen[x, ai] = True
    # Feasible pairs without a declared row are absorbing (all-zero row).

    cost_rate = np.zeros((S, A))
    for key, v in raw.get("cost_rate", {}).items():
        s, a = _parse_pair_key(key, "cost_rate")
        if s not in sidx or a not in aidx:
            raise ModelError("UNKNOWN_ID", f"cost_rate names unknown pair {key!r}")
        cost_rate[sidx[s], aidx[a]] = float(v)

    instants = []
    last_u = -1.0
    for entry in raw.get("instant_costs", []):
        u = float(entry["time"])
        if u < 0.0:
            raise ModelError("BAD_DIST", f"instant-cost epoch {u} is negative")
        if u <= last_u:
            raise ModelError("BAD_DIST", "instant-cost epochs must be strictly increasing")
        last_u = u
        g = np.zeros((S, A))
        for key, v in entry.get("values", {}).items():
            s, a = _parse_pair_key(key, "instant_costs")
            if s not in sidx or a not in aidx:
                raise ModelError("UNKNOWN_ID", f"instant cost names unknown pair {key!r}")
            g[sidx[s], aidx[a]] = float(v)
        instants.append((u, _freeze(g)))

    jump_costs = np.zeros((S, S))
    for key, v in raw.get("jump_costs", {}).items():
        s, y = _parse_pair_key(key, "jump_costs")
        if s not in sidx or y not in sidx:
            raise ModelError("UNKNOWN_ID", f"jump cost names unknown pair {key!r}")
        if s == y:
            raise ModelError("BAD_DIST", f"jump cost on the diagonal ({key!r})")
        jump_costs[sidx[s], sidx[y]] = float(v)

    exit_rates = np.where(mask, -np.einsum("xax->xa", rates), 0.0)
    return ModelSpec(
        states=tuple(states),
        actions=tuple(actions),
        feasible=tuple(feasible),
        rates=_freeze(rates),
        cost_rate=_freeze(cost_rate),
        instant_costs=tuple(instants),
        jump_costs=_freeze(jump_costs),
        state_index=sidx,
        action_index=aidx,
        exit_rates=_freeze(exit_rates),
        feasible_mask=mask,
    )


def load_model(path) -> ModelSpec:
    with open(path) as f:
        return validate_model(json.load(f))


def _check_support(model: ModelSpec, z: int, p: RelaxedAction | np.ndarray) -> np.ndarray:
    if isinstance(p, RelaxedAction):
        p = p.vector(model)
    p = np.asarray(p, dtype=np.float64)
    off_support = p.copy()
    off_support[list(model.feasible[z])] = 0.0
    if off_support.sum() > WEIGHT_SUM_TOL:
        raise PolicyError(
            "BAD_SUPPORT",
            f"relaxed action puts mass outside A({model.states[z]!r})",
        )
    return p


def mixed_rate(model: ModelSpec, z: int, p: RelaxedAction | np.ndarray,
               target: Iterable[int]) -> float:
    """Rate mass q(z, p, Z) of the relaxed action ``p`` into the state set ``Z``.

    Linear in p; includes the diagonal term when z is in Z, so the mass over
    all states is zero.
    """
    pv = _check_support(model, z, p)
    idx = np.fromiter(target, dtype=np.intp)
    return float(pv @ model.rates[z][:, idx].sum(axis=1))


def mixed_exit_rate(model: ModelSpec, z: int, p: RelaxedAction | np.ndarray) -> float:
    """Exit rate q(z, p) of the relaxed action; never exceeds max_exit_rate(z)."""
    pv = _check_support(model, z, p)
    return float(pv @ model.exit_rates[z])


def max_exit_rate(model: ModelSpec, z: int) -> float:
    return model.max_exit(z)


def extend_with_initial_distribution(model: ModelSpec, gamma: Sequence[float],
                                     entry_rate: float = 1.0) -> tuple:
    """Add an entry state that jumps into the original chain with law ``gamma``.

    The entry state gets one action driving the jump (unit or given rate,
    destination law gamma) and one freeze action; the freeze action is also
    added to every original state with an all-zero row.  The original rates
    are embedded unchanged, so the input is a sub-model of the output.

    Returns (extended model, entry state identifier).
    """
    g = np.asarray(gamma, dtype=np.float64)
    if g.shape != (model.n_states,) or np.any(g < 0) or abs(g.sum() - 1.0) > 1e-9:
        raise ModelError("BAD_DIST", "gamma is not a probability vector over the states")
    if not (entry_rate > 0):
        raise ModelError("BAD_DIST", "entry rate must be positive")

    entry_state = "__entry__"
    a_enter, a_freeze = "__enter__", "__freeze__"
    for name in (entry_state,):
        if name in model.state_index:
            raise ModelError("UNKNOWN_ID", f"state name {name!r} already taken")
    for name in (a_enter, a_freeze):
        if name in model.action_index:
            raise ModelError("UNKNOWN_ID", f"action name {name!r} already taken")

    d = model.to_dict()
    d["states"] = list(model.states) + [entry_state]
    d["actions"] = list(model.actions) + [a_enter, a_freeze]
    feas = {s: list(v) + [a_freeze] for s, v in d["feasible"].items()}
    feas[entry_state] = [a_enter, a_freeze]
    d["feasible"] = feas
    row = {model.states[y]: float(g[y] * entry_rate) for y in range(model.n_states)}
    row[entry_state] = -float(entry_rate)
    d["rates"].append({"state": entry_state, "action": a_enter, "row": row})
    # Freeze rows are absorbing and may be omitted (absent rows are zero).
    return validate_model(d), entry_state
