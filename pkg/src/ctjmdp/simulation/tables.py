"""Precompiled arrays driving the path samplers.

Any grid policy on a finite model reduces to, per (policy cell, state):
an exit rate, its running time integral (for exact sojourn inversion across
cells), and a destination CDF.  Finite-memory policies are compiled through
the product chain, so the samplers only ever see the Markov-grid form.
Both the compiled and the pure-Python kernel consume these arrays, which is
also what makes their outputs bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PolicyError
from ..model import ModelSpec
from ..policies import FiniteMemoryPolicy, MarkovPolicyGrid, augment, lift_distribution

__all__ = ["SamplerTables", "compile_tables"]


@dataclass
class SamplerTables:
    h: float                  # policy cell width
    n_cells: int
    exit: np.ndarray          # (K, S) exit rate per cell/state
    cum_exit: np.ndarray      # (K+1, S) integral of exit rate up to each cell start
    dest_cdf: np.ndarray      # (K, S, S) destination CDF per cell/state
    init_cdf: np.ndarray      # (S,) CDF of the initial law
    base_state: np.ndarray    # (S,) kernel state -> model state index
    memory_state: np.ndarray  # (S,) kernel state -> memory index (0 for Markov)
    n_base_states: int

    @property
    def n_states(self) -> int:
        return self.exit.shape[1]


def _grid_tables(model: ModelSpec, policy: MarkovPolicyGrid):
    K, S = policy.grid.n_cells, model.n_states
    flow = np.einsum("kza,zay->kzy", policy.table, model.rates)
    for k in range(K):
        np.fill_diagonal(flow[k], 0.0)
    exits = np.einsum("kza,za->kz", policy.table, model.exit_rates)
    cum = np.zeros((K + 1, S))
    np.cumsum(exits * policy.grid.step, axis=0, out=cum[1:])
    cdf = np.cumsum(flow, axis=2)
    total = cdf[:, :, -1:]
    safe = np.where(total > 0.0, total, 1.0)
    cdf = cdf / safe
    cdf[:, :, -1] = 1.0  # guard against roundoff shortfall at the top
    return exits, cum, cdf


def compile_tables(model: ModelSpec, policy, gamma: np.ndarray) -> SamplerTables:
    """Lower (model, policy, initial law) to sampler arrays.

    Returns tables over the kernel state space, which is the product
    (state, memory) space for finite-memory policies and the model space
    otherwise.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if isinstance(policy, MarkovPolicyGrid):
        exits, cum, cdf = _grid_tables(model, policy)
        init = np.cumsum(gamma)
        init[-1] = 1.0
        return SamplerTables(
            h=policy.grid.step, n_cells=policy.grid.n_cells,
            exit=exits, cum_exit=cum, dest_cdf=cdf, init_cdf=init,
            base_state=np.arange(model.n_states, dtype=np.int32),
            memory_state=np.zeros(model.n_states, dtype=np.int32),
            n_base_states=model.n_states,
        )
    if isinstance(policy, FiniteMemoryPolicy):
        aug_model, aug_policy, pairs = augment(model, policy)
        exits, cum, cdf = _grid_tables(aug_model, aug_policy)
        g = lift_distribution(model, policy, gamma, pairs)
        init = np.cumsum(g)
        init[-1] = 1.0
        return SamplerTables(
            h=aug_policy.grid.step, n_cells=aug_policy.grid.n_cells,
            exit=exits, cum_exit=cum, dest_cdf=cdf, init_cdf=init,
            base_state=np.array([z for z, _ in pairs], dtype=np.int32),
            memory_state=np.array([m for _, m in pairs], dtype=np.int32),
            n_base_states=model.n_states,
        )
    raise PolicyError("UNSUPPORTED_ACTION",
                      f"cannot compile sampler tables for {type(policy)!r}")
