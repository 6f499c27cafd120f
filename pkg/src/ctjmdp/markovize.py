"""Derivation of the equivalent Markov policy from a history-dependent one.

The Markov policy conditions the original policy's action distribution on the
current state: phi(a | z, t) is the ratio of the state-action marginal to the
state marginal under the original policy, with an arbitrary fixed feasible
action wherever the state carries no mass.  Its induced law reproduces the
original state-action marginals exactly when the Markovized process is
nonexplosive, and never exceeds them otherwise.

The exact pipeline here evaluates the conditional on a half-substep lattice so
the forward solve for the Markovized law sees it at every RK4 stage time;
snapshotting it per grid cell instead would inject an O(h) coefficient error
far above the solver's own accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError
from .forward import (
    LatticeQ,
    MarginalCurve,
    PolicyQ,
    forward_ode,
)
from .grid import TimeGrid
from .model import ModelSpec
from .policies import (
    FiniteMemoryPolicy,
    MarkovPolicyGrid,
    augment,
    fallback_action,
    lift_distribution,
)
from .simulation.engine import SimulationResult, estimate_marginals

__all__ = [
    "derive_markov_exact",
    "derive_markov_mc",
    "markovized_marginals",
    "MarkovizationResult",
    "compare_marginals",
    "DominanceReport",
]

EPS_MASS = 1e-12          # conditional undefined below this state mass
MIN_CELL_COUNT = 25       # Monte Carlo cells thinner than this fall back


def _conditional(model: ModelSpec, state_mass: np.ndarray, action_mass: np.ndarray,
                 eps_mass: float) -> np.ndarray:
    """phi[z, a] = action_mass / state_mass with the fallback on empty states."""
    S, A = model.n_states, model.n_actions
    phi = np.zeros((S, A))
    for z in range(S):
        if state_mass[z] > eps_mass:
            phi[z] = action_mass[z] / state_mass[z]
            phi[z] = np.maximum(phi[z], 0.0)
            phi[z] /= phi[z].sum()
        else:
            phi[z, fallback_action(model, z)] = 1.0
    return phi


def derive_markov_exact(model: ModelSpec, curve: MarginalCurve,
                        eps_mass: float = EPS_MASS) -> MarkovPolicyGrid:
    """Markov grid policy from an exact state-action curve.

    Cell k carries the conditional at the cell's left endpoint.
    """
    if curve.action_probs is None:
        raise GridMismatchError("state-action curve required")
    grid = curve.grid
    table = np.zeros((grid.n_cells, model.n_states, model.n_actions))
    for k in range(grid.n_cells):
        table[k] = _conditional(model, curve.probs[k], curve.action_probs[k], eps_mass)
    return MarkovPolicyGrid.build(model, grid, table)


@dataclass
class MarkovizationDiagnostics:
    cell_counts: np.ndarray       # (K, S) paths found in each (cell, state)
    fallback_cells: np.ndarray    # (K, S) bool where the fallback fired
    std_error: np.ndarray | None  # (K, S, A) for the Monte Carlo variant


def derive_markov_mc(result: SimulationResult, grid: TimeGrid,
                     min_cell_count: int = MIN_CELL_COUNT):
    """Empirical Markovization from a simulated batch.

    Per cell, the conditional action frequency among paths found in the state
    at the cell's left endpoint; cells with fewer than ``min_cell_count``
    visits use the fallback action and are flagged.
    """
    model = result.model
    curve, _, se_sa = estimate_marginals(result, grid)
    n = result.n_paths
    S, A = model.n_states, model.n_actions
    table = np.zeros((grid.n_cells, S, A))
    counts = np.zeros((grid.n_cells, S))
    fallback = np.zeros((grid.n_cells, S), dtype=bool)
    phi_se = np.zeros((grid.n_cells, S, A))
    for k in range(grid.n_cells):
        counts[k] = curve.probs[k] * n
        for z in range(S):
            if counts[k, z] >= min_cell_count:
                table[k, z] = curve.action_probs[k, z] / curve.probs[k, z]
                table[k, z] = np.maximum(table[k, z], 0.0)
                table[k, z] /= table[k, z].sum()
                phi_se[k, z] = se_sa[k, z] / max(curve.probs[k, z], 1e-300)
            else:
                fallback[k, z] = True
                table[k, z, fallback_action(model, z)] = 1.0
    policy = MarkovPolicyGrid.build(model, grid, table)
    return policy, MarkovizationDiagnostics(counts, fallback, phi_se)


@dataclass
class MarkovizationResult:
    """Exact pipeline output: both laws and the derived policy."""

    original_curve: MarginalCurve      # state-action marginals under the input policy
    markovized_curve: MarginalCurve    # state-action marginals under the conditional
    policy: MarkovPolicyGrid           # grid snapshot of the conditional
    lattice_step: float


def markovized_marginals(model: ModelSpec, fm: FiniteMemoryPolicy, gamma,
                         grid: TimeGrid, eps_mass: float = EPS_MASS,
                         keep=None) -> MarkovizationResult:
    """Exact Markovization of a finite-memory policy and both induced laws.

    The product-chain law is solved on a lattice fine enough to supply the
    conditional policy at every stage time of the output solve, so both
    returned curves carry only integrator-level error.  ``keep`` optionally
    restricts the solves to a subset of model states (killed truncation).
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    aug_model, aug_policy, pairs = augment(model, fm)
    keep_base = list(range(model.n_states)) if keep is None else sorted(keep)
    keep_aug = [j for j, (z, m) in enumerate(pairs) if z in keep_base]
    aug_q = PolicyQ(aug_model, aug_policy, keep=keep_aug)

    n_sub = max(1, int(math.ceil(grid.step * aug_q.max_exit / 0.01)))
    lat_step = grid.step / (2 * n_sub)
    lattice = TimeGrid(lat_step, 2 * n_sub * grid.n_cells)
    gamma_aug = lift_distribution(model, fm, gamma, pairs)[keep_aug]
    aug_curve = forward_ode(aug_q, gamma_aug, lattice, n_substeps=1)

    Sk, A, M = len(keep_base), model.n_actions, fm.n_memory
    # product occupancy at lattice times, reshaped (lattice, state, memory)
    occ = aug_curve.probs.reshape(lattice.n_points, Sk, M)
    cells = _decision_cells(fm.grid, lattice, left=False)
    cells_left = _decision_cells(fm.grid, lattice, left=True)
    state_mass = occ.sum(axis=2)

    def conditional_lattice(cell_idx):
        dec = fm.decision[:, keep_base][cell_idx]       # (L+1, Sk, M, A)
        action_mass = np.einsum("jzm,jzma->jza", occ, dec)
        phi = np.zeros((lattice.n_points, Sk, A))
        for j in range(lattice.n_points):
            for zi, z in enumerate(keep_base):
                if state_mass[j, zi] > eps_mass:
                    row = np.maximum(action_mass[j, zi] / state_mass[j, zi], 0.0)
                    phi[j, zi] = row / row.sum()
                else:
                    phi[j, zi, fallback_action(model, z)] = 1.0
        return phi, action_mass

    phi, action_mass = conditional_lattice(cells)

    # Markovized law: forward solve with the conditional sampled on the lattice.
    # The conditional jumps wherever the decision tables do, so the solver also
    # needs its left limits there.
    rates_k = model.rates[np.ix_(keep_base, range(A), keep_base)]
    exits_k = model.exit_rates[keep_base]

    def kernel_of(phi_tab):
        flow = np.einsum("jza,zay->jzy", phi_tab, rates_k)
        for j in range(lattice.n_points):
            np.fill_diagonal(flow[j], 0.0)
        return flow, np.einsum("jza,za->jz", phi_tab, exits_k)

    flow, exits = kernel_of(phi)
    if np.array_equal(cells, cells_left):
        flow_left, exits_left = None, None
    else:
        phi_left, _ = conditional_lattice(cells_left)
        flow_left, exits_left = kernel_of(phi_left)
    labels = tuple(model.states[z] for z in keep_base)
    lat_q = LatticeQ(lat_step, flow, exits, labels=labels,
                     flow_left=flow_left, exits_left=exits_left)
    phi_curve = forward_ode(lat_q, gamma[keep_base], grid, n_substeps=n_sub)
    stride = 2 * n_sub
    phi_curve.action_probs = phi_curve.probs[:, :, None] * phi[::stride]
    phi_curve.actions = model.actions

    # original law on the output grid
    sel = np.arange(grid.n_points) * stride
    pi_curve = MarginalCurve(grid, labels, state_mass[sel],
                             action_probs=action_mass[sel], actions=model.actions,
                             max_clamp=aug_curve.max_clamp)

    policy = _snapshot_policy(model, grid, phi, stride, keep_base)
    return MarkovizationResult(pi_curve, phi_curve, policy, lat_step)


def _decision_cells(policy_grid: TimeGrid, lattice: TimeGrid, left: bool) -> np.ndarray:
    """Decision-grid cell per lattice point, with either boundary convention."""
    out = np.empty(lattice.n_points, dtype=np.int64)
    for j in range(lattice.n_points):
        t = min(j * lattice.step, lattice.horizon)
        k = policy_grid.cell_of(t)
        if left and k > 0:
            x = t / policy_grid.step
            if abs(x - round(x)) <= 1e-9 * max(1.0, x) and round(x) == k:
                k -= 1
        out[j] = k
    return out


def _snapshot_policy(model, grid, phi_lattice, stride, keep_base):
    """Grid policy from lattice conditionals (left-endpoint convention)."""
    table = np.zeros((grid.n_cells, model.n_states, model.n_actions))
    for z in range(model.n_states):
        table[:, z, fallback_action(model, z)] = 1.0
    for zi, z in enumerate(keep_base):
        table[:, z, :] = phi_lattice[: stride * grid.n_cells: stride, zi, :]
    return MarkovPolicyGrid.build(model, grid, table)


# ---------------------------------------------------------------------------
# Dominance / equality report

@dataclass
class DominanceReport:
    violation_sup: float       # sup of max(markovized - original, 0)
    equality_sup: float        # sup of |markovized - original|
    mass_defect_max: float     # worst total-mass shortfall of the Markovized law
    n_points: int

    def to_dict(self) -> dict:
        return {
            "violation_sup": self.violation_sup,
            "equality_sup": self.equality_sup,
            "mass_defect_max": self.mass_defect_max,
            "n_points": self.n_points,
        }


def compare_marginals(markovized: MarginalCurve, original: MarginalCurve) -> DominanceReport:
    """Pointwise comparison of two state-action curves on a shared grid."""
    if markovized.grid != original.grid:
        raise GridMismatchError("curves live on different grids")
    if markovized.states != original.states:
        raise GridMismatchError("curves index different state sets")
    if markovized.action_probs is None or original.action_probs is None:
        diff = markovized.probs - original.probs
    else:
        diff = markovized.action_probs - original.action_probs
    violation = float(np.maximum(diff, 0.0).max())
    equality = float(np.abs(diff).max())
    defect = float(np.max(markovized.defect()))
    return DominanceReport(violation, equality, defect, markovized.grid.n_points)
