"""Discounted and average cost criteria, exact (from marginal curves) and
Monte Carlo (pathwise, vectorized over a simulated batch).

Jump costs C(x, y) incurred at transition epochs are equivalent to an extra
cost rate c'(z, a) = sum_y C(z, y) q(z, a, {y}): the expected discounted sum
of instantaneous jump charges equals the expected discounted integral of that
rate.  The transformation is linear in relaxed actions, which is what makes
it policy-independent; it requires C not to depend on the action.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CostError
from .forward import MarginalCurve, finite_memory_marginals, markov_marginals
from .grid import TimeGrid
from .model import ModelSpec, RelaxedAction, mixed_rate
from .policies import FiniteMemoryPolicy, MarkovPolicyGrid
from .simulation.engine import SimulationResult

__all__ = [
    "CostBundle",
    "DiscountedCostResult",
    "CostDecomposition",
    "finite_horizon_cost",
    "infinite_horizon_cost",
    "jump_cost_rate",
    "transform_jump_costs",
    "mc_discounted_cost",
    "average_cost_abel",
    "average_cost_cesaro",
    "decompose_signed",
    "evaluate_constraints",
]


@dataclass(frozen=True)
class CostBundle:
    """Cost structure: running rate, instant charges at fixed epochs, jump charges."""

    cost_rate: np.ndarray      # (S, A)
    instant_costs: tuple       # ((u, (S, A) array), ...)
    jump_costs: np.ndarray     # (S, S)

    @staticmethod
    def from_model(model: ModelSpec) -> "CostBundle":
        return CostBundle(model.cost_rate, model.instant_costs, model.jump_costs)

    @staticmethod
    def zero(model: ModelSpec) -> "CostBundle":
        S, A = model.n_states, model.n_actions
        return CostBundle(np.zeros((S, A)), (), np.zeros((S, S)))

    def max_abs_rate(self, model: ModelSpec) -> float:
        total = np.abs(self.cost_rate) + np.abs(transform_jump_costs(model, self.jump_costs))
        return float((total * model.feasible_mask).max()) if total.size else 0.0

    def last_instant(self) -> float:
        return max((u for u, _ in self.instant_costs), default=0.0)


@dataclass
class DiscountedCostResult:
    value: float
    method: str                      # "exact_curve" | "monte_carlo"
    truncation_horizon: float
    error_bound: float | None = None
    std_error: float | None = None
    positive_part: float | None = None
    negative_part: float | None = None


@dataclass
class CostDecomposition:
    positive: CostBundle
    negative: CostBundle


def decompose_signed(bundle: CostBundle) -> CostDecomposition:
    """Split every cost table into its nonnegative and nonpositive parts.

    Recombining by addition reproduces the input exactly.
    """
    def pos(a):
        return np.maximum(a, 0.0)

    def neg(a):
        return np.minimum(a, 0.0)

    return CostDecomposition(
        CostBundle(pos(bundle.cost_rate),
                   tuple((u, pos(g)) for u, g in bundle.instant_costs),
                   pos(bundle.jump_costs)),
        CostBundle(neg(bundle.cost_rate),
                   tuple((u, neg(g)) for u, g in bundle.instant_costs),
                   neg(bundle.jump_costs)),
    )


def jump_cost_rate(model: ModelSpec, jump_costs: np.ndarray, z: int,
                   p: RelaxedAction | np.ndarray) -> float:
    """Expected jump-charge accrual rate at state z under relaxed action p."""
    total = 0.0
    for y in range(model.n_states):
        if y == z or jump_costs[z, y] == 0.0:
            continue
        total += jump_costs[z, y] * mixed_rate(model, z, p, [y])
    return total


def transform_jump_costs(model: ModelSpec, jump_costs: np.ndarray) -> np.ndarray:
    """Equivalent cost rate c'(z, a) = sum_y C(z, y) q(z, a, {y})."""
    C = np.asarray(jump_costs, dtype=np.float64).copy()
    np.fill_diagonal(C, 0.0)
    return np.einsum("zay,zy->za", model.rates * (model.rates > 0), C)


def _discount_integral(alpha: float, a, b):
    """Integral of e^{-alpha s} over [a, b], elementwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if alpha == 0.0:
        return b - a
    return (np.exp(-alpha * a) - np.exp(-alpha * b)) / alpha


def finite_horizon_cost(curve: MarginalCurve, cost_rate: np.ndarray,
                        instant_costs: tuple, alpha: float, T: float) -> DiscountedCostResult:
    """Expected discounted cost over [0, T] from an exact state-action curve.

    Trapezoid quadrature on the curve grid; instant epochs off the grid use
    linear interpolation of the curve.  The reported error bound is the
    standard composite-trapezoid estimate from second differences.
    """
    if curve.action_probs is None:
        raise CostError("UNDEFINED_VALUE", "state-action curve required")
    grid = curve.grid
    kT = grid.index_of(T)
    pts = grid.points[: kT + 1]
    f = np.einsum("kza,za->k", curve.action_probs[: kT + 1], cost_rate)
    f = f * np.exp(-alpha * pts)
    value = float(np.trapz(f, dx=grid.step))
    err = (grid.step / 12.0) * float(np.abs(np.diff(f, 2)).sum()) if len(f) > 2 else 0.0
    for u, g in instant_costs:
        if u > T:
            continue
        sa = curve.interp(u)
        value += math.exp(-alpha * u) * float(np.einsum("za,za->", sa, g))
    return DiscountedCostResult(value, "exact_curve", T, error_bound=err)


def _exact_curve(model, policy, gamma, grid, n_substeps):
    if isinstance(policy, MarkovPolicyGrid):
        return markov_marginals(model, policy, gamma, grid, n_substeps=n_substeps)
    if isinstance(policy, FiniteMemoryPolicy):
        return finite_memory_marginals(model, policy, gamma, grid, n_substeps=n_substeps)
    raise CostError("UNDEFINED_VALUE",
                    "exact costs need a Markov or finite-memory policy")


def infinite_horizon_cost(model: ModelSpec, policy, gamma, bundle: CostBundle,
                          alpha: float, eps: float = 1e-8,
                          grid_step: float = 0.005,
                          n_substeps="auto") -> DiscountedCostResult:
    """Infinite-horizon discounted cost by monotone truncation.

    The horizon satisfies e^{-alpha T} * sup|rate| / alpha <= eps, so the tail
    past T cannot move the value by more than eps (costs accrue at a bounded
    rate on a finite model).  Jump charges enter as the equivalent rate.
    """
    if not (alpha > 0.0):
        raise CostError("UNDEFINED_VALUE", "infinite horizon needs alpha > 0")
    sup_rate = bundle.max_abs_rate(model)
    T = bundle.last_instant()
    if sup_rate > 0.0:
        T = max(T, math.log(sup_rate / (alpha * eps)) / alpha)
    n_cells = max(1, int(math.ceil(T / grid_step)))
    grid = TimeGrid(grid_step, n_cells)
    T = grid.horizon

    curve = _exact_curve(model, policy, gamma, grid, n_substeps)
    c_eff = bundle.cost_rate + transform_jump_costs(model, bundle.jump_costs)
    dec = decompose_signed(CostBundle(c_eff, bundle.instant_costs,
                                      np.zeros_like(bundle.jump_costs)))
    pos = finite_horizon_cost(curve, dec.positive.cost_rate,
                              dec.positive.instant_costs, alpha, T)
    negv = finite_horizon_cost(curve, dec.negative.cost_rate,
                               dec.negative.instant_costs, alpha, T)
    value = pos.value + negv.value
    bound = (pos.error_bound or 0.0) + (negv.error_bound or 0.0) + eps
    return DiscountedCostResult(value, "exact_curve", T, error_bound=bound,
                                positive_part=pos.value, negative_part=negv.value)


# ---------------------------------------------------------------------------
# Monte Carlo evaluation over a simulated batch

def _kernel_weight_table(result: SimulationResult) -> np.ndarray:
    """(cell, kernel state, action) weights of the batch's policy."""
    policy, tables = result.policy, result.tables
    if isinstance(policy, MarkovPolicyGrid):
        return policy.table
    if isinstance(policy, FiniteMemoryPolicy):
        return policy.decision[:, tables.base_state, tables.memory_state, :]
    raise CostError("UNDEFINED_VALUE", "pathwise costs need a grid/finite-memory policy")


def mc_discounted_cost(result: SimulationResult, bundle: CostBundle, alpha: float,
                       T: float | None = None,
                       jump_charge: np.ndarray | None = None) -> DiscountedCostResult:
    """Pathwise discounted cost over a batch: closed form per constant segment.

    ``jump_charge`` optionally overrides the jump-cost table with a
    (cell, kernel state, kernel state) array of expected charges per jump,
    which is how action-dependent charges are evaluated (expectation over the
    relaxed action in force at the jump epoch, drawn independently of the
    jump itself).
    """
    cfg = result.config
    T = cfg.horizon if T is None else T
    if T > cfg.horizon + 1e-12:
        raise CostError("UNDEFINED_VALUE",
                        f"batch horizon {cfg.horizon} shorter than requested {T}")
    tables = result.tables
    K, h = tables.n_cells, tables.h
    w = _kernel_weight_table(result)                       # (K, J, A)
    base = tables.base_state
    rho = np.einsum("kja,ja->kj", w, bundle.cost_rate[base])

    # prefix discounted integrals of the rate cost per kernel state
    edges = np.arange(K + 1) * h
    cell_int = rho * _discount_integral(alpha, edges[:-1], edges[1:])[:, None]
    cum = np.concatenate([np.zeros((1, rho.shape[1])), np.cumsum(cell_int, axis=0)])

    def rate_cost_to(t, j):
        k = np.minimum((t / h).astype(np.int64), K - 1)
        partial = rho[k, j] * _discount_integral(alpha, k * h, t)
        return cum[k, j] + partial

    n = result.n_paths
    path_cost = np.zeros(n)

    # segment table: starts, ends, states, owning path
    counts = np.diff(result.offsets)
    seg_path = np.repeat(np.arange(n), counts + 1)
    starts = np.zeros(len(seg_path))
    ends = np.zeros(len(seg_path))
    seg_state = np.zeros(len(seg_path), dtype=np.int64)
    pos = 0
    for i in range(n):
        sl = result.path_slice(i)
        c = counts[i]
        t = result.times[sl]
        starts[pos] = 0.0
        starts[pos + 1: pos + 1 + c] = t
        ends[pos: pos + c] = t
        # completed paths run to the batch horizon; capped paths stop dead
        ends[pos + c] = cfg.horizon if result.statuses[i] == 0 else (t[-1] if c else 0.0)
        seg_state[pos] = result.init_states[i]
        seg_state[pos + 1: pos + 1 + c] = result.states[sl]
        pos += c + 1
    starts = np.minimum(starts, T)
    ends = np.minimum(ends, T)
    live = ends > starts
    seg_cost = np.zeros(len(seg_path))
    seg_cost[live] = (rate_cost_to(ends[live], seg_state[live])
                      - rate_cost_to(starts[live], seg_state[live]))
    np.add.at(path_cost, seg_path, seg_cost)

    # jump charges
    if jump_charge is None:
        C = bundle.jump_costs[np.ix_(base, base)]
        jump_charge = np.broadcast_to(C, (K,) + C.shape)
    if np.any(jump_charge):
        src = np.empty_like(result.states)
        if len(src):
            src[1:] = result.states[:-1]
            nonempty = counts > 0
            src[result.offsets[:-1][nonempty]] = result.init_states[nonempty]
        tj = result.times
        mask = tj <= T
        cell = np.minimum((tj[mask] / h).astype(np.int64), K - 1)
        charge = jump_charge[cell, src[mask], result.states[mask]]
        jp = np.repeat(np.arange(n), counts)[mask]
        np.add.at(path_cost, jp, np.exp(-alpha * tj[mask]) * charge)

    # instant charges need the left-limit state and the policy weight at u
    for u, g in bundle.instant_costs:
        if u > T:
            continue
        k = min(int(u / h + 1e-9), K - 1)
        gj = np.einsum("ja,ja->j", w[k], g[base])
        disc = math.exp(-alpha * u)
        for i in range(n):
            sl = result.path_slice(i)
            t = result.times[sl]
            if result.statuses[i] != 0 and (len(t) == 0 or u > t[-1]):
                continue
            idx = int(np.searchsorted(t, u, side="left"))
            j = result.states[sl][idx - 1] if idx > 0 else result.init_states[i]
            path_cost[i] += disc * gj[j]

    value = float(path_cost.mean())
    se = float(path_cost.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return DiscountedCostResult(value, "monte_carlo", T, std_error=se)


# ---------------------------------------------------------------------------
# Average costs

@dataclass
class AverageCostEstimate:
    parameters: np.ndarray    # the alpha or T sequence used
    values: np.ndarray        # alpha*V_alpha or V_0^T / T along it
    estimate: float           # last element
    monotone_tail: bool       # whether the last few values are monotone


def _tail_monotone(values: np.ndarray, k: int = 4) -> bool:
    tail = values[-k:]
    d = np.diff(tail)
    return bool(np.all(d <= 1e-12) or np.all(d >= -1e-12))


def average_cost_abel(value_fn, alphas=None) -> AverageCostEstimate:
    """Vanishing-discount average cost: alpha * V_alpha along a decreasing sequence."""
    if alphas is None:
        alphas = 0.1 * 0.5 ** np.arange(11)
    alphas = np.asarray(alphas, dtype=float)
    vals = np.array([a * value_fn(a) for a in alphas])
    return AverageCostEstimate(alphas, vals, float(vals[-1]), _tail_monotone(vals))


def average_cost_cesaro(finite_horizon_fn, horizons=None) -> AverageCostEstimate:
    """Time-average cost: V_0^T / T along an increasing horizon sequence."""
    if horizons is None:
        horizons = 2.0 ** np.arange(9)
    horizons = np.asarray(horizons, dtype=float)
    vals = np.array([finite_horizon_fn(T) / T for T in horizons])
    return AverageCostEstimate(horizons, vals, float(vals[-1]), _tail_monotone(vals))


# ---------------------------------------------------------------------------
# Constrained comparison

@dataclass(frozen=True)
class CriterionSpec:
    bundle: CostBundle
    alpha: float
    horizon: float | None = None      # None = infinite
    bound: float | None = None        # None for the objective


@dataclass
class ConstraintReport:
    objective_pi: float
    objective_phi: float
    constraints_pi: list
    constraints_phi: list
    pi_feasible: bool
    phi_feasible: bool
    dominance_holds: bool


def _criterion_value(model, policy, gamma, spec: CriterionSpec, grid_step, eps):
    if spec.horizon is None:
        return infinite_horizon_cost(model, policy, gamma, spec.bundle,
                                     spec.alpha, eps=eps, grid_step=grid_step).value
    n_cells = max(1, int(round(spec.horizon / grid_step)))
    grid = TimeGrid(grid_step, n_cells)
    curve = _exact_curve(model, policy, gamma, grid, "auto")
    c_eff = spec.bundle.cost_rate + transform_jump_costs(model, spec.bundle.jump_costs)
    return finite_horizon_cost(curve, c_eff, spec.bundle.instant_costs,
                               spec.alpha, grid.horizon).value


def _check_assumption(model, spec: CriterionSpec, phi_curve_defect: float):
    signed = (np.any(spec.bundle.cost_rate < 0) or np.any(spec.bundle.jump_costs < 0)
              or any(np.any(g < 0) for _, g in spec.bundle.instant_costs))
    if signed and phi_curve_defect > 1e-9:
        raise CostError(
            "ASSUMPTION_VIOLATION",
            "signed costs with a mass-defective Markovized law: value not defined")


def evaluate_constraints(model: ModelSpec, gamma, policy_pi, policy_phi,
                         objective: CriterionSpec, constraints=(),
                         grid_step: float = 0.005, eps: float = 1e-8,
                         tol: float = 1e-6) -> ConstraintReport:
    """Evaluate objective and constraints for a policy and its Markovization.

    When the original policy is feasible, the Markovized one must be feasible
    with no worse objective (within tol); infeasible originals yield no claim.
    """
    probe = TimeGrid(grid_step, max(1, int(round(1.0 / grid_step))))
    phi_defect = float(np.abs(_exact_curve(model, policy_phi, gamma, probe,
                                           "auto").defect()).max())
    for spec in (objective, *constraints):
        _check_assumption(model, spec, phi_defect)

    obj_pi = _criterion_value(model, policy_pi, gamma, objective, grid_step, eps)
    obj_phi = _criterion_value(model, policy_phi, gamma, objective, grid_step, eps)
    cons_pi, cons_phi = [], []
    for spec in constraints:
        cons_pi.append(_criterion_value(model, policy_pi, gamma, spec, grid_step, eps))
        cons_phi.append(_criterion_value(model, policy_phi, gamma, spec, grid_step, eps))
    pi_feasible = all(v <= s.bound + tol for v, s in zip(cons_pi, constraints))
    phi_feasible = all(v <= s.bound + tol for v, s in zip(cons_phi, constraints))
    dominance = (not pi_feasible) or (phi_feasible and obj_phi <= obj_pi + tol)
    return ConstraintReport(obj_pi, obj_phi, cons_pi, cons_phi,
                            pi_feasible, phi_feasible, dominance)
