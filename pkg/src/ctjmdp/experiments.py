"""Canned, reproducible experiment drivers and the models they run on.

Each driver is a pure function of its configuration (seeds included); reports
are plain dataclasses that serialize to JSON deterministically.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .costs import (
    CostBundle,
    finite_horizon_cost,
    mc_discounted_cost,
    transform_jump_costs,
)
from .errors import CostError
from .forward import PolicyQ, forward_ode, finite_memory_marginals
from .grid import TimeGrid
from .markovize import MarkovizationResult, compare_marginals, markovized_marginals
from .model import ModelSpec, extend_with_initial_distribution, validate_model
from .policies import FiniteMemoryPolicy, MarkovPolicyGrid
from .simulation.engine import SimConfig, run_batch

__all__ = [
    "figure_two_model",
    "figure_two_jump_charges",
    "parity_policy",
    "flip_chain_model",
    "pure_birth_model",
    "random_battery_model",
    "random_battery_bundle",
    "random_fm_policy",
    "run_example_two_state",
    "run_sufficiency_battery",
    "run_explosion_demo",
    "run_extension_check",
]


# ---------------------------------------------------------------------------
# Canned models

def figure_two_model() -> ModelSpec:
    """Two states, two actions; the slow action halves the exit rate at state 2."""
    return validate_model({
        "states": ["1", "2"],
        "actions": ["b", "c"],
        "feasible": {"1": ["b"], "2": ["b", "c"]},
        "rates": [
            {"state": "1", "action": "b", "row": {"1": -2.0, "2": 2.0}},
            {"state": "2", "action": "b", "row": {"2": -2.0, "1": 2.0}},
            {"state": "2", "action": "c", "row": {"2": -1.0, "1": 1.0}},
        ],
    })


def figure_two_jump_charges() -> np.ndarray:
    """Action-dependent jump charges C[z, a, y]: equal products C * rate.

    Charged 1 per jump under the fast action and 2 under the slow one, so the
    expected charge rate is 2 either way for pure actions; only relaxed
    mixtures tell them apart.
    """
    C = np.zeros((2, 2, 2))
    C[1, 0, 0] = 1.0   # leaving state "2" under b
    C[1, 1, 0] = 2.0   # leaving state "2" under c
    return C


def parity_policy(model: ModelSpec, watched_state: str = "2") -> FiniteMemoryPolicy:
    """Alternates b and c at the watched state with the parity of entries into it."""
    S, A = model.n_states, model.n_actions
    w = model.state_index[watched_state]
    b, c = model.action_index["b"], model.action_index["c"]
    update = np.zeros((2, S, S), dtype=np.int64)
    update[1, :, :] = 1
    update[0, :, w] = 1
    update[1, :, w] = 0
    dec = np.zeros((1, S, 2, A))
    dec[0, :, :, b] = 1.0
    dec[0, w, 0, :] = 0.0
    dec[0, w, 0, b] = 1.0
    dec[0, w, 1, :] = 0.0
    dec[0, w, 1, c] = 1.0
    return FiniteMemoryPolicy.build(model, ["even", "odd"], 0, update,
                                    TimeGrid(1.0, 1), dec)


def flip_chain_model(rate: float = 1.0) -> ModelSpec:
    """Two states flipping at the given rate; unit cost rate at the first."""
    return validate_model({
        "states": ["on", "off"],
        "actions": ["a"],
        "feasible": {"on": ["a"], "off": ["a"]},
        "rates": [
            {"state": "on", "action": "a", "row": {"on": -rate, "off": rate}},
            {"state": "off", "action": "a", "row": {"off": -rate, "on": rate}},
        ],
        "cost_rate": {"on|a": 1.0},
    })


def pure_birth_model(depth: int) -> ModelSpec:
    """Birth chain with rate (n+1)^2 at level n, truncated at ``depth``.

    The top state is absorbing; solving the forward equation restricted to the
    first ``depth`` states kills the flow into it, which is the minimal-
    solution truncation whose retained mass grows with depth.
    """
    states = [str(n) for n in range(depth + 1)]
    rates = []
    for n in range(depth):
        lam = float((n + 1) ** 2)
        rates.append({"state": str(n), "action": "go",
                      "row": {str(n): -lam, str(n + 1): lam}})
    return validate_model({
        "states": states,
        "actions": ["go"],
        "feasible": {s: ["go"] for s in states},
        "rates": rates,
    })


def random_battery_model(seed: int, n_states: int = 4, n_actions: int = 3) -> ModelSpec:
    """Seeded random bounded-rate model: exit rates uniform on [0.2, 3]."""
    rng = np.random.default_rng(seed)
    states = [f"s{i}" for i in range(n_states)]
    actions = [f"a{i}" for i in range(n_actions)]
    feasible = {}
    rates = []
    for x, s in enumerate(states):
        k = int(rng.integers(1, n_actions + 1))
        acts = sorted(rng.choice(n_actions, size=k, replace=False).tolist())
        feasible[s] = [actions[a] for a in acts]
        for a in acts:
            exit_rate = float(rng.uniform(0.2, 3.0))
            weights = rng.dirichlet(np.ones(n_states - 1))
            row = {s: -exit_rate}
            others = [y for y in range(n_states) if y != x]
            for y, wgt in zip(others, weights):
                row[states[y]] = float(exit_rate * wgt)
            rates.append({"state": s, "action": actions[a], "row": row})
    return validate_model({"states": states, "actions": actions,
                           "feasible": feasible, "rates": rates})


def random_battery_bundle(model: ModelSpec, seed: int,
                          instant_time: float = 0.7725) -> CostBundle:
    """Seeded nonnegative cost structure: rate, one instant charge, jump charges."""
    rng = np.random.default_rng(seed)
    S, A = model.n_states, model.n_actions
    cost_rate = rng.uniform(0.0, 1.0, size=(S, A)) * model.feasible_mask
    g = rng.uniform(0.0, 1.0, size=(S, A)) * model.feasible_mask
    C = rng.uniform(0.0, 1.0, size=(S, S))
    np.fill_diagonal(C, 0.0)
    return CostBundle(cost_rate, ((instant_time, g),), C)


def random_fm_policy(model: ModelSpec, seed: int, n_memory: int = 2,
                     cell_width: float = 1.0, n_cells: int = 4) -> FiniteMemoryPolicy:
    """Seeded random finite-memory policy, piecewise constant on a coarse grid."""
    rng = np.random.default_rng(seed)
    S, A = model.n_states, model.n_actions
    update = rng.integers(0, n_memory, size=(n_memory, S, S))
    decision = np.zeros((n_cells, S, n_memory, A))
    for k in range(n_cells):
        for z in range(S):
            acts = list(model.feasible[z])
            for m in range(n_memory):
                decision[k, z, m, acts] = rng.dirichlet(np.ones(len(acts)))
    return FiniteMemoryPolicy.build(model, [f"m{i}" for i in range(n_memory)], 0,
                                    update, TimeGrid(cell_width, n_cells), decision)


# ---------------------------------------------------------------------------
# Two-state counterexample: action-dependent jump charges break sufficiency

def _truncation_horizon(alpha: float, sup_rate: float, eps: float,
                        grid_step: float) -> TimeGrid:
    T = math.log(sup_rate / (alpha * eps)) / alpha
    return TimeGrid(grid_step, int(math.ceil(T / grid_step)))


def _relaxed_charge_rate(model: ModelSpec, charges: np.ndarray,
                         weights: np.ndarray) -> np.ndarray:
    """Expected charge accrual rate per state for relaxed weights (K.., S, A).

    The action at a jump epoch is distributed by the relaxed action in force,
    independently of the jump itself, so the rate factorizes into
    (mixed jump rate into y) * (mixed charge to y).
    """
    pos_rates = model.rates * (model.rates > 0)
    flow = np.einsum("...za,zay->...zy", weights, pos_rates)
    mean_charge = np.einsum("...za,zay->...zy", weights, charges)
    return np.einsum("...zy,...zy->...z", flow, mean_charge)


def _jump_charge_table(weights: np.ndarray, base_state: np.ndarray,
                       charges: np.ndarray) -> np.ndarray:
    """(cell, kernel, kernel) expected charge per jump from relaxed weights."""
    C = charges[np.ix_(base_state, range(charges.shape[1]), base_state)]
    return np.einsum("kja,jay->kjy", weights, C)


@dataclass
class TwoStateAlphaReport:
    alpha: float
    value_original_exact: float
    value_markovized_exact: float
    gap: float
    gap_integral: float
    marginal_equality_sup: float
    value_original_mc: float
    se_original_mc: float
    value_markovized_mc: float
    se_markovized_mc: float
    action_independent_gap: float
    truncation_horizon: float


@dataclass
class TwoStateReport:
    grid_step: float
    n_mc: int
    seed: int
    per_alpha: list
    all_gaps_positive: bool
    max_gap_identity_error: float
    max_marginal_equality_sup: float

    def to_dict(self):
        return asdict(self)


def run_example_two_state(alphas=(0.25, 0.5, 1.0, 2.0), grid_step: float = 0.005,
                          n_mc: int = 100_000, seed: int = 20240801) -> TwoStateReport:
    """Markovization can cost strictly more under action-dependent jump charges.

    The alternating policy always pays charge*rate = 2 while at state 2; its
    Markovization mixes the actions, and relaxed mixing pays
    (1 + phi_b)(1 + phi_c) = 2 + phi_b*phi_c > 2.  With action-independent
    charges the transformation to an equivalent cost rate is linear in the
    mixture and the gap vanishes.
    """
    model = figure_two_model()
    charges = figure_two_jump_charges()
    pi = parity_policy(model)
    gamma = np.array([0.0, 1.0])
    idx2 = model.state_index["2"]
    reports = []

    for alpha in alphas:
        grid = _truncation_horizon(alpha, 4.0, 1e-9, grid_step)
        T = grid.horizon
        mk = markovized_marginals(model, pi, gamma, grid)
        pi_curve, phi_curve = mk.original_curve, mk.markovized_curve
        eq_sup = float(np.abs(phi_curve.probs - pi_curve.probs).max())

        disc = np.exp(-alpha * grid.points)
        # original policy: expected charge rate from its state-action marginals
        per_action_rate = np.einsum("zay,zay->za", model.rates * (model.rates > 0),
                                    charges)
        rate_pi = np.einsum("kza,za->k", pi_curve.action_probs, per_action_rate)
        v_pi = float(np.trapz(disc * rate_pi, dx=grid_step))

        # Markovized policy: relaxed mixture pays rate * mean charge
        phi_w = np.where(phi_curve.probs[:, :, None] > 0,
                         phi_curve.action_probs
                         / np.maximum(phi_curve.probs[:, :, None], 1e-300), 0.0)
        rate_phi_z = _relaxed_charge_rate(model, charges, phi_w)
        rate_phi = np.einsum("kz,kz->k", phi_curve.probs, rate_phi_z)
        v_phi = float(np.trapz(disc * rate_phi, dx=grid_step))

        # the gap in closed form: phi_b * phi_c weighted by the state-2 mass
        phib = phi_w[:, idx2, model.action_index["b"]]
        phic = phi_w[:, idx2, model.action_index["c"]]
        gap_integral = float(np.trapz(disc * phib * phic * pi_curve.probs[:, idx2],
                                      dx=grid_step))

        # Monte Carlo cross-checks, with the jump-charge hook
        cfg = SimConfig(horizon=T, max_jumps=int(40 * T + 2000), n_paths=n_mc,
                        seed=seed, record_paths=True)
        batch_pi = run_batch(model, pi, gamma, cfg)
        w_pi = pi.decision[:, batch_pi.tables.base_state,
                           batch_pi.tables.memory_state, :]
        eta_pi = _jump_charge_table(w_pi, batch_pi.tables.base_state, charges)
        mc_pi = mc_discounted_cost(batch_pi, CostBundle.zero(model), alpha,
                                   jump_charge=eta_pi)

        batch_phi = run_batch(model, mk.policy, gamma, cfg)
        eta_phi = _jump_charge_table(mk.policy.table, batch_phi.tables.base_state,
                                     charges)
        mc_phi = mc_discounted_cost(batch_phi, CostBundle.zero(model), alpha,
                                    jump_charge=eta_phi)

        # action-independent control: same charge on every action
        flat = np.zeros((2, 2))
        flat[idx2, model.state_index["1"]] = 1.0
        c_eq = transform_jump_costs(model, flat)
        v_pi_flat = finite_horizon_cost(pi_curve, c_eq, (), alpha, T).value
        v_phi_flat = finite_horizon_cost(phi_curve, c_eq, (), alpha, T).value

        reports.append(TwoStateAlphaReport(
            alpha=alpha,
            value_original_exact=v_pi,
            value_markovized_exact=v_phi,
            gap=v_phi - v_pi,
            gap_integral=gap_integral,
            marginal_equality_sup=eq_sup,
            value_original_mc=mc_pi.value, se_original_mc=mc_pi.std_error,
            value_markovized_mc=mc_phi.value, se_markovized_mc=mc_phi.std_error,
            action_independent_gap=v_phi_flat - v_pi_flat,
            truncation_horizon=T,
        ))

    return TwoStateReport(
        grid_step=grid_step, n_mc=n_mc, seed=seed,
        per_alpha=reports,
        all_gaps_positive=all(r.gap > 0 for r in reports),
        max_gap_identity_error=max(abs(r.gap - r.gap_integral) for r in reports),
        max_marginal_equality_sup=max(r.marginal_equality_sup for r in reports),
    )


# ---------------------------------------------------------------------------
# Sufficiency battery

@dataclass
class BatteryEntry:
    model_seed: int
    policy_seed: int
    violation_sup: float
    equality_sup: float
    mass_defect_max: float
    cost_gaps: dict            # label -> |V(phi) - V(pi)|


@dataclass
class BatteryReport:
    grid_step: float
    check_horizon: float
    entries: list
    worst_violation: float
    worst_equality: float
    worst_cost_gap: float

    def to_dict(self):
        return asdict(self)


def run_sufficiency_battery(n_models: int = 5, n_policies: int = 3,
                            grid_step: float = 0.005, check_horizon: float = 4.0,
                            base_seed: int = 7100, alphas=(0.0, 0.5, 1.0),
                            horizons=(1.0, 4.0), inf_alpha: float = 1.0,
                            inf_eps: float = 1e-8) -> BatteryReport:
    """Marginal equality and cost equality across seeded models and policies.

    Every (model, finite-memory policy) pair is Markovized exactly; the two
    state-action curves must agree pointwise (bounded rates, nonexplosive),
    and every discounted criterion evaluated on them must coincide.
    """
    entries = []
    for i in range(n_models):
        mseed = base_seed + i
        model = random_battery_model(mseed)
        bundle = random_battery_bundle(model, mseed + 500)
        c_eff = bundle.cost_rate + transform_jump_costs(model, bundle.jump_costs)
        sup_rate = float((np.abs(c_eff) * model.feasible_mask).max())
        T_inf = math.log(max(sup_rate, 1e-12) / (inf_alpha * inf_eps)) / inf_alpha
        T_all = max(check_horizon, *horizons, T_inf)
        grid = TimeGrid(grid_step, int(math.ceil(T_all / grid_step)))
        gamma = np.zeros(model.n_states)
        gamma[0] = 1.0
        for j in range(n_policies):
            pseed = base_seed + 100 * (i + 1) + j
            fm = random_fm_policy(model, pseed)
            mk = markovized_marginals(model, fm, gamma, grid)
            # marginal comparison restricted to the check horizon
            kc = grid.index_of(check_horizon)
            sub = TimeGrid(grid_step, kc)
            pi_sub = _restrict_curve(mk.original_curve, kc)
            phi_sub = _restrict_curve(mk.markovized_curve, kc)
            rep = compare_marginals(phi_sub, pi_sub)

            gaps = {}
            for alpha in alphas:
                for T in horizons:
                    v_pi = finite_horizon_cost(mk.original_curve, c_eff,
                                               bundle.instant_costs, alpha, T).value
                    v_phi = finite_horizon_cost(mk.markovized_curve, c_eff,
                                                bundle.instant_costs, alpha, T).value
                    gaps[f"alpha={alpha},T={T}"] = abs(v_phi - v_pi)
            v_pi = finite_horizon_cost(mk.original_curve, c_eff,
                                       bundle.instant_costs, inf_alpha,
                                       grid.horizon).value
            v_phi = finite_horizon_cost(mk.markovized_curve, c_eff,
                                        bundle.instant_costs, inf_alpha,
                                        grid.horizon).value
            gaps[f"alpha={inf_alpha},T=inf({grid.horizon:.3g})"] = abs(v_phi - v_pi)
            entries.append(BatteryEntry(mseed, pseed, rep.violation_sup,
                                        rep.equality_sup, rep.mass_defect_max,
                                        gaps))
    return BatteryReport(
        grid_step=grid_step, check_horizon=check_horizon, entries=entries,
        worst_violation=max(e.violation_sup for e in entries),
        worst_equality=max(e.equality_sup for e in entries),
        worst_cost_gap=max(max(e.cost_gaps.values()) for e in entries),
    )


def _restrict_curve(curve, k_last: int):
    from .forward import MarginalCurve

    sub = MarginalCurve(TimeGrid(curve.grid.step, k_last), curve.states,
                        curve.probs[: k_last + 1])
    if curve.action_probs is not None:
        sub.action_probs = curve.action_probs[: k_last + 1]
        sub.actions = curve.actions
    return sub


# ---------------------------------------------------------------------------
# Explosion demonstration

@dataclass
class ExplosionReport:
    depths: list
    eval_time: float
    defects: list                 # mass defect at eval_time per depth
    monotone_nonincreasing: bool
    mc_depth: int
    mc_mean_explosion_time: float
    mc_se: float
    oracle_mean: float            # pi^2 / 6
    mc_within_3se: bool
    mc_defect_estimate: float     # empirical P(t_depth <= eval_time)

    def to_dict(self):
        return asdict(self)


def run_explosion_demo(depths=(10, 50, 200), eval_time: float = 2.0,
                       grid_step: float = 0.005, n_mc: int = 10_000,
                       seed: int = 424242) -> ExplosionReport:
    """Truncated birth chain: retained mass grows with depth, defect shrinks.

    The killed solve at depth d keeps exactly P(time of d-th jump > t), a
    certified lower bound of the untruncated mass; the sampled total jump time
    at the deepest truncation estimates the explosion time, whose mean is
    pi^2/6 for these rates.
    """
    defects = []
    for depth in depths:
        model = pure_birth_model(depth)
        pol = MarkovPolicyGrid.uniform(model)
        q = PolicyQ(model, pol, keep=list(range(depth)))
        grid = TimeGrid(grid_step, int(round(eval_time / grid_step)))
        curve = forward_ode(q, _delta(depth, 0), grid, n_substeps="auto")
        defects.append(float(curve.defect(grid.n_cells)))
    mono = all(defects[i + 1] <= defects[i] + 1e-9 for i in range(len(defects) - 1))

    depth = max(depths)
    model = pure_birth_model(depth)
    pol = MarkovPolicyGrid.uniform(model)
    cfg = SimConfig(horizon=60.0, max_jumps=depth, n_paths=n_mc, seed=seed)
    batch = run_batch(model, pol, _delta(depth + 1, 0), cfg)
    last = np.array([batch.times[batch.path_slice(i)][-1] for i in range(n_mc)])
    mean, se = float(last.mean()), float(last.std(ddof=1) / math.sqrt(n_mc))
    oracle = math.pi ** 2 / 6.0
    return ExplosionReport(
        depths=list(depths), eval_time=eval_time, defects=defects,
        monotone_nonincreasing=mono,
        mc_depth=depth, mc_mean_explosion_time=mean, mc_se=se,
        oracle_mean=oracle, mc_within_3se=abs(mean - oracle) <= 3 * se,
        mc_defect_estimate=float((last <= eval_time).mean()),
    )


def _delta(n: int, i: int) -> np.ndarray:
    g = np.zeros(n)
    g[i] = 1.0
    return g


# ---------------------------------------------------------------------------
# Extended-model identity

@dataclass
class ExtensionReport:
    entry_wait: float             # u
    factor: float                 # 1 - e^{-u}
    residual_sup: float
    total_mass_at_entry_horizon: float

    def to_dict(self):
        return asdict(self)


def run_extension_check(model: ModelSpec, gamma, fm: FiniteMemoryPolicy,
                        u: float = math.log(2.0), grid_step: float = 0.005,
                        horizon: float = 2.0) -> ExtensionReport:
    """Starting from an entry state that feeds the initial law reproduces the
    base process scaled by the probability of having entered.

    Phase one runs the extended model under the enter/freeze policy for time
    u; phase two hands the resulting law to the original policy.  The
    state-action marginals at time t+u must equal (1-e^{-u}) times the base
    marginals at t, uniformly on the grid.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    ext_model, entry = extend_with_initial_distribution(model, gamma)
    e_idx = ext_model.state_index[entry]
    enter, freeze = "__enter__", "__freeze__"

    # phase one: hold everything except the entry jump
    phase1_weights = {s: {freeze: 1.0} for s in model.states}
    phase1_weights[entry] = {enter: 1.0}
    n1 = max(1, int(math.ceil(u / grid_step)))
    grid1 = TimeGrid(u / n1, n1)
    pol1 = MarkovPolicyGrid.homogeneous(ext_model, phase1_weights, grid1)
    curve1 = forward_ode(PolicyQ(ext_model, pol1), _delta_at(ext_model, e_idx),
                         grid1, n_substeps="auto")
    law_at_u = curve1.probs[-1]

    # phase two: original policy lifted to the extended model, clock restarted
    fm_ext = _lift_fm_policy(model, ext_model, fm)
    grid = TimeGrid(grid_step, int(round(horizon / grid_step)))
    ext_curve = finite_memory_marginals(ext_model, fm_ext, law_at_u, grid,
                                        n_substeps="auto")
    base_curve = finite_memory_marginals(model, fm, gamma, grid, n_substeps="auto")

    factor = 1.0 - math.exp(-u)
    S, A = model.n_states, model.n_actions
    diff = (ext_curve.action_probs[:, :S, :A]
            - factor * base_curve.action_probs)
    return ExtensionReport(
        entry_wait=u, factor=factor,
        residual_sup=float(np.abs(diff).max()),
        total_mass_at_entry_horizon=float(law_at_u[:S].sum()),
    )


def _delta_at(model: ModelSpec, idx: int) -> np.ndarray:
    return _delta(model.n_states, idx)


def _lift_fm_policy(model: ModelSpec, ext_model: ModelSpec,
                    fm: FiniteMemoryPolicy) -> FiniteMemoryPolicy:
    """The original finite-memory policy on the extended model; the entry
    state freezes and never updates the memory."""
    M = fm.n_memory
    S_ext, A_ext = ext_model.n_states, ext_model.n_actions
    S = model.n_states
    update = np.zeros((M, S_ext, S_ext), dtype=np.int64)
    for m in range(M):
        update[m, :, :] = m
        update[m, :S, :S] = fm.update[m]
    decision = np.zeros((fm.grid.n_cells, S_ext, M, A_ext))
    decision[:, :S, :, : fm.decision.shape[3]] = fm.decision
    freeze_idx = ext_model.action_index["__freeze__"]
    decision[:, S:, :, freeze_idx] = 1.0
    return FiniteMemoryPolicy.build(ext_model, fm.memory_states, fm.initial_memory,
                                    update, fm.grid, decision)
