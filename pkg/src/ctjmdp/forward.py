"""Marginal distributions of the jump process under Markov policies.

Two independent routes to the same object:

* :func:`series_minimal_solution` builds the minimal transition function as a
  sum over jump counts: term 0 is the no-jump survival mass, term n feeds the
  (n-1)-jump mass through one more transition.  Partial sums increase to the
  minimal solution, so truncating the series always underestimates mass.
* :func:`forward_ode` integrates the forward equation
  dP(t,z)/dt = sum_y P(t,y) q(y,t,{z}) - P(t,z) q(z,t) with classical
  fixed-step RK4.

Rate kernels are supplied by Q providers (policy-induced or sampled on a
lattice).  A provider may be *restricted* to a subset of states: flow into
dropped states is killed, which is how truncations of infinite chains lose
mass and expose explosion as a total-mass defect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .errors import GridMismatchError, SolverError
from .grid import TimeGrid
from .model import ModelSpec
from .policies import FiniteMemoryPolicy, MarkovPolicyGrid, augment, lift_distribution

__all__ = [
    "PolicyQ",
    "LatticeQ",
    "MarginalCurve",
    "forward_ode",
    "series_minimal_solution",
    "mass_defect",
    "markov_marginals",
    "finite_memory_marginals",
]

STEP_LIMIT = 0.1      # STEP_TOO_COARSE when integration step * max exit rate exceeds this
CLAMP_FLAG = 1e-12    # negative undershoots larger than this are reported loudly


# ---------------------------------------------------------------------------
# Rate-kernel providers

class PolicyQ:
    """Rate kernel induced by a Markov grid policy: q(z, t, .) mixes the model
    rows with the policy weights of the cell containing t.
    """

    def __init__(self, model: ModelSpec, policy: MarkovPolicyGrid,
                 keep: Sequence[int] | None = None):
        self.model = model
        self.policy = policy
        S = model.n_states
        keep = list(range(S)) if keep is None else list(keep)
        self.keep = keep
        self.labels = tuple(model.states[i] for i in keep)
        # Per policy cell: flow matrix (off-diagonal rates between kept states)
        # and full exit rates of kept states.  Killing = exit stays full while
        # inflow columns of dropped states disappear.
        K = policy.grid.n_cells
        flow = np.einsum("kza,zay->kzy", policy.table, model.rates)
        exits = np.einsum("kza,za->kz", policy.table, model.exit_rates)
        for k in range(K):
            np.fill_diagonal(flow[k], 0.0)
        self._flow = np.ascontiguousarray(flow[:, keep][:, :, keep])
        self._exit = np.ascontiguousarray(exits[:, keep])
        self.grid = policy.grid

    @property
    def n_states(self) -> int:
        return len(self.keep)

    @property
    def max_exit(self) -> float:
        return float(self._exit.max()) if self._exit.size else 0.0

    @property
    def is_homogeneous(self) -> bool:
        return self.grid.n_cells == 1 or (
            np.all(self._flow == self._flow[:1]) and np.all(self._exit == self._exit[:1])
        )

    def tables_at(self, t: float, left: bool = False):
        k = self.grid.cell_of(t)
        if left and k > 0:
            # Left limit: a query exactly on a cell boundary reads the closing cell.
            x = t / self.grid.step
            if abs(x - round(x)) <= 1e-9 * max(1.0, x) and round(x) == k:
                k -= 1
        return self._flow[k], self._exit[k]

    def restricted(self, keep: Sequence[int]) -> "PolicyQ":
        return PolicyQ(self.model, self.policy, keep=keep)


class LatticeQ:
    """Rate kernel sampled at lattice times j*step; queries must hit the lattice.

    Used by the exact Markovization pipeline, where the conditional policy is
    known at solver stage times but is not piecewise constant.  When the
    sampled kernel jumps at some lattice points (conditional of a policy with
    decision breakpoints), left-limit tables supply the closing-side values.
    """

    def __init__(self, step: float, flow: np.ndarray, exits: np.ndarray,
                 labels: tuple | None = None,
                 flow_left: np.ndarray | None = None,
                 exits_left: np.ndarray | None = None):
        if flow.shape[0] != exits.shape[0]:
            raise GridMismatchError("lattice flow/exit length mismatch")
        self.step = step
        self._flow = flow    # (L+1, S, S) off-diagonal flow at lattice times
        self._exit = exits   # (L+1, S)
        self._flow_left = flow if flow_left is None else flow_left
        self._exit_left = exits if exits_left is None else exits_left
        self.labels = labels if labels is not None else tuple(range(exits.shape[1]))

    @property
    def n_states(self) -> int:
        return self._exit.shape[1]

    @property
    def max_exit(self) -> float:
        return float(max(self._exit.max(), self._exit_left.max()))

    is_homogeneous = False

    def tables_at(self, t: float, left: bool = False):
        x = t / self.step
        j = int(round(x))
        if abs(x - j) > 1e-6:
            raise GridMismatchError(
                f"time {t} off the Q lattice (step {self.step}); "
                "solver grid must subdivide the lattice")
        j = min(j, self._exit.shape[0] - 1)
        if left:
            return self._flow_left[j], self._exit_left[j]
        return self._flow[j], self._exit[j]


# ---------------------------------------------------------------------------
# Curves

@dataclass
class MarginalCurve:
    """State (and optionally state-action) occupancy on a time grid.

    probs[k, z] = P(t_k, z).  Total mass at most one; the shortfall is the
    mass lost to killed/truncated transitions (explosion proxy).
    """

    grid: TimeGrid
    states: tuple
    probs: np.ndarray                      # (K+1, S)
    action_probs: np.ndarray | None = None  # (K+1, S, A)
    actions: tuple | None = None
    max_clamp: float = 0.0
    series_terms: list = field(default_factory=list)
    converged: bool = True

    def mass(self, k: int | None = None) -> np.ndarray | float:
        if k is None:
            return self.probs.sum(axis=1)
        return float(self.probs[k].sum())

    def defect(self, k: int | None = None):
        return 1.0 - self.mass(k) if k is not None else 1.0 - self.mass()

    def at_time(self, t: float) -> np.ndarray:
        return self.probs[self.grid.index_of(t)]

    def interp(self, t: float) -> np.ndarray:
        """Linear interpolation between grid points (state-action if present)."""
        tab = self.action_probs if self.action_probs is not None else self.probs
        x = min(max(t, 0.0), self.grid.horizon) / self.grid.step
        k = min(int(x), self.grid.n_cells - 1)
        w = x - k
        return (1.0 - w) * tab[k] + w * tab[k + 1]


def mass_defect(curve: MarginalCurve, t: float) -> float:
    """1 - total retained mass at grid time t; zero iff nonexplosive up to t."""
    return float(curve.defect(curve.grid.index_of(t)))


# ---------------------------------------------------------------------------
# RK4 integration

def _rk4_derivative(flow, exits, p):
    # dP/dt with P as a column over states: inflow through transposed flow,
    # outflow through the full exit rate.
    return flow.T @ p - exits * p


def _rk4_step(q, t, h, p):
    f0, e0 = q.tables_at(t)
    fm, em = q.tables_at(t + 0.5 * h)
    f1, e1 = q.tables_at(t + h, left=True)
    k1 = _rk4_derivative(f0, e0, p)
    k2 = _rk4_derivative(fm, em, p + 0.5 * h * k1)
    k3 = _rk4_derivative(fm, em, p + 0.5 * h * k2)
    k4 = _rk4_derivative(f1, e1, p + h * k3)
    return p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_propagator(flow, exits, h):
    # One RK4 step of the constant-coefficient system as a matrix: the degree-4
    # Taylor polynomial of expm(G h) with G = flow^T - diag(exit).
    S = exits.shape[0]
    G = flow.T - np.diag(exits)
    M = np.eye(S)
    term = np.eye(S)
    for n in range(1, 5):
        term = term @ (G * (h / n))
        M = M + term
    return M


def _matrix_power_times(M: np.ndarray, n: int) -> np.ndarray:
    out = np.eye(M.shape[0])
    base = M
    while n:
        if n & 1:
            out = out @ base
        base = base @ base
        n >>= 1
    return out


def forward_ode(q, gamma: np.ndarray, grid: TimeGrid,
                n_substeps: int | str = 1) -> MarginalCurve:
    """Integrate the forward equation from P(0, .) = gamma with fixed-step RK4.

    ``n_substeps`` subdivides each output step; pass "auto" to pick the
    smallest count keeping (step * max exit rate) under a 0.01 accuracy
    target.  With the default single step the STEP_TOO_COARSE guard rejects
    grids where step * max exit rate > 0.1.

    Negative entries produced by roundoff are clamped to zero; the largest
    clamp is recorded on the curve and signals a real problem past 1e-12.
    """
    S = q.n_states
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (S,):
        raise GridMismatchError(f"gamma has shape {gamma.shape}, expected ({S},)")
    qmax = q.max_exit
    if n_substeps == "auto":
        n_substeps = max(1, int(np.ceil(grid.step * qmax / 0.01)))
    n_substeps = int(n_substeps)
    h_int = grid.step / n_substeps
    if h_int * qmax > STEP_LIMIT:
        raise SolverError(
            "STEP_TOO_COARSE",
            f"integration step {h_int} * max exit rate {qmax:.3g} exceeds {STEP_LIMIT}")

    probs = np.empty((grid.n_points, S))
    probs[0] = gamma
    max_clamp = 0.0
    p = gamma.copy()
    if getattr(q, "is_homogeneous", False):
        flow, exits = q.tables_at(0.0)
        M = _matrix_power_times(_rk4_propagator(flow, exits, h_int), n_substeps)
        for k in range(grid.n_cells):
            p = M @ p
            neg = p < 0.0
            if np.any(neg):
                max_clamp = max(max_clamp, float(-p[neg].min()))
                p = np.where(neg, 0.0, p)
            probs[k + 1] = p
    else:
        for k in range(grid.n_cells):
            t = k * grid.step
            for i in range(n_substeps):
                p = _rk4_step(q, t + i * h_int, h_int, p)
            neg = p < 0.0
            if np.any(neg):
                max_clamp = max(max_clamp, float(-p[neg].min()))
                p = np.where(neg, 0.0, p)
            probs[k + 1] = p
    return MarginalCurve(grid, q.labels, probs, max_clamp=max_clamp)


# ---------------------------------------------------------------------------
# Minimal-solution series

def _cumulative_exit(q, grid: TimeGrid) -> np.ndarray:
    """Integral of the exit rate from 0 to each grid point, exact for cell-constant rates."""
    out = np.zeros((grid.n_points, q.n_states))
    for k in range(grid.n_cells):
        _, e = q.tables_at(k * grid.step)
        out[k + 1] = out[k] + e * grid.step
    return out


def series_minimal_solution(q, x: int, grid: TimeGrid, n_max: int = 10_000,
                            tol: float = 1e-10) -> MarginalCurve:
    """Sum the jump-count expansion of the minimal solution started at state x.

    Term n is the sub-probability of being somewhere having made exactly n
    jumps; the time integral in the recursion uses the composite trapezoid on
    the grid, while survival exponentials are evaluated exactly.  Partial sums
    are entrywise nondecreasing and converge to the minimal solution from
    below; the expansion stops when a term's sup-norm drops under ``tol`` or
    after ``n_max`` terms (then the curve carries converged=False).
    """
    S = q.n_states
    K = grid.n_points
    h = grid.step
    term_sups: list = []

    if getattr(q, "is_homogeneous", False):
        flow, exits = q.tables_at(0.0)
        # B[j, y, z]: n-jump mass from y to z over elapsed time j*h.
        decay = np.exp(-np.outer(grid.points, exits))            # (K, S)
        B = decay[:, :, None] * np.eye(S)[None, :, :]
        total = B[:, x, :].copy()
        converged = False
        for _ in range(n_max):
            C = np.einsum("zy,jyw->jzw", flow, B)                # inflow of previous term
            conv = fftconvolve(decay[:, :, None], C, axes=0)[:K]
            B = h * (conv - 0.5 * decay[:, :, None] * C[0][None]
                     - 0.5 * decay[0][None, :, None] * C)
            np.maximum(B, 0.0, out=B)
            total += B[:, x, :]
            sup = float(np.abs(B[:, x, :]).max())
            term_sups.append(sup)
            if sup < tol:
                converged = True
                break
    else:
        cum = _cumulative_exit(q, grid)                           # (K, S)
        # Two-time table T[i, j, y, z]: n-jump mass from (t_i, y) to (t_j, z).
        surv = np.exp(cum[:, None, :] - cum[None, :, :])          # e^{-(L_j - L_i)} at [i, j, y]
        T = surv[:, :, :, None] * np.eye(S)[None, None, :, :]
        total = T[0, :, x, :].copy()
        # Flow of the cell covering grid interval [w*h, (w+1)*h); the kernel may
        # jump at cell boundaries, so each interval gets its own one-sided values.
        flows = np.stack([q.tables_at(w * h)[0] for w in range(grid.n_cells)])
        edecay = np.exp(-cum)                                     # (K, S)
        converged = False
        for _ in range(n_max):
            # Per grid interval w, trapezoid endpoint values of the integrand
            # e^{-L(w, y)} * sum_u flow[y, u] T(w, j, u, z), evaluated with the
            # interval's own flow on both ends.
            lo = np.einsum("wyu,wjuz->wjyz", flows, T[:-1]) * edecay[:-1, None, :, None]
            hi = np.einsum("wyu,wjuz->wjyz", flows, T[1:]) * edecay[1:, None, :, None]
            A = lo + hi                                           # (K-1, K, S, S)
            Tn = np.zeros_like(T)
            for j in range(1, K):
                c = np.concatenate([np.zeros((1, S, S)),
                                    np.cumsum(A[:j, j], axis=0)])  # (j+1, S, S)
                # integral from t_i to t_j sums intervals w = i .. j-1
                trap = 0.5 * h * (c[j][None] - c[: j + 1])
                # undo the i-dependent survival factor e^{-L(t_i, y)}
                Tn[: j + 1, j] = trap / edecay[: j + 1, :, None]
            np.maximum(Tn, 0.0, out=Tn)
            T = Tn
            total += T[0, :, x, :]
            sup = float(np.abs(T[0, :, x, :]).max())
            term_sups.append(sup)
            if sup < tol:
                converged = True
                break

    return MarginalCurve(grid, q.labels, total, series_terms=term_sups,
                         converged=converged)


# ---------------------------------------------------------------------------
# Policy-level entry points

def _attach_actions(model: ModelSpec, curve: MarginalCurve,
                    weight_at) -> MarginalCurve:
    K, S, A = curve.grid.n_points, model.n_states, model.n_actions
    sa = np.zeros((K, S, A))
    for k in range(K):
        t = min(k * curve.grid.step, curve.grid.horizon)
        sa[k] = curve.probs[k][:, None] * weight_at(t)
    curve.action_probs = sa
    curve.actions = model.actions
    return curve


def markov_marginals(model: ModelSpec, policy: MarkovPolicyGrid, gamma: np.ndarray,
                     grid: TimeGrid, n_substeps: int | str = 1) -> MarginalCurve:
    """State-action occupancy under a Markov grid policy.

    P(t, z, a) = P(t, z) * policy weight; the state curve comes from the
    forward equation.
    """
    _check_alignment(grid, policy.grid)
    q = PolicyQ(model, policy)
    curve = forward_ode(q, gamma, grid, n_substeps=n_substeps)

    def weights(t):
        return policy.table[policy.grid.cell_of(t)]

    return _attach_actions(model, curve, weights)


def finite_memory_marginals(model: ModelSpec, fm: FiniteMemoryPolicy, gamma: np.ndarray,
                            grid: TimeGrid, n_substeps: int | str = 1) -> MarginalCurve:
    """Exact state-action occupancy for a finite-memory policy.

    Solves the forward equation on the product (state, memory) chain and
    marginalizes the memory coordinate.
    """
    _check_alignment(grid, fm.grid)
    aug_model, aug_policy, pairs = augment(model, fm)
    gamma_aug = lift_distribution(model, fm, np.asarray(gamma, dtype=float), pairs)
    aug_curve = forward_ode(PolicyQ(aug_model, aug_policy), gamma_aug, grid,
                            n_substeps=n_substeps)

    S, M = model.n_states, fm.n_memory
    # pairs are laid out state-major, so the product occupancy reshapes cleanly
    occ = aug_curve.probs.reshape(grid.n_points, S, M)
    cells = np.array([fm.grid.cell_of(min(k * grid.step, grid.horizon))
                      for k in range(grid.n_points)])
    sa = np.einsum("kzm,kzma->kza", occ, fm.decision[cells])
    return MarginalCurve(grid, model.states, occ.sum(axis=2), action_probs=sa,
                         actions=model.actions, max_clamp=aug_curve.max_clamp)


def _check_alignment(solve_grid: TimeGrid, policy_grid: TimeGrid):
    ratio = policy_grid.step / solve_grid.step
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise GridMismatchError(
            f"solver step {solve_grid.step} must divide the policy step {policy_grid.step}")
