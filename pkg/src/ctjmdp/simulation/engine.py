"""Batch trajectory generation and empirical marginal estimation.

The compiled kernel is used when the extension built; set CTJMDP_PURE_PYTHON=1
to force the fallback.  Randomness is counter-based: trajectory i under master
seed s draws from a Philox stream keyed (s, i), so every trajectory is
reproducible in isolation and the batch is reproducible under any scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Philox

from ..errors import PolicyError
from ..grid import TimeGrid
from ..model import ModelSpec
from ..policies import FiniteMemoryPolicy, GeneralPolicy, MarkovPolicyGrid
from . import _pathsim_py
from .tables import SamplerTables, compile_tables
from .trajectory import Trajectory, TrajectoryStatus, classify_capped

__all__ = ["KERNEL_NAME", "SimConfig", "SimulationResult", "simulate",
           "estimate_marginals", "philox_stream"]

if os.environ.get("CTJMDP_PURE_PYTHON") == "1":
    _kernel = _pathsim_py
    KERNEL_NAME = "python"
else:
    try:
        from .. import _pathsim as _kernel  # type: ignore

        KERNEL_NAME = "compiled"
    except ImportError:
        _kernel = _pathsim_py
        KERNEL_NAME = "python"


def philox_stream(master_seed: int):
    """Factory giving the Philox bit generator keyed (master_seed, index).

    The same object is re-keyed on each call; callers consume it before the
    next call, which the per-trajectory kernels do.
    """
    bg = Philox(key=np.array([0, 0], dtype=np.uint64))
    state = bg.state

    def rekey(index: int):
        state["state"]["key"][0] = master_seed
        state["state"]["key"][1] = index
        state["state"]["counter"][:] = 0
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bg.state = state
        return bg

    return rekey


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    max_jumps: int = 100_000
    n_paths: int = 1
    seed: int = 0
    est_grid: TimeGrid | None = None
    record_paths: bool = True
    threads: int = 1

    def __post_init__(self):
        if not (self.horizon > 0):
            raise ValueError("horizon must be positive")
        if self.max_jumps < 1 or self.n_paths < 1:
            raise ValueError("max_jumps and n_paths must be at least 1")


@dataclass
class SimulationResult:
    """Flat batch output; index arithmetic instead of per-path objects.

    Kernel states live on the product space for finite-memory policies;
    base_* views map them back to model states.
    """

    model: ModelSpec
    policy: object
    config: SimConfig
    tables: SamplerTables
    init_states: np.ndarray      # (N,) kernel space
    statuses: np.ndarray         # (N,) int8: 0 completed, 1 capped
    offsets: np.ndarray          # (N+1,)
    times: np.ndarray            # flat jump times
    states: np.ndarray           # flat kernel-space destinations
    occupancy: np.ndarray | None = None
    kernel: str = KERNEL_NAME
    _trajectories: list = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return len(self.init_states)

    @property
    def base_states(self) -> np.ndarray:
        return self.tables.base_state[self.states]

    @property
    def base_init_states(self) -> np.ndarray:
        return self.tables.base_state[self.init_states]

    def path_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def trajectories(self) -> list:
        if self._trajectories is None:
            if not self.config.record_paths:
                raise ValueError("paths were not recorded for this run")
            out = []
            base = self.tables.base_state
            for i in range(self.n_paths):
                sl = self.path_slice(i)
                t = self.times[sl]
                s = base[self.states[sl]]
                if self.statuses[i] == 0:
                    status = TrajectoryStatus.COMPLETED
                else:
                    status = classify_capped(t, self.config.horizon)
                out.append(Trajectory(int(base[self.init_states[i]]), t,
                                      s.astype(np.int32), status, self.config.horizon))
            self._trajectories = out
        return self._trajectories

    def status_counts(self) -> dict:
        counts = {s: 0 for s in TrajectoryStatus}
        if self.config.record_paths:
            for tr in self.trajectories():
                counts[tr.status] += 1
        else:
            counts[TrajectoryStatus.COMPLETED] = int((self.statuses == 0).sum())
            counts[TrajectoryStatus.TRUNCATED_JUMPS] = int((self.statuses == 1).sum())
        return counts


def run_batch(model: ModelSpec, policy, gamma, cfg: SimConfig) -> SimulationResult:
    """Sample cfg.n_paths trajectories; deterministic given (seed, indices)."""
    if isinstance(policy, GeneralPolicy):
        return _run_general(model, policy, gamma, cfg)
    tables = compile_tables(model, policy, np.asarray(gamma, dtype=np.float64))
    est_h, est_n = (cfg.est_grid.step, cfg.est_grid.n_cells) if cfg.est_grid else (0.0, 0)

    def run_span(lo: int, hi: int):
        factory = philox_stream(cfg.seed)
        return _kernel.run_paths(tables, cfg.horizon, cfg.max_jumps, factory,
                                 lo, hi, est_h, est_n, cfg.record_paths)

    if cfg.threads > 1 and cfg.n_paths >= 4 * cfg.threads:
        spans = np.linspace(0, cfg.n_paths, cfg.threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(lambda ab: run_span(*ab),
                                  zip(spans[:-1], spans[1:])))
        init_states = np.concatenate([p[0] for p in parts])
        statuses = np.concatenate([p[1] for p in parts])
        counts = np.concatenate([np.diff(p[2]) for p in parts])
        offsets = np.zeros(cfg.n_paths + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        times = np.concatenate([p[3] for p in parts])
        states = np.concatenate([p[4] for p in parts])
        occ = None
        if cfg.est_grid is not None:
            occ = np.sum([p[5] for p in parts], axis=0)
    else:
        init_states, statuses, offsets, times, states, occ = run_span(0, cfg.n_paths)
    return SimulationResult(model, policy, cfg, tables, init_states, statuses,
                            offsets, times, states, occ)


def simulate(model: ModelSpec, policy, gamma, cfg: SimConfig) -> list:
    """N independent trajectories under the policy; see :func:`run_batch`."""
    cfg = cfg if cfg.record_paths else SimConfig(**{**cfg.__dict__, "record_paths": True})
    return run_batch(model, policy, gamma, cfg).trajectories()


# ---------------------------------------------------------------------------
# Callback policies: thinning against the per-state rate envelope

def _run_general(model: ModelSpec, policy: GeneralPolicy, gamma, cfg: SimConfig):
    from .sampling import _thinning_path

    gamma = np.asarray(gamma, dtype=np.float64)
    init_cdf = np.cumsum(gamma)
    init_cdf[-1] = 1.0
    factory = philox_stream(cfg.seed)
    all_t, all_s = [], []
    init_states = np.zeros(cfg.n_paths, dtype=np.int32)
    statuses = np.zeros(cfg.n_paths, dtype=np.int8)
    offsets = np.zeros(cfg.n_paths + 1, dtype=np.int64)
    for i in range(cfg.n_paths):
        gen = np.random.Generator(factory(i))
        z = int(np.searchsorted(init_cdf, gen.random(), side="right"))
        init_states[i] = z
        t, s, capped = _thinning_path(gen, model, policy, z, cfg.horizon, cfg.max_jumps)
        statuses[i] = 1 if capped else 0
        offsets[i + 1] = offsets[i] + len(t)
        all_t.append(t)
        all_s.append(s)
    times = np.concatenate(all_t) if all_t else np.empty(0)
    states = np.concatenate(all_s) if all_s else np.empty(0, dtype=np.int32)
    tables = SamplerTables(
        h=1.0, n_cells=1,
        exit=np.zeros((1, model.n_states)),
        cum_exit=np.zeros((2, model.n_states)),
        dest_cdf=np.ones((1, model.n_states, model.n_states)),
        init_cdf=init_cdf,
        base_state=np.arange(model.n_states, dtype=np.int32),
        memory_state=np.zeros(model.n_states, dtype=np.int32),
        n_base_states=model.n_states,
    )
    return SimulationResult(model, policy, cfg, tables, init_states, statuses,
                            offsets, times, states.astype(np.int32), None)


# ---------------------------------------------------------------------------
# Empirical marginals

def _kernel_weights_at(model, policy, tables: SamplerTables, t: float) -> np.ndarray:
    """(kernel state, action) policy weights at time t."""
    if isinstance(policy, MarkovPolicyGrid):
        return policy.table[policy.grid.cell_of(t)]
    if isinstance(policy, FiniteMemoryPolicy):
        k = policy.grid.cell_of(t)
        return policy.decision[k, tables.base_state, tables.memory_state]
    raise PolicyError("UNSUPPORTED_ACTION",
                      "marginal estimation needs a grid or finite-memory policy")


def estimate_marginals(result: SimulationResult, grid: TimeGrid):
    """Empirical state-action occupancy with binomial standard errors.

    Uses the left-limit state at each grid point.  Missing mass (paths past
    their jump cap) is reported through the total-mass shortfall rather than
    being assigned to any state.  Returns (curve, se_states, se_actions).
    """
    from ..forward import MarginalCurve

    model, policy, tables = result.model, result.policy, result.tables
    n = result.n_paths
    occ = result.occupancy
    if occ is not None and result.config.est_grid == grid:
        counts = occ.astype(np.float64)
    else:
        counts = np.zeros((grid.n_points, tables.n_states))
        flat_states = result.states
        for i in range(n):
            sl = result.path_slice(i)
            t = result.times[sl]
            s = flat_states[sl]
            z = result.init_states[i]
            end = grid.horizon if result.statuses[i] == 0 \
                else (t[-1] if len(t) else 0.0)
            lo = 0
            for tn, xn in zip(t, s):
                hi = int(tn / grid.step + 1e-9)  # same boundary rule as the kernels
                for g in range(lo, min(hi, grid.n_cells) + 1):
                    counts[g, z] += 1
                lo = hi + 1
                z = int(xn)
            hi = int(end / grid.step + 1e-9)
            for g in range(lo, min(hi, grid.n_cells) + 1):
                counts[g, z] += 1

    S, A = model.n_states, model.n_actions
    probs = np.zeros((grid.n_points, S))
    sa = np.zeros((grid.n_points, S, A))
    var_sa = np.zeros((grid.n_points, S, A))
    base = tables.base_state
    for k in range(grid.n_points):
        t = min(k * grid.step, grid.horizon)
        w = _kernel_weights_at(model, policy, tables, t)   # (kernel S, A)
        pk = counts[k] / n
        np.add.at(probs[k], base, pk)
        np.add.at(sa[k], base, pk[:, None] * w)
        np.add.at(var_sa[k], base, pk[:, None] * w * w)
    var_sa -= sa * sa
    se_sa = np.sqrt(np.maximum(var_sa, 0.0) / n)
    se_states = np.sqrt(np.maximum(probs * (1 - probs), 0.0) / n)
    curve = MarginalCurve(grid, model.states, probs, action_probs=sa,
                          actions=model.actions)
    return curve, se_states, se_sa
