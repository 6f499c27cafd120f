"""Command-line interface: one executable, one subcommand per pipeline stage.

Exit codes: 0 success, 1 validation error, 2 verification failure, 64 usage.
All floating-point output uses 17 significant digits so files round-trip and
identical invocations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .costs import CostBundle, finite_horizon_cost, infinite_horizon_cost, \
    mc_discounted_cost, transform_jump_costs
from .errors import CtjmdpError
from .forward import PolicyQ, forward_ode, markov_marginals, finite_memory_marginals, \
    series_minimal_solution
from .grid import TimeGrid
from .markovize import compare_marginals, derive_markov_exact, derive_markov_mc, \
    markovized_marginals
from .model import load_model
from .policies import FiniteMemoryPolicy, MarkovPolicyGrid, load_policy, \
    policy_to_dict, save_policy
from .simulation.engine import SimConfig, run_batch
from . import experiments

USAGE_EXIT = 64
VERIFY_EXIT = 2


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(USAGE_EXIT)


def _load_gamma(path, model) -> np.ndarray:
    with open(path) as f:
        raw = json.load(f)
    g = np.zeros(model.n_states)
    for s, p in raw.items():
        if s not in model.state_index:
            raise CtjmdpError("UNKNOWN_ID", f"gamma names unknown state {s!r}")
        g[model.state_index[s]] = float(p)
    if abs(g.sum() - 1.0) > 1e-9 or np.any(g < 0):
        raise CtjmdpError("BAD_DIST", "gamma is not a probability vector")
    return g


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("CTJMDP_THREADS", "1"))


def _add_common(p, tol_default=1e-6):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--tol", type=float, default=tol_default)
    p.add_argument("--out", required=True)


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def _curve_rows(curve, with_actions: bool):
    rows = ["time,state,probability,action,action_probability,mass_defect"]
    for k in range(curve.grid.n_points):
        t = curve.grid.points[k]
        defect = 1.0 - curve.probs[k].sum()
        for z, s in enumerate(curve.states):
            if with_actions and curve.action_probs is not None:
                for a, an in enumerate(curve.actions):
                    if curve.action_probs[k, z, a] > 0.0 or a == 0:
                        rows.append(f"{_fmt(t)},{s},{_fmt(curve.probs[k, z])},"
                                    f"{an},{_fmt(curve.action_probs[k, z, a])},"
                                    f"{_fmt(defect)}")
            else:
                rows.append(f"{_fmt(t)},{s},{_fmt(curve.probs[k, z])},,,"
                            f"{_fmt(defect)}")
    return rows


def _cmd_simulate(args):
    model = load_model(args.model)
    policy = load_policy(model, args.policy)
    gamma = _load_gamma(args.gamma, model)
    cfg = SimConfig(horizon=args.horizon, max_jumps=args.max_jumps,
                    n_paths=args.n, seed=args.seed, threads=_threads(args))
    batch = run_batch(model, policy, gamma, cfg)
    rows = ["trajectory_id,jump_index,time,state,status"]
    for i, traj in enumerate(batch.trajectories()):
        status = traj.status.value
        rows.append(f"{i},0,{_fmt(0.0)},{model.states[traj.initial_state]},{status}")
        for j, (t, s) in enumerate(zip(traj.times, traj.states), start=1):
            rows.append(f"{i},{j},{_fmt(t)},{model.states[s]},{status}")
    with open(args.out, "w") as f:
        f.write("\n".join(rows) + "\n")
    return 0


def _cmd_forward(args):
    model = load_model(args.model)
    policy = load_policy(model, args.policy)
    gamma = _load_gamma(args.gamma, model)
    grid = TimeGrid(args.grid_step, int(round(args.horizon / args.grid_step)))
    if isinstance(policy, FiniteMemoryPolicy):
        if args.method != "ode":
            raise CtjmdpError("UNSUPPORTED_ACTION",
                              "series output needs a Markov policy; use --method ode")
        curve = finite_memory_marginals(model, policy, gamma, grid)
    else:
        curve = markov_marginals(model, policy, gamma, grid)
        if args.method in ("series", "both"):
            q = PolicyQ(model, policy)
            # the minimal-solution expansion starts from a point; mix over gamma
            series = np.zeros_like(curve.probs)
            for z in np.nonzero(gamma)[0]:
                series += gamma[z] * series_minimal_solution(q, int(z), grid).probs
            if args.method == "series":
                curve.probs = series
                curve.action_probs = None
            else:
                sup = float(np.abs(series - curve.probs).max())
                print(f"series-vs-ode sup difference: {_fmt(sup)}")
    with open(args.out, "w") as f:
        f.write("\n".join(_curve_rows(curve, args.state_action)) + "\n")
    return 0


def _cmd_markovize(args):
    model = load_model(args.model)
    policy = load_policy(model, args.policy)
    gamma = _load_gamma(args.gamma, model)
    grid = TimeGrid(args.grid_step, int(round(args.horizon / args.grid_step)))
    if not isinstance(policy, FiniteMemoryPolicy):
        raise CtjmdpError("UNSUPPORTED_ACTION",
                          "markovize expects a finite-memory policy")
    if args.method == "exact":
        mk = markovized_marginals(model, policy, gamma, grid)
        save_policy(model, mk.policy, args.out)
    else:
        cfg = SimConfig(horizon=grid.horizon, max_jumps=args.max_jumps,
                        n_paths=args.n, seed=args.seed,
                        est_grid=grid, threads=_threads(args))
        batch = run_batch(model, policy, gamma, cfg)
        phi, diag = derive_markov_mc(batch, grid)
        d = policy_to_dict(model, phi)
        d["cell_counts"] = diag.cell_counts.tolist()
        _write_json(args.out, d)
    return 0


def _cmd_verify(args):
    model = load_model(args.model)
    policy = load_policy(model, args.policy)
    gamma = _load_gamma(args.gamma, model)
    grid = TimeGrid(args.grid_step, int(round(args.horizon / args.grid_step)))
    if not isinstance(policy, FiniteMemoryPolicy):
        raise CtjmdpError("UNSUPPORTED_ACTION", "verify expects a finite-memory policy")
    mk = markovized_marginals(model, policy, gamma, grid)
    rep = compare_marginals(mk.markovized_curve, mk.original_curve)
    _write_json(args.out, rep.to_dict())
    if rep.violation_sup > args.tol:
        print(f"dominance violation {_fmt(rep.violation_sup)} exceeds "
              f"tolerance {_fmt(args.tol)}", file=sys.stderr)
        return VERIFY_EXIT
    return 0


def _cmd_evaluate(args):
    model = load_model(args.model)
    policy = load_policy(model, args.policy)
    gamma = _load_gamma(args.gamma, model)
    bundle = CostBundle.from_model(model)
    if args.infinite:
        if args.method == "exact":
            res = infinite_horizon_cost(model, policy, gamma, bundle, args.alpha,
                                        eps=args.eps, grid_step=args.grid_step)
        else:
            sup = bundle.max_abs_rate(model)
            T = bundle.last_instant()
            if sup > 0:
                T = max(T, math.log(sup / (args.alpha * args.eps)) / args.alpha)
            T = max(T, args.grid_step)
            cfg = SimConfig(horizon=T, max_jumps=args.max_jumps, n_paths=args.n,
                            seed=args.seed, threads=_threads(args))
            batch = run_batch(model, policy, gamma, cfg)
            res = mc_discounted_cost(batch, bundle, args.alpha)
    else:
        if args.horizon is None:
            raise CtjmdpError("UNDEFINED_VALUE", "--horizon or --infinite required")
        if args.method == "exact":
            grid = TimeGrid(args.grid_step, int(round(args.horizon / args.grid_step)))
            if isinstance(policy, FiniteMemoryPolicy):
                curve = finite_memory_marginals(model, policy, gamma, grid)
            else:
                curve = markov_marginals(model, policy, gamma, grid)
            c_eff = bundle.cost_rate + transform_jump_costs(model, bundle.jump_costs)
            res = finite_horizon_cost(curve, c_eff, bundle.instant_costs,
                                      args.alpha, grid.horizon)
        else:
            cfg = SimConfig(horizon=args.horizon, max_jumps=args.max_jumps,
                            n_paths=args.n, seed=args.seed, threads=_threads(args))
            batch = run_batch(model, policy, gamma, cfg)
            res = mc_discounted_cost(batch, bundle, args.alpha)
    _write_json(args.out, {
        "value": res.value,
        "method": res.method,
        "error_bound_or_se": res.error_bound if res.std_error is None else res.std_error,
        "truncation_T": res.truncation_horizon,
    })
    return 0


def _cmd_experiment(args):
    with open(args.config) as f:
        cfg = json.load(f)
    if args.name == "two-state":
        rep = experiments.run_example_two_state(
            alphas=tuple(cfg.get("alphas", (0.25, 0.5, 1.0, 2.0))),
            grid_step=cfg.get("grid_step", 0.005),
            n_mc=cfg.get("n_mc", 100_000),
            seed=cfg.get("seed", 20240801))
        ok = rep.all_gaps_positive and rep.max_gap_identity_error <= args.tol \
            and rep.max_marginal_equality_sup <= args.tol
        csv_rows = ["alpha,gap,gap_integral"] + [
            f"{_fmt(r.alpha)},{_fmt(r.gap)},{_fmt(r.gap_integral)}"
            for r in rep.per_alpha]
    elif args.name == "battery":
        rep = experiments.run_sufficiency_battery(
            n_models=cfg.get("n_models", 5),
            n_policies=cfg.get("n_policies", 3),
            grid_step=cfg.get("grid_step", 0.005),
            check_horizon=cfg.get("check_horizon", 4.0),
            base_seed=cfg.get("base_seed", 7100))
        ok = rep.worst_violation <= args.tol and rep.worst_equality <= args.tol
        csv_rows = ["model_seed,policy_seed,violation_sup,equality_sup"] + [
            f"{e.model_seed},{e.policy_seed},{_fmt(e.violation_sup)},{_fmt(e.equality_sup)}"
            for e in rep.entries]
    elif args.name == "explosion":
        rep = experiments.run_explosion_demo(
            depths=tuple(cfg.get("depths", (10, 50, 200))),
            eval_time=cfg.get("eval_time", 2.0),
            grid_step=cfg.get("grid_step", 0.005),
            n_mc=cfg.get("n_mc", 10_000),
            seed=cfg.get("seed", 424242))
        ok = rep.monotone_nonincreasing and rep.mc_within_3se
        csv_rows = ["depth,mass_defect"] + [
            f"{d},{_fmt(v)}" for d, v in zip(rep.depths, rep.defects)]
    elif args.name == "extension":
        model = experiments.random_battery_model(cfg.get("model_seed", 7100))
        fm = experiments.random_fm_policy(model, cfg.get("policy_seed", 7201))
        gamma = np.asarray(cfg.get("gamma", [1.0] + [0.0] * (model.n_states - 1)))
        rep = experiments.run_extension_check(
            model, gamma, fm,
            u=cfg.get("entry_wait", math.log(2.0)),
            grid_step=cfg.get("grid_step", 0.005),
            horizon=cfg.get("horizon", 2.0))
        ok = rep.residual_sup <= args.tol
        csv_rows = ["entry_wait,factor,residual_sup",
                    f"{_fmt(rep.entry_wait)},{_fmt(rep.factor)},{_fmt(rep.residual_sup)}"]
    else:  # pragma: no cover - argparse restricts choices
        raise CtjmdpError("UNKNOWN_ID", f"unknown experiment {args.name!r}")
    out = rep.to_dict()
    out["passed"] = bool(ok)
    _write_json(args.out, out)
    if args.csv:
        with open(args.csv, "w") as f:
            f.write("\n".join(csv_rows) + "\n")
    return 0 if ok else VERIFY_EXIT


def build_parser() -> _Parser:
    p = _Parser(prog="ctjmdp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="sample trajectories")
    ps.add_argument("--model", required=True)
    ps.add_argument("--policy", required=True)
    ps.add_argument("--gamma", required=True)
    ps.add_argument("--horizon", type=float, required=True)
    ps.add_argument("--n", type=int, default=1)
    ps.add_argument("--grid-step", type=float, default=0.005)
    ps.add_argument("--max-jumps", type=int, default=100_000)
    _add_common(ps)
    ps.set_defaults(func=_cmd_simulate)

    pf = sub.add_parser("forward", help="solve the forward equation")
    pf.add_argument("--model", required=True)
    pf.add_argument("--policy", required=True)
    pf.add_argument("--gamma", required=True)
    pf.add_argument("--grid-step", type=float, required=True)
    pf.add_argument("--horizon", type=float, required=True)
    pf.add_argument("--method", choices=["series", "ode", "both"], default="ode")
    pf.add_argument("--state-action", action="store_true")
    _add_common(pf)
    pf.set_defaults(func=_cmd_forward)

    pm = sub.add_parser("markovize", help="derive the equivalent Markov policy")
    pm.add_argument("--model", required=True)
    pm.add_argument("--policy", required=True)
    pm.add_argument("--gamma", required=True)
    pm.add_argument("--grid-step", type=float, required=True)
    pm.add_argument("--horizon", type=float, required=True)
    pm.add_argument("--method", choices=["exact", "mc"], default="exact")
    pm.add_argument("--n", type=int, default=10_000)
    pm.add_argument("--max-jumps", type=int, default=100_000)
    _add_common(pm)
    pm.set_defaults(func=_cmd_markovize)

    pv = sub.add_parser("verify", help="dominance/equality report for a Markovization")
    pv.add_argument("--model", required=True)
    pv.add_argument("--policy", required=True)
    pv.add_argument("--gamma", required=True)
    pv.add_argument("--grid-step", type=float, required=True)
    pv.add_argument("--horizon", type=float, required=True)
    _add_common(pv)
    pv.set_defaults(func=_cmd_verify)

    pe = sub.add_parser("evaluate", help="discounted cost of a policy")
    pe.add_argument("--model", required=True)
    pe.add_argument("--policy", required=True)
    pe.add_argument("--gamma", required=True)
    pe.add_argument("--alpha", type=float, required=True)
    pe.add_argument("--horizon", type=float, default=None)
    pe.add_argument("--infinite", action="store_true")
    pe.add_argument("--eps", type=float, default=1e-8)
    pe.add_argument("--grid-step", type=float, default=0.005)
    pe.add_argument("--method", choices=["exact", "mc"], default="exact")
    pe.add_argument("--n", type=int, default=10_000)
    pe.add_argument("--max-jumps", type=int, default=100_000)
    _add_common(pe)
    pe.set_defaults(func=_cmd_evaluate)

    px = sub.add_parser("experiment", help="run a canned experiment")
    px.add_argument("name", choices=["two-state", "battery", "explosion", "extension"])
    px.add_argument("--config", required=True)
    px.add_argument("--csv", default=None)
    _add_common(px)
    px.set_defaults(func=_cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CtjmdpError as exc:
        json.dump({"error": exc.code, "message": exc.message}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
