"""Command line entry point: ``riskdp <command> [options]``.

Exit status: 0 success, 1 validation/usage error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .experiment import ExperimentConfig, relative_errors, run_experiment
from .io import content_hash, file_hash, read_json, write_json, write_sidecar
from .learner import (AlgorithmConfig, BoundParams, LearnedSolution, MlpHyper, QGrid, run_algorithm,
                      theorem_bound)
from .mdp import (SimplexPolicy, exploration_policy, gen_random_mdp, load_dataset, load_model, save_dataset,
                  save_model, simulate)
from .oracle import OracleSolution, brute_force_policy_eval_sweep, horizon_for, nested_risk_eval, value_iteration
from .risk import load_risk_spec
from .simplex import SimplexSearch


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", help=out_help)
    p.add_argument("--config", help="JSON file whose keys provide defaults for this command's options")


def _search_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--n-random", type=int, default=2000)
    p.add_argument("--refine-rounds", type=int, default=3)
    p.add_argument("--vertex-only", action="store_true")


def _search(args) -> SimplexSearch:
    if args.vertex_only:
        return SimplexSearch.vertices()
    return SimplexSearch(grid_step=args.grid_step, n_random=args.n_random, refine_rounds=args.refine_rounds,
                         seed=args.seed)


def _risk_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--risk", default="section4", help="risk spec JSON file, or 'section4'")
    p.add_argument("--normalize", action="store_true", help="rescale measures whose weights do not sum to 1")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="riskdp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a random MDP model file")
    _common(p, "model JSON path")
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--actions", type=int, default=4)
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--c-max", type=float, default=1.0)
    p.add_argument("--cost-kind", choices=("deterministic", "beta"), default="deterministic")

    p = sub.add_parser("explore", help="simulate a trajectory dataset under an exploration policy")
    _common(p, "dataset CSV path")
    p.add_argument("--model", required=True)
    p.add_argument("--t-max", type=int, default=10000)
    p.add_argument("--policy", choices=("random", "uniform"), default="random")
    p.add_argument("--floor", type=float, default=0.05)
    p.add_argument("--x0", type=int, default=0)

    p = sub.add_parser("solve", help="exact oracle by value iteration with dense simplex search")
    _common(p, "oracle solution JSON path")
    p.add_argument("--model", required=True)
    _risk_args(p)
    _search_args(p)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--beta-points", type=int, default=200)
    p.add_argument("--compare-deterministic", action="store_true")

    p = sub.add_parser("train", help="run the distributional learner on a dataset")
    _common(p, "learned solution JSON path")
    p.add_argument("--data", required=True)
    p.add_argument("--model", help="model file supplying states, actions, gamma and c_max")
    p.add_argument("--states", type=int)
    p.add_argument("--actions", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--c-max", type=float)
    _risk_args(p)
    _search_args(p)
    p.add_argument("--m-grid", type=int, default=100)
    p.add_argument("--q-max", default="value_bound", help="'c_max', 'value_bound' or a number")
    p.add_argument("--backend", choices=("table", "mlp"), default="table")
    p.add_argument("--stop-tol", type=float, default=1e-4)
    p.add_argument("--max-outer", type=int, default=50)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--beta", type=float, default=1.0, help="monotonicity penalty weight (mlp)")

    p = sub.add_parser("eval", help="compare a learned solution with an oracle solution")
    _common(p, "evaluation JSON path")
    p.add_argument("--learned", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--model", help="model file; enables the policy risk gap")
    _risk_args(p)
    p.add_argument("--floor", type=float, default=1e-6)

    p = sub.add_parser("bound", help="evaluate the finite-sample guarantee")
    _common(p, "optional JSON path")
    for name, typ, default in (("states", int, 4), ("actions", int, 4), ("epsilon-e", float, 0.2), ("ell", int, 4),
                               ("t-max", int, 10000), ("epsilon", float, 0.1), ("b", float, 0.05),
                               ("epsilon-theta", float, 0.01), ("epsilon-v", float, 0.01), ("gamma", float, 0.3),
                               ("c-max", float, 1.0), ("n", int, 20), ("v0-gap", float, 10 / 7)):
        p.add_argument(f"--{name}", type=typ, default=default)

    p = sub.add_parser("experiment", help="replicated learner-vs-oracle study")
    _common(p, "output directory")
    p.add_argument("--replicas", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--normalize", action="store_true", help="rescale measures whose weights do not sum to 1")
    return parser


def _meta(args, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("out", "verbose")}
    return {"command": args.command, "seed": args.seed, "config_hash": content_hash(cfg), "args": cfg, **extra}


def _q_max(text: str, c_max: float, gamma: float) -> float:
    if text == "c_max":
        return c_max
    if text == "value_bound":
        return c_max / (1 - gamma)
    try:
        return float(text)
    except ValueError as exc:
        raise ValidationError(f"--q-max must be c_max, value_bound or a number, got {text!r}") from exc


def cmd_gen(args) -> None:
    model = gen_random_mdp(args.states, args.actions, args.cost_kind, args.c_max, args.gamma, args.seed)
    out = args.out or "model.json"
    save_model(model, out, extra={"meta": _meta(args)})
    print(out)


def cmd_explore(args) -> None:
    model = load_model(args.model)
    if args.policy == "random":
        policy = exploration_policy(model.n_states, model.n_actions, args.seed, args.floor)
    else:
        policy = SimplexPolicy.uniform(model.n_states, model.n_actions)
    data = simulate(model, policy, args.t_max, args.x0, args.seed)
    out = args.out or "data.csv"
    save_dataset(data, out)
    write_sidecar(out, _meta(args, model_hash=file_hash(args.model), policy=policy.tolist(),
                             n_states=model.n_states, n_actions=model.n_actions))
    print(out)


def cmd_solve(args) -> None:
    model = load_model(args.model)
    spec = load_risk_spec(args.risk, args.normalize)
    search = _search(args)
    meta = _meta(args, model_hash=file_hash(args.model), risk_spec_hash=content_hash(spec.to_list()),
                 risk_notes=list(spec.notes))
    if args.compare_deterministic:
        sweep = brute_force_policy_eval_sweep(model, spec, search, args.tol, args.beta_points)
        sol = sweep.solution
        meta.update(v_deterministic=sweep.v_deterministic.tolist(), interior_gain=sweep.interior_gain.tolist())
    else:
        sol = value_iteration(model, spec, tol=args.tol, max_iter=args.max_iter, search=search,
                              beta_points=args.beta_points)
    sol.meta.update(meta)
    out = args.out or "oracle.json"
    sol.save(out)
    print(json.dumps({"v_star": sol.v_star.tolist(), "iterations": sol.iterations, "residual": sol.residual}))


def cmd_train(args) -> None:
    if args.model:
        model = load_model(args.model)
        n, K, gamma, c_max = model.n_states, model.n_actions, model.gamma, model.c_max
    else:
        n, K, gamma, c_max = args.states, args.actions, args.gamma, args.c_max
        if None in (gamma, c_max):
            raise ValidationError("train needs --model or both --gamma and --c-max")
    data = load_dataset(args.data, n, K)
    spec = load_risk_spec(args.risk, args.normalize)
    grid = QGrid.uniform(args.m_grid, _q_max(args.q_max, c_max, gamma))
    config = AlgorithmConfig(gamma=gamma, c_max=c_max, backend=args.backend, search=_search(args),
                             stop_tol=args.stop_tol, max_outer=args.max_outer,
                             mlp=MlpHyper(epochs=args.epochs, beta=args.beta), seed=args.seed)
    sol = run_algorithm(data, spec, grid, config)
    sol.meta.update(_meta(args, dataset_hash=file_hash(args.data), risk_spec_hash=content_hash(spec.to_list()),
                          risk_notes=list(spec.notes)))
    out = args.out or "learned.json"
    sol.save(out)
    print(json.dumps({"v_hat": sol.v_hat.tolist(), "outer_iterations": len(sol.history),
                      "converged": sol.converged}))


def cmd_eval(args) -> None:
    learned = LearnedSolution.load(args.learned)
    oracle = OracleSolution.load(args.oracle)
    rel = relative_errors(learned.v_hat, oracle.v_star, args.floor)
    payload = {"rel_err": rel.tolist(), "v_hat": learned.v_hat.tolist(), "v_star": oracle.v_star.tolist(),
               "learned_hash": file_hash(args.learned), "oracle_hash": file_hash(args.oracle),
               "floor": args.floor}
    if args.model:
        model = load_model(args.model)
        spec = load_risk_spec(args.risk, args.normalize)
        w = nested_risk_eval(model, spec, learned.pi_hat, horizon_for(model.gamma, model.c_max))
        payload["risk_gap"] = (w - oracle.v_star).tolist()
    payload["meta"] = _meta(args)
    if args.out:
        write_json(args.out, payload)
    print(json.dumps({k: payload[k] for k in ("rel_err", "risk_gap") if k in payload}))


def cmd_bound(args) -> None:
    params = BoundParams(n_states=args.states, n_actions=args.actions, epsilon_e=args.epsilon_e, ell=args.ell,
                         t_max=args.t_max, epsilon=args.epsilon, b=args.b, epsilon_theta=args.epsilon_theta,
                         epsilon_v=args.epsilon_v, gamma=args.gamma, c_max=args.c_max, n=args.n,
                         v0_gap=args.v0_gap)
    prob, err = theorem_bound(params)
    print(f"prob_lower_bound {prob:.17g}")
    print(f"error_upper_bound {err:.17g}")
    if args.out:
        write_json(args.out, {"prob_lower_bound": prob, "error_upper_bound": err, "meta": _meta(args)})


def cmd_experiment(args) -> None:
    try:
        base = read_json(args.config) if args.config else {}
    except json.JSONDecodeError as exc:
        raise ValidationError(f"cannot parse config {args.config}: {exc}") from exc
    base.update({"seed": args.seed} if args.seed_given else {})
    if args.out:
        base["out_dir"] = args.out
    if args.replicas:
        base["replicas"] = args.replicas
    if args.normalize:
        base["normalize"] = True
    base.setdefault("out_dir", "experiment_out")
    config = ExperimentConfig.from_dict(base)
    report = run_experiment(config, threads=args.threads)
    csv_path = Path(config.out_dir) / "errors.csv"
    write_sidecar(csv_path, {"command": "experiment", "seed": config.seed, "config_hash": config.hash(),
                             "replica_seeds": {r.replica: r.seeds for r in report.results}})
    print(csv_path)
    errs = report.rel_errors
    print(json.dumps({"replicas": len(report.results), "failed": len(report.failures),
                      "rel_err_median": float(np.median(errs)) if errs.size else None,
                      "rel_err_max": float(errs.max()) if errs.size else None}))
    if report.failures:
        raise _ReplicaFailures(len(report.failures))


class _ReplicaFailures(NumericalError):
    def __init__(self, n):
        super().__init__(f"{n} replica(s) failed; see summary.json")


COMMANDS = {"gen": cmd_gen, "explore": cmd_explore, "solve": cmd_solve, "train": cmd_train, "eval": cmd_eval,
            "bound": cmd_bound, "experiment": cmd_experiment}


def _apply_config_defaults(parser, argv):
    """Re-parse with ``--config`` JSON values as defaults; explicit flags still win."""
    args = parser.parse_args(argv)
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    if not args.config or args.command == "experiment":
        return args
    try:
        defaults = read_json(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    defaults = {k.replace("-", "_"): v for k, v in defaults.items()}
    unknown = set(defaults) - known
    if unknown:
        raise ValidationError(f"unknown keys in {args.config}: {sorted(unknown)}")
    sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    args.seed_given = True
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            args = _apply_config_defaults(parser, argv)
        except SystemExit as exc:          # --help, --version and usage errors
            return exc.code if isinstance(exc.code, int) else 1
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"riskdp: validation error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        print(f"riskdp: numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"riskdp: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
