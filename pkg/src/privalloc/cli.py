"""Command line entry point.

Verbs: ``gen`` (write an instance), ``run`` (trials of one mode), ``sweep``
(trials over an axis), ``attack`` (reconstruction experiment) and
``verify`` (equilibrium report for a stored outcome).

Exit codes: 0 success, 2 usage error, 3 precondition violation, 4 internal
guard tripped (round or state-space guard, exhausted counter horizon).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from privalloc import errors
from privalloc.core import Outcome, iter_assignment_json, load_market, save_market
from privalloc.experiments import (
    AXES,
    KINDS,
    MODES,
    ExperimentConfig,
    generate_instance,
    run_config,
    summary_columns,
    sweep,
    write_rows_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_PRECONDITION, EXIT_GUARD = 0, 2, 3, 4

_GUARDS = (errors.NonTerminationError, errors.InstanceTooLargeError,
           errors.HorizonExceededError, errors.MalformedBillboardError)
_PRECONDITIONS = (errors.ParameterError, errors.ConfigurationError, errors.InstanceError,
                  errors.FeasibilityError, errors.BundleCapError, errors.OracleContractError)


def _instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instance", help="instance JSON file (overrides the generator)")
    p.add_argument("--kind", choices=KINDS, default=None)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--s", type=int)


def _param_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="ExperimentConfig JSON; flags given explicitly override it")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--alpha", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lam", type=float, help="valuation floor (multiplicative mode)")
    p.add_argument("--opt-estimate", type=float, help="fixed OPT estimate (multiplicative mode)")
    p.add_argument("--b", type=int, help="bundle size cap (palloc mode)")
    p.add_argument("--noise", choices=("laplace", "off"))
    p.add_argument("--no-monotonize", action="store_true")
    p.add_argument("--override-T", type=int, help="round count T (round guard in kelso mode)")
    p.add_argument("--override-E", type=float)
    p.add_argument("--override-m", type=int)
    p.add_argument("--horizon", type=int, help="counter horizon (counter-bench mode)")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.add_argument("--no-runtime", action="store_true", help="omit the runtime column")
    _instance_args(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="privalloc", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="write a random instance as JSON")
    g.add_argument("--kind", choices=KINDS, default="uniform")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--s", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run trials of one mode")
    _param_args(r)
    r.add_argument("--billboard", help="also dump the first trial's billboard CSV (pmatch, palloc)")
    r.add_argument("--outcome", help="also dump the first trial's outcome JSON")

    s = sub.add_parser("sweep", help="run trials for each value of one axis")
    _param_args(s)
    s.add_argument("--axis", choices=AXES, required=True)
    s.add_argument("--values", required=True, help="comma-separated axis values ('' for none)")
    s.add_argument("--workers", type=int, default=1)

    a = sub.add_parser("attack", help="run a reconstruction experiment")
    a.add_argument("--variant", choices=("prices", "allocation", "joint"), default="allocation")
    a.add_argument("--mechanism", choices=("pmatch", "kelso_crawford", "exact_max_matching"),
                   default="exact_max_matching")
    a.add_argument("--bits", type=int, default=20)
    a.add_argument("--s", type=int, default=1, help="spy count / supply (joint variant)")
    a.add_argument("--alpha", type=float, default=0.1)
    a.add_argument("--rho", type=float, default=0.1)
    a.add_argument("--epsilon", type=float, default=1.0)
    a.add_argument("--noise", choices=("laplace", "off"), default="laplace")
    a.add_argument("--override-E", type=float)
    a.add_argument("--override-m", type=int)
    a.add_argument("--trials", type=int, default=10)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.add_argument("--no-runtime", action="store_true")

    v = sub.add_parser("verify", help="equilibrium report for a stored outcome")
    v.add_argument("--instance", required=True)
    v.add_argument("--outcome", required=True, help="JSON {prices, assignment}")
    v.add_argument("--alpha", type=float, required=True)
    v.add_argument("--b", type=int)
    v.add_argument("--out")
    return ap


def config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(ns.config) if ns.config else ExperimentConfig()
    if ns.mode:
        cfg = replace(cfg, mode=ns.mode)
    params = dict(cfg.params)
    for key, attr in (("alpha", "alpha"), ("rho", "rho"), ("epsilon", "epsilon"), ("gamma", "gamma"),
                      ("lam", "lam"), ("opt_estimate", "opt_estimate"), ("b", "b"),
                      ("noise", "noise"), ("T", "override_T"), ("E", "override_E"),
                      ("m", "override_m"), ("horizon", "horizon")):
        val = getattr(ns, attr)
        if val is not None:
            params[key] = val
    if ns.no_monotonize:
        params["monotonize"] = False
    inst = dict(cfg.instance)
    if ns.instance:
        inst = {"path": ns.instance}
    else:
        for key in ("kind", "n", "k", "s"):
            val = getattr(ns, key)
            if val is not None:
                inst.pop("path", None)
                inst[key] = val
    cfg = replace(cfg, params=params, instance=inst)
    if ns.trials is not None:
        cfg = replace(cfg, trials=ns.trials)
    if ns.seed is not None:
        cfg = replace(cfg, seed=ns.seed)
    if ns.out:
        cfg = replace(cfg, output=ns.out)
    return cfg


def _emit(rows, columns, out, runtime: bool) -> None:
    if out:
        write_rows_csv(out, rows, columns, runtime=runtime)
    else:
        write_rows_csv(sys.stdout, rows, columns, runtime=runtime)


def _dump_first(cfg: ExperimentConfig, ns) -> None:
    from privalloc import palloc, pmatch
    from privalloc.experiments import _instance, _seed_of

    market = _instance(cfg, 0)
    seed = _seed_of(cfg.seed, "mechanism", 0)
    params = cfg.build_params()
    if cfg.mode == "pmatch":
        outcome, board = pmatch.run(market, params, seed=seed)
    elif cfg.mode == "palloc":
        outcome, board = palloc.run(market, None, params, seed=seed, b=cfg.params.get("b"))
    else:
        raise errors.UsageError("--billboard/--outcome need mode pmatch or palloc")
    if ns.billboard:
        board.write_csv(ns.billboard)
    if ns.outcome:
        with open(ns.outcome, "w") as fh:
            json.dump({"prices": outcome.prices.tolist(),
                       "assignment": list(iter_assignment_json(outcome.assignment))}, fh)


def _verify(ns) -> None:
    from privalloc.core import social_welfare
    from privalloc.oracles import (
        verify_allocation_equilibrium,
        verify_matching_equilibrium,
        write_reports_csv,
    )

    market = load_market(ns.instance)
    with open(ns.outcome) as fh:
        doc = json.load(fh)
    assignment = [a if a is None or isinstance(a, int) else tuple(a) for a in doc["assignment"]]
    outcome = Outcome(doc["prices"], assignment, 0.0)
    bundles = any(isinstance(a, tuple) for a in assignment)
    if market.unit_demand and not bundles:
        rep = verify_matching_equilibrium(market, outcome, ns.alpha)
    else:
        rep = verify_allocation_equilibrium(market, None, outcome, ns.b, ns.alpha)
    write_reports_csv(ns.out or "/dev/stdout", [(ns.instance, rep)])
    if rep.feasible:
        logging.info("welfare %.12g", social_welfare(market, assignment))


def dispatch(ns: argparse.Namespace) -> int:
    if ns.verb == "gen":
        save_market(generate_instance(ns.kind, ns.n, ns.k, ns.s, ns.seed), ns.out)
        return EXIT_OK
    if ns.verb == "verify":
        _verify(ns)
        return EXIT_OK
    if ns.verb == "attack":
        params = {"variant": ns.variant, "mechanism": ns.mechanism, "bits": ns.bits, "s": ns.s}
        if ns.mechanism == "pmatch":
            params.update(alpha=ns.alpha, rho=ns.rho, epsilon=ns.epsilon, noise=ns.noise,
                          E=ns.override_E, m=ns.override_m)
        elif ns.mechanism == "kelso_crawford":
            params["alpha"] = ns.alpha
        cfg = ExperimentConfig(mode="attack", instance={}, params=params, trials=ns.trials, seed=ns.seed)
        _emit(run_config(cfg), summary_columns("attack"), ns.out, not ns.no_runtime)
        return EXIT_OK
    cfg = config_from_args(ns)
    if ns.verb == "run":
        rows = run_config(cfg)
        cols = [c for c in summary_columns(cfg.mode) if c != "value"]
        _emit(rows, cols, cfg.output, not ns.no_runtime)
        if ns.billboard or ns.outcome:
            _dump_first(cfg, ns)
        return EXIT_OK
    values = [x for x in ns.values.split(",") if x.strip()]
    values = [int(x) if ns.axis in ("s", "n") else float(x) for x in values]
    rows = sweep(cfg, ns.axis, values, workers=ns.workers)
    _emit(rows, summary_columns(cfg.mode), cfg.output, not ns.no_runtime)
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(ns)
    except errors.UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _GUARDS as exc:
        print(f"guard tripped: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except _PRECONDITIONS as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
