"""Command-line entry point: ``balclust <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 infeasible input or no solution,
3 internal invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import core
from .baselines import bpt_dispatcher, lsh_dispatcher, random_dispatcher
from .bicriteria import bicriteria_cluster
from .core import Constraints, Objective, assignment_to_json, check_capacities, evaluate
from .dispatch import fit_dispatcher, load_dispatcher
from .errors import (BalclustError, InfeasibleError, InvariantError, NoSolutionError, NotStableError,
                     SuggestLargerTauError)
from .harness import ExperimentConfig, run_experiment
from .instances import (brute_force_opt, gen_gaussian_mixture, gen_grid_rect, gen_groups, gen_star,
                        gen_two_gaussians)
from .kcenter_exact import kcenter_cluster
from .kmeanspp import SeedingConfig, kmeanspp_balanced
from .lp_relax import build_lp
from .stability import bbg_cluster, capacity_repair, kcenter_stable, tau_sweep

log = logging.getLogger("balclust")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3
ALGOS = ("lp-round", "kcenter-exact", "kmeanspp", "bbg", "tau-sweep", "kcenter-stable")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=S, help="RNG seed (default 0)")
    p.add_argument("--out", default=S, help="output file (default stdout)")
    p.add_argument("--format", choices=("json", "csv"), default=S, help="output format (default json)")
    p.add_argument("--log-level", default=S, help="logging level (default WARNING)")
    p.add_argument("--threads", type=int, default=S, help="cap on worker and BLAS threads (default 1)")
    p.add_argument("--config", default=S, help="JSON file of option values; flags override it")
    return p


GLOBAL_DEFAULTS = {"seed": 0, "out": None, "format": "json", "log_level": "WARNING", "threads": 1,
                   "config": None}


def _constraint_args(p):
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--ell", type=float, default=0.0)
    p.add_argument("--cap-l", dest="cap_l", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="balclust", description="Balanced clustering with replication.",
                     parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic instance as CSV")
    g.add_argument("kind", choices=("star", "groups", "gmm", "grid", "twogauss"))
    g.add_argument("--nl", type=int, default=3)
    g.add_argument("--k-prime", dest="k_prime", type=int, default=3)
    g.add_argument("--eps", action="store_true", help="perturb zero distances in groups")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--components", type=int, default=20)
    g.add_argument("--dims", type=int, default=None)
    g.add_argument("--sigma", type=float, default=0.05)

    c = sub.add_parser("cluster", parents=[common], help="cluster an instance")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--algo", choices=ALGOS, default="lp-round")
    c.add_argument("--objective", choices=[o.value for o in Objective], default="kmedian")
    _constraint_args(c)
    c.add_argument("--tau", type=float, default=None, help="threshold for --algo bbg")
    c.add_argument("--oversample", type=int, default=None)
    c.add_argument("--lloyd-iters", dest="lloyd_iters", type=int, default=10)
    c.add_argument("--dump-lp", dest="dump_lp", default=None, help="write the LP relaxation as text")
    c.add_argument("--threshold", type=float, default=None, help="k-center threshold for --dump-lp")
    c.add_argument("--validate", action="store_true", help="check the metric and the output capacities")

    o = sub.add_parser("oracle", parents=[common], help="exact optimum by enumeration")
    o.add_argument("--in", dest="input", required=True)
    o.add_argument("--objective", choices=[o.value for o in Objective], default="kmedian")
    _constraint_args(o)

    d = sub.add_parser("dispatch", parents=[common], help="fit or apply a dispatcher")
    dsub = d.add_subparsers(dest="action", parser_class=_Parser, required=True)
    fit = dsub.add_parser("fit", parents=[common])
    fit.add_argument("--in", dest="input", required=True, help="points CSV")
    fit.add_argument("--algo", choices=("kmeanspp", "lp-round", "bpt", "lsh", "random"), default="kmeanspp")
    fit.add_argument("--sample-size", dest="sample_size", type=int, default=1000)
    fit.add_argument("--second-sample-size", dest="second_sample_size", type=int, default=None)
    fit.add_argument("--backend", choices=("exact", "rptree"), default=None)
    fit.add_argument("--leaf-size", dest="leaf_size", type=int, default=32)
    fit.add_argument("--objective", choices=("kmedian", "kmeans"), default="kmedian")
    _constraint_args(fit)
    route = dsub.add_parser("route", parents=[common])
    route.add_argument("--model", required=True)
    route.add_argument("--in", dest="input", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the distributed-learning experiment")
    s.add_argument("--emit-plot-data", dest="emit_plot_data", default=None,
                   help="CSV of (k, accuracy) over the config's 'ks' list")

    v = sub.add_parser("validate", parents=[common], help="check that a distance matrix is a metric")
    v.add_argument("--in", dest="input", required=True)
    return parser


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                yield sp
                yield from _subparsers(sp)


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    file_cfg = {}
    if known.config:
        with open(known.config) as fh:
            file_cfg = json.load(fh)
        flat = {k.replace("-", "_"): v for k, v in file_cfg.items()}
        for sp in _subparsers(parser):
            sp.set_defaults(**{k: v for k, v in flat.items()
                               if any(a.dest == k for a in sp._actions)})
    args = parser.parse_args(argv)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, file_cfg.get(k, v))
    args.file_config = file_cfg
    return args


def _effective(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "file_config"}


def _emit(args, doc: dict, rows=None, header=None) -> None:
    """Write JSON (default) or CSV; CSV output gets a sidecar .config.json with the effective config."""
    if args.format == "csv" and rows is not None:
        fh = open(args.out, "w", newline="") if args.out else sys.stdout
        try:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        finally:
            if args.out:
                fh.close()
        if args.out:
            with open(args.out + ".config.json", "w") as fh:
                json.dump(_effective(args), fh, indent=2, sort_keys=True)
        return
    doc = dict(doc)
    doc["config"] = _effective(args)
    text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _constraints(args) -> Constraints:
    if args.k is None:
        raise UsageError("--k is required")
    return Constraints(args.k, args.p, args.ell, args.cap_l)


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.kind == "star":
        inst = gen_star(args.nl)
    elif args.kind == "groups":
        inst = gen_groups(args.k_prime, args.nl, eps=args.eps)
    elif args.kind == "gmm":
        inst = gen_gaussian_mixture(args.components, args.dims or 5, args.sigma, args.n, rng)
    elif args.kind == "grid":
        inst = gen_grid_rect(args.n, rng, dims=args.dims or 100)
    else:
        inst = gen_two_gaussians(args.n, rng)
    if args.out is None:
        raise UsageError("gen needs --out")
    core.write_instance_csv(args.out, inst)
    with open(args.out + ".config.json", "w") as fh:
        json.dump(_effective(args), fh, indent=2, sort_keys=True)
    log.info("wrote %d-point %s instance to %s", inst.n, args.kind, args.out)
    return EXIT_OK


def _assignment_rows(assignment):
    return [(j, c, m) for j, c, m in core.iter_pairs(assignment)]


def cmd_cluster(args) -> int:
    inst = core.read_instance_csv(args.input)
    cons = _constraints(args)
    objective = Objective.parse(args.objective)
    extra = {}
    if args.validate:
        bad = inst.metric_violation()
        if bad is not None:
            print(f"not a metric: violating triple {bad}", file=sys.stderr)
            return EXIT_INFEASIBLE
    if args.dump_lp:
        problem = build_lp(inst, cons, objective, threshold=args.threshold)
        with open(args.dump_lp, "w") as fh:
            fh.write(problem.dump())
    rng = np.random.default_rng(args.seed)
    if args.algo == "lp-round":
        assignment, _, diag = bicriteria_cluster(inst, cons, objective)
        extra["diagnostics"] = diag
    elif args.algo == "kcenter-exact":
        assignment, t, diag = kcenter_cluster(inst, cons)
        objective = Objective.KCENTER
        extra["diagnostics"] = diag
        extra["threshold"] = t
    elif args.algo == "kmeanspp":
        if not inst.has_vectors:
            raise BalclustError("kmeanspp needs feature vectors, not a distance matrix")
        cfg = SeedingConfig(cons.k, args.oversample, args.lloyd_iters, args.seed)
        assignment, _ = kmeanspp_balanced(inst.points, cons, cfg, rng)
    else:
        dist = inst.distances
        if args.algo == "bbg":
            if args.tau is None:
                raise UsageError("--algo bbg needs --tau")
            cl = capacity_repair(bbg_cluster(inst, cons.k, args.tau), cons.ell, cons.cap_L, dist)
        elif args.algo == "tau-sweep":
            cl = tau_sweep(inst, cons.k, cons.ell, cons.cap_L, threads=args.threads)
        else:
            cl, r = kcenter_stable(inst, cons.k, cons.ell, cons.cap_L)
            objective = Objective.KCENTER
            extra["radius_threshold"] = r
        extra["tau"] = cl.tau
        extra["moves"] = cl.moves
        assignment = cl.to_assignment(dist)
    value = evaluate(inst, assignment, objective)
    report = check_capacities(assignment, cons)
    if args.validate:
        totals = assignment.totals()
        extra["validation"] = {"metric": True, "capacities_ok": report.feasible,
                               "replication_ok": bool(np.all(totals == cons.p))}
    doc = assignment_to_json(assignment, objective, value, report, **extra)
    _emit(args, doc, _assignment_rows(assignment), ("point", "cluster", "multiplicity"))
    return EXIT_OK


def cmd_oracle(args) -> int:
    inst = core.read_instance_csv(args.input)
    value, assignment = brute_force_opt(inst, _constraints(args), args.objective, threads=args.threads)
    doc = assignment_to_json(assignment, args.objective, value, check_capacities(assignment, _constraints(args)))
    _emit(args, doc, _assignment_rows(assignment), ("point", "cluster", "multiplicity"))
    return EXIT_OK


def cmd_dispatch(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.action == "route":
        disp = load_dispatcher(args.model)
        X = core.read_points_csv(args.input).points
        routes = disp.route(X)
        rows = [(i, *map(int, r)) for i, r in enumerate(routes)]
        header = ("point",) + tuple(f"cluster{s}" for s in range(routes.shape[1]))
        if args.out is None or args.format == "json":
            _emit(args, {"routes": routes.tolist()}, rows, header)
        else:
            args.format = "csv"
            _emit(args, {}, rows, header)
        return EXIT_OK
    if args.out is None:
        raise UsageError("dispatch fit needs --out")
    X = core.read_points_csv(args.input).points
    perm = rng.permutation(X.shape[0])
    m = min(args.sample_size, X.shape[0])
    S = X[perm[:m]]
    rest = perm[m:] if args.second_sample_size is None else perm[m:m + args.second_sample_size]
    S_prime = X[rest] if rest.size else S
    if args.algo == "random":
        disp = random_dispatcher(args.k, rng)
    elif args.algo == "bpt":
        disp = bpt_dispatcher(S, args.k, rng)
    elif args.algo == "lsh":
        disp = lsh_dispatcher(S, args.k, rng)
    else:
        disp = fit_dispatcher(S, S_prime, _constraints(args), args.algo, rng, backend=args.backend,
                              leaf_size=args.leaf_size, objective=args.objective)
    disp.save(args.out)
    with open(args.out + ".config.json", "w") as fh:
        json.dump(_effective(args), fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_simulate(args) -> int:
    doc = dict(args.file_config)
    for key in ("seed", "out", "format", "log_level", "threads", "config", "log-level"):
        doc.pop(key, None)
    ks = doc.pop("ks", None)
    doc["seed"] = args.seed
    doc["workers"] = max(doc.get("workers", 1), args.threads)
    base = ExperimentConfig.from_dict(doc)
    result = run_experiment(base)
    out = result.to_dict()
    out["experiment"] = base.to_dict()
    if args.emit_plot_data:
        series = []
        for k in ks or [base.k]:
            cfg = ExperimentConfig.from_dict({**base.to_dict(), "k": int(k)})
            series.append((int(k), run_experiment(cfg).accuracy))
        with open(args.emit_plot_data, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("k", "accuracy"))
            w.writerows((k, "" if a is None else a) for k, a in series)
        out["plot_series"] = series
    args.format = "json"
    _emit(args, out)
    return EXIT_OK


def cmd_validate(args) -> int:
    inst = core.read_instance_csv(args.input)
    bad = inst.metric_violation()
    if bad is not None:
        i, j, m = bad
        msg = f"asymmetric or negative entry at ({i}, {j})" if m < 0 else \
            f"triangle inequality fails: d({i},{j}) > d({i},{m}) + d({m},{j})"
        print(f"not a metric: {msg}; violating triple {bad}")
        return EXIT_INFEASIBLE
    print(f"metric ok: {inst.n} points")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "cluster": cmd_cluster, "oracle": cmd_oracle, "dispatch": cmd_dispatch,
            "simulate": cmd_simulate, "validate": cmd_validate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"balclust: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=str(args.log_level).upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"balclust: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleError, NoSolutionError, NotStableError, SuggestLargerTauError) as exc:
        print(f"balclust: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvariantError as exc:
        print(f"balclust: internal invariant failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (BalclustError, OSError, ValueError) as exc:
        print(f"balclust: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
