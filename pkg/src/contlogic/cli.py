"""Command-line interface.

Exit codes: 0 on success, 2 on invalid input, 3 on a numeric failure such as
an aggregation with nothing to range over.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness
from .evaluate import evaluate_many
from .funcspace import aggregator, falsify_continuity, threshold_aggregator
from .inference import EliminationConfig, Interval, eliminate, limit_prob, prob_in_interval
from .logic import (Agg, FormulaError, agg_depth, formula_to_json, is_aggregation_free, walk,
                    to_text)
from .measure import sample_structure

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _read_json(path):
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _variables(text):
    return None if text is None else [v.strip() for v in text.split(",") if v.strip()]


def _inputs(args, exclude=()):
    return harness.load_inputs(_read_json(args.signature), _read_json(args.model), args.formula,
                               _variables(args.vars), getattr(args, "pattern", None), exclude)


def _emit(text: str, out: str | None):
    if out:
        d = os.path.dirname(os.path.abspath(out))
        os.makedirs(d, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_check(args):
    s = _inputs(args)
    f = s.formula
    info = {
        "formula": to_text(f),
        "free_variables": list(s.variables),
        "aggregation_free": is_aggregation_free(f),
        "aggregation_depth": agg_depth(f),
        "aggregations": sum(isinstance(g, Agg) for g in walk(f)),
        "signature": s.signature.to_json(),
    }
    _emit(_dump(info), args.out)


def cmd_sample(args):
    s = harness.load_inputs(_read_json(args.signature), _read_json(args.model),
                            args.formula or "", None, None)
    A = sample_structure(args.n, s.model, args.seed, args.index)
    _emit(json.dumps(A.to_json()) + "\n", args.out)


def cmd_eval(args):
    s = _inputs(args)
    assign = list(args.assign or [])
    if len(assign) != len(s.variables):
        raise FormulaError(f"--assign needs {len(s.variables)} element(s) for "
                           f"({', '.join(s.variables)})")
    lines = ["sample_index,value"]
    for i in range(args.samples):
        A = sample_structure(args.n, s.model, args.seed, i)
        v = evaluate_many(A, s.formula, [assign], s.variables)[0]
        lines.append(f"{i},{float(v)!r}")
    _emit("\n".join(lines) + "\n", args.out)


def cmd_prob(args):
    s = _inputs(args)
    J = Interval(*args.interval)
    if is_aggregation_free(s.formula):
        est = prob_in_interval(s.formula, s.pattern, J, s.model, s.variables, args.method,
                               args.budget, args.seed)
    else:
        cfg = EliminationConfig(grid=args.grid, budget=args.node_budget, seed=args.seed)
        est = limit_prob(s.formula, s.pattern, J, s.model, s.variables, cfg, args.method,
                         args.budget, args.seed)
    _emit(_dump(est.to_json()), args.out)


def elimination_to_json(result, config) -> dict:
    return {"output": to_text(result.output), "output_json": formula_to_json(result.output),
            "trace": result.trace, "tolerance": result.tolerance, "config": config.to_json()}


def cmd_eliminate(args):
    s = _inputs(args)
    cfg = EliminationConfig(grid=args.grid, budget=args.budget, method=args.method,
                            seed=args.seed, stability_check=args.stability)
    res = eliminate(s.formula, s.pattern, s.model, s.variables, cfg)
    _emit(_dump(elimination_to_json(res, cfg)), args.out)


def _experiment(args, runner, stem, columns, figure):
    cfg = harness.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    report = runner(cfg, threads=args.threads, timing=args.timing)
    sys.stdout.write(harness.rows_to_csv(report["rows"], columns))
    if args.out:
        paths = harness.write_report(report, args.out, stem, columns)
        if not args.no_figures:
            from . import plotting
            paths["figure"] = getattr(plotting, figure)(report, os.path.join(args.out, f"{stem}.png"))
        for kind, path in sorted(paths.items()):
            sys.stderr.write(f"wrote {kind}: {path}\n")


def cmd_converge(args):
    _experiment(args, harness.run_convergence, "convergence", harness.CONVERGENCE_COLUMNS,
                "convergence_figure")


def cmd_concentrate(args):
    _experiment(args, harness.run_concentration, "concentration", harness.CONCENTRATION_COLUMNS,
                "concentration_figure")


def cmd_aggcheck(args):
    agg = threshold_aggregator(args.level) if args.agg == "threshold" else aggregator(args.agg)
    rep = falsify_continuity(agg, args.epsilon, args.delta, args.M, args.N, args.trials, args.seed)
    _emit(_dump(rep.to_json(include_sequences=args.witness)), args.out)


# ---------------------------------------------------------------------------
# Argument parsing


def _global_flags(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None),
                        help="master seed (default 0; experiments default to the config seed)")
    parser.add_argument("--threads", type=int, default=d(1), help="worker threads")
    parser.add_argument("--out", default=d(None),
                        help="output file (directory for converge/concentrate)")


def _formula_flags(p, pattern=True):
    p.add_argument("--formula", required=True, help="formula in the DSL")
    p.add_argument("--signature", help="signature JSON (default: inferred from the formula)")
    p.add_argument("--model", help="density model JSON (default: all uniform)")
    p.add_argument("--vars", help="comma-separated free-variable tuple")
    if pattern:
        p.add_argument("--pattern", help='identity pattern as JSON blocks, e.g. "[[1],[2]]"')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contlogic",
                                     description="Continuous logic with aggregation on random structures")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("check", cmd_check, "parse a formula and report its shape")
    _formula_flags(p, pattern=False)

    p = add("sample", cmd_sample, "sample one structure as JSON")
    p.add_argument("--signature", help="signature JSON")
    p.add_argument("--model", help="density model JSON")
    p.add_argument("--formula", help="infer the signature from this formula")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--index", type=int, default=0, help="structure index")

    p = add("eval", cmd_eval, "evaluate a formula on sampled structures")
    _formula_flags(p, pattern=False)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--assign", type=int, nargs="*", help="1-based elements for the free variables")
    p.add_argument("--samples", type=int, default=1)

    p = add("prob", cmd_prob, "limit probability of landing in an interval")
    _formula_flags(p)
    p.add_argument("--interval", type=float, nargs=2, required=True, metavar=("LO", "HI"))
    p.add_argument("--method", choices=("mc", "quadrature"), default="mc")
    p.add_argument("--budget", type=int, help="MC samples or quadrature points per axis")
    p.add_argument("--grid", type=int, default=17, help="elimination grid nodes per axis")
    p.add_argument("--node-budget", type=int, default=20_000, help="elimination samples per node")

    p = add("eliminate", cmd_eliminate, "eliminate aggregations")
    _formula_flags(p)
    p.add_argument("--grid", type=int, default=17)
    p.add_argument("--budget", type=int, default=20_000)
    p.add_argument("--method", choices=("auto", "mc", "quadrature"), default="auto")
    p.add_argument("--stability", action="store_true", help="rerun MC nodes with twice the budget")

    for name, func, help_ in (("converge", cmd_converge, "convergence experiment"),
                              ("concentrate", cmd_concentrate, "concentration experiment")):
        p = add(name, func, help_)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
        p.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    p = add("aggcheck", cmd_aggcheck, "search for continuity violations of an aggregator")
    p.add_argument("--agg", choices=("min", "max", "am", "threshold"), required=True)
    p.add_argument("--level", type=float, default=0.5, help="threshold level")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--M", type=int, default=20)
    p.add_argument("--N", type=int, default=500)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--witness", action="store_true", help="include witness sequences")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None and args.command not in ("converge", "concentrate"):
        args.seed = 0
    try:
        args.func(args)
    except ArithmeticError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
