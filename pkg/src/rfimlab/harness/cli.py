"""Command line entry point: ``rfimlab <subcommand> [--plan FILE] [--out DIR] [--workers K] [--seed-base S]``.

Exit codes: 0 success, 1 validation failure, 2 execution failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .. import __version__
from ..errors import RfimError
from ..ibp import ibp_suite
from .plan import BUNDLED, PlanError, bundled_plan_text, load_plan, validate_plan
from .runner import ExecutionError, csv_text, replay, run_plan, trends_from_rows, with_engine
from .trend import TrendReport

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def _common(p: argparse.ArgumentParser, top: bool) -> None:
    d = {} if top else {"default": argparse.SUPPRESS}
    p.add_argument("--plan", help=f"plan file, or a bundled plan name {BUNDLED}", **({"default": None} | d))
    p.add_argument("--out", help="output directory", **({"default": "rfimlab-out"} | d))
    p.add_argument("--workers", type=int, help="worker processes", **({"default": 1} | d))
    p.add_argument("--seed-base", type=int, help="offset added to every disorder seed", **({"default": None} | d))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rfimlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"rfimlab {__version__}")
    _common(ap, True)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a plan and print its normalized form")
    _common(p, False)
    for name, helptext in (("exact", "run a plan on the exact engines (enumeration or transfer matrix)"),
                           ("mcmc", "run a plan on the Markov chain engine"),
                           ("run", "run a plan with the engine it names")):
        p = sub.add_parser(name, help=helptext)
        _common(p, False)
    p = sub.add_parser("gg", help="run only the Ghirlanda-Guerra residual over the plan grid")
    _common(p, False)
    p.add_argument("--m", type=int, default=3, help="replica count m")
    p.add_argument("--f", default="R23", help="overlap function, e.g. R23, R12*R13, clip(4*R12)")
    p = sub.add_parser("ibp", help="Gaussian-interpolation remainder suite over every registered (law, f)")
    _common(p, False)
    p.add_argument("--mc-samples", type=int, default=20000)
    p = sub.add_parser("trend", help="recompute trend verdicts from the CSVs of a finished run")
    _common(p, False)
    p.add_argument("run_dir", nargs="?", help="run directory (defaults to --out)")
    p = sub.add_parser("replay", help="rerun a manifest and compare output digests")
    _common(p, False)
    p.add_argument("manifest", help="manifest.json or the run directory holding it")
    return ap


def _plan_text(arg: str | None) -> str:
    if arg is None:
        raise PlanError([])
    if arg in BUNDLED and not Path(arg).exists():
        return bundled_plan_text(arg)
    try:
        return Path(arg).read_text()
    except OSError as exc:
        raise ExecutionError(f"cannot read plan {arg}: {exc}") from exc


def _load(args):
    if args.plan is None:
        print("error: --plan is required", file=sys.stderr)
        return None
    plan, diags = validate_plan(_plan_text(args.plan))
    if diags:
        for d in diags:
            print(f"invalid plan: {d}", file=sys.stderr)
        return None
    if args.seed_base is not None:
        plan = plan.with_seed_base(args.seed_base)
    return plan


def _print_trends(trends: list[TrendReport]) -> None:
    for t in trends:
        g = " ".join(f"{k}={v}" for k, v in t.group.items())
        exp = "" if t.exponent is None else f"  exponent={t.exponent:.3g}"
        if t.exponent_ci:
            exp += f" [{t.exponent_ci[0]:.3g}, {t.exponent_ci[1]:.3g}]"
        pts = " ".join(f"n={n}:{e:.4g}+-{s:.2g}" for n, e, s in t.points)
        print(f"{t.observable:40s} {g:55s} {t.verdict:24s} {pts}{exp}")


def _finish(res) -> int:
    _print_trends(res.trends)
    for f in res.failures:
        print(f"failed: {f['cell']} {f['observable']}: {f['error']}", file=sys.stderr)
    print(f"wrote {len(res.outputs)} files and manifest to {res.out_dir}")
    return EXIT_FAILED if res.failures else EXIT_OK


def _cmd_run(args) -> int:
    plan = _load(args)
    if plan is None:
        return EXIT_INVALID
    if args.command == "exact" and plan.engine not in ("exact", "transfer-matrix"):
        plan = with_engine(plan, "exact")
    elif args.command == "mcmc":
        plan = with_engine(plan, "mcmc")
    elif args.command == "gg":
        doc = plan.to_document()
        doc["observables"] = [{"name": "gg-residual", "m": args.m, "f": args.f}]
        plan = load_plan(json.dumps(doc))
    return _finish(run_plan(plan, args.out, args.workers))


def _cmd_validate(args) -> int:
    if args.plan is None:
        print("error: --plan is required", file=sys.stderr)
        return EXIT_INVALID
    plan, diags = validate_plan(_plan_text(args.plan))
    if diags:
        for d in diags:
            print(f"invalid plan: {d}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed_base is not None:
        plan = plan.with_seed_base(args.seed_base)
    print(json.dumps(plan.to_document(), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_ibp(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = ibp_suite(mc_samples=args.mc_samples, seed=args.seed_base or 0)
    rows, bad = [], 0
    for r in reports:
        ok = r.within_tolerance() and all(b.holds for b in r.bounds)
        bad += not ok
        se = (r.se or {}).get("residual", 0.0)
        rows.append(dict(observable=f"ibp-suite[{'x'.join(r.dists)}:{r.function}:{r.method}]", n="", d="", beta="",
                         h="", profile="", dist="", mean=r.residual, variance=se**2, SE=se, seeds=1))
        print(f"{'ok ' if ok else 'BAD'} {'x'.join(r.dists):45s} {r.function:10s} {r.method:15s} "
              f"gamma={r.gamma: .6g} residual={r.residual: .3g}")
    (out / "ibp-suite.csv").write_text(csv_text(rows))
    (out / "ibp-suite.json").write_text(json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True) + "\n")
    print(f"{len(reports) - bad}/{len(reports)} reports within tolerance; wrote {out}")
    return EXIT_OK if bad == 0 else EXIT_FAILED


def _cmd_trend(args) -> int:
    run_dir = Path(args.run_dir or args.out)
    files = sorted(run_dir.glob("*.csv"))
    if not files:
        print(f"error: no CSV files in {run_dir}", file=sys.stderr)
        return EXIT_INVALID
    rows = {}
    for f in files:
        with open(f, newline="") as fh:
            rows[f.stem] = list(csv.DictReader(fh))
    trends = trends_from_rows(rows)
    _print_trends(trends)
    (run_dir / "trends.json").write_text(json.dumps([t.to_dict() for t in trends], indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_replay(args) -> int:
    rep = replay(args.manifest, args.out, args.workers)
    if rep.identical:
        print(f"replay identical: {len(rep.result.outputs)} files match")
        return EXIT_OK
    print(f"replay MISMATCH in: {', '.join(rep.mismatched)}", file=sys.stderr)
    return EXIT_FAILED


COMMANDS = {"validate": _cmd_validate, "exact": _cmd_run, "mcmc": _cmd_run, "run": _cmd_run, "gg": _cmd_run,
            "ibp": _cmd_ibp, "trend": _cmd_trend, "replay": _cmd_replay}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    if args.seed_base is not None and not 0 <= args.seed_base < 2**64:
        print("error: --seed-base must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except PlanError as exc:
        for d in exc.diagnostics:
            print(f"invalid plan: {d}", file=sys.stderr)
        return EXIT_INVALID
    except (ExecutionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except RfimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if args.command == "validate" else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
