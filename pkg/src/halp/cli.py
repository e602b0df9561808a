"""Command-line entry point: partition tables, inference, schedule
simulation, and the reliability sweep.

Exit codes: 0 success, 1 usage error, 2 runtime/transport error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import models as model_lib
from .planner import (
    PlanError,
    build_plan,
    optimize_plan,
    plan_from_json,
    plan_to_json,
    render_mobilenet_table,
    render_vgg_table,
    validate_plan,
)
from .runtime import SessionError, host_session, load_config, secondary_session
from .selector import ChannelState, Mode, load_catalog, reliability_csv, run_reliability
from .simulate import TimingModel, default_timing, simulate, standalone_time

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3

EQUIVALENCE_TOLERANCE = 1e-5


def _add_model_args(parser, optional_model=False):
    if optional_model:
        parser.add_argument("model", nargs="?", choices=["vgg16", "mobilenet"],
                            help="ignored with --role (the node config decides)")
    else:
        parser.add_argument("model", choices=["vgg16", "mobilenet"])
    parser.add_argument("--alpha", type=float, default=1.0, help="MobileNet width multiplier")
    parser.add_argument("--rho", type=int, default=224, help="MobileNet input resolution")
    parser.add_argument("--base-width", type=int, default=0, help="stem width override (testing)")
    parser.add_argument("--classes", type=int, default=1000)


def _build_model(args):
    return model_lib.get_model(
        args.model, alpha=args.alpha, rho=args.rho,
        base_width=getattr(args, "base_width", 0), classes=getattr(args, "classes", 1000),
    )


def _calibration_doc(args) -> dict | None:
    if getattr(args, "calibration", None):
        with open(args.calibration) as fh:
            return json.load(fh)
    return None


def _timing(args, model_name: str) -> TimingModel:
    doc = _calibration_doc(args)
    if doc is not None:
        return TimingModel(doc["mac_rate"], doc["overhead_s"])
    return default_timing(model_name)


def _plan_for(args, model):
    if getattr(args, "plan", None):
        with open(args.plan) as fh:
            return plan_from_json(fh.read())
    if getattr(args, "optimize", False):
        return optimize_plan(model, _timing(args, model.name), args.rate)
    return build_plan(model, getattr(args, "z1", 4))


def cmd_plan(args) -> int:
    model = _build_model(args)
    try:
        plan = _plan_for(args, model)
    except PlanError as exc:
        print(f"infeasible plan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    problems = validate_plan(plan, model)
    if problems:
        print("plan failed validation:", *problems, sep="\n  ", file=sys.stderr)
        return EXIT_RUNTIME
    if args.json:
        print(plan_to_json(plan))
    else:
        render = render_vgg_table if model.name == "vgg16" else render_mobilenet_table
        print(render(plan, model), end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(plan_to_json(plan))
    return EXIT_OK


def cmd_infer(args) -> int:
    from .models import make_input, make_weights
    from .runtime import monolithic_infer

    if args.role:
        try:
            config = load_config(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"cannot read config: {exc}", file=sys.stderr)
            return EXIT_USAGE
        config["role"] = args.role
        try:
            if args.role == "host":
                out, log = host_session(config)
                _print_vector(out, args)
            else:
                log = secondary_session(config)
            if args.event_log:
                log.dump_jsonl(args.event_log)
        except SessionError as exc:
            print(f"session failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK

    model = _build_model(args)
    if args.verify:
        try:
            plan = _plan_for(args, model)
        except PlanError as exc:
            print(f"infeasible plan: {exc}", file=sys.stderr)
            return EXIT_USAGE
        err, _ = _verify(model, args.seed, plan)
        if err <= EQUIVALENCE_TOLERANCE:
            print(f"equivalent (max rel err {err:.2e} <= {EQUIVALENCE_TOLERANCE})")
            return EXIT_OK
        print(f"NOT equivalent: max rel err {err:.2e} > {EQUIVALENCE_TOLERANCE}", file=sys.stderr)
        return EXIT_VERIFY
    # --local: monolithic inference
    weights = make_weights(model, args.seed)
    out = monolithic_infer(model, weights, make_input(model, args.seed + 1))
    _print_vector(out, args)
    return EXIT_OK


def _verify(model, seed, plan):
    from .models import make_input, make_weights
    from .runtime import monolithic_infer, run_local_session

    weights = make_weights(model, seed)
    x = make_input(model, seed + 1)
    reference = monolithic_infer(model, weights, x)
    got, _ = run_local_session(model, weights, plan, x)
    scale = np.maximum(np.abs(reference.astype(np.float64)), 1e-12)
    return float(np.max(np.abs(got.astype(np.float64) - reference) / scale)), got


def _print_vector(out: np.ndarray, args) -> None:
    if getattr(args, "json", False):
        print(json.dumps(out.tolist()))
    else:
        top = np.argsort(out)[::-1][:5]
        print(f"output vector: {out.size} values")
        for i in top:
            print(f"  class {i}: {out[i]:.6f}")


def cmd_simulate(args) -> int:
    from .simulate import ChannelModel

    model = _build_model(args)
    timing = _timing(args, model.name)
    # a throughput distribution may come from the calibration file; an explicit
    # --rate wins, and the default is the measured 42 Mbps average
    channel = None
    doc = _calibration_doc(args)
    if args.rate is None and doc and "channel" in doc:
        channel = ChannelModel(doc["channel"]["lo_mbps"], doc["channel"].get("hi_mbps"))
    rate = args.rate if args.rate is not None else (None if channel else 42.0)
    if args.optimize:
        args.rate = rate if rate is not None else channel.lo_mbps
    try:
        plan = _plan_for(args, model)
    except PlanError as exc:
        print(f"infeasible plan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    timeline = simulate(plan, model, timing, rate, channel=channel, seed=args.seed)
    t_alone = standalone_time(model, timing)
    makespan_ms = timeline.makespan * 1e3
    gain = t_alone / timeline.makespan
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(timeline.to_csv())
    if args.json:
        print(timeline.to_json())
    else:
        print(f"standalone: {t_alone * 1e3:.1f} ms")
        print(f"makespan:   {makespan_ms:.1f} ms at {timeline.rate_mbps:g} Mbps")
        print(f"gain:       {gain:.2f}x")
    return EXIT_OK


def cmd_reliability(args) -> int:
    try:
        catalog = load_catalog(args.catalog)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"cannot load catalog: {exc}", file=sys.stderr)
        return EXIT_USAGE
    deadlines = [float(d) for d in args.deadlines.split(",")]
    channels = list(ChannelState) if args.channel == "all" else [ChannelState[args.channel.upper()]]
    modes = list(Mode) if args.mode == "both" else [Mode(args.mode)]
    results = {}
    for mode in modes:
        for channel in channels:
            points = run_reliability(catalog, deadlines, channel, args.tasks, args.seed, mode)
            results[(mode.value, channel.name.lower())] = points
    text = reliability_csv(results)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="halp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="emit a partition plan (table or JSON)")
    _add_model_args(p)
    p.add_argument("--z1", type=int, default=4, help="VGG entry overlap rows")
    p.add_argument("--optimize", action="store_true", help="search for the best z1")
    p.add_argument("--rate", type=float, default=42.0, help="Mbps used by --optimize")
    p.add_argument("--calibration", help="timing calibration JSON")
    p.add_argument("--json", action="store_true", help="print plan JSON instead of the table")
    p.add_argument("--out", help="also write plan JSON to this path")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("infer", help="run inference (local, verify, or as a node)")
    _add_model_args(p, optional_model=True)
    p.add_argument("--local", action="store_true", help="monolithic on this process")
    p.add_argument("--verify", action="store_true", help="run both paths, assert equivalence")
    p.add_argument("--role", choices=["host", "ed1", "ed2"], help="socket deployment role")
    p.add_argument("--config", help="node config JSON (for --role)")
    p.add_argument("--plan", help="plan JSON path")
    p.add_argument("--z1", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.add_argument("--event-log", help="write the node event log (JSONL)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", help="simulate the pipeline schedule")
    _add_model_args(p)
    p.add_argument("--z1", type=int, default=4)
    p.add_argument("--optimize", action="store_true")
    p.add_argument("--plan", help="plan JSON path")
    p.add_argument("--rate", type=float, default=None,
                   help="link throughput in Mbps (default 42, or the calibration file's channel)")
    p.add_argument("--calibration", help="timing calibration JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="write the timeline CSV here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reliability", help="Monte-Carlo failure/reliability sweep")
    p.add_argument("--catalog", help="catalog JSON (default: shipped)")
    p.add_argument("--mode", choices=["standalone", "halp", "both"], default="both")
    p.add_argument("--channel", choices=["poor", "medium", "good", "all"], default="all")
    p.add_argument("--deadlines", default="375,425,475,555,700,1000,1400,1800")
    p.add_argument("--tasks", type=int, default=10000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--csv", help="write the CSV here")
    p.set_defaults(func=cmd_reliability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.command == "infer":
        if not (args.local or args.verify or args.role):
            print("infer needs one of --local, --verify, or --role", file=sys.stderr)
            return EXIT_USAGE
        if not args.role and args.model is None:
            print("infer --local/--verify needs a model", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except SessionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
