"""
Bucket Brigade - Command Line
=============================
    python cli.py simulate     --v 2,4/3,1 --init 0,2/5 --steps 9
    python cli.py fixed-point  --v 1,2,3 --resolution 1/50
    python cli.py classify     --v 2,4/3,1 --init 6/13,10/13
    python cli.py cycle        --r1 2 --r2 4/3 --itinerary C3,C2,C4
    python cli.py sweep        --r1 2 --r2 4/3 --grid 100x100
    python cli.py sigma        --r1 4/3 --r2 2 --samples 10000

Machine output goes to --out (or stdout); status lines go to stderr.
Exit codes: 0 all checks passed, 1 usage/config error, 2 a mathematical
check failed.
"""

import argparse
import json
import logging
import sys

import pandas as pd

from brigade_core import BrigadeConfig, ResetState, TrajectoryStatus, config_from_dict, iterate, trajectory_frame
from cycle_analysis import (
    CellItinerary,
    CycleCertificate,
    certify_cycle,
    certify_period_from,
    classify_behavior,
    find_certified_cycle,
    grid_points,
    period_budget,
    search_period,
    verify_certificate,
)
from errors import BrigadeError, CertificationError, ConfigError
from fixed_point import constant_velocity_fixed_point, scan_fixed_points, verify_fixed_point
from numerics import format_decimal, format_rational, parse_rational, parse_rational_list
from settings import load_settings
from three_worker import (
    BehaviorKind,
    SigmaSet,
    ThreeWorkerParams,
    format_pair,
    region_of,
    reset_map3,
    sigma_contains,
    sigma_invariance_check,
)

logger = logging.getLogger("brigade")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2


# ============================================================================
# OUTPUT HELPERS
# ============================================================================

def status(message):
    print(message, file=sys.stderr)


def error_record(message):
    return {"success": False, "error": message}


def emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        status(f"📝 Wrote {out}")
    else:
        sys.stdout.write(text)


def emit_json(document, out):
    emit(json.dumps(document, indent=2, ensure_ascii=False) + "\n", out)


def emit_frame(frame, out, fmt):
    if fmt == "json":
        emit_json(frame.to_dict(orient="records"), out)
    else:
        emit(frame.to_csv(index=False), out)


# ============================================================================
# ARGUMENT PARSING
# ============================================================================

class BrigadeArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; usage errors are code 1 here"""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps(error_record(message)), file=sys.stderr)
        self.exit(EXIT_USAGE)


def parse_grid(text):
    try:
        nx, ny = (int(part) for part in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"grid must look like NxM, got {text!r}") from None
    if nx < 1 or ny < 1:
        raise ConfigError(f"grid must be at least 1x1, got {text!r}")
    return nx, ny


def parse_range(text):
    try:
        lo, hi = str(text).split(":")
    except ValueError:
        raise ConfigError(f"range must look like LO:HI, got {text!r}") from None
    lo, hi = parse_rational(lo), parse_rational(hi)
    if not 0 < lo <= hi:
        raise ConfigError(f"range must satisfy 0 < LO <= HI, got {text!r}")
    return lo, hi


def three_worker_params(args):
    if args.v:
        return ThreeWorkerParams.from_velocities(parse_rational_list(args.v))
    if args.r1 is not None and args.r2 is not None:
        return ThreeWorkerParams(parse_rational(args.r1), parse_rational(args.r2))
    raise ConfigError("give --v v1,v2,v3 or both --r1 and --r2")


def brigade_config(args):
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                document = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read configuration {args.config}: {e}") from None
        return config_from_dict(document)
    if args.v:
        return BrigadeConfig.from_velocities(parse_rational_list(args.v))
    if args.r1 is not None and args.r2 is not None:
        return three_worker_params(args).to_config()
    raise ConfigError("give --v, --r1/--r2 or --config")


def initial_state(args, width):
    if not args.init:
        raise ConfigError("--init is required")
    coords = parse_rational_list(args.init)
    if len(coords) != width:
        raise ConfigError(f"--init needs {width} coordinates, got {len(coords)}")
    return ResetState(coords)


def scout_budget(args, settings):
    if args.budget is not None:
        return args.budget
    if args.period:
        return period_budget(args.period)
    return settings.scout_budget


def add_model_options(sub, config=False):
    sub.add_argument("--v", help="comma separated velocities, e.g. 2,4/3,1 or 1.2,3,1")
    sub.add_argument("--r1", help="v1/v3 as p/q")
    sub.add_argument("--r2", help="v2/v3 as p/q")
    if config:
        sub.add_argument("--config", help="JSON configuration with piecewise profiles")


def add_output_options(sub, formats=("csv", "json"), default="csv"):
    sub.add_argument("--out", help="output path (default: stdout)")
    sub.add_argument("--format", choices=formats, default=default)


def build_parser(settings):
    parser = BrigadeArgumentParser(prog="cli.py", description="Bucket brigade exact simulator")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=BrigadeArgumentParser)

    sub = commands.add_parser("simulate", help="iterate the reset map exactly")
    add_model_options(sub, config=True)
    sub.add_argument("--init", help="post-reset positions x_2,...,x_n")
    sub.add_argument("--steps", type=int, default=10)
    add_output_options(sub)

    sub = commands.add_parser("fixed-point", help="closed form and grid scan for fixed points")
    add_model_options(sub, config=True)
    sub.add_argument("--resolution", default="1/100")
    add_output_options(sub, formats=("json",), default="json")

    sub = commands.add_parser("classify", help="asymptotic behavior of one orbit (3 workers)")
    add_model_options(sub)
    sub.add_argument("--init", help="x,y")
    sub.add_argument("--period", type=int, help="certify a cycle of exactly this period from --init")
    sub.add_argument("--budget", type=int, help="scouting steps (default: BRIGADE_SCOUT_BUDGET, or sized from --period)")
    add_output_options(sub, formats=("json",), default="json")

    sub = commands.add_parser("cycle", help="scout, certify or verify a cycle (3 workers)")
    add_model_options(sub)
    sub.add_argument("--init", help="x,y start for scouting")
    sub.add_argument("--itinerary", help='cell itinerary to certify, e.g. "C3,C2,C4" or "C4x3,C2"')
    sub.add_argument("--verify", metavar="CERT_PATH", help="replay a stored certificate")
    sub.add_argument("--period", type=int, help="cycle length to certify from --init, or to search the --grid for")
    sub.add_argument("--grid", default="200x200")
    sub.add_argument("--budget", type=int, help="scouting steps (default: BRIGADE_SCOUT_BUDGET, or sized from --period)")
    sub.add_argument("--workers", type=int, default=settings.workers, help="processes for the --period grid search")
    add_output_options(sub, formats=("json",), default="json")

    sub = commands.add_parser("sweep", help="classify a grid of starts or of parameters")
    add_model_options(sub)
    sub.add_argument("--over", choices=("initial", "params"), default="initial")
    sub.add_argument("--grid", default="50x50")
    sub.add_argument("--init", help="fixed start for --over params")
    sub.add_argument("--r1-range", help="LO:HI for --over params")
    sub.add_argument("--r2-range", help="LO:HI for --over params")
    sub.add_argument("--sigma-only", action="store_true", help="keep only starts inside Sigma")
    sub.add_argument("--budget", type=int, default=10_000)
    add_output_options(sub)

    sub = commands.add_parser("sigma", help="vertices of Sigma and the invariance check")
    add_model_options(sub)
    sub.add_argument("--samples", type=int, default=10_000)
    sub.add_argument("--seed", type=int, default=0)
    add_output_options(sub, default="json")

    return parser


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_simulate(args, settings):
    cfg = brigade_config(args)
    start = initial_state(args, cfg.n - 1)
    if args.steps < 0:
        raise ConfigError("--steps must be >= 0")

    record = iterate(cfg, start, args.steps, cap_bits=settings.denom_cap_bits)
    frame = trajectory_frame(record)
    if args.format == "json":
        emit_json({"status": record.status.value, "message": record.message,
                   "trajectory": frame.to_dict(orient="records")}, args.out)
    else:
        emit(frame.to_csv(index=False), args.out)

    if record.status is TrajectoryStatus.TRUNCATED:
        status(f"⚠️ Trajectory truncated after {record.steps} steps: {record.message}")
        return EXIT_USAGE
    status(f"✅ Simulated {record.steps} resets of {cfg.n} workers")
    return EXIT_OK


def cmd_fixed_point(args, settings):
    cfg = brigade_config(args)
    report = scan_fixed_points(cfg, parse_rational(args.resolution), cap_bits=settings.denom_cap_bits)
    document = {"workers": cfg.n, **report.to_dict()}

    ok = len(report.verified) == 1
    velocities = cfg.constant_velocities()
    if velocities is not None:
        closed = constant_velocity_fixed_point(velocities)
        closed_ok = verify_fixed_point(cfg, closed)
        document["closed_form"] = {"state": closed.to_list(), "exact_verified": closed_ok}
        ok = ok and closed_ok and report.verified[0] == closed

    emit_json(document, args.out)
    if not ok:
        status(f"❌ Expected exactly one verified fixed point, found {len(report.verified)} "
               f"({len(report.unresolved)} unresolved)")
        return EXIT_CHECK_FAILED
    status(f"✅ Unique fixed point {report.verified[0].to_list()}")
    return EXIT_OK


def behavior_record(p, start, behavior):
    return {
        "params": p.to_dict(),
        "region": region_of(p).value,
        "initial": format_pair(start),
        "behavior": behavior.label,
        **{k: v for k, v in behavior.to_dict().items() if k != "label"},
    }


def cmd_classify(args, settings):
    p = three_worker_params(args)
    start = tuple(initial_state(args, 2).coordinates)
    budget = scout_budget(args, settings)
    behavior = classify_behavior(p, start, budget,
                                 precision=settings.scout_precision,
                                 epsilon_bits=settings.scout_epsilon_bits,
                                 period=args.period)
    emit_json(behavior_record(p, start, behavior), args.out)
    if behavior.kind is BehaviorKind.UNRESOLVED:
        status(f"⚠️ Unresolved within budget {budget}")
    else:
        status(f"✅ {region_of(p).value}: {behavior.label}")
    return EXIT_OK


def cmd_cycle(args, settings):
    if args.verify:
        try:
            with open(args.verify, encoding="utf-8") as fh:
                cert = CycleCertificate.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read certificate {args.verify}: {e}") from None
        verify_certificate(cert)
        emit_json({"success": True, "verified": True, "period": cert.period,
                   "params": cert.params.to_dict()}, args.out)
        status(f"✅ Certificate replays exactly (period {cert.period})")
        return EXIT_OK

    p = three_worker_params(args)
    budget = scout_budget(args, settings)
    if args.itinerary:
        cert = certify_cycle(p, CellItinerary.from_rle(args.itinerary))
    elif args.period and args.init:
        start = tuple(initial_state(args, 2).coordinates)
        cert = certify_period_from(p, start, args.period, budget,
                                   settings.scout_precision, settings.scout_epsilon_bits)
        if cert is None:
            emit_json(error_record(f"no cycle of period {args.period} certified from {args.init}"), args.out)
            status(f"❌ No cycle of period {args.period} reached")
            return EXIT_CHECK_FAILED
    elif args.period:
        found = search_period(p, parse_grid(args.grid), args.period, budget,
                              settings.scout_precision, settings.scout_epsilon_bits, workers=args.workers)
        if found is None:
            emit_json(error_record(f"no certified cycle of period {args.period} on grid {args.grid}"), args.out)
            status(f"❌ No cycle of period {args.period} found")
            return EXIT_CHECK_FAILED
        start, cert = found
        status(f"🔍 Witness start {format_pair(start)}")
    else:
        start = tuple(initial_state(args, 2).coordinates)
        behavior = find_certified_cycle(p, start, budget,
                                        settings.scout_precision, settings.scout_epsilon_bits)
        if behavior.certificate is None:
            emit_json(error_record(f"no cycle certified within budget {budget}"), args.out)
            status("❌ Unresolved")
            return EXIT_CHECK_FAILED
        cert = behavior.certificate

    verify_certificate(cert)
    emit_json(cert.to_dict(), args.out)
    status(f"✅ Certified cycle of period {cert.period}")
    return EXIT_OK


def _sweep_initial(args, settings, p):
    nx, ny = parse_grid(args.grid)
    sig = SigmaSet.build(p) if args.sigma_only else None
    rows = []
    escaped = 0
    for index, start in enumerate(grid_points(nx, ny)):
        row = {"index": index, "r1": format_rational(p.r1), "r2": format_rational(p.r2),
               "x": format_rational(start[0]), "y": format_rational(start[1])}
        if sig is not None:
            if not sigma_contains(sig, start):
                continue
            inside = sigma_contains(sig, reset_map3(p, start))
            escaped += not inside
            row["image_in_sigma"] = inside
        rows.append(_classified_row(row, p, start, args.budget, settings))
    return rows, escaped


def _sweep_params(args, settings):
    nx, ny = parse_grid(args.grid)
    if not (args.r1_range and args.r2_range):
        raise ConfigError("--over params needs --r1-range and --r2-range")
    start = tuple(initial_state(args, 2).coordinates)
    (lo1, hi1), (lo2, hi2) = parse_range(args.r1_range), parse_range(args.r2_range)

    def axis(lo, hi, count):
        return [lo] if count == 1 else [lo + (hi - lo) * i / (count - 1) for i in range(count)]

    rows = []
    index = 0
    for r1 in axis(lo1, hi1, nx):
        for r2 in axis(lo2, hi2, ny):
            p = ThreeWorkerParams(r1, r2)
            row = {"index": index, "r1": format_rational(r1), "r2": format_rational(r2),
                   "x": format_rational(start[0]), "y": format_rational(start[1])}
            rows.append(_classified_row(row, p, start, args.budget, settings))
            index += 1
    return rows, 0


def _classified_row(row, p, start, budget, settings):
    try:
        behavior = classify_behavior(p, start, budget, settings.scout_precision, settings.scout_epsilon_bits)
    except BrigadeError as e:
        row.update(region=region_of(p).value, behavior="Error", period="", transient="", witness_x="",
                   witness_y="", witness_x_dec12="", witness_y_dec12="", error=str(e))
        return row
    witness = behavior.witness_states[0] if behavior.witness_states else None
    row.update(
        region=region_of(p).value,
        behavior=behavior.label,
        period="" if behavior.period is None else behavior.period,
        transient="" if behavior.transient is None else behavior.transient,
        witness_x=format_rational(witness[0]) if witness else "",
        witness_y=format_rational(witness[1]) if witness else "",
        witness_x_dec12=format_decimal(witness[0]) if witness else "",
        witness_y_dec12=format_decimal(witness[1]) if witness else "",
    )
    return row


def cmd_sweep(args, settings):
    if args.over == "params":
        rows, escaped = _sweep_params(args, settings)
    else:
        rows, escaped = _sweep_initial(args, settings, three_worker_params(args))

    emit_frame(pd.DataFrame(rows), args.out, args.format)
    unresolved = sum(1 for row in rows if row["behavior"].startswith("Unresolved"))
    if unresolved:
        status(f"⚠️ {unresolved} of {len(rows)} points unresolved")
    if escaped:
        status(f"❌ {escaped} Sigma starts leave Sigma")
        return EXIT_CHECK_FAILED
    status(f"✅ Swept {len(rows)} points")
    return EXIT_OK


def cmd_sigma(args, settings):
    p = three_worker_params(args)
    if args.samples < 1:
        raise ConfigError("--samples must be >= 1")
    report = sigma_invariance_check(p, args.samples, args.seed)

    if args.format == "csv":
        frame = pd.DataFrame([
            {"x": format_rational(s[0]), "y": format_rational(s[1]),
             "fx": format_rational(fs[0]), "fy": format_rational(fs[1]), "image_in_sigma": inside}
            for s, fs, inside in report.samples
        ])
        emit(frame.to_csv(index=False), args.out)
    else:
        emit_json(report.to_dict(), args.out)

    for relation in report.relations:
        status(f"{'✅' if relation.holds else '❌'} {relation.name}")
    if not report.passed:
        status(f"❌ Sigma check failed: {report.violations} of {len(report.samples)} samples escape")
        return EXIT_CHECK_FAILED
    status(f"✅ Sigma invariant on {len(report.samples)} samples")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fixed-point": cmd_fixed_point,
    "classify": cmd_classify,
    "cycle": cmd_cycle,
    "sweep": cmd_sweep,
    "sigma": cmd_sigma,
}


# ============================================================================
# ENTRY POINT
# ============================================================================

def main(argv=None):
    try:
        settings = load_settings()
    except ConfigError as e:
        print(json.dumps(error_record(str(e))), file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=settings.log_level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    args = build_parser(settings).parse_args(argv)
    try:
        return COMMANDS[args.command](args, settings)
    except CertificationError as e:
        print(json.dumps(error_record(str(e))), file=sys.stderr)
        status(f"❌ Certification failed: {e}")
        return EXIT_CHECK_FAILED
    except (BrigadeError, ZeroDivisionError, OSError) as e:
        print(json.dumps(error_record(str(e))), file=sys.stderr)
        status(f"❌ {type(e).__name__}: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
