"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error. Every command that takes
``--out`` writes only inside that directory and leaves exactly one
``manifest.json`` there.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import re
import sys
from pathlib import Path

from . import GPS_L1_HZ, __version__, rfdesign
from .errors import DataError
from .geodesy import EcefPoint
from .measurements import (
    convert_raw_log,
    parse_measurement_csv,
    serialize_measurements,
    write_raw_log,
)
from .report import report, serialize_cdf, serialize_errors
from .simulator import generate, load_scenario, serialize_truth, with_seed
from .solver_abs import (
    PositionSolution,
    SolveOptions,
    TagConfig,
    estimate_tag_delays,
    solve_epochs,
)
from .solver_diff import (
    FloorPlanConstraint,
    SolveOptions as DiffOptions,
    apply_floor_plan,
    build_phase_pairs,
    recover_position,
    solve_by_epoch,
)
from .tagdetect import detect_measurements

log = logging.getLogger("mirrorfix")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SEED_ENV = "MIRRORFIX_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- helpers ---------------------------------------------------------------


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(out: Path, name: str, text: str) -> Path:
    p = out / name
    p.write_bytes(text.encode("utf-8"))
    return p


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n"


def _manifest(out: Path, command: str, args, inputs, outputs) -> None:
    config = {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in ("func", "command", "out") and not callable(v)
    }
    manifest = {
        "command": command,
        "tool_version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "config": config,
        "outputs": sorted(str(p.relative_to(out)) for p in outputs),
    }
    _write(out, "manifest.json", _json(manifest))


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _vec(text: str, n: int) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers") from None
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
    return vals


def _complex(text: str) -> complex:
    re_, im = _vec(text, 2)
    return complex(re_, im)


def _point(text: str) -> EcefPoint:
    return EcefPoint(*_vec(text, 3))


def _ts(text: str):
    if text in ("estimate", "pairs"):
        return text
    if text.startswith("known:"):
        try:
            return float(text[6:])
        except ValueError:
            pass
    raise argparse.ArgumentTypeError("expected known:<seconds>, estimate or pairs")


# -- subcommands -----------------------------------------------------------


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    seed = os.environ.get(SEED_ENV)
    if seed is not None:
        scenario = with_seed(scenario, int(seed))
    mset, truth = generate(scenario)
    out = _out_dir(args.out)
    outputs = [
        _write(out, "measurements.csv", serialize_measurements(mset)),
        _write(out, "truth.csv", serialize_truth(truth, list(scenario.satellites))),
    ]
    if args.raw_log:
        write_raw_log(mset, out / "raw_log.csv")
        outputs.append(out / "raw_log.csv")
    args.seed_used = scenario.seed
    _manifest(out, "simulate", args, [args.scenario], outputs)
    return EXIT_OK


def cmd_convert(args) -> int:
    conv = convert_raw_log(args.raw, args.clock_model)
    out = _out_dir(args.out)
    outputs = [
        _write(out, "measurements.csv", serialize_measurements(conv.measurements)),
        _write(
            out,
            "skipped.json",
            _json([{"line": s.line_no, "reason": s.reason} for s in conv.skipped]),
        ),
    ]
    _manifest(out, "convert", args, [args.raw], outputs)
    for s in conv.skipped:
        log.warning("line %d skipped: %s", s.line_no, s.reason)
    return EXIT_OK


def cmd_detect(args) -> int:
    mset = parse_measurement_csv(args.measurements)
    labeled, results = detect_measurements(
        mset, args.period_ms, args.duty, args.threshold_db, args.score_min
    )
    out = _out_dir(args.out)
    outputs = [
        _write(out, "detection.json", _json({str(k): v.to_dict() for k, v in results.items()})),
        _write(out, "labeled.csv", serialize_measurements(labeled)),
    ]
    _manifest(out, "detect", args, [args.measurements], outputs)
    return EXIT_OK


def _trajectory_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch_ms", "x", "y", "z", "t_b1", "t_b2", "residual_rms", "dop"])
    for epoch, sol in rows:
        w.writerow(
            [epoch]
            + [repr(v) for v in sol.position.to_list()]
            + [repr(sol.clock_bias_direct), repr(sol.clock_bias_scattered)]
            + [repr(sol.residual_rms), repr(sol.dop)]
        )
    return buf.getvalue()


def cmd_solve_abs(args) -> int:
    mset = parse_measurement_csv(args.measurements)
    scenario = load_scenario(args.scenario)
    constellation = scenario.satellites
    tag_pos = scenario.tag.position
    opts = SolveOptions(
        tol=args.tol,
        max_iter=args.max_iter,
        estimate_ts=args.ts == "estimate",
        warm_start=args.warm_start,
    )
    if args.ts == "estimate":
        tag = TagConfig(tag_pos)
    elif args.ts == "pairs":
        tag = estimate_tag_delays(mset, constellation, tag_pos, args.pair_window_ms)
    else:
        tag = TagConfig(tag_pos, args.ts, True)
    results = solve_epochs(mset, constellation, tag, opts)
    out = _out_dir(args.out)
    doc = []
    good = []
    for epoch, res in results:
        if isinstance(res, PositionSolution):
            doc.append({"epoch_ms": epoch, **res.to_dict()})
            good.append((epoch, res))
        else:
            doc.append({"epoch_ms": epoch, "error": type(res).__name__, "detail": str(res)})
    outputs = [
        _write(out, "solutions.json", _json(doc)),
        _write(out, "trajectory.csv", _trajectory_csv(good)),
    ]
    _manifest(out, "solve-abs", args, [args.measurements, args.scenario], outputs)
    return EXIT_OK


def _load_floor_plan(path, origin: EcefPoint) -> FloorPlanConstraint:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return FloorPlanConstraint(
            origin,
            tuple(tuple(v) for v in d["polygon_enu"]),
            tuple(d.get("height_m", (-math.inf, math.inf))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad floor plan: {exc}") from None


def cmd_solve_diff(args) -> int:
    mset = parse_measurement_csv(args.measurements)
    scenario = load_scenario(args.scenario)
    tag = scenario.tag.position
    plan = _load_floor_plan(args.floor_plan, tag) if args.floor_plan else None
    pairs = build_phase_pairs(mset, scenario.satellites, tag, args.window_ms, args.mode)
    results = solve_by_epoch(
        pairs, tuple(args.b_init), DiffOptions(args.tol, args.max_iter), group_ms=args.batch_ms
    )
    out = _out_dir(args.out)
    doc, rows = [], []
    for epoch, res in results:
        if isinstance(res, DataError):
            doc.append({"epoch_ms": epoch, "error": type(res).__name__, "detail": str(res)})
            continue
        entry = {"epoch_ms": epoch, **res.to_dict()}
        if plan is not None:
            verdict = apply_floor_plan(res, plan)
            entry["floor_plan"] = {"accepted": verdict.accepted, "reason": verdict.reason}
            if not verdict.accepted:
                doc.append(entry)
                continue
        pos = recover_position(tag, res)
        entry["position"] = pos.to_list()
        doc.append(entry)
        rows.append([epoch] + [repr(v) for v in pos.to_list()] + [repr(float(v)) for v in res.b])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch_ms", "x", "y", "z", "b_x", "b_y", "b_z"])
    w.writerows(rows)
    outputs = [_write(out, "solutions.json", _json(doc)), _write(out, "positions.csv", buf.getvalue())]
    inputs = [args.measurements, args.scenario] + ([args.floor_plan] if args.floor_plan else [])
    _manifest(out, "solve-diff", args, inputs, outputs)
    return EXIT_OK


def cmd_report(args) -> int:
    rep = report(args.solutions, args.truth)
    out = _out_dir(args.out)
    outputs = [
        _write(out, "errors.csv", serialize_errors(rep)),
        _write(out, "cdf.csv", serialize_cdf(rep)),
        _write(out, "summary.json", _json(rep.summary())),
    ]
    _manifest(out, "report", args, [args.solutions, args.truth], outputs)
    print(_json(rep.summary()), end="")
    return EXIT_OK


def _diode(args) -> rfdesign.DiodeModel:
    return rfdesign.DiodeModel(
        c_j=args.cj, c_p=args.cp, l_p=args.lp, r=args.r, k_a=args.ka, f_r0=getattr(args, "fr0", None)
    )


def cmd_rf(args) -> int:
    kind = args.rf_command
    if kind == "gamma":
        g = rfdesign.reflection_coefficient(args.zl, args.za)
        res = {
            "gamma_re": g.real,
            "gamma_im": g.imag,
            "gamma_abs": abs(g),
            "gain_linear": abs(g) ** 2,
            "gain_db": rfdesign.reflection_gain_db(args.zl, args.za),
        }
    elif kind == "resonance":
        if (args.l is None) == (args.f is None):
            raise UsageError("rf resonance: give exactly one of --l or --f")
        if args.l is not None:
            res = {"f_c_hz": rfdesign.resonant_frequency(args.l, args.c), "l_h": args.l, "c_f": args.c}
        else:
            res = {"l_h": rfdesign.solve_inductance(args.f, args.c), "f_c_hz": args.f, "c_f": args.c}
    elif kind == "q":
        c = args.c if args.c is not None else rfdesign.solve_inductance(args.f, args.l)
        res = {"q": rfdesign.quality_factor(rfdesign.ResonatorSpec(args.l, c, args.r))}
    elif kind == "ceq":
        c = rfdesign.equivalent_parallel_capacitance(_diode(args), args.rnr, args.f)
        res = {"c_eq_f": c, "l_resonant_h": rfdesign.solve_inductance(args.f, c)}
    elif kind == "nf":
        nf = rfdesign.noise_figure(_diode(args), args.rnr, args.f)
        res = {"nf_linear": nf, "nf_db": 10.0 * math.log10(nf)}
    else:  # bias-scan
        samples = rfdesign.read_iv_csv(args.iv)
        diode = rfdesign.DiodeModel(
            c_j=args.cj, c_p=args.cp, l_p=args.lp, r=args.r, k_a=args.ka, f_r0=args.fr0,
            iv_samples=tuple(samples), fit_degree=args.degree,
        )
        fit = rfdesign.fit_iv_curve(samples, args.degree)
        lo = args.lo if args.lo is not None else fit.domain[0]
        hi = args.hi if args.hi is not None else fit.domain[1]
        bias, nf = rfdesign.minimize_noise_figure(diode, (lo, hi), args.f, args.step, fit)
        res = {
            "bias_v": bias,
            "nf_linear": nf,
            "nf_db": 10.0 * math.log10(nf),
            "r_nr_ohm": rfdesign.negative_resistance(fit, bias),
            "fit_residual_rms_a": fit.residual_rms,
        }
    print(_json(res), end="")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def _diode_flags(p, with_fr0: bool) -> None:
    p.add_argument("--cj", type=float, default=0.1e-12, help="junction capacitance [F]")
    p.add_argument("--cp", type=float, default=0.3e-12, help="package capacitance [F]")
    p.add_argument("--lp", type=float, default=1.2e-9, help="package inductance [H]")
    p.add_argument("--r", type=float, default=6.0, help="series resistance [ohm]")
    p.add_argument("--ka", type=float, default=1.2, help="noise factor K_a")
    if with_fr0:
        p.add_argument("--fr0", type=float, required=True, help="diode cutoff frequency [Hz]")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mirrorfix", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mirrorfix {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate measurements and truth from a scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--raw-log", action="store_true", help="also write the raw-log subset")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("convert", help="raw smartphone log to canonical CSV")
    s.add_argument("--raw", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--clock-model", choices=["simple"], default="simple")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("detect", help="find tag ON-OFF keying and label rows")
    s.add_argument("--measurements", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--period-ms", type=float, default=20_000.0)
    s.add_argument("--duty", type=float, default=0.5)
    s.add_argument("--threshold-db", type=float, default=3.0)
    s.add_argument("--score-min", type=float, default=0.6)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("solve-abs", help="virtual-satellite absolute positioning")
    s.add_argument("--measurements", required=True)
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ts", type=_ts, default="estimate", help="known:<sec> | estimate | pairs")
    s.add_argument("--pair-window-ms", type=float, default=40_000.0)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--max-iter", type=int, default=50)
    s.add_argument("--warm-start", type=_point, default=None, help="x,y,z initial position")
    s.set_defaults(func=cmd_solve_abs)

    s = sub.add_parser("solve-diff", help="tag-differential base-vector positioning")
    s.add_argument("--measurements", required=True)
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--floor-plan", default=None)
    s.add_argument("--mode", choices=["phase", "pseudorange", "auto"], default="phase")
    s.add_argument("--window-ms", type=float, default=2_000.0)
    s.add_argument("--batch-ms", type=int, default=0, help="solve pairs in batches of this span")
    s.add_argument("--b-init", type=lambda t: _vec(t, 3), default=[1.0, 1.0, 1.0])
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--max-iter", type=int, default=50)
    s.set_defaults(func=cmd_solve_diff)

    s = sub.add_parser("report", help="error table and CDF against truth")
    s.add_argument("--solutions", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)

    rf = sub.add_parser("rf", help="reflection amplifier calculator (JSON to stdout)")
    rsub = rf.add_subparsers(dest="rf_command", required=True, parser_class=_Parser)
    r = rsub.add_parser("gamma")
    r.add_argument("--zl", type=_complex, required=True, help="load impedance re,im [ohm]")
    r.add_argument("--za", type=_complex, default=complex(50.0, 0.0), help="antenna impedance re,im")
    r = rsub.add_parser("resonance")
    r.add_argument("--c", type=float, required=True)
    r.add_argument("--l", type=float)
    r.add_argument("--f", type=float)
    r = rsub.add_parser("q")
    r.add_argument("--l", type=float, required=True)
    r.add_argument("--r", type=float, required=True)
    r.add_argument("--c", type=float)
    r.add_argument("--f", type=float)
    r = rsub.add_parser("ceq")
    r.add_argument("--rnr", type=float, default=-650.0)
    r.add_argument("--f", type=float, default=GPS_L1_HZ)
    _diode_flags(r, with_fr0=False)
    r = rsub.add_parser("nf")
    r.add_argument("--rnr", type=float, required=True)
    r.add_argument("--f", type=float, default=GPS_L1_HZ)
    _diode_flags(r, with_fr0=True)
    r = rsub.add_parser("bias-scan")
    r.add_argument("--iv", required=True, help="CSV with header bias_v,current_a")
    r.add_argument("--f", type=float, default=GPS_L1_HZ)
    r.add_argument("--degree", type=int, default=9)
    r.add_argument("--lo", type=float)
    r.add_argument("--hi", type=float)
    r.add_argument("--step", type=float, default=1e-3)
    _diode_flags(r, with_fr0=True)
    rf.set_defaults(func=cmd_rf)
    return p


SCHEMA_HINT = (
    "canonical CSV header: epoch_ms,svid,cn0_dbhz,pseudorange_m,adr_m,adr_valid,scattered\n"
    "scenario JSON: {\"schema\": 1, \"satellites\": [...], \"tag\": {...}, \"receiver\": {...}}\n"
    "see docs/cli.md and docs/formats.md"
)


_NEGATIVE_VALUE = re.compile(r"^-\.?\d[\d.,eE+-]*$")


def _attach_negative_values(argv: list[str]) -> list[str]:
    """Rewrite ``--zl -650,0`` as ``--zl=-650,0`` so argparse keeps the value."""
    out: list[str] = []
    for tok in argv:
        prev = out[-1] if out else ""
        if _NEGATIVE_VALUE.match(tok) and prev.startswith("--") and "=" not in prev:
            out[-1] = f"{prev}={tok}"
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _attach_negative_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
        )
        if args.command == "rf" and args.rf_command == "q" and args.c is None and args.f is None:
            raise UsageError("rf q: give --c or --f")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        print(SCHEMA_HINT, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"mirrorfix: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"mirrorfix: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
