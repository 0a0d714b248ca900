"""Command-line front end.

    mpvc classify   PROBLEM --point 0,0
    mpvc certify    PROBLEM --point 0,0 --kind m
    mpvc check-cq   PROBLEM --point 0,0 --cq all
    mpvc solve      PROBLEM --anchor 0,0 --x0 0.5,0.5
    mpvc errorbound PROBLEM --center 0,-1 --radius 1 --samples 200

PROBLEM is a path to a problem file or a registry name (P1..P4).
Exit codes: 0 completed, 2 usage or parse error, 3 numerical failure,
4 infeasible point where feasibility is required.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys

import numpy as np

from . import __version__
from . import cq as cqm
from . import errorbound as ebm
from . import penalty as pn
from . import stationarity as st
from .expr import DomainError, ParseError, parse_problem
from .linalg import IterationLimit
from .model import DEFAULT_TOL_ACT, REGISTRY_TEXT, InfeasiblePointError, is_feasible, partition_indices, registry

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 2, 3, 4
TOOL = "mpvc"
CQ_CHOICES = {
    "licq": "LICQ",
    "mfcq": "MFCQ",
    "gmfcq": "GMFCQ",
    "pseudo": "Pseudonormality",
    "quasi": "Quasinormality",
    "cpld": "CPLD",
    "linear": "LinearCQ",
}
KIND_CHOICES = ("w", "m", "s", "fj-m", "fj-s", "enh-m", "enh-s")
POINT_FLAGS = ("--point", "--anchor", "--x0", "--center")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _point(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError(f"point coordinates must be finite: {text!r}")
    return vals


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text!r}")
    return v


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand."""
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--json", action="store_true", default=d(False), help="emit the JSON report")
    p.add_argument("--tol-act", type=_positive, default=d(DEFAULT_TOL_ACT), help="activity tolerance")
    p.add_argument("--seed", type=int, default=d(0), help="seed for every sampler")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=TOOL, description="Stationarity, constraint qualification and penalty tools for vanishing constraints.", parents=[_global_flags(False)])
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = [_global_flags(True)]

    p = sub.add_parser("classify", parents=common, help="index partition and feasibility")
    p.add_argument("problem")
    p.add_argument("--point", type=_point, required=True)

    p = sub.add_parser("certify", parents=common, help="certify a stationarity kind")
    p.add_argument("problem")
    p.add_argument("--point", type=_point, required=True)
    p.add_argument("--kind", choices=KIND_CHOICES, required=True)

    p = sub.add_parser("check-cq", parents=common, help="constraint qualification verdicts")
    p.add_argument("problem")
    p.add_argument("--point", type=_point, required=True)
    p.add_argument("--cq", choices=("all", *CQ_CHOICES), default="all")

    p = sub.add_parser("solve", parents=common, help="penalty scheme with multiplier recovery")
    p.add_argument("problem")
    p.add_argument("--anchor", type=_point, required=True)
    p.add_argument("--x0", type=_point, required=True)
    p.add_argument("--radius", type=_positive, default=1.0)
    p.add_argument("--kmax", type=_positive, default=pn.DEFAULT_SCHEDULE[-1])
    p.add_argument("--inner", choices=pn.INNER_METHODS, default="reduced")
    p.add_argument("--csv", metavar="FILE", help="write per-k rows to FILE")

    p = sub.add_parser("errorbound", parents=common, help="empirical error-bound modulus")
    p.add_argument("problem")
    p.add_argument("--center", type=_point, required=True)
    p.add_argument("--radius", type=_positive, default=1.0, help="delta; samples are drawn in B(center, delta/2)")
    p.add_argument("--samples", type=_count, default=200)
    p.add_argument("--method", choices=ebm.METHODS, default="grid")
    p.add_argument("--csv", metavar="FILE", help="write per-sample rows to FILE")
    return parser


def load_problem(ref: str):
    """A registry name, unless a file of that name exists."""
    if ref in REGISTRY_TEXT and not os.path.exists(ref):
        return registry(ref)
    try:
        with open(ref, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise UsageError(f"cannot read problem file {ref!r}: {err.strerror}") from None
    return parse_problem(text)


def _check_dim(prob, name: str, vec) -> np.ndarray:
    if len(vec) != prob.n:
        raise UsageError(f"--{name} has {len(vec)} coordinates, the problem has {prob.n} variables")
    return np.asarray(vec, dtype=float)


# --------------------------------------------------------------------------
# commands


def _classify(args, prob, warnings):
    x = _check_dim(prob, "point", args.point)
    part = partition_indices(prob, x, args.tol_act)
    warnings.extend(part.warnings)
    return {"feasible": is_feasible(prob, x, args.tol_act), "partition": part.as_dict()}


def _certify(args, prob, warnings):
    x = _check_dim(prob, "point", args.point)
    kind = st.StationarityKind.parse(args.kind)
    out = st.certify(prob, x, kind, tol_act=args.tol_act, seed=args.seed)
    if out is None:
        return {"kind": kind.value, "status": "None", "certificate": None}
    if isinstance(out, st.Unknown):
        return {"kind": kind.value, "status": "Unknown", "certificate": None, "reason": out.reason}
    warnings.extend(out.diagnostics.get("warnings", []))
    cert = out.to_dict()
    cert.pop("diagnostics", None)
    return {
        "kind": kind.value,
        "status": "Certified",
        "certificate": cert,
        "verified": st.verify_certificate(prob, x, out, tol_act=args.tol_act),
    }


def _single_cq(prob, x, name, args) -> cqm.CqVerdict:
    if name == "LICQ":
        return cqm.check_licq(prob, x, tol_act=args.tol_act)
    if name == "MFCQ":
        return cqm.check_mfcq(prob, x, tol_act=args.tol_act)
    if name == "GMFCQ":
        return cqm.check_gmfcq(prob, x, tol_act=args.tol_act)
    if name == "CPLD":
        return cqm.check_cpld(prob, x, seed=args.seed, tol_act=args.tol_act)
    structural = cqm.detect_structural(prob)
    if name == "LinearCQ":
        return structural.linear_cq
    pre = structural.pseudonormality if name == "Pseudonormality" else structural.quasinormality
    return pre if pre is not None else cqm.check_sequential_cq(prob, x, name, seed=args.seed, tol_act=args.tol_act)


def _check_cq(args, prob, warnings):
    x = _check_dim(prob, "point", args.point)
    part = partition_indices(prob, x, args.tol_act)
    warnings.extend(part.warnings)
    if args.cq == "all":
        verdicts = cqm.check_all(prob, x, seed=args.seed, tol_act=args.tol_act)
    else:
        verdicts = [_single_cq(prob, x, CQ_CHOICES[args.cq], args)]
    rows = []
    for v in verdicts:
        d = v.to_dict()
        if v.fails:
            d["reverified"] = cqm.verify_verdict(prob, x, v, tol_act=args.tol_act)
        rows.append(d)
    return {"verdicts": rows}


def _solve(args, prob, warnings):
    anchor = _check_dim(prob, "anchor", args.anchor)
    x0 = _check_dim(prob, "x0", args.x0)
    schedule = tuple(k for k in pn.DEFAULT_SCHEDULE if k <= args.kmax) or (args.kmax,)
    cfg = pn.PenaltyConfig(tuple(anchor), radius=args.radius, schedule=schedule, inner=args.inner, seed=args.seed)
    if not is_feasible(prob, anchor, args.tol_act):
        warnings.append("anchor is infeasible; convergence to the anchor is not expected")
    trace = pn.solve_penalty(prob, cfg, x0)
    for s in trace.steps:
        if s.status is not pn.InnerStatus.CONVERGED:
            warnings.append(f"k={s.k:g}: inner solver {s.status.value} (residual {s.residual:.3g})")
        if s.ball_active:
            warnings.append(f"k={s.k:g}: ball constraint was active; multipliers not interpreted")
    out = {"trace": trace.to_dict()}
    if is_feasible(prob, anchor, args.tol_act):
        out["limit_check"] = pn.limit_fj_check(prob, anchor, trace.limit, tol_act=args.tol_act)
        out["enhanced"] = pn.verify_enhanced_on_trace(prob, anchor, trace.limit, trace).to_dict()
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(trace.to_csv())
    return out


def _errorbound(args, prob, warnings):
    center = _check_dim(prob, "center", args.center)
    rep = ebm.estimate_modulus(prob, center, args.radius, args.samples, args.seed, args.method)
    if rep.vacuous:
        warnings.append("no infeasible sample with positive residual; the modulus estimate is vacuous")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(rep.to_csv())
    return {"errorbound": rep.to_dict()}


COMMANDS = {
    "classify": _classify,
    "certify": _certify,
    "check-cq": _check_cq,
    "solve": _solve,
    "errorbound": _errorbound,
}


# --------------------------------------------------------------------------
# reporting


def _inputs(args) -> dict:
    skip = {"json", "command", "csv"}
    out = {}
    for key, val in sorted(vars(args).items()):
        if key not in skip:
            out[key.replace("_", "-")] = val
    return out


def _clean(obj):
    """Floats that JSON cannot carry become strings; numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def emit(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True)


def _human(report: dict) -> str:
    lines = [f"{TOOL} {report['command']}  (problem {report['problem_digest'][:12]})"]
    res = report.get("results") or {}
    if "partition" in res:
        lines.append(f"feasible: {res['feasible']}")
        lines += [f"  {k:5s} {v}" for k, v in res["partition"].items()]
    if "certificate" in res:
        lines.append(f"{res['kind']}: {res['status']}")
        if res["certificate"]:
            c = res["certificate"]
            for key in ("alpha", "lambda", "mu", "eta_G", "eta_H"):
                lines.append(f"  {key:7s} {c[key]}")
            lines.append(f"  residual {c['residual']:.3g}")
        elif res.get("reason"):
            lines.append(f"  {res['reason']}")
    if "verdicts" in res:
        for v in res["verdicts"]:
            extra = f" via {', '.join(v['implied_by'])}" if v.get("implied_by") else ""
            lines.append(f"  {v['name']:16s} {v['status']:8s} {v['provenance']}{extra}")
    if "trace" in res:
        lines.append(f"  {'k':>8s}  {'F_k':>14s}  {'|x-x*|':>10s}  {'alpha':>8s}  status")
        anchor = np.array(res["trace"]["anchor"])
        for s in res["trace"]["steps"]:
            dist = float(np.linalg.norm(np.array(s["x"]) - anchor))
            lines.append(f"  {s['k']:8.0e}  {s['F']:14.6e}  {dist:10.3e}  {s['multipliers']['alpha']:8.5f}  {s['status']}")
        lim = res["trace"]["limit_multipliers"]
        if lim:
            lines.append(f"  limit multipliers: lambda={lim['lambda']} mu={lim['mu']} eta_G={lim['eta_G']} eta_H={lim['eta_H']}")
    if "errorbound" in res:
        e = res["errorbound"]
        lines.append(f"  samples {e['samples']} (feasible {e['feasible_samples']}), sup ratio {e['sup_ratio']}")
    for w in report.get("warnings", []):
        lines.append(f"warning: {w}")
    if report.get("error"):
        lines.append(f"error: {report['error']['message']}")
    return "\n".join(lines)


def _join_points(argv: list[str]) -> list[str]:
    """Glue point flags to their value so that "--point -1,0" is not read as an option."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in POINT_FLAGS and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = _join_points(list(sys.argv[1:] if argv is None else argv))
    want_json = "--json" in argv
    report = {
        "tool": TOOL,
        "version": __version__,
        "command": None,
        "problem_digest": None,
        "inputs": {},
        "results": None,
        "warnings": [],
        "error": None,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    code = EXIT_OK
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        report["command"] = args.command
        report["inputs"] = _inputs(args)
        prob = load_problem(args.problem)
        report["problem_digest"] = prob.digest()
        report["results"] = COMMANDS[args.command](args, prob, report["warnings"])
    except (UsageError, ParseError) as err:
        code = EXIT_USAGE
        report["error"] = {"type": type(err).__name__, "message": str(err)}
    except InfeasiblePointError as err:
        code = EXIT_INFEASIBLE
        report["error"] = {"type": type(err).__name__, "message": str(err)}
    except (IterationLimit, pn.NonFiniteValue, DomainError, ebm.NoFeasiblePointFound, st.BranchLimit, FloatingPointError) as err:
        code = EXIT_NUMERIC
        report["error"] = {"type": type(err).__name__, "message": str(err)}
    except cqm.ConsistencyViolation:
        raise
    except ValueError as err:
        code = EXIT_USAGE
        report["error"] = {"type": type(err).__name__, "message": str(err)}
    if report["error"] is not None:
        report["error"]["exit_code"] = code
    if want_json:
        stdout.write(emit(report) + "\n")
    elif report["error"] is not None and report["results"] is None:
        stderr.write(f"{TOOL}: {report['error']['message']}\n")
    else:
        stdout.write(_human(report) + "\n")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
