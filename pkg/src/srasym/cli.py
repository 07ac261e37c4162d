"""Command-line front end.

``srasym <subcommand> --instance <path> [--out <path>] [--format json|csv] [--units nats|bits]``

Every failure prints one ``error: <kind>: <message>`` line to stderr and
exits with status 1.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .core import InstanceError, SourceInstance, hamming, load_instance
from .dispersion import dispersion_curve, dispersion_report
from .gaussian import (
    GAUSSIAN_DISPERSION,
    GaussianInstance,
    achievability_code_sizes as gaussian_code_sizes,
    gaussian_achievability_bound,
    gaussian_mdc,
    gaussian_one_shot_converse,
    gaussian_rd,
    partition_preset,
)
from .normal import MdcQuery, RegionQuery, gaussian_approximation, mdc_constant, second_order_region
from .rd import rd_solve
from .spectrum import (
    DEFAULT_CAP,
    CodeParams,
    TiltedSampler,
    TypeSweepConfig,
    achievability_code_sizes,
    build_spectrum,
    composition_count,
    converse_code_sizes,
    dms_achievability_bound,
    dms_converse_bound,
    one_shot_code_params,
    one_shot_converse,
)
from .sr import sr_solve

SUBCOMMANDS = ("rd", "sr", "dispersion", "region", "mdc", "bounds", "gaussian", "figure1", "figure2")
QUATERNARY = [1 / 3, 1 / 4, 1 / 4, 1 / 6]
FIGURE1_POINTS = 50
FIGURE1_UPPER = 0.74
FIGURE2_LEVELS = (0.5, 0.55, 0.6)
FIGURE2_D2 = 0.3
FIGURE2_EPS = 0.005


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _parser():
    p = _Parser(prog="srasym", description="Successive-refinement rate limits and finite-blocklength bounds.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--instance", help="JSON instance file")
    p.add_argument("--out", help="output file (figure2: output directory)")
    p.add_argument("--format", choices=("json", "csv"), default=None)
    p.add_argument("--units", choices=("nats", "bits"), default=None)
    p.add_argument("--decoder", type=int, choices=(1, 2), default=1, help="rd: which decoder's problem")
    p.add_argument("--R1", type=float, help="first rate; defaults to R_Y(P_X, D1)")
    p.add_argument("--D1", type=float)
    p.add_argument("--D2", type=float)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--case", choices=("i", "ii", "iii"), default="iii")
    p.add_argument("--theta1", type=float, default=1.0)
    p.add_argument("--theta2", type=float, default=1.0)
    p.add_argument("--n", type=int)
    p.add_argument("--L1", type=float, default=0.0)
    p.add_argument("--L2", type=float, default=0.0)
    p.add_argument("--logM1", type=float)
    p.add_argument("--logM1M2", type=float)
    p.add_argument("--mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--query", choices=("rd", "region", "mdc", "bounds"), default="rd", help="gaussian: which quantity")
    return p


def _fmt(x):
    return format(float(x), ".15g")


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _json_text(doc):
    return json.dumps(_jsonable(doc), indent=2) + "\n"


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _scale(units):
    """Multiplier from nats to the requested unit."""
    return 1.0 / math.log(2.0) if units == "bits" else 1.0


def _load(args, required=True):
    if args.instance is None:
        if required:
            raise CliError("--instance is required for this subcommand")
        return None
    inst = load_instance(args.instance)
    if args.D1 is not None or args.D2 is not None:
        inst = inst.with_levels(args.D1, args.D2)
    return inst


def _load_gaussian(path):
    if path is None:
        raise CliError("--instance is required for this subcommand")
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise InstanceError(f"{path}: top-level JSON value must be an object")
    vals = {}
    for key in ("sigma2", "D1", "D2"):
        if key not in doc:
            raise InstanceError(f"{path}: missing field '{key}'")
        v = doc[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InstanceError(f"{path}: field '{key}' is not numeric")
        vals[key] = float(v)
    try:
        return GaussianInstance(**vals)
    except ValueError as exc:
        raise InstanceError(f"{path}: {exc}") from None


def _corner_rate(inst):
    return rd_solve(inst.px.probs, inst.d1.values, inst.D1).rate


def _first_rate(args, inst, k):
    """``--R1`` is given in the output units; solvers work in nats."""
    return _corner_rate(inst) if args.R1 is None else args.R1 / k


def cmd_rd(args, k):
    inst = _load(args)
    d, D = (inst.d1.values, inst.D1) if args.decoder == 1 else (inst.d2.values, inst.D2)
    sol = rd_solve(inst.px.probs, d, D)
    if args.format == "csv":
        return _csv_text(["x", "tilted"], [(i, t * k) for i, t in enumerate(sol.tilted)])
    return _json_text(
        {
            "rate": sol.rate * k,
            "slope": sol.slope * k,
            "test_channel": sol.test_channel,
            "tilted": sol.tilted * k,
        }
    )


def cmd_sr(args, k):
    inst = _load(args)
    sol = sr_solve(inst, _first_rate(args, inst, k))
    doc = sol.to_dict()
    for key in ("value", "R1", "rate_y", "nu1", "nu2"):
        if key in doc and isinstance(doc[key], float):
            doc[key] *= k
    if "tilted_yz" in doc:
        doc["tilted_yz"] = [t * k for t in doc["tilted_yz"]]
    if args.format == "csv":
        if not sol.feasible:
            return _csv_text(["R1", "value"], []) + f"{_fmt(doc['R1'])},infeasible\n"
        return _csv_text(["R1", "value", "lambda", "nu1", "nu2"], [(doc["R1"], doc["value"], doc["lambda"], doc["nu1"], doc["nu2"])])
    return _json_text(doc)


def cmd_dispersion(args, k):
    inst = _load(args)
    rep = dispersion_report(inst, _first_rate(args, inst, k))
    k2 = k * k
    doc = rep.to_dict()
    for key in ("v_d1", "v_d2", "v_joint", "min_eigenvalue"):
        doc[key] *= k2
    doc["matrix"] = (np.asarray(rep.matrix) * k2).tolist()
    doc["t_joint"] = rep.t_joint * k**3
    if args.format == "csv":
        return _csv_text(["v_d1", "v_d2", "v_joint", "rank"], [(doc["v_d1"], doc["v_d2"], doc["v_joint"], rep.rank)])
    return _json_text(doc)


def _region_rows(inst, R1, case_tag, eps, k):
    rep = dispersion_report(inst, R1)
    b = second_order_region(RegionQuery(case_tag, eps, rep, rep.lam))
    return b, [(a * k, c * k) for a, c in b.to_rows()]


def cmd_region(args, k):
    inst = _load(args)
    b, rows = _region_rows(inst, _first_rate(args, inst, k), args.case, args.epsilon, k)
    if args.format == "json":
        corner = None if b.corner is None else [c * k for c in b.corner]
        return _json_text({"case": b.case_tag, "closed_form": b.closed_form, "corner": corner, "points": rows})
    return _csv_text(["L1", "L2"], rows)


def cmd_mdc(args, k):
    inst = _load(args)
    rep = dispersion_report(inst, _first_rate(args, inst, k))
    # theta is in the output units; the constant is dimensionless
    q = MdcQuery(args.theta1 / k, args.theta2 / k, rep, rep.lam)
    nu = mdc_constant(q, args.case)
    if args.format == "csv":
        return _csv_text(["nu_star"], [(nu,)])
    return _json_text({"nu_star": nu, "case": args.case})


def cmd_bounds(args, k):
    inst = _load(args)
    if args.n is None:
        raise CliError("--n is required for bounds")
    n = args.n
    R1 = _first_rate(args, inst, k)
    R2 = sr_solve(inst, R1).value
    if not isinstance(R2, float):
        raise CliError("first rate is infeasible")
    rep = dispersion_report(inst, R1)
    given = args.logM1 is not None or args.logM1M2 is not None
    if given:
        if args.logM1 is None or args.logM1M2 is None:
            raise CliError("--logM1 and --logM1M2 must be given together")
        sizes = (args.logM1 / k, args.logM1M2 / k)
        ach_sizes = con_sizes = sizes
        g = 0.5 * math.log(n)
        cp = CodeParams(n, sizes[0] - g, sizes[1] - g, g, g)
        L1 = (sizes[0] - n * R1) / math.sqrt(n)
        L2 = (sizes[1] - n * R2) / math.sqrt(n)
    else:
        L1, L2 = args.L1 / k, args.L2 / k
        ach_sizes = achievability_code_sizes(inst.shape, n, R1, R2, L1, L2)
        con_sizes = converse_code_sizes(inst, n, L1, L2, R1)
        cp = one_shot_code_params(n, R1, R2, L1, L2)
    cfg = TypeSweepConfig.for_instance(inst, n, *ach_sizes, mode=args.mode, trials=args.trials, seed=args.seed)
    ach = dms_achievability_bound(inst, cfg)
    con = dms_converse_bound(inst, n, *con_sizes, mode=args.mode, trials=args.trials, seed=args.seed)
    if args.mode == "exact" and composition_count(n, int(np.count_nonzero(inst.px.probs))) <= DEFAULT_CAP:
        source = build_spectrum(inst, R1, n)
    else:
        px = inst.px.probs
        jy = rd_solve(px, inst.d1.values, inst.D1).tilted
        source = TiltedSampler(px, jy, sr_solve(inst, R1).tilted_yz, n, args.trials, args.seed)
    one = one_shot_converse(source, cp)
    approx = gaussian_approximation(L1, L2, rep, rep.lam, args.case)
    doc = {
        "achievability": ach.value,
        "converse": con.value,
        "one_shot": one.value,
        "gaussian_approx": approx,
        "diagnostics": {
            "n": n,
            "L1": L1 * k,
            "L2": L2 * k,
            "achievability": ach.to_dict(),
            "converse": con.to_dict(),
            "one_shot": one.to_dict(),
        },
    }
    if args.format == "csv":
        return _csv_text(["achievability", "converse", "one_shot", "gaussian_approx"], [(ach.value, con.value, one.value, approx)])
    return _json_text(doc)


class _GaussianReport:
    """Dispersion report of every regular Gaussian instance."""

    v_d1 = v_d2 = v_joint = GAUSSIAN_DISPERSION
    matrix = np.full((2, 2), GAUSSIAN_DISPERSION)
    lam = 0.0


def cmd_gaussian(args, k):
    g = _load_gaussian(args.instance)
    if args.D1 is not None or args.D2 is not None:
        g = GaussianInstance(g.sigma2, g.D1 if args.D1 is None else args.D1, g.D2 if args.D2 is None else args.D2)
    rep = _GaussianReport()
    if args.query == "rd":
        ry, rz, _, _ = gaussian_rd(g)
        doc = {"R_Y": ry * k, "R_Z": rz * k, "dispersion": GAUSSIAN_DISPERSION * k * k}
    elif args.query == "region":
        g.require_regular()
        b = second_order_region(RegionQuery(args.case, args.epsilon, rep, 0.0))
        rows = [(a * k, c * k) for a, c in b.to_rows()]
        if args.format == "csv":
            return _csv_text(["L1", "L2"], rows)
        corner = None if b.corner is None else [c * k for c in b.corner]
        doc = {"case": b.case_tag, "closed_form": b.closed_form, "corner": corner, "points": rows}
    elif args.query == "mdc":
        g.require_regular()
        doc = {"nu_star": gaussian_mdc(args.theta1 / k, args.theta2 / k, args.case), "case": args.case}
    else:
        if args.n is None:
            raise CliError("--n is required for bounds")
        g.require_regular()
        n = args.n
        part = partition_preset(n)
        ry, rz, _, _ = gaussian_rd(g)
        gam = 0.5 * math.log(n)
        if args.logM1 is not None and args.logM1M2 is not None:
            sizes = (args.logM1 / k, args.logM1M2 / k)
            one_sizes = (sizes[0] - gam, sizes[1] - gam)
            L1 = (sizes[0] - n * ry) / math.sqrt(n)
            L2 = (sizes[1] - n * rz) / math.sqrt(n)
        else:
            L1, L2 = args.L1 / k, args.L2 / k
            sizes = gaussian_code_sizes(g, n, L1, L2, part.xi, part.delta)
            one_sizes = (n * ry + L1 * math.sqrt(n) - gam, n * rz + L2 * math.sqrt(n) - gam)
        ach = gaussian_achievability_bound(g, n, *sizes, part.xi, part.delta)
        one = gaussian_one_shot_converse(g, n, *one_sizes, gam, gam)
        approx = gaussian_approximation(L1, L2, rep, 0.0, args.case)
        doc = {
            "achievability": ach.value,
            "one_shot": one.value,
            "gaussian_approx": approx,
            "diagnostics": {"achievability_raw": ach.raw, "one_shot_raw": one.raw, "vacuous": ach.vacuous, "L1": L1 * k, "L2": L2 * k},
        }
    if args.format == "csv":
        flat = {key: v for key, v in doc.items() if isinstance(v, (int, float)) and not isinstance(v, bool)}
        return _csv_text(list(flat), [tuple(flat.values())])
    return _json_text(doc)


def _quaternary(args, D1=0.3, D2=0.3):
    if args.instance is not None:
        return _load(args)
    return SourceInstance(QUATERNARY, hamming(4), hamming(4), D1, D2)


def figure1_grid():
    """50 interior points of ``(0, 0.74)``."""
    return FIGURE1_UPPER * np.arange(1, FIGURE1_POINTS + 1) / (FIGURE1_POINTS + 1)


def cmd_figure1(args, k):
    inst = _quaternary(args)
    rows = [(D, v * k * k) for D, v in dispersion_curve(inst.px.probs, inst.d1.values, figure1_grid())]
    if args.format == "json":
        return _json_text({"D": [r[0] for r in rows], "V": [r[1] for r in rows]})
    return _csv_text(["D", "V(D)"], rows)


def figure2_boundaries(inst, k):
    """Case-(iii) boundaries at D2 = 0.3 for each first level, in the requested units."""
    out = {}
    for D1 in FIGURE2_LEVELS:
        level = inst.with_levels(D1, FIGURE2_D2)
        b, rows = _region_rows(level, _corner_rate(level), "iii", FIGURE2_EPS, k)
        out[D1] = (b, rows)
    return out


def cmd_figure2(args, k):
    inst = _quaternary(args, FIGURE2_LEVELS[0], FIGURE2_D2)
    outdir = Path(args.out) if args.out else Path(".")
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for D1, (b, rows) in figure2_boundaries(inst, k).items():
        name = f"figure2_D1_{D1:.2f}.csv"
        (outdir / name).write_text(_csv_text(["L1", "L2"], rows))
        manifest[name] = {"D1": D1, "points": len(rows), "corner": None if b.corner is None else [c * k for c in b.corner]}
    return _json_text({"units": args.units, "epsilon": FIGURE2_EPS, "D2": FIGURE2_D2, "files": manifest})


COMMANDS = {
    "rd": cmd_rd,
    "sr": cmd_sr,
    "dispersion": cmd_dispersion,
    "region": cmd_region,
    "mdc": cmd_mdc,
    "bounds": cmd_bounds,
    "gaussian": cmd_gaussian,
    "figure1": cmd_figure1,
    "figure2": cmd_figure2,
}

DEFAULT_FORMAT = {"region": "csv", "figure1": "csv"}


def run(argv=None) -> int:
    # library warnings would break the one-line error contract on stderr
    logging.getLogger("srasym").setLevel(logging.ERROR)
    try:
        args = _parser().parse_args(argv)
        if args.units is None:
            args.units = "bits" if args.subcommand == "figure2" else "nats"
        if args.format is None:
            args.format = DEFAULT_FORMAT.get(args.subcommand, "json")
        text = COMMANDS[args.subcommand](args, _scale(args.units))
        if args.subcommand == "figure2":
            sys.stdout.write(text)
        else:
            _emit(text, args.out)
        return 0
    except Exception as exc:  # every failure becomes one parsable line
        kind = "usage" if isinstance(exc, CliError) else "input" if isinstance(exc, (InstanceError, OSError)) else type(exc).__name__
        msg = " ".join(str(exc).split()) or type(exc).__name__
        sys.stderr.write(f"error: {kind}: {msg}\n")
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
