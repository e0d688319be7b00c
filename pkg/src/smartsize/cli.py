"""Command-line front end: ``smartsize {size,simulate,analyze,power}``.

Each subcommand reads an optional JSON config (``--config``); explicit flags
override it, and ``--print-config`` shows the fully resolved document, which
can be fed back through ``--config`` to repeat the run.

Exit codes: 0 success, 2 invalid input, 3 infeasible generative spec,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import Structure
from .data import TrialDataset
from .design import EmbeddedDtr, SmartDesign, check_dtr
from .estimator import fit, wald_test
from .mean_model import MeanModelSpec, eos_contrast, extreme_dtrs
from .power import (CSV_COLUMNS, PowerScenario, Violation, rows_to_csv, run_manifest, run_power,
                    scenario_row, table4_suite, table4_scenarios)
from .sample_size import SizingInputs, required_n, required_n_sharp_design2
from .simulator import GenerativeSpec, InfeasibleSpecError, generate

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

DEFAULTS = {
    "size": {"design": None, "delta": None, "rho": 0.0, "r_plus": 0.0, "r_minus": 0.0,
             "alpha": 0.05, "beta": 0.2, "sharp": False},
    "simulate": {"design": None, "delta": None, "rho": 0.0, "r_plus": 0.0, "r_minus": 0.0,
                 "violation": "none", "spec": None, "n": None, "seed": 0, "out": None},
    "analyze": {"data": None, "design": None, "t_star": None, "structure": "exchangeable",
                "contrast": None, "tol": 1e-8, "max_iter": 100},
    "power": {"design": None, "delta": None, "rho": 0.0, "rho_assumed": None, "r_plus": 0.0,
              "r_minus": 0.0, "violation": "none", "n": None, "alpha": 0.05, "beta": 0.2,
              "reps": 2000, "seed": 0, "threads": 1, "table4": False, "violations": ["none"],
              "out": None},
}
REQUIRED = {"size": ("design", "delta"), "simulate": ("n",), "analyze": ("data", "design"),
            "power": ()}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p, *names):
    S = argparse.SUPPRESS
    flags = {
        "design": (("--design",), dict(choices=["I", "II", "III"], default=S)),
        "delta": (("--delta",), dict(type=float, default=S, help="standardized effect size")),
        "rho": (("--rho",), dict(type=float, default=S, help="within-person correlation")),
        "r_plus": (("--r1",), dict(type=float, dest="r_plus", default=S, help="response rate, a1=1")),
        "r_minus": (("--r-1",), dict(type=float, dest="r_minus", default=S, help="response rate, a1=-1")),
        "alpha": (("--alpha",), dict(type=float, default=S)),
        "beta": (("--beta",), dict(type=float, default=S)),
        "n": (("--n",), dict(type=int, default=S)),
        "seed": (("--seed",), dict(type=int, default=S)),
        "out": (("--out",), dict(default=S, metavar="PATH")),
        "violation": (("--violation",), dict(choices=[v.value for v in Violation], default=S)),
    }
    for name in names:
        args, kw = flags[name]
        p.add_argument(*args, **kw)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="smartsize", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"smartsize {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def new(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=Path, default=None, help="JSON config; flags override it")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        return p

    p = new("size", "minimum sample size for an end-of-study regimen comparison")
    _add_common(p, "design", "delta", "rho", "r_plus", "r_minus", "alpha", "beta")
    p.add_argument("--sharp", action="store_true", default=S, help="also report the design II sharp size")

    p = new("simulate", "simulate a trial and write long-format CSV")
    _add_common(p, "design", "delta", "rho", "r_plus", "r_minus", "violation", "n", "seed", "out")
    p.add_argument("--spec", default=S, metavar="PATH", help="generative spec JSON (overrides the canonical one)")

    p = new("analyze", "fit the marginal model to a long-format CSV")
    p.add_argument("data", nargs="?", default=S)
    _add_common(p, "design")
    p.add_argument("--t-star", type=float, dest="t_star", default=S, help="second randomization time")
    p.add_argument("--structure", choices=[s.value for s in Structure], default=S)
    p.add_argument("--contrast", nargs=2, metavar="DTR", default=S,
                   help="two regimens written a1,a2R,a2NR (default: the all-1 and all--1 regimens)")
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--max-iter", type=int, dest="max_iter", default=S)

    p = new("power", "Monte Carlo power of the Wald test")
    _add_common(p, "design", "delta", "rho", "r_plus", "r_minus", "violation", "alpha", "beta", "n",
                "seed", "out")
    p.add_argument("--rho-assumed", type=float, dest="rho_assumed", default=S,
                   help="correlation used for sizing (default: --rho)")
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--threads", type=int, default=S)
    p.add_argument("--table4", action="store_true", default=S, help="run the 48-cell reference grid")
    p.add_argument("--violations", nargs="+", choices=[v.value for v in Violation], default=S,
                   help="violation columns for --table4")
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config is not None:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(doc) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(doc)
    skip = {"command", "config", "print_config"}
    cfg.update({k: v for k, v in vars(args).items() if k not in skip})
    if command == "analyze" and cfg["contrast"] is not None:
        cfg["contrast"] = [str(c) for c in cfg["contrast"]]
    return cfg


def _require(command, cfg):
    if command == "simulate" and cfg["spec"] is None and cfg["design"] is None:
        raise UsageError("simulate needs --design (or --spec)")
    if command == "power" and not cfg["table4"]:
        for key in ("design", "delta"):
            if cfg[key] is None:
                raise UsageError(f"power needs --{key} unless --table4 is given")
    for key in REQUIRED[command]:
        if cfg[key] is None:
            raise UsageError(f"missing required value: {key.replace('_', '-')}")


def _emit(text: str, out, stdout) -> None:
    if out:
        Path(out).write_text(text)
    else:
        stdout.write(text)


def cmd_size(cfg, stdout) -> int:
    inputs = SizingInputs(SmartDesign(cfg["design"]), cfg["delta"], cfg["rho"], cfg["alpha"],
                          cfg["beta"], cfg["r_plus"], cfg["r_minus"])
    res = required_n(inputs)
    lines = [
        f"design              {inputs.design.kind.value}",
        f"n                   {res.n}",
        f"n (unrounded)       {res.n_exact:.4f}",
        f"two-arm size        {res.two_arm_n:.4f}",
        f"correlation factor  {res.correlation_factor:.4f}",
        f"design effect       {res.design_effect:.4f}",
    ]
    if cfg["sharp"] or inputs.design.kind.value == "II":
        if inputs.design.kind.value == "II":
            sharp = required_n_sharp_design2(inputs)
            lines.append(f"n (sharp)           {sharp.n}")
        else:
            lines.append("n (sharp)           not available for this design")
    stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def _generative_spec(cfg) -> GenerativeSpec:
    if cfg["spec"] is not None:
        return GenerativeSpec.from_json(Path(cfg["spec"]).read_text())
    if cfg["delta"] is None:
        raise UsageError("simulate needs --delta when no --spec is given")
    sc = PowerScenario(cfg["design"], cfg["delta"], cfg["r_plus"], cfg["r_minus"], cfg["rho"],
                       violation=cfg["violation"], n=0)
    return sc.generative_spec()


def cmd_simulate(cfg, stdout) -> int:
    if cfg["n"] < 0:
        raise UsageError("n must be non-negative")
    spec = _generative_spec(cfg)
    data = generate(spec, cfg["n"], cfg["seed"])
    _emit(data.to_csv(), cfg["out"], stdout)
    return EXIT_OK


def cmd_analyze(cfg, stdout) -> int:
    data = TrialDataset.from_csv(cfg["data"])
    design = SmartDesign(cfg["design"])
    data.validate(design)
    tp = data.timepoints
    t_star = cfg["t_star"] if cfg["t_star"] is not None else tp[len(tp) // 2]
    spec = MeanModelSpec(design, tp, t_star)
    if cfg["contrast"] is None:
        d1, d2 = extreme_dtrs(design)
    else:
        d1, d2 = (check_dtr(design, EmbeddedDtr.parse(c)) for c in cfg["contrast"])
    if d1 == d2:
        raise UsageError("contrast needs two different regimens")
    c = eos_contrast(spec, d1, d2)
    res = fit(data, design, spec, cfg["structure"], tol=cfg["tol"], max_iter=cfg["max_iter"])
    w = wald_test(res, c)
    lines = [f"n = {data.n}, design {design.kind.value}, structure {res.structure.value}",
             f"iterations = {res.iterations}, converged = {res.converged}",
             "", f"{'param':>6} {'estimate':>12} {'std.err':>12}"]
    for j, (g, s) in enumerate(zip(res.theta_hat, res.std_errors)):
        lines.append(f"{'g' + str(j):>6} {g:12.6f} {s:12.6f}")
    lines += ["", f"end-of-study contrast {d1} vs {d2}",
              f"  estimate {w.estimate:.6f}  se {w.std_error:.6f}  z {w.z:.4f}  p {w.p_value:.4g}"]
    stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_power(cfg, stdout) -> int:
    if cfg["reps"] < 1:
        raise UsageError("reps must be at least 1")
    if cfg["threads"] < 1:
        raise UsageError("threads must be at least 1")
    if cfg["table4"]:
        violations = [Violation(v) for v in cfg["violations"]]
        rows = table4_suite(reps=cfg["reps"], seed=cfg["seed"], violations=violations,
                            threads=cfg["threads"])
        scenarios = table4_scenarios(violations=violations)
    else:
        sc = PowerScenario(cfg["design"], cfg["delta"], cfg["r_plus"], cfg["r_minus"], cfg["rho"],
                           cfg["rho_assumed"], cfg["violation"], cfg["n"], cfg["alpha"], cfg["beta"])
        est = run_power(sc, cfg["reps"], seed=cfg["seed"], threads=cfg["threads"])
        rows, scenarios = [scenario_row(sc, est, cfg["reps"])], [sc]
    _emit(rows_to_csv(rows, CSV_COLUMNS), cfg["out"], stdout)
    if cfg["out"]:
        Path(str(cfg["out"]) + ".manifest.json").write_text(
            run_manifest(scenarios, cfg["seed"], cfg["reps"]) + "\n")
    return EXIT_OK


COMMANDS = {"size": cmd_size, "simulate": cmd_simulate, "analyze": cmd_analyze, "power": cmd_power}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args.command, args)
        if args.print_config:
            stdout.write(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
            return EXIT_OK
        _require(args.command, cfg)
        return COMMANDS[args.command](cfg, stdout)
    except InfeasibleSpecError as exc:
        stderr.write(f"infeasible spec: {exc}\n")
        return EXIT_INFEASIBLE
    except np.linalg.LinAlgError as exc:
        stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError, OSError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
