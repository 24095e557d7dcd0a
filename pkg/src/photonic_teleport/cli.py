"""Command-line entry point: ``photonic-teleport <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import characterization as chz
from . import experiment as exp
from .circuit import LayoutError, load_layout, reference_chip_layout
from .protocol import ProtocolError, bsm_outcomes, fidelity, ideal_corrections, optimal_corrections, prepare_qubit
from .source import SourceModel, SourceModelError
from .tomography import TomographyError, mle_reconstruct, monte_carlo_fidelity, read_records_csv

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _layout(args):
    if args.layout in (None, "reference"):
        return reference_chip_layout()
    return load_layout(args.layout)


def _config(args) -> exp.ExperimentConfig:
    if args.config:
        cfg = exp.load_config(args.config, seed=args.seed)
    else:
        if args.seed is None:
            raise exp.ConfigError("a seed is required (--seed or a config file)")
        cfg = exp.ExperimentConfig(seed=args.seed)
    if args.layout:
        cfg.layout = args.layout
    if args.format:
        cfg.output_format = args.format
    return cfg


def _write(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _matrix(m) -> dict:
    m = np.asarray(m, complex)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def cmd_simulate(args) -> int:
    cfg = _config(args)
    report = exp.run_experiment(cfg)
    if args.out:
        for p in exp.emit_report(report, cfg.output_format, args.out):
            print(p)
    else:
        print(report.to_json())
    return EXIT_OK


def cmd_tomograph(args) -> int:
    records = read_records_csv(args.counts)
    psi = prepare_qubit(*args.input) if args.input else None
    rows = []
    for o in bsm_outcomes():
        recs = [r for r in records if r.outcome_index == o.index]
        if not recs:
            continue
        res = mle_reconstruct(recs, likelihood=args.likelihood)
        row = {"outcome_index": o.index, "outcome": o.label, "rho": _matrix(res.rho),
               "log_likelihood": res.log_likelihood, "iterations": res.iterations}
        if psi is not None:
            U = ideal_corrections()[o.index]
            f, err = monte_carlo_fidelity(recs, psi, U, trials=args.trials,
                                          seed=exp.substream(args.seed or 0, "monte-carlo", o.index))
            row.update(fidelity=fidelity(res.rho, psi, U), fidelity_mc_mean=f, fidelity_error=err)
        rows.append(row)
    if not rows:
        raise TomographyError("no count records found")
    if args.format == "csv":
        lines = ["outcome_index,outcome,rho_00,rho_01_re,rho_01_im,rho_11"]
        for r in rows:
            re, im = np.array(r["rho"]["re"]), np.array(r["rho"]["im"])
            lines.append(f"{r['outcome_index']},{r['outcome']},{re[0, 0]!r},{re[0, 1]!r},{im[0, 1]!r},{re[1, 1]!r}")
        _write("\n".join(lines) + "\n", args.out)
    else:
        _write(json.dumps(rows, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_characterize(args) -> int:
    if args.powers:
        eta = chz.double_ratio_reflectivity(np.reshape(args.powers, (2, 2)))
        _write(json.dumps({"reflectivity": eta}) + "\n", args.out)
        return EXIT_OK
    if not args.sweep:
        raise exp.ConfigError("characterize needs --sweep or --powers")
    model = chz.fit_crosstalk(chz.read_sweep_csv(args.sweep), resistance=args.resistance,
                              neighbor=args.neighbor)
    line = chz.heatercal_line(args.heater, model)
    if args.format == "json":
        _write(json.dumps({"heater": args.heater, "a": model.a, "b": model.b, "c": model.c,
                           "resistance": model.resistance, "neighbor": model.neighbor,
                           "stderr": model.stderr, "residual_rms": model.residual_rms,
                           "layout_line": line}, indent=2) + "\n", args.out)
    else:
        _write(line + "\n", args.out)
    return EXIT_OK


def cmd_corrections(args) -> int:
    if args.config:
        cfg = _config(args)
        layout, source = cfg.load_layout(), cfg.source
        n, seed = cfg.correction_samples, cfg.seed
    else:
        layout, source, n, seed = _layout(args), SourceModel(), args.samples, args.seed or 0
    corr, fids = optimal_corrections(layout, source, n_samples=n,
                                     seed=exp.substream(seed, "haar-samples"))
    out = [{"outcome_index": o.index, "outcome": o.label, "unitary": _matrix(U),
            "average_fidelity": f} for o, U, f in zip(bsm_outcomes(), corr, fids)]
    _write(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_budget(args) -> int:
    if args.config:
        cfg = _config(args)
        layout, seed, eta_seed = cfg.load_layout(perturb=False), cfg.seed, cfg.eta_seed
    else:
        layout, seed, eta_seed = _layout(args), args.seed or 0, 0
    rows = exp.budget_scan(layout, exp.DEFAULT_BUDGET_GRID, eta_spread=args.eta_spread,
                           eta_seed=eta_seed, n_samples=args.samples, seed=seed)
    if args.format == "json":
        _write(json.dumps(rows, indent=2) + "\n", args.out)
    else:
        lines = ["axis,value,average_fidelity"] + [f"{r['axis']},{r['value']!r},{r['average_fidelity']!r}" for r in rows]
        _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    report = exp.load_report(args.report)
    if args.out:
        for p in exp.emit_report(report, args.format or "json", args.out):
            print(p)
        return EXIT_OK
    print(f"{'outcome':8s} {'fidelity':>9s} {'error':>7s} {'model':>7s}")
    for label, v in report.per_outcome.items():
        print(f"{label:8s} {v['fidelity']:9.4f} {v['fidelity_error']:7.4f} {v['predicted_fidelity']:7.4f}")
    o = report.overall
    print(f"{'average':8s} {o['fidelity']:9.4f} {o['fidelity_error']:7.4f} {o['predicted_fidelity']:7.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--layout", help="layout file, or 'reference' for the bundled chip")
    common.add_argument("--config", help="experiment configuration (INI)")
    common.add_argument("--seed", type=int, help="master seed; overrides the config")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"))

    p = argparse.ArgumentParser(prog="photonic-teleport", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the virtual experiment")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("tomograph", parents=[common], help="reconstruct states from a counts CSV")
    s.add_argument("counts")
    s.add_argument("--input", type=float, nargs=2, metavar=("THETA", "PHI"),
                   help="prepared input state, enables fidelities")
    s.add_argument("--likelihood", choices=("poisson", "multinomial"), default="poisson")
    s.add_argument("--trials", type=int, default=200)
    s.set_defaults(func=cmd_tomograph)

    s = sub.add_parser("characterize", parents=[common], help="fit heater cross-talk or coupler reflectivity")
    s.add_argument("--sweep", help="CSV with columns v_self,v_neighbor,power")
    s.add_argument("--heater", default="heater")
    s.add_argument("--neighbor")
    s.add_argument("--resistance", type=float, default=chz.DEFAULT_RESISTANCE)
    s.add_argument("--powers", type=float, nargs=4, metavar=("P00", "P01", "P10", "P11"))
    s.set_defaults(func=cmd_characterize)

    s = sub.add_parser("corrections", parents=[common], help="optimised correction unitaries")
    s.add_argument("--samples", type=int, default=10000)
    s.set_defaults(func=cmd_corrections)

    s = sub.add_parser("budget", parents=[common], help="error-budget scan")
    s.add_argument("--samples", type=int, default=2000)
    s.add_argument("--eta-spread", type=float, default=0.08)
    s.set_defaults(func=cmd_budget)

    s = sub.add_parser("report", parents=[common], help="summarise or convert a JSON report")
    s.add_argument("report")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (exp.ConfigError, LayoutError, SourceModelError, TomographyError,
            chz.CharacterizationError, OSError, KeyError, json.JSONDecodeError, csv.Error) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (ProtocolError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
