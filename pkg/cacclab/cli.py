"""Command line entry point ``cacc-lab``.

::

        cacc-lab simulate --config experiment.edn --sweep a_min --out runs/a_min
        cacc-lab fit --data drive_log.csv --out fit-output
        cacc-lab invariant --config experiment.edn --out families/a_min-6
        cacc-lab report --runs runs/a_min

``simulate`` exits with status 0 only when every run kept the gap, speed and torque bounds.
"""

import argparse
import os
import sys

from . import controller
from . import dynamics
from . import fitting
from . import parameters
from . import powertrain
from . import scenarios
from .src import config as cf
from .src import provenance
from .src.logger import logging

logger = logging.getLogger("cacclab")

EXIT_OK = 0
EXIT_UNSAFE = 1
EXIT_ERROR = 2


def _savings_table(conf):
    section = conf["powertrain"]
    paths = {}
    if section.get("savings_table_fe"):
        paths[powertrain.PowertrainMode.FE] = section["savings_table_fe"]
    if section.get("savings_table_fc"):
        paths[powertrain.PowertrainMode.FC] = section["savings_table_fc"]
    if not paths:
        return None
    return powertrain.SavingsTable.from_csv(paths)


def _print_report(report):
    frame = report.to_frame()
    print(frame.to_string(index=False, float_format=lambda x: f"{x:.2f}"))


def cmd_simulate(args):
    conf = parameters.load_config(args.config)
    mode = powertrain.PowertrainMode.parse(conf["powertrain"]["mode"])
    scenario = scenarios.ScenarioConfig.from_config(conf, sweep=args.sweep)
    logs = scenarios.run(scenario, conf, workers=args.workers)
    runs, baseline = scenarios.split_baseline(logs)

    pt_cfg = powertrain.PowertrainConfig.from_config(conf["powertrain"])
    report = scenarios.energy_report(runs, baseline, pt_cfg, _savings_table(conf), strict=False, mode=mode)
    for row in report.rows:
        if not row.steady:
            logger.warning(f"{row.label}: no steady state, energy columns left empty")

    mpc = controller.MpcConfig.from_config(conf["mpc"])
    violations = []
    for log in runs:
        violations.extend(scenarios.safety_violations(log, mpc))

    out = args.out or os.path.join(os.getcwd(), f"runs-{scenario.sweep}")
    scenarios.export(logs, report, out, conf=conf, diagnostics=args.diagnostics)
    _print_report(report)

    if violations:
        for v in violations:
            logger.error(v)
        return EXIT_UNSAFE
    return EXIT_OK


def cmd_fit(args):
    conf = parameters.load_config(args.config)
    fit_conf = conf["fit"]
    params = dynamics.VehicleParams.from_config(conf["vehicle"])
    samples = fitting.read_drive_log(args.data)
    train, validation = fitting.split(samples, fraction=float(fit_conf["fraction"]), seed=int(fit_conf["seed"]))
    result = fitting.fit(
        train,
        initial_guess=fit_conf["initial_guess"],
        params=params,
        max_nfev=int(fit_conf["max_nfev"]),
        gtol=float(fit_conf["gtol"]),
    )
    if len(validation) >= 2:
        try:
            fitting.validate(result, validation, params)
        except cf.DegenerateResidualError as e:
            logger.warning(f"Validation residuals not normalized: {e}")
    else:
        logger.warning(f"Validation set holds {len(validation)} samples, skipping validation")
    fitting.write_fit_report(result, args.out, params)
    provenance.write_provenance(args.out, "fit", config=conf)
    print(fitting.format_report(result), end="")
    return EXIT_OK


def cmd_invariant(args):
    conf = parameters.load_config(args.config)
    a_min = float(conf["mpc"]["a_min"] if args.a_min is None else args.a_min)
    family = scenarios.terminal_family(conf, a_min)
    family.save(args.out, key=family.key)
    provenance.write_provenance(args.out, "invariant", config=conf)
    print(repr(family))
    return EXIT_OK


def cmd_report(args):
    conf, logs = scenarios.load_runs(args.runs)
    conf = parameters.load_config(overrides=conf) if conf is not None else parameters.default_config()
    mode = powertrain.PowertrainMode.parse(conf["powertrain"]["mode"])
    runs, baseline = scenarios.split_baseline(logs)
    pt_cfg = powertrain.PowertrainConfig.from_config(conf["powertrain"])
    report = scenarios.energy_report(runs, baseline, pt_cfg, _savings_table(conf), strict=False, mode=mode)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.to_csv(os.path.join(args.out, scenarios.REPORT_FILE))
        provenance.write_provenance(args.out, "report", config=conf)
    _print_report(report)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cacc-lab", description="Safe, energy-aware CACC experiments"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {cf.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a closed-loop sweep")
    p.add_argument("--config", default=None, help="experiment configuration (edn)")
    p.add_argument("--sweep", choices=scenarios.SWEEPS, default=None)
    p.add_argument("--out", default=None, help="run directory")
    p.add_argument("--diagnostics", action="store_true", help="write per-step solver status and iterations")
    p.add_argument("--workers", type=int, default=None, help="parallel runs (default WORKERS)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit road load and drag coefficients to a drive log")
    p.add_argument("--data", required=True, help="drive log CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="experiment configuration (edn)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("invariant", help="compute and store a robust control invariant family")
    p.add_argument("--config", default=None, help="experiment configuration (edn)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--a-min", dest="a_min", type=float, default=None, help="front braking bound")
    p.set_defaults(func=cmd_invariant)

    p = sub.add_parser("report", help="recompute the energy report of a run directory")
    p.add_argument("--runs", required=True, help="run directory written by simulate")
    p.add_argument("--out", default=None, help="directory for the recomputed report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        cf.InvalidConfigError,
        cf.InvalidConfigFieldError,
        cf.InvalidConfigTypesError,
        cf.InvalidScenarioError,
        cf.IncompatibleFormatError,
        cf.ProvenanceMismatchError,
        cf.EmptyInvariantSetError,
        cf.AuthorityAnnihilatedError,
        cf.EmptyInputError,
        FileNotFoundError,
        OSError,
        ValueError,
    ) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
