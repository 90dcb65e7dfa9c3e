"""Simulate RMPflow scenarios and check their Lyapunov certificates.

    rmpflow run goal2d --nominal spiral --check-decay
    rmpflow run --config rmpflow_out/goal2d-spiral/config.json
    rmpflow verify rmpflow_out/goal2d-spiral/trajectory.csv
    rmpflow compare goal2d --nominals potential spiral sinusoidal

Exit codes: 0 when every enabled check passes, 1 when a check fails,
2 for usage or configuration errors.
"""

import argparse
import inspect
import itertools
import json
import logging
import os
import sys

from . import report
from .errors import ConfigError
from .lyapunov import check_decay, check_immersion, check_invariant_set
from .rmp import NodeState
from .scenarios import NOMINAL_KINDS, SCENARIOS, build_scenario, resolve_params
from .simulation import INTEGRATORS, SimConfig, count_crossings, path_length, simulate

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_OUT = "rmpflow_out"
NOMINAL_PARAM = {"goal2d": "nominal", "multirobot": "nominal", "formation": "leader_nominal"}


def _add_sim_flags(p):
    p.add_argument("--h", type=float, help="integration step [s]")
    p.add_argument("--horizon", type=float, help="simulated time [s]")
    p.add_argument("--integrator", choices=INTEGRATORS)
    p.add_argument("--nominal", choices=NOMINAL_KINDS, help="nominal controller of the attractor")
    p.add_argument("--seed", type=int, help="seed for randomized scenario parameters")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario parameter (VALUE parsed as JSON)")


def _add_check_flags(p):
    p.add_argument("--check-decay", action="store_true", help="compare dV_r/dt with its prediction")
    p.add_argument("--check-invariant-set", action="store_true",
                   help="test the final state for rest with balanced leaf forces")
    p.add_argument("--invariant-kind", choices=("force", "potential"), default="force")
    p.add_argument("--check-immersion", action="store_true",
                   help="rank of the stacked leaf Jacobian (advisory)")


def build_parser():
    parser = argparse.ArgumentParser(prog="rmpflow", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write trajectory, report and plots")
    run.add_argument("scenario_name", nargs="?", metavar="SCENARIO", help=f"one of {', '.join(SCENARIOS)}")
    run.add_argument("--scenario", dest="scenario_flag")
    run.add_argument("--config", help="resolved config JSON of a previous run")
    run.add_argument("--out", help="output directory (default $RMPFLOW_OUT/<run> or ./rmpflow_out/<run>)")
    run.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    _add_sim_flags(run)
    _add_check_flags(run)

    ver = sub.add_parser("verify", help="run Lyapunov checks on a trajectory CSV or a scenario")
    ver.add_argument("target", help="trajectory CSV or scenario name")
    ver.add_argument("--config", help="config JSON (default: config.json next to the CSV)")
    _add_sim_flags(ver)
    _add_check_flags(ver)

    cmp_ = sub.add_parser("compare", help="overlay the paths of several nominal controllers")
    cmp_.add_argument("scenario_name", metavar="SCENARIO", choices=tuple(NOMINAL_PARAM))
    cmp_.add_argument("--nominals", nargs="+", choices=NOMINAL_KINDS,
                      default=["potential", "spiral", "sinusoidal"])
    cmp_.add_argument("--out")
    _add_sim_flags(cmp_)
    return parser


def _parse_sets(items):
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def resolve_run(args, base=None):
    """Merge a loaded config (``base``) with command-line overrides."""
    cfg = {"scenario": None, "params": {}, "sim": {}, "seed": 0}
    if base:
        cfg.update({k: v for k, v in base.items() if v is not None})
        cfg["params"] = dict(cfg.get("params") or {})
        cfg["sim"] = dict(cfg.get("sim") or {})
    name = getattr(args, "scenario_name", None) or getattr(args, "scenario_flag", None)
    if name:
        if base and name != base["scenario"]:
            raise ConfigError(f"scenario {name!r} conflicts with config scenario {base['scenario']!r}")
        cfg["scenario"] = name
    if not cfg["scenario"]:
        raise ConfigError("no scenario given; pass a scenario name or --config")
    if cfg["scenario"] not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg['scenario']!r}; expected one of {tuple(SCENARIOS)}")
    if args.nominal:
        if cfg["scenario"] not in NOMINAL_PARAM:
            raise ConfigError(f"scenario {cfg['scenario']} has no nominal controller to select")
        cfg["params"][NOMINAL_PARAM[cfg["scenario"]]] = args.nominal
    cfg["params"].update(_parse_sets(args.set))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "seed" in inspect.signature(SCENARIOS[cfg["scenario"]]).parameters:
        cfg["params"]["seed"] = cfg["seed"]
    for key in ("h", "horizon", "integrator"):
        if getattr(args, key) is not None:
            cfg["sim"][key] = getattr(args, key)
    return cfg


def make_sim_config(sim):
    try:
        return SimConfig(**sim)
    except TypeError as e:
        raise ConfigError(f"bad simulation settings: {e}") from None


def run_checks(args, traj, scenario, all_by_default=False):
    """Return ``(lines, passed, decay_report)`` for the enabled checks."""
    want_decay, want_inv, want_imm = args.check_decay, args.check_invariant_set, args.check_immersion
    if all_by_default and not (want_decay or want_inv or want_imm):
        want_decay = want_inv = want_imm = True
    lines, passed, decay = [], True, None
    errors = traj.event("error") + traj.event("non-finite")
    if errors and (want_decay or want_inv):
        lines.append(f"run completed: FAIL ({errors[0]['kind']} at t={errors[0]['t']:.4g})")
        passed = False
    if want_decay:
        decay = check_decay(traj, scenario.tree)
        lines.append(decay.summary())
        passed &= decay.passed
    if want_inv:
        inv = check_invariant_set(traj.final_state, scenario.tree, args.invariant_kind, float(traj.t[-1]))
        lines.append(inv.summary())
        passed &= inv.passed
    if want_imm:
        stride = max(1, len(traj) // 200)
        states = [NodeState(q, v) for q, v in zip(traj.q[::stride], traj.qdot[::stride])]
        lines.append(check_immersion(scenario.tree, states).summary())
    return lines, passed, decay


def _out_dir(args, cfg):
    if args.out:
        return args.out
    root = os.environ.get("RMPFLOW_OUT") or DEFAULT_OUT
    run_name = cfg["scenario"]
    key = NOMINAL_PARAM.get(cfg["scenario"])
    if key:
        run_name += f"-{resolve_params(cfg['scenario'], cfg['params'])[key]}"
    return os.path.join(root, run_name)


def _prepare_out(outdir):
    try:
        os.makedirs(outdir, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {outdir}: {e}") from None
    if not os.access(outdir, os.W_OK):
        raise ConfigError(f"output directory {outdir} is not writable")


def cmd_run(args):
    base = report.load_config(args.config) if args.config else None
    cfg = resolve_run(args, base)
    sim = make_sim_config(cfg["sim"])
    scenario = build_scenario(cfg["scenario"], cfg["params"])
    outdir = _out_dir(args, cfg)
    _prepare_out(outdir)

    traj = simulate(scenario, sim)
    resolved = report.resolved_config(scenario, sim, cfg["seed"])
    report.write_json(os.path.join(outdir, "config.json"), resolved)
    report.write_trajectory_csv(traj, os.path.join(outdir, "trajectory.csv"))
    report.write_plot_data(traj, scenario, outdir)
    lines = report.run_summary(traj, scenario)
    checks, passed, decay = run_checks(args, traj, scenario)
    if decay is not None:
        report.write_verification(os.path.join(outdir, "verification.jsonl"), decay)
    if not args.no_figures:
        from .plotting import render_figures
        render_figures(scenario, traj, outdir)
    text = "\n".join(lines + checks) + "\n"
    report_path = os.path.join(outdir, "report.txt")
    with open(report_path, "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    print(f"outputs written to {outdir}")
    if not passed:
        print(f"checks failed; see {report_path}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_verify(args):
    if args.target in SCENARIOS:
        base = report.load_config(args.config) if args.config else None
        args.scenario_name = args.target
        cfg = resolve_run(args, base)
        scenario = build_scenario(cfg["scenario"], cfg["params"])
        traj = simulate(scenario, make_sim_config(cfg["sim"]))
    else:
        if not os.path.isfile(args.target):
            raise ConfigError(f"trajectory not found: {args.target} (and not a scenario name)")
        cfg_path = args.config or os.path.join(os.path.dirname(args.target) or ".", "config.json")
        cfg = resolve_run(args, report.load_config(cfg_path))
        scenario = build_scenario(cfg["scenario"], cfg["params"])
        traj = report.read_trajectory_csv(args.target, scenario.name)
        if len(traj) < 3:
            raise ConfigError(f"{args.target} has {len(traj)} step(s); at least 3 are needed")
    lines, passed, _ = run_checks(args, traj, scenario, all_by_default=True)
    width = max(len(s.split(":")[0]) for s in lines)
    for s in lines:
        label, _, rest = s.partition(":")
        print(f"{label:<{width}} |{rest}")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_compare(args):
    from .plotting import plot_comparison
    args.scenario_flag = None
    runs, scenario = {}, None
    key = NOMINAL_PARAM[args.scenario_name]
    for nominal in args.nominals:
        args.nominal = nominal
        cfg = resolve_run(args)
        sc = build_scenario(cfg["scenario"], cfg["params"])
        scenario = scenario or sc
        runs[nominal] = simulate(sc, make_sim_config(cfg["sim"]), record_energy=False)
    outdir = args.out or os.path.join(os.environ.get("RMPFLOW_OUT") or DEFAULT_OUT,
                                      f"{args.scenario_name}-compare")
    _prepare_out(outdir)
    for nominal, traj in runs.items():
        report.write_dat(os.path.join(outdir, f"path_{nominal}.dat"),
                         ["t"] + [f"q{i}" for i in range(traj.q.shape[1])], [traj.t, traj.q])
        print(f"{key}={nominal}: path length {path_length(traj.q[:, :2]):.4f}, final goal error "
              f"{traj.goal_error[-1]:.2e}, t_end {traj.t[-1]:.4g}")
    if scenario.n_robots == 1 and len(runs) > 1:
        names = list(runs)
        anchors = [scenario.q0, scenario.goals[0]]
        for i, j in itertools.combinations(range(len(names)), 2):
            n = count_crossings(runs[names[i]].q, runs[names[j]].q, anchors)
            print(f"crossings {names[i]} x {names[j]}: {n}")
    plot_comparison(scenario, runs, os.path.join(outdir, "compare.png"))
    print(f"outputs written to {outdir}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "compare": cmd_compare}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
