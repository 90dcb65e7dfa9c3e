"""Trajectory export, plot-data files, resolved configs and verification records.

Everything written here is plain text: CSV for trajectories, whitespace
separated columns (``.dat``) for plotting, JSON for configs and one JSON
object per line for per-step verification records.
"""

import json
import os

import numpy as np

from .errors import ConfigError
from .lyapunov import central_difference
from .simulation import Trajectory

FLOAT_FMT = "%.17g"


def trajectory_columns(dim):
    return (["t"] + [f"q{i}" for i in range(dim)] + [f"qdot{i}" for i in range(dim)]
            + [f"u{i}" for i in range(dim)] + ["V_r", "Vdot_fd", "clearance", "min_pair_dist"])


def trajectory_table(traj):
    n = len(traj)
    if traj.energy is not None:
        V, Vdot = traj.energy.V, central_difference(traj.energy.V, traj.h)
    else:
        V = Vdot = np.full(n, np.nan)
    return np.column_stack([traj.t, traj.q, traj.qdot, traj.u, V, Vdot,
                            traj.clearance, traj.min_pair_dist])


def write_trajectory_csv(traj, path):
    cols = trajectory_columns(traj.q.shape[1])
    np.savetxt(path, trajectory_table(traj), delimiter=",", header=",".join(cols),
               comments="", fmt=FLOAT_FMT)


def read_trajectory_csv(path, scenario=""):
    """Load a trajectory CSV written by ``write_trajectory_csv``.

    Energies are not restored; verification recomputes them from the tree.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"trajectory file not found: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None
    if not header or header[0] != "t" or data.shape[1] != len(header):
        raise ConfigError(f"{path} is not a trajectory CSV")
    dim = sum(1 for c in header if c.startswith("q") and not c.startswith("qdot"))
    if header != trajectory_columns(dim):
        raise ConfigError(f"{path}: unexpected columns {header}")
    col = {name: k for k, name in enumerate(header)}
    t = data[:, 0]
    h = float(t[1] - t[0]) if t.size > 1 else float("nan")
    n = t.size
    return Trajectory(
        scenario=scenario, h=h, t=t, q=data[:, 1:1 + dim], qdot=data[:, 1 + dim:1 + 2 * dim],
        u=data[:, 1 + 2 * dim:1 + 3 * dim], goal_error=np.full(n, np.nan),
        clearance=data[:, col["clearance"]], min_pair_dist=data[:, col["min_pair_dist"]],
        active=np.zeros((n, 0), dtype=bool), clf_paths=[])


def write_dat(path, names, columns):
    np.savetxt(path, np.column_stack(columns), header=" ".join(names), fmt="%.10g")


def write_plot_data(traj, scenario, outdir, decay=None):
    """``path.dat`` (xy per robot), ``lyapunov.dat`` and ``clearance.dat``."""
    n, d = scenario.n_robots, scenario.robot_dim
    names = ["t"] + [f"{axis}{i}" for i in range(n) for axis in ("x", "y", "z")[:d]]
    write_dat(os.path.join(outdir, "path.dat"), names, [traj.t, traj.q])
    if traj.energy is not None:
        bound = traj.energy.predicted
        write_dat(os.path.join(outdir, "lyapunov.dat"), ["t", "V_r", "Vdot_fd", "Vdot_bound"],
                  [traj.t, traj.energy.V, central_difference(traj.energy.V, traj.h), bound])
    write_dat(os.path.join(outdir, "clearance.dat"), ["t", "clearance", "min_pair_dist"],
              [traj.t, traj.clearance, traj.min_pair_dist])


def resolved_config(scenario, sim_config, seed):
    return {"scenario": scenario.name, "params": scenario.params, "sim": sim_config.to_dict(),
            "seed": seed}


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_default)
        fh.write("\n")


def load_config(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict) or "scenario" not in cfg:
        raise ConfigError(f"{path}: config needs a 'scenario' entry")
    unknown = set(cfg) - {"scenario", "params", "sim", "seed"}
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return cfg


def write_verification(path, decay):
    """One JSON record per interior step of a decay check."""
    with open(path, "w") as fh:
        for rec in decay.records:
            fh.write(json.dumps(rec, default=_default) + "\n")


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def run_summary(traj, scenario):
    lines = [f"scenario: {scenario.name}",
             f"steps: {len(traj)} (h={traj.h:g}, final t={traj.t[-1]:.4g})",
             f"converged: {traj.converged}"]
    if scenario.goals is not None:
        lines.append(f"final goal error: {traj.goal_error[-1]:.3e}")
    if scenario.obstacles:
        lines.append(f"min obstacle clearance: {traj.clearance.min():.4f}")
    if scenario.n_robots > 1:
        lines.append(f"min pairwise distance: {traj.min_pair_dist.min():.4f} "
                     f"(safety radius {scenario.safety_radius:g})")
    if scenario.formation_edges:
        worst = max(scenario.formation_error(q) for q in traj.q)
        lines.append(f"max formation edge error: {100 * worst:.2f}%")
    for path, steps in zip(traj.clf_paths, traj.active.sum(axis=0)):
        lines.append(f"constraint active at {path}: {int(steps)} step(s)")
    for node, path, _ in scenario.tree.plan():
        nominal = getattr(node.leaf, "nominal", None)
        if nominal is not None and nominal.time_varying:
            lines.append(f"heuristic: {path} uses a time-varying nominal ({nominal.kind}); "
                         "decay is checked, convergence is not guaranteed")
    for e in traj.events:
        if e["kind"] in ("error", "non-finite"):
            lines.append(f"{e['kind']} at t={e['t']:.4g}: {e['message']}")
    return lines
