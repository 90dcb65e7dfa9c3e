"""Static figures for a finished run, rendered off-screen to PNG files."""

import os
from dataclasses import replace

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .lyapunov import central_difference  # noqa: E402


def draw_scene(ax, scenario, q, label=None, color=None):
    """Robot paths, start/goal markers, obstacles and the final formation."""
    pos = q.reshape(len(q), scenario.n_robots, scenario.robot_dim)
    for c, r in scenario.obstacles:
        ax.add_patch(plt.Circle(c, r, color="0.6", zorder=0))
    for i in range(scenario.n_robots):
        lab = label if i == 0 else None
        line, = ax.plot(pos[:, i, 0], pos[:, i, 1], lw=1.3, label=lab, color=color)
        ax.plot(*pos[0, i, :2], "o", ms=4, color=line.get_color())
        if scenario.goals is not None and not np.isnan(scenario.goals[i, 0]):
            ax.plot(*scenario.goals[i, :2], "x", ms=7, color="k")
    for i, j, _ in scenario.formation_edges:
        for k, style in ((0, ":"), (-1, "-")):
            ax.plot(pos[k, [i, j], 0], pos[k, [i, j], 1], style, lw=0.6, color="0.4")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x")
    ax.set_ylabel("y")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_paths(scenario, traj, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    draw_scene(ax, scenario, traj.q)
    ax.set_title(scenario.name)
    return _save(fig, path)


def plot_lyapunov(traj, path):
    fig, (a0, a1) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    a0.plot(traj.t, traj.energy.V, lw=1.2)
    a0.set_ylabel("V_r")
    a1.plot(traj.t, central_difference(traj.energy.V, traj.h), lw=1.2, label="finite difference")
    bound = "predicted" if traj.energy.mode == "equality" else "bound"
    a1.plot(traj.t, traj.energy.predicted, "--", lw=1.0, label=bound)
    a1.set_ylabel("dV_r/dt")
    a1.set_xlabel("t [s]")
    a1.legend(frameon=False)
    return _save(fig, path)


def plot_clearance(scenario, traj, path):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    if scenario.obstacles:
        ax.plot(traj.t, traj.clearance, lw=1.2, label="obstacle clearance")
    if scenario.n_robots > 1:
        ax.plot(traj.t, traj.min_pair_dist, lw=1.2, label="min pairwise distance")
        ax.axhline(scenario.safety_radius, ls="--", lw=0.8, color="r", label="safety radius")
    ax.axhline(0.0, lw=0.5, color="k")
    ax.set_xlabel("t [s]")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_comparison(scenario, trajectories, path):
    """Overlay runs of one scene, e.g. several nominal controllers."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for k, (label, traj) in enumerate(trajectories.items()):
        sc = scenario if k == 0 else _no_obstacles(scenario)
        draw_scene(ax, sc, traj.q, label=label, color=f"C{k}")
    ax.legend(frameon=False)
    return _save(fig, path)


def _no_obstacles(scenario):
    return replace(scenario, obstacles=[])


def render_figures(scenario, traj, outdir):
    """Write ``path.png``, ``clearance.png`` and, with energies, ``lyapunov.png``."""
    files = [plot_paths(scenario, traj, os.path.join(outdir, "path.png"))]
    if traj.energy is not None:
        files.append(plot_lyapunov(traj, os.path.join(outdir, "lyapunov.png")))
    if scenario.obstacles or scenario.n_robots > 1:
        files.append(plot_clearance(scenario, traj, os.path.join(outdir, "clearance.png")))
    return files
