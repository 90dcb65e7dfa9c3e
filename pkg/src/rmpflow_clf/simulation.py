"""Fixed-step closed-loop simulation of ``qddot = u(q, qdot)`` under an RMP-tree policy."""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, RmpError
from .lyapunov import central_difference, energy_series
from .rmp import NodeState, evaluate

logger = logging.getLogger(__name__)

INTEGRATORS = ("rk4", "semi-implicit-euler")


@dataclass
class SimConfig:
    h: float = 0.01
    horizon: float = 60.0
    integrator: str = "rk4"
    velocity_tol: float = 1e-4
    goal_tol: float = 1e-4
    stop_on_convergence: bool = True

    def __post_init__(self):
        self.h = float(self.h)
        self.horizon = float(self.horizon)
        if not self.h > 0:
            raise ConfigError(f"step h must be positive, got {self.h}")
        if not self.horizon >= self.h:
            raise ConfigError(f"horizon {self.horizon} shorter than one step {self.h}")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"unknown integrator {self.integrator!r}; expected one of {INTEGRATORS}")

    def to_dict(self):
        return asdict(self)


@dataclass
class Trajectory:
    """Uniform-grid record of a closed-loop run.

    ``active`` has one column per CLF leaf (``clf_paths``) and flags steps where
    the leaf constraint modified the nominal force.
    """

    scenario: str
    h: float
    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    u: np.ndarray
    goal_error: np.ndarray
    clearance: np.ndarray
    min_pair_dist: np.ndarray
    active: np.ndarray
    clf_paths: list
    energy: object = None
    events: list = field(default_factory=list)
    converged: bool = False
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def V_r(self):
        return None if self.energy is None else self.energy.V

    @property
    def Vdot_fd(self):
        return None if self.energy is None else central_difference(self.energy.V, self.h)

    @property
    def final_state(self):
        return NodeState(self.q[-1], self.qdot[-1])

    def event(self, kind):
        return [e for e in self.events if e["kind"] == kind]


def _rk4(policy, q, qd, t, h, a1):
    half = 0.5 * h
    q2, v2 = q + half * qd, qd + half * a1
    a2 = policy(q2, v2, t + half)
    q3, v3 = q + half * v2, qd + half * a2
    a3 = policy(q3, v3, t + half)
    q4, v4 = q + h * v3, qd + h * a3
    a4 = policy(q4, v4, t + h)
    q_new = q + (h / 6.0) * (qd + 2.0 * v2 + 2.0 * v3 + v4)
    v_new = qd + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return q_new, v_new


def _semi_implicit_euler(policy, q, qd, t, h, a1):
    v_new = qd + h * a1
    return q + h * v_new, v_new


def simulate(scenario, config=None, record_energy=True):
    """Integrate the closed loop from the scenario's initial state.

    The policy is evaluated once per integrator stage. A policy failure
    truncates the trajectory and records an ``error`` event; a non-finite
    state stops the run at the last finite state.
    """
    config = config or SimConfig()
    tree = scenario.tree
    h = config.h
    step = _rk4 if config.integrator == "rk4" else _semi_implicit_euler
    nsteps = int(round(config.horizon / h))

    def policy(q, qd, t):
        return evaluate(tree, NodeState(q, qd), t).control

    clf_paths = [path for node, path, _ in tree.plan()
                 if node.leaf is not None and node.leaf.family == "clf"]
    rec = {k: [] for k in ("t", "q", "qdot", "u", "goal", "clear", "pair", "active")}
    forwards = []
    events = []
    converged = False
    q = np.array(scenario.q0, dtype=float)
    qd = np.array(scenario.qdot0, dtype=float)
    try:
        ev = evaluate(tree, NodeState(q, qd), 0.0)
    except RmpError as e:
        raise ConfigError(f"policy cannot be evaluated at the initial state: {e}") from e

    for n in range(nsteps + 1):
        t = n * h
        goal_err = scenario.goal_error(q)
        rec["t"].append(t)
        rec["q"].append(q)
        rec["qdot"].append(qd)
        rec["u"].append(ev.control)
        rec["goal"].append(goal_err)
        rec["clear"].append(scenario.clearance(q))
        rec["pair"].append(scenario.min_pair_distance(q))
        rec["active"].append([bool(ev.active[p]) for p in clf_paths])
        forwards.append(ev.forward)
        if (config.stop_on_convergence and n > 0 and np.linalg.norm(qd) < config.velocity_tol
                and goal_err < config.goal_tol):
            converged = True
            events.append({"kind": "converged", "t": t})
            break
        if n == nsteps:
            break
        try:
            # overflow surfaces as the non-finite event below
            with np.errstate(over="ignore", invalid="ignore"):
                q_new, qd_new = step(policy, q, qd, t, h, ev.control)
            if not (np.isfinite(q_new).all() and np.isfinite(qd_new).all()):
                events.append({"kind": "non-finite", "t": t + h, "message": "state diverged"})
                break
            ev = evaluate(tree, NodeState(q_new, qd_new), t + h)
        except RmpError as e:
            logger.warning("policy evaluation failed at t=%.4g: %s", t, e)
            events.append({"kind": "error", "t": t, "message": str(e)})
            break
        q, qd = q_new, qd_new

    active = np.array(rec["active"], dtype=bool).reshape(len(rec["t"]), len(clf_paths))
    traj = Trajectory(
        scenario=scenario.name, h=h, t=np.array(rec["t"]), q=np.array(rec["q"]),
        qdot=np.array(rec["qdot"]), u=np.array(rec["u"]), goal_error=np.array(rec["goal"]),
        clearance=np.array(rec["clear"]), min_pair_dist=np.array(rec["pair"]),
        active=active, clf_paths=clf_paths, events=events, converged=converged,
        config={"scenario": scenario.name, "params": scenario.params, "sim": config.to_dict()},
    )
    if record_energy:
        traj.energy = energy_series(tree, traj.q, traj.qdot, forwards)
    events.append({"kind": "min_clearance", "value": float(traj.clearance.min())})
    events.append({"kind": "min_pair_distance", "value": float(traj.min_pair_dist.min())})
    for k, path in enumerate(clf_paths):
        events.append({"kind": "constraint_activity", "path": path,
                       "active_steps": int(active[:, k].sum())})
    return traj


def time_to_goal(trajectory, tol=1e-2):
    """First time every robot with a goal is within ``tol`` of it.

    Returns ``(time, reached)``; an unreached goal reports the final time.
    """
    hit = np.nonzero(trajectory.goal_error < tol)[0]
    if hit.size:
        return float(trajectory.t[hit[0]]), True
    return float(trajectory.t[-1]), False


def convergence_order(errors, ratio=2.0):
    """Observed order from errors at successively divided steps."""
    errors = np.asarray(errors, dtype=float)
    return np.log(errors[:-1] / errors[1:]) / np.log(ratio)


def path_length(points):
    points = np.asarray(points, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def count_crossings(P, Q, exclude=(), radius=0.1):
    """Proper intersections between two planar polylines.

    Segments of ``P`` starting within ``radius`` of any point in ``exclude``
    (typically the shared start and goal) are skipped.
    """
    P, Q = np.asarray(P, dtype=float), np.asarray(Q, dtype=float)
    q0, s = Q[:-1], Q[1:] - Q[:-1]
    n = 0
    for a, b in zip(P[:-1], P[1:]):
        if any(np.linalg.norm(a - e) < radius for e in exclude):
            continue
        r = b - a
        d1, d2 = q0 - a, Q[1:] - a
        c1 = r[0] * d1[:, 1] - r[1] * d1[:, 0]
        c2 = r[0] * d2[:, 1] - r[1] * d2[:, 0]
        e1 = s[:, 0] * (a[1] - q0[:, 1]) - s[:, 1] * (a[0] - q0[:, 0])
        e2 = s[:, 0] * (b[1] - q0[:, 1]) - s[:, 1] * (b[0] - q0[:, 0])
        n += int(np.sum((c1 * c2 < 0) & (e1 * e2 < 0)))
    return n
