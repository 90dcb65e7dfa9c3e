"""Scenario builders and the declarative tree format used by config files.

A tree spec is plain JSON::

    {"root_dim": 2,
     "children": [
        {"name": "attractor", "map": {"kind": "identity", "dim": 2},
         "leaf": {"kind": "clf_attractor", "goal": [2.5, 0.0], "nominal": "spiral"}},
        {"name": "obstacle", "map": {"kind": "distance_to_sphere", "center": [0, 0], "radius": 0.5},
         "leaf": {"kind": "gds_collision"}}]}

Inner nodes carry ``"children"`` instead of ``"leaf"``.

Geometry and gains of the shipped scenarios are chosen defaults; every one
of them can be overridden through ``params``.
"""

import inspect
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import leaves, taskmaps
from .errors import ConfigError, StructureError
from .rmp import RmpTree

NOMINAL_KINDS = ("potential", "spiral", "sinusoidal", "gds")


def build_tree(spec):
    try:
        tree = RmpTree(int(spec["root_dim"]), spec.get("name", "root"))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"tree spec needs an integer root_dim: {e}") from None

    def attach(parent, nodes):
        for item in nodes:
            if "name" not in item or "map" not in item:
                raise ConfigError(f"tree node needs 'name' and 'map': {item}")
            if ("leaf" in item) == ("children" in item):
                raise ConfigError(f"node {item['name']!r} needs exactly one of 'leaf' or 'children'")
            leaf = leaves.from_config(item["leaf"]) if "leaf" in item else None
            node = tree.add(parent, item["name"], taskmaps.from_config(item["map"]), leaf)
            if "children" in item:
                attach(node, item["children"])

    attach(tree.root, spec.get("children", []))
    try:
        tree.plan()
    except StructureError as e:
        raise ConfigError(str(e)) from None
    return tree


def tree_to_spec(tree):
    def node_spec(node):
        out = {"name": node.name, "map": node.taskmap.to_config()}
        if node.leaf is not None:
            out["leaf"] = node.leaf.to_config()
        else:
            out["children"] = [node_spec(c) for c in node.children]
        return out

    return {"root_dim": tree.dim, "name": tree.root.name,
            "children": [node_spec(c) for c in tree.root.children]}


@dataclass
class Scenario:
    """A tree plus initial state and the geometry needed for diagnostics.

    ``goals`` has one row per robot; rows of NaN mark robots without a goal.
    """

    name: str
    params: dict
    tree: RmpTree
    q0: np.ndarray
    qdot0: np.ndarray
    n_robots: int = 1
    robot_dim: int = 2
    goals: np.ndarray | None = None
    obstacles: list = field(default_factory=list)
    safety_radius: float = 0.0
    robot_radius: float = 0.1
    formation_edges: list = field(default_factory=list)

    def positions(self, q):
        return np.asarray(q).reshape(self.n_robots, self.robot_dim)

    def goal_error(self, q):
        if self.goals is None:
            return 0.0
        p = self.positions(q)
        mask = ~np.isnan(self.goals[:, 0])
        if not mask.any():
            return 0.0
        return float(np.max(np.linalg.norm(p[mask] - self.goals[mask], axis=1)))

    def clearance(self, q):
        """Smallest distance from a robot centre to an obstacle surface."""
        if not self.obstacles:
            return np.inf
        p = self.positions(q)
        return float(min(np.min(np.linalg.norm(p - c, axis=1)) - r for c, r in self.obstacles))

    def min_pair_distance(self, q):
        if self.n_robots < 2:
            return np.inf
        p = self.positions(q)
        return float(min(np.linalg.norm(p[i] - p[j])
                         for i, j in itertools.combinations(range(self.n_robots), 2)))

    def formation_error(self, q):
        """Largest relative edge-length error over the formation edges."""
        if not self.formation_edges:
            return 0.0
        p = self.positions(q)
        return float(max(abs(np.linalg.norm(p[i] - p[j]) - d) / d for i, j, d in self.formation_edges))

    def to_config(self):
        return {"scenario": self.name, "params": self.params}


def _attractor_leaf(nominal, goal, gain, eta, damping, P):
    if nominal not in NOMINAL_KINDS:
        raise ConfigError(f"unknown nominal {nominal!r}; expected one of {NOMINAL_KINDS}")
    if nominal == "gds":
        return {"kind": "gds_attractor", "goal": list(goal), "gain": gain, "damping": damping}
    return {"kind": "clf_attractor", "goal": list(goal), "gain": gain, "eta": eta,
            "nominal": nominal, "P": P}


def goal_reach_2d(nominal="potential", start=(-2.5, 0.0), goal=(2.5, 0.0),
                  obstacle_center=(0.0, 0.2), obstacle_radius=0.5, start_velocity=(0.0, 0.0),
                  gain=2.0, eta=2.83, damping=2.83, eta_b=1.0, P="identity"):
    """Planar double integrator reaching a goal past one circular obstacle.

    ``nominal="gds"`` swaps the CLF attractor for a GDS attractor;
    ``obstacle_radius=0`` removes the obstacle.
    """
    params = dict(locals())
    children = [{"name": "attractor", "map": {"kind": "identity", "dim": 2},
                 "leaf": _attractor_leaf(nominal, goal, gain, eta, damping, P)}]
    obstacles = []
    if obstacle_radius > 0:
        children.append({"name": "obstacle",
                         "map": {"kind": "distance_to_sphere", "center": list(obstacle_center),
                                 "radius": obstacle_radius},
                         "leaf": {"kind": "gds_collision", "eta_b": eta_b}})
        obstacles.append((np.asarray(obstacle_center, float), float(obstacle_radius)))
    spec = {"root_dim": 2, "children": children}
    return Scenario("goal2d", params, build_tree(spec), np.asarray(start, float),
                    np.asarray(start_velocity, float), goals=np.asarray([goal], float),
                    obstacles=obstacles)


def _snap(a):
    a = np.asarray(a, dtype=float)
    return np.where(np.abs(a) < 1e-12, 0.0, a)


def multi_robot(n_robots=4, nominal="spiral", layout="circle", arena_radius=2.0, lane_spacing=1.0,
                safety_radius=0.25, robot_radius=0.1, gain=4.0, eta=4.0, damping=4.0, eta_b=1.0,
                eps_u=1e-2, P="identity", jitter=0.0, seed=0):
    """Robots swap to the opposite side of the arena with pairwise collision avoidance.

    ``layout="circle"`` places robots evenly on a circle with antipodal goals
    (straight paths all cross at the centre); ``layout="lanes"`` uses
    parallel, non-intersecting lanes.
    """
    params = dict(locals())
    if n_robots < 2:
        raise ConfigError(f"multi-robot scenario needs at least 2 robots, got {n_robots}")
    if layout == "circle":
        ang = 2.0 * np.pi * np.arange(n_robots) / n_robots
        starts = _snap(arena_radius * np.column_stack([np.cos(ang), np.sin(ang)]))
        goals = -starts
    elif layout == "lanes":
        y = lane_spacing * (np.arange(n_robots) - (n_robots - 1) / 2.0)
        starts = np.column_stack([np.full(n_robots, -arena_radius), y])
        goals = np.column_stack([np.full(n_robots, arena_radius), y])
    else:
        raise ConfigError(f"unknown layout {layout!r}")
    if jitter > 0:
        starts = starts + np.random.default_rng(seed).uniform(-jitter, jitter, starts.shape)
    d = 2 * n_robots
    children = []
    for i in range(n_robots):
        children.append({
            "name": f"robot{i}",
            "map": {"kind": "coordinate_projection", "dim_in": d, "indices": [2 * i, 2 * i + 1]},
            "children": [{"name": "attractor", "map": {"kind": "identity", "dim": 2},
                          "leaf": _attractor_leaf(nominal, goals[i].tolist(), gain, eta, damping, P)}],
        })
    for i, j in itertools.combinations(range(n_robots), 2):
        children.append(_pair_node(i, j, n_robots, safety_radius, eta_b, eps_u))
    tree = build_tree({"root_dim": d, "children": children})
    return Scenario("multirobot", params, tree, starts.reshape(-1), np.zeros(d),
                    n_robots=n_robots, goals=goals, safety_radius=safety_radius,
                    robot_radius=robot_radius)


def _pair_node(i, j, n_robots, safety_radius, eta_b, eps_u, formation=None):
    kids = [{"name": "avoid",
             "map": {"kind": "distance_to_sphere", "center": [0.0, 0.0], "radius": safety_radius},
             "leaf": {"kind": "gds_collision", "eta_b": eta_b, "eps_u": eps_u}}]
    if formation is not None:
        kids.append({"name": "formation", "map": {"kind": "distance_to_point", "goal": [0.0, 0.0]},
                     "leaf": {"kind": "gds_formation", **formation}})
    return {"name": f"pair_{i}_{j}",
            "map": {"kind": "pairwise_displacement", "i": i, "j": j, "per_robot_dim": 2,
                    "n_robots": n_robots},
            "children": kids}


def formation(n_robots=5, leader_nominal="spiral", circumradius=0.6, center=(-1.5, 0.0),
              goal_offset=(3.0, 0.0), edges="all", formation_gain=40.0, formation_weight=10.0,
              formation_damping=20.0, damper_weight=0.1, damper_damping=0.5, safety_radius=0.25,
              robot_radius=0.1, gain=4.0, eta=4.0, damping=4.0, eta_b=1.0, eps_u=1e-6,
              P="identity"):
    """Regular pentagon formation; robot 0 leads towards a goal.

    ``edges="all"`` keeps every pairwise distance, ``"sides"`` only the
    pentagon sides plus the two diagonals from the leader (minimally rigid).
    """
    params = dict(locals())
    if n_robots != 5:
        raise ConfigError(f"the pentagon formation needs exactly 5 robots, got {n_robots}")
    ang = np.pi / 2 + 2.0 * np.pi * np.arange(n_robots) / n_robots
    starts = np.asarray(center, float) + circumradius * np.column_stack([np.cos(ang), np.sin(ang)])
    leader_goal = starts[0] + np.asarray(goal_offset, float)
    goals = np.full((n_robots, 2), np.nan)
    goals[0] = leader_goal
    pairs = list(itertools.combinations(range(n_robots), 2))
    if edges == "all":
        kept = set(pairs)
    elif edges == "sides":
        kept = {(i, (i + 1) % n_robots) if i < (i + 1) % n_robots else ((i + 1) % n_robots, i)
                for i in range(n_robots)} | {(0, 2), (0, 3)}
    else:
        raise ConfigError(f"unknown edge selection {edges!r}")
    d = 2 * n_robots
    children = []
    for i in range(n_robots):
        kids = [{"name": "damper", "map": {"kind": "identity", "dim": 2},
                 "leaf": {"kind": "gds_damper", "dim": 2, "weight": damper_weight,
                          "damping": damper_damping}}]
        if i == 0:
            kids.insert(0, {"name": "attractor", "map": {"kind": "identity", "dim": 2},
                            "leaf": _attractor_leaf(leader_nominal, leader_goal.tolist(), gain, eta,
                                                    damping, P)})
        children.append({"name": f"robot{i}",
                         "map": {"kind": "coordinate_projection", "dim_in": d,
                                 "indices": [2 * i, 2 * i + 1]},
                         "children": kids})
    formation_edges = []
    for i, j in pairs:
        spec = None
        if (i, j) in kept:
            target = float(np.linalg.norm(starts[i] - starts[j]))
            formation_edges.append((i, j, target))
            spec = {"target": target, "gain": formation_gain, "weight": formation_weight,
                    "damping": formation_damping}
        children.append(_pair_node(i, j, n_robots, safety_radius, eta_b, eps_u, spec))
    tree = build_tree({"root_dim": d, "children": children})
    return Scenario("formation", params, tree, starts.reshape(-1), np.zeros(d), n_robots=n_robots,
                    goals=goals, safety_radius=safety_radius, robot_radius=robot_radius,
                    formation_edges=formation_edges)


def custom(tree, q0, qdot0=None, goal=None, obstacles=()):
    """Arbitrary tree spec with a single-body root (``goal`` optional)."""
    params = dict(locals())
    built = build_tree(tree)
    q0 = np.asarray(q0, float)
    qdot0 = np.zeros_like(q0) if qdot0 is None else np.asarray(qdot0, float)
    if q0.size != built.dim or qdot0.size != built.dim:
        raise ConfigError(f"initial state has dim {q0.size}/{qdot0.size}, tree root has dim {built.dim}")
    goals = None if goal is None else np.asarray(goal, float).reshape(1, -1)
    obs = [(np.asarray(o["center"], float), float(o["radius"])) for o in obstacles]
    return Scenario("custom", params, built, q0, qdot0, n_robots=1, robot_dim=built.dim,
                    goals=goals, obstacles=obs)


SCENARIOS = {
    "goal2d": goal_reach_2d,
    "multirobot": multi_robot,
    "formation": formation,
    "custom": custom,
}


def resolve_params(name, params):
    """Defaults merged with ``params``; unknown keys are rejected."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {tuple(SCENARIOS)}")
    sig = inspect.signature(SCENARIOS[name])
    unknown = set(params) - set(sig.parameters)
    if unknown:
        raise ConfigError(f"unknown parameter(s) for {name}: {sorted(unknown)}")
    out = {k: p.default for k, p in sig.parameters.items() if p.default is not inspect.Parameter.empty}
    out.update(params)
    missing = [k for k, p in sig.parameters.items() if k not in out]
    if missing:
        raise ConfigError(f"scenario {name} requires parameter(s) {missing}")
    return out


def build_scenario(name, params=None):
    resolved = resolve_params(name, dict(params or {}))
    try:
        scenario = SCENARIOS[name](**resolved)
    except (TypeError, KeyError) as e:
        raise ConfigError(f"bad parameters for scenario {name}: {e}") from None
    if scenario.clearance(scenario.q0) <= 0.0:
        raise ConfigError(f"{name}: initial state intersects an obstacle")
    if scenario.min_pair_distance(scenario.q0) <= scenario.safety_radius:
        raise ConfigError(f"{name}: initial robots closer than the safety radius")
    scenario.params = _jsonable(scenario.params)
    return scenario


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def scenario_goal_reach_2d(nominal="potential", **params):
    return build_scenario("goal2d", {"nominal": nominal, **params})


def scenario_multi_robot(n_robots=4, nominal="spiral", **params):
    return build_scenario("multirobot", {"n_robots": n_robots, "nominal": nominal, **params})


def scenario_formation(n_robots=5, **params):
    return build_scenario("formation", {"n_robots": n_robots, **params})
