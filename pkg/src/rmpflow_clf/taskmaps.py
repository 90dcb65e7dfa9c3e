"""Smooth maps between manifolds, used as edges of an RMP-tree.

Every map carries three evaluators: the map itself, its Jacobian and the
curvature vector ``Jdot(x) @ xdot``. All shipped maps have analytic
curvature; finite differences are only used by the test-suite oracles.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, SingularityError, StructureError

#: Distance below which the point/sphere distance maps refuse to evaluate.
EPS_SINGULAR = 1e-9


@dataclass(frozen=True, eq=False)
class TaskMap:
    """A map ``psi: R^dim_in -> R^dim_out`` with Jacobian and curvature.

    ``kind`` and ``params`` record how the map was built so a tree can be
    serialized back into a scenario config.
    """

    dim_in: int
    dim_out: int
    psi: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    curvature: Callable[[np.ndarray, np.ndarray], np.ndarray]
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.psi(x)

    def to_config(self):
        return {"kind": self.kind, **self.params}


def _vec(v, name="vector"):
    v = np.asarray(v, dtype=float).reshape(-1)
    if not np.isfinite(v).all():
        raise ConfigError(f"{name} must be finite, got {v}")
    return v


def identity(dim):
    if dim < 1:
        raise ConfigError(f"identity map needs dim >= 1, got {dim}")
    eye = np.eye(dim)
    zero = np.zeros(dim)
    return TaskMap(
        dim, dim,
        psi=lambda x: np.array(x, dtype=float),
        jacobian=lambda x: eye,
        curvature=lambda x, xd: zero,
        kind="identity", params={"dim": int(dim)},
    )


def linear(A):
    """``y = A x``. Constant Jacobian, zero curvature."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, n = A.shape
    zero = np.zeros(m)
    return TaskMap(
        n, m,
        psi=lambda x: A @ x,
        jacobian=lambda x: A,
        curvature=lambda x, xd: zero,
        kind="linear", params={"A": A.tolist()},
    )


def coordinate_projection(dim_in, indices):
    """Select ``x[indices]``; used to carve one robot out of a stacked root."""
    indices = [int(i) for i in indices]
    if len(set(indices)) != len(indices):
        raise ConfigError(f"duplicate indices in projection: {indices}")
    if not indices or min(indices) < 0 or max(indices) >= dim_in:
        raise ConfigError(f"projection indices {indices} out of range for dim {dim_in}")
    idx = np.array(indices)
    J = np.zeros((len(idx), dim_in))
    J[np.arange(len(idx)), idx] = 1.0
    zero = np.zeros(len(idx))
    return TaskMap(
        dim_in, len(idx),
        psi=lambda x: x[idx],
        jacobian=lambda x: J,
        curvature=lambda x, xd: zero,
        kind="coordinate_projection",
        params={"dim_in": int(dim_in), "indices": indices},
    )


def pairwise_displacement(i, j, per_robot_dim, n_robots):
    """Map stacked robot coordinates to ``x_i - x_j``."""
    if i == j:
        raise ConfigError("pairwise displacement needs two distinct robots")
    if not (0 <= i < n_robots and 0 <= j < n_robots):
        raise ConfigError(f"robot index out of range: ({i}, {j}) with n_robots={n_robots}")
    p = per_robot_dim
    J = np.zeros((p, p * n_robots))
    J[:, i * p:(i + 1) * p] = np.eye(p)
    J[:, j * p:(j + 1) * p] = -np.eye(p)
    si, sj = slice(i * p, (i + 1) * p), slice(j * p, (j + 1) * p)
    zero = np.zeros(p)
    return TaskMap(
        p * n_robots, p,
        psi=lambda x: x[si] - x[sj],
        jacobian=lambda x: J,
        curvature=lambda x, xd: zero,
        kind="pairwise_displacement",
        params={"i": int(i), "j": int(j), "per_robot_dim": int(p), "n_robots": int(n_robots)},
    )


def _scaled_distance(center, scale, offset, kind, params):
    # z = |x - c| / scale - offset
    dim = center.size

    def diff(x):
        d = x - center
        r = np.sqrt(d @ d)
        if r < EPS_SINGULAR:
            raise SingularityError(f"{kind} evaluated at its center (|x - c| = {r:.3g})")
        return d, r

    def psi(x):
        _, r = diff(x)
        return np.array([r / scale - offset])

    def jacobian(x):
        d, r = diff(x)
        return (d / (r * scale)).reshape(1, dim)

    def curvature(x, xd):
        d, r = diff(x)
        radial = (d @ xd) / r
        return np.array([(xd @ xd - radial * radial) / (r * scale)])

    return TaskMap(dim, 1, psi, jacobian, curvature, kind=kind, params=params)


def distance_to_point(goal):
    """``z = |x - goal|`` on a 1-D distance space."""
    goal = _vec(goal, "goal")
    return _scaled_distance(goal, 1.0, 0.0, "distance_to_point", {"goal": goal.tolist()})


def distance_to_sphere(center, radius):
    """``z = |x - center| / radius - 1``; zero on the sphere surface."""
    center = _vec(center, "center")
    if not radius > 0:
        raise ConfigError(f"sphere radius must be positive, got {radius}")
    return _scaled_distance(center, float(radius), 1.0, "distance_to_sphere",
                            {"center": center.tolist(), "radius": float(radius)})


def compose(outer, inner):
    """``outer o inner``; curvature picks up both the inner and outer terms."""
    if inner.dim_out != outer.dim_in:
        raise StructureError(
            f"cannot compose: inner maps to R^{inner.dim_out}, outer expects R^{outer.dim_in}")

    def jacobian(x):
        return outer.jacobian(inner.psi(x)) @ inner.jacobian(x)

    def curvature(x, xd):
        y = inner.psi(x)
        Ji = inner.jacobian(x)
        return outer.jacobian(y) @ inner.curvature(x, xd) + outer.curvature(y, Ji @ xd)

    return TaskMap(
        inner.dim_in, outer.dim_out,
        psi=lambda x: outer.psi(inner.psi(x)),
        jacobian=jacobian, curvature=curvature,
        kind="compose",
        params={"outer": outer.to_config(), "inner": inner.to_config()},
    )


_CONSTRUCTORS = {
    "identity": lambda p: identity(p["dim"]),
    "linear": lambda p: linear(p["A"]),
    "coordinate_projection": lambda p: coordinate_projection(p["dim_in"], p["indices"]),
    "pairwise_displacement": lambda p: pairwise_displacement(
        p["i"], p["j"], p.get("per_robot_dim", 2), p["n_robots"]),
    "distance_to_point": lambda p: distance_to_point(p["goal"]),
    "distance_to_sphere": lambda p: distance_to_sphere(p["center"], p["radius"]),
    "compose": lambda p: compose(from_config(p["outer"]), from_config(p["inner"])),
}

MAP_KINDS = tuple(_CONSTRUCTORS)


def from_config(cfg):
    """Build a map from ``{"kind": ..., <params>}``."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in _CONSTRUCTORS:
        raise ConfigError(f"unknown task map kind {kind!r}; expected one of {MAP_KINDS}")
    try:
        return _CONSTRUCTORS[kind](cfg)
    except KeyError as e:
        raise ConfigError(f"task map {kind!r} is missing parameter {e}") from None
