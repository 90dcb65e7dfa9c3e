"""Leaf policies: geometric dynamical systems and CLF-constrained leaves.

A leaf lives on a subtask space with coordinate ``x`` (``z`` in the
literature) and returns a natural-form RMP ``[f, M]``. Both families share
a metric ``G(x, xdot)``, whose partial derivatives give the curvature terms

    Xi[a, b] = 1/2 sum_i xdot_i dG[a, i]/dxdot_b
    xi       = Gdot_x xdot - 1/2 grad_x(xdot^T G xdot)

and the inertia ``M = G + Xi``.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError
from .rmp import RmpNatural

#: Below this speed the CLF constraint is vacuous and the nominal force is returned.
EPS_V = 1e-9

_R90 = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class MetricSpec:
    """Metric ``G(x, xdot)`` with its partials.

    ``dG_dx(x, xdot)[a, i, b]`` is ``dG[a, i]/dx_b``; ``dG_dxdot`` likewise
    for the velocity. ``None`` means the metric does not depend on that
    argument.
    """

    dim: int
    G: Callable
    dG_dx: Callable | None = None
    dG_dxdot: Callable | None = None

    def curvature_terms(self, x, xd):
        m = self.dim
        Xi = np.zeros((m, m))
        xi = np.zeros(m)
        if self.dG_dxdot is not None:
            Xi = 0.5 * np.einsum("aib,i->ab", self.dG_dxdot(x, xd), xd)
        if self.dG_dx is not None:
            dGx = self.dG_dx(x, xd)
            xi = np.einsum("aib,b,i->a", dGx, xd, xd) - 0.5 * np.einsum("a,aib,i->b", xd, dGx, xd)
        return Xi, xi


def constant_metric(G):
    G = np.atleast_2d(np.asarray(G, dtype=float))
    return MetricSpec(G.shape[0], lambda x, xd: G)


@dataclass(frozen=True, eq=False)
class Potential:
    value: Callable
    grad: Callable


def zero_potential(dim):
    zero = np.zeros(dim)
    return Potential(lambda x: 0.0, lambda x: zero)


def attractor_potential(goal, gain):
    """``k (r - log(1 + r))`` with ``r = |x - goal|``: smooth, gradient bounded by ``k``."""
    goal = np.asarray(goal, dtype=float)

    def value(x):
        r = np.linalg.norm(x - goal)
        return gain * (r - np.log1p(r))

    def grad(x):
        d = x - goal
        return gain * d / (1.0 + np.linalg.norm(d))

    return Potential(value, grad)


def spring_potential(target, gain):
    """``k/2 (z - target)^2`` on a scalar space."""
    def value(x):
        return 0.5 * gain * (x[0] - target) ** 2

    def grad(x):
        return np.array([gain * (x[0] - target)])

    return Potential(value, grad)


def inertia(metric, x, xd):
    """``M = G + Xi``."""
    Xi, _ = metric.curvature_terms(x, xd)
    M = metric.G(x, xd) + Xi
    if not np.isfinite(M).all():
        raise FloatingPointError("non-finite inertia")
    return M


@dataclass(frozen=True, eq=False)
class NominalController:
    """Desired leaf acceleration ``u_d(x, xdot, t)``.

    ``time_varying`` marks controllers outside the time-invariant setting of
    the convergence results; they are reported as heuristic.
    """

    u_d: Callable
    kind: str = "custom"
    time_varying: bool = False


def _nominal_from_force(force, metric, kind, time_varying=False):
    def u_d(x, xd, t):
        f = force(x, xd, t)
        if metric is None:
            return f
        return np.linalg.solve(inertia(metric, x, xd), f)
    return NominalController(u_d, kind, time_varying)


def nominal_potential(potential, metric=None):
    """``M u_d = -grad Phi``."""
    return _nominal_from_force(lambda x, xd, t: -potential.grad(x), metric, "potential")


def _rotated(potential, x):
    if x.shape[0] != 2:
        raise ConfigError(f"rotating nominal controllers need a 2-D space, got dim {x.shape[0]}")
    return -_R90 @ potential.grad(x)


def nominal_spiral(potential, metric=None):
    """``M u_d = -grad Phi + |xdot| v`` with ``v = -R(pi/2) grad Phi``."""
    def force(x, xd, t):
        return -potential.grad(x) + np.linalg.norm(xd) * _rotated(potential, x)
    return _nominal_from_force(force, metric, "spiral")


def nominal_sinusoidal(potential, metric=None):
    """``M u_d = -grad Phi + sin(t/4) |xdot| v``."""
    def force(x, xd, t):
        return -potential.grad(x) + np.sin(t / 4.0) * np.linalg.norm(xd) * _rotated(potential, x)
    return _nominal_from_force(force, metric, "sinusoidal", time_varying=True)


NOMINALS = {
    "potential": nominal_potential,
    "spiral": nominal_spiral,
    "sinusoidal": nominal_sinusoidal,
}


def quadratic_alpha(eta=1.0):
    """Class-K decay rate ``alpha(s) = eta s^2``."""
    if not eta > 0:
        raise ConfigError(f"alpha gain must be positive, got {eta}")
    return lambda s: eta * s * s


def check_class_k(alpha, s_max=10.0, n=201):
    s = np.linspace(0.0, s_max, n)
    vals = np.array([alpha(v) for v in s])
    if vals[0] != 0.0:
        raise ConfigError(f"alpha(0) must be 0, got {vals[0]}")
    if not np.all(np.diff(vals) > 0):
        raise ConfigError("alpha must be strictly increasing")


def project_halfspace(f0, a, b, P_inv):
    """Minimize ``|f - f0|_P^2`` subject to ``a.f <= b`` in closed form.

    Returns ``(f, active)``; ``P_inv`` is the inverse of the weight.
    """
    violation = a @ f0 - b
    if violation <= 0.0:
        return f0, False
    Pa = P_inv @ a
    return f0 - (violation / (a @ Pa)) * Pa, True


class GdsLeaf:
    """Leaf following ``M xddot + xi = -grad Phi - B xdot``."""

    family = "gds"

    def __init__(self, metric, potential, damping, kind="gds", params=None):
        self.metric = metric
        self.potential = potential
        self.damping = damping
        self.kind = kind
        self.params = dict(params or {})

    @property
    def dim(self):
        return self.metric.dim

    def evaluate(self, x, xd, t=0.0):
        return gds_force(self, x, xd), None

    def damping_matrix(self, x, xd):
        return self.damping(x, xd)

    def decay_rate(self, x, xd):
        """Energy dissipated per unit time, ``xdot^T B xdot``."""
        return float(xd @ self.damping(x, xd) @ xd)

    def to_config(self):
        return {"kind": self.kind, **self.params}


class ClfLeaf:
    """Minimally invasive leaf: nominal force projected onto the CLF half-space.

    ``P`` is ``"identity"``, ``"inverse-inertia"`` or a symmetric
    positive-definite matrix.
    """

    family = "clf"

    def __init__(self, metric, potential, alpha, nominal, P="identity", kind="clf", params=None):
        self.metric = metric
        self.potential = potential
        self.alpha = alpha
        self.nominal = nominal
        self.kind = kind
        self.params = dict(params or {})
        check_class_k(alpha)
        if isinstance(P, str):
            if P not in ("identity", "inverse-inertia"):
                raise ConfigError(f"unknown weight option {P!r}")
            self.P = P
            self.P_inv = np.eye(metric.dim) if P == "identity" else None
        else:
            P = np.atleast_2d(np.asarray(P, dtype=float))
            if P.shape != (metric.dim, metric.dim) or not np.allclose(P, P.T):
                raise ConfigError("weight matrix must be square, symmetric and match the leaf dim")
            try:
                np.linalg.cholesky(P)
            except np.linalg.LinAlgError:
                raise ConfigError("weight matrix is not positive definite") from None
            self.P = P
            self.P_inv = np.linalg.inv(P)

    @property
    def dim(self):
        return self.metric.dim

    def evaluate(self, x, xd, t=0.0):
        return clf_force(self, x, xd, t)

    def damping_matrix(self, x, xd):
        return np.zeros((self.dim, self.dim))

    def decay_rate(self, x, xd):
        """Guaranteed decay, ``alpha(|xdot|)``."""
        return float(self.alpha(np.linalg.norm(xd)))

    def to_config(self):
        return {"kind": self.kind, **self.params}


def gds_force(leaf, x, xd):
    """``f = -grad Phi - B xdot - xi`` with ``M = G + Xi``."""
    Xi, xi = leaf.metric.curvature_terms(x, xd)
    M = leaf.metric.G(x, xd) + Xi
    f = -leaf.potential.grad(x) - leaf.damping(x, xd) @ xd - xi
    return RmpNatural(f, M)


def clf_force(leaf, x, xd, t=0.0):
    """Closest force to ``M u_d`` satisfying the leaf CLF constraint.

    Constraint: ``xdot.f <= -xdot.(grad Phi + xi) - alpha(|xdot|)``.
    Returns ``(RmpNatural, active)``.
    """
    Xi, xi = leaf.metric.curvature_terms(x, xd)
    M = leaf.metric.G(x, xd) + Xi
    f0 = M @ leaf.nominal.u_d(x, xd, t)
    speed = np.sqrt(xd @ xd)
    if speed <= EPS_V:
        return RmpNatural(f0, M), False
    b = -xd @ (leaf.potential.grad(x) + xi) - leaf.alpha(speed)
    P_inv = M if leaf.P_inv is None else leaf.P_inv
    f, active = project_halfspace(f0, xd, b, P_inv)
    return RmpNatural(f, M), active


# Shipped leaves -----------------------------------------------------------

def gds_attractor(goal, gain=4.0, damping=4.0):
    """Ambient-space attractor: ``G = I``, bounded-gradient potential, ``B = beta I``."""
    goal = np.asarray(goal, dtype=float)
    dim = goal.size
    B = damping * np.eye(dim)
    return GdsLeaf(constant_metric(np.eye(dim)), attractor_potential(goal, gain),
                   lambda x, xd: B, kind="gds_attractor",
                   params={"goal": goal.tolist(), "gain": gain, "damping": damping})


def gds_distance_attractor(gain=1.0, damping=2.0):
    """Attractor on a 1-D distance space: ``G = 1``, ``Phi = k z^2 / 2``, ``B = beta``."""
    B = np.array([[damping]])
    return GdsLeaf(constant_metric([[1.0]]), spring_potential(0.0, gain), lambda x, xd: B,
                   kind="gds_distance_attractor", params={"gain": gain, "damping": damping})


def collision_metric(eps_u=1e-6):
    """``G(z, zdot) = w(z) u(zdot)``, ``w = 1/z^4``, ``u = eps + min(0, zdot) zdot``."""

    def parts(z, zd):
        if not z > 0.0:
            raise FloatingPointError(f"collision distance non-positive (z = {z:.3e})")
        w = z ** -4
        neg = min(0.0, zd)
        return w, -4.0 * w / z, eps_u + neg * zd, 2.0 * neg

    def G(x, xd):
        w, _, u, _ = parts(x[0], xd[0])
        return np.array([[w * u]])

    def dG_dx(x, xd):
        _, dw, u, _ = parts(x[0], xd[0])
        return np.array([[[dw * u]]])

    def dG_dxdot(x, xd):
        w, _, _, du = parts(x[0], xd[0])
        return np.array([[[w * du]]])

    return MetricSpec(1, G, dG_dx, dG_dxdot)


def gds_collision(eta_b=1.0, eps_u=1e-6):
    """Velocity-gated barrier on the scaled obstacle distance; ``Phi = 0``, ``B = eta_b w(z)``."""
    def damping(x, xd):
        return np.array([[eta_b * x[0] ** -4]])

    return GdsLeaf(collision_metric(eps_u), zero_potential(1), damping,
                   kind="gds_collision", params={"eta_b": eta_b, "eps_u": eps_u})


def gds_formation(target, gain=20.0, weight=10.0, damping=10.0):
    """Distance keeper on a pairwise-distance space: ``Phi = k (d - d*)^2 / 2``."""
    G = np.array([[weight]])
    B = np.array([[damping]])
    return GdsLeaf(constant_metric(G), spring_potential(target, gain), lambda x, xd: B,
                   kind="gds_formation",
                   params={"target": target, "gain": gain, "weight": weight, "damping": damping})


def gds_damper(dim=2, weight=0.1, damping=0.5):
    """Pure damper, ``Phi = 0``; keeps the root inertia nonsingular."""
    G = weight * np.eye(dim)
    B = damping * np.eye(dim)
    return GdsLeaf(constant_metric(G), zero_potential(dim), lambda x, xd: B,
                   kind="gds_damper", params={"dim": dim, "weight": weight, "damping": damping})


def clf_attractor(goal, gain=4.0, eta=4.0, nominal="spiral", P="identity"):
    """Ambient-space CLF attractor with ``G = I``, the bounded-gradient potential,
    ``alpha(s) = eta s^2`` and one of the shipped nominal controllers."""
    if nominal not in NOMINALS:
        raise ConfigError(f"unknown nominal controller {nominal!r}; expected one of {tuple(NOMINALS)}")
    goal = np.asarray(goal, dtype=float)
    metric = constant_metric(np.eye(goal.size))
    potential = attractor_potential(goal, gain)
    if nominal != "potential" and goal.size != 2:
        raise ConfigError(f"{nominal} nominal controller needs a 2-D attractor, got dim {goal.size}")
    ctrl = NOMINALS[nominal](potential, metric)
    P_cfg = P if isinstance(P, str) else np.asarray(P, dtype=float).tolist()
    return ClfLeaf(metric, potential, quadratic_alpha(eta), ctrl, P, kind="clf_attractor",
                   params={"goal": goal.tolist(), "gain": gain, "eta": eta,
                           "nominal": nominal, "P": P_cfg})


_LEAVES = {
    "gds_attractor": gds_attractor,
    "gds_distance_attractor": gds_distance_attractor,
    "gds_collision": gds_collision,
    "gds_formation": gds_formation,
    "gds_damper": gds_damper,
    "clf_attractor": clf_attractor,
}

LEAF_KINDS = tuple(_LEAVES)


def from_config(cfg):
    """Build a leaf from ``{"kind": ..., <params>}``."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in _LEAVES:
        raise ConfigError(f"unknown leaf kind {kind!r}; expected one of {LEAF_KINDS}")
    try:
        return _LEAVES[kind](**cfg)
    except TypeError as e:
        raise ConfigError(f"bad parameters for leaf {kind!r}: {e}") from None
