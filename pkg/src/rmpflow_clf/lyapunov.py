"""Recursive Lyapunov candidates and numerical certificates of decay and convergence.

Every node ``u`` gets a metric, damping and potential by pulling its
children's back through the edge Jacobians::

    G_u = sum J^T G_v J,   B_u = sum J^T B_v J,   Phi_u = sum Phi_v o psi

and the candidate ``V_u = 1/2 xdot^T G_u xdot + Phi_u``. CLF leaves carry no
damping matrix; they contribute ``alpha(|zdot|)`` to the decay bound instead.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rmp import TAU_SVD, NodeState, evaluate, forward_pass


@dataclass
class NodeEnergy:
    path: str
    V: float
    kinetic: float
    potential: float
    Vdot_fd: float | None = None
    Vdot_predicted: float | None = None


@dataclass
class RootAggregate:
    G: np.ndarray
    B: np.ndarray
    potential: float
    potential_grad: np.ndarray
    V: float
    V_leaves: float


def node_quantities(tree, fp):
    """``{path: (G, B, Phi, grad Phi, U)}`` for every node, from one forward pass.

    ``U`` sums the leaf decay rates below the node.
    """
    out = {}
    for node, path, _ in reversed(tree.plan()):
        s = fp.states[path]
        if node.leaf is not None:
            leaf = node.leaf
            out[path] = (
                leaf.metric.G(s.x, s.xdot),
                leaf.damping_matrix(s.x, s.xdot),
                float(leaf.potential.value(s.x)),
                leaf.potential.grad(s.x),
                leaf.decay_rate(s.x, s.xdot),
            )
            continue
        n = node.dim
        G, B, grad = np.zeros((n, n)), np.zeros((n, n)), np.zeros(n)
        phi = U = 0.0
        for child in node.children:
            cpath = f"{path}/{child.name}"
            J = fp.jacobians[cpath]
            Gv, Bv, phiv, gradv, Uv = out[cpath]
            G += J.T @ Gv @ J
            B += J.T @ Bv @ J
            phi += phiv
            grad += J.T @ gradv
            U += Uv
        out[path] = (G, B, phi, grad, U)
    return out


def _energy(G, phi, xd):
    kinetic = 0.5 * float(xd @ G @ xd)
    return kinetic + phi, kinetic


def node_energies(tree, root_state, forward=None):
    """``V`` for every node, with the predicted decay ``-sum U`` of its subtree."""
    fp = forward if forward is not None else forward_pass(tree, root_state)
    q = node_quantities(tree, fp)
    out = []
    for _, path, _ in tree.plan():
        G, _, phi, _, U = q[path]
        V, kin = _energy(G, phi, fp.states[path].xdot)
        out.append(NodeEnergy(path, V, kin, phi, Vdot_predicted=-U))
    return out


def root_aggregate(tree, root_state, forward=None):
    fp = forward if forward is not None else forward_pass(tree, root_state)
    q = node_quantities(tree, fp)
    G, B, phi, grad, _ = q[tree.root.path]
    V, _ = _energy(G, phi, root_state.xdot)
    V_leaves = 0.0
    for node, path, _ in tree.plan():
        if node.leaf is not None:
            V_leaves += _energy(q[path][0], q[path][2], fp.states[path].xdot)[0]
    return RootAggregate(G, B, phi, grad, V, V_leaves)


def flattened_metric(tree, forward):
    """``sum_k J_k^T G_k J_k`` with composed root-to-leaf Jacobians."""
    G = np.zeros((tree.dim, tree.dim))
    for node, path, _ in tree.plan():
        if node.leaf is not None:
            s = forward.states[path]
            J = forward.root_jacobians[path]
            G += J.T @ node.leaf.metric.G(s.x, s.xdot) @ J
    return G


def stacked_jacobian(tree, forward):
    return np.vstack([forward.root_jacobians[path]
                      for node, path, _ in tree.plan() if node.leaf is not None])


def all_gds(tree):
    return all(leaf.family == "gds" for leaf in tree_leaves(tree))


def tree_leaves(tree):
    return [n.leaf for n in tree.leaves()]


@dataclass
class EnergySeries:
    """Per-step root energy along a trajectory.

    ``predicted`` is ``-q'B_r q'`` for all-GDS trees (an equality), otherwise
    the bound ``-sum_k U_k``.
    """

    V: np.ndarray
    V_leaves: np.ndarray
    predicted: np.ndarray
    min_singular: np.ndarray
    mode: str


def energy_series(tree, q, qdot, forwards=None):
    """Root energy, leaf-sum energy, predicted rate and immersion margin per step.

    ``forwards`` may hold forward passes already computed at the same states.
    """
    n = len(q)
    V = np.empty(n)
    V_leaves = np.empty(n)
    pred = np.empty(n)
    smin = np.empty(n)
    gds = all_gds(tree)
    leaf_paths = [p for node, p, _ in tree.plan() if node.leaf is not None]
    for k in range(n):
        fp = forwards[k] if forwards is not None else forward_pass(tree, NodeState(q[k], qdot[k]))
        xd = fp.states[tree.root.path].xdot
        quantities = node_quantities(tree, fp)
        G, B, phi, _, U = quantities[tree.root.path]
        V[k] = _energy(G, phi, xd)[0]
        V_leaves[k] = sum(_energy(quantities[p][0], quantities[p][2], fp.states[p].xdot)[0]
                          for p in leaf_paths)
        pred[k] = -float(xd @ B @ xd) if gds else -U
        J = stacked_jacobian(tree, fp)
        smin[k] = np.linalg.svd(J, compute_uv=False)[-1] if J.shape[0] >= tree.dim else 0.0
    return EnergySeries(V, V_leaves, pred, smin, "equality" if gds else "bound")


def central_difference(values, h):
    """Central-difference derivative on a uniform grid; NaN at both ends."""
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, np.nan)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * h)
    return out


def decay_tolerance(h, floor=1e-3, h2_scale=1e-2):
    """``max(floor, 5 h^2 scale)``; the per-step tolerance multiplies this by ``1 + |Vdot|``."""
    return max(floor, 5.0 * h * h * h2_scale)


@dataclass
class DecayReport:
    mode: str
    h: float
    tol: float
    records: list = field(default_factory=list)
    max_violation: float = -math.inf
    worst_step: int | None = None
    pass_fraction: float = 0.0
    min_fraction: float = 0.99
    passed: bool = False

    def summary(self):
        label = "energy decay (GDS equality)" if self.mode == "equality" else "decay bound (CLF inequality)"
        verdict = "PASS" if self.passed else "FAIL"
        where = "" if self.worst_step is None else f", worst at t={self.records[self.worst_step]['t']:.4g}"
        return (f"{label}: {verdict} ({100 * self.pass_fraction:.2f}% of steps within tolerance, "
                f"max violation {self.max_violation:.3e}{where})")


def check_decay(trajectory, tree, floor=1e-3, h2_scale=1e-2, min_fraction=0.99):
    """Compare the finite-difference root energy rate with its prediction.

    All-GDS trees must satisfy ``|Vdot + q'B_r q'| <= tol (1 + |Vdot|)``;
    trees with CLF leaves must satisfy ``Vdot <= -sum U_k + tol (1 + |Vdot|)``.
    A step passes when its violation is non-positive; the check passes when
    at least ``min_fraction`` of the interior steps pass.
    """
    t = np.asarray(trajectory.t)
    if t.size < 3:
        raise ConfigError(f"trajectory has {t.size} step(s); at least 3 are needed for central differences")
    h = float(t[1] - t[0])
    series = trajectory.energy if getattr(trajectory, "energy", None) is not None \
        else energy_series(tree, trajectory.q, trajectory.qdot)
    Vdot = central_difference(series.V, h)
    tol = decay_tolerance(h, floor, h2_scale)
    report = DecayReport(series.mode, h, tol, min_fraction=min_fraction)
    n_ok = 0
    for k in range(1, t.size - 1):
        allowed = tol * (1.0 + abs(Vdot[k]))
        if series.mode == "equality":
            violation = abs(Vdot[k] - series.predicted[k]) - allowed
        else:
            violation = Vdot[k] - series.predicted[k] - allowed
        report.records.append({
            "t": float(t[k]), "V_r": float(series.V[k]), "Vdot_fd": float(Vdot[k]),
            "Vdot_bound": float(series.predicted[k]), "violation": float(violation),
            "min_singular_value": float(series.min_singular[k]),
        })
        n_ok += violation <= 0.0
        if violation > report.max_violation:
            report.max_violation = float(violation)
            report.worst_step = len(report.records) - 1
    report.pass_fraction = n_ok / len(report.records)
    report.passed = report.pass_fraction >= min_fraction
    return report


@dataclass
class InvariantSetReport:
    kind: str
    speed: float
    leaf_force: float
    potential_grad: float
    tolerances: tuple
    passed: bool

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        target = "rest with balanced leaf forces" if self.kind == "force" else "rest at a potential critical point"
        return (f"invariant set ({target}): {verdict} (|qdot|={self.speed:.2e}, "
                f"|sum J^T f|={self.leaf_force:.2e}, |grad Phi_r|={self.potential_grad:.2e})")


def check_invariant_set(final_state, tree, kind="force", t=0.0, tol_speed=1e-3, tol_force=1e-3, tol_grad=1e-3):
    """Membership of ``final_state`` in the limit set.

    ``kind="force"``: ``qdot = 0`` and ``sum_k J_k^T f_k = 0``.
    ``kind="potential"``: ``qdot = 0`` and ``grad Phi_r = 0``.
    All three norms are always reported.
    """
    if kind not in ("force", "potential"):
        raise ConfigError(f"unknown invariant set kind {kind!r}")
    ev = evaluate(tree, final_state, t)
    fp = ev.forward
    total = np.zeros(tree.dim)
    for node, path, _ in tree.plan():
        if node.leaf is not None:
            total += fp.root_jacobians[path].T @ ev.rmps[path].f
    grad = node_quantities(tree, fp)[tree.root.path][3]
    speed = float(np.linalg.norm(final_state.xdot))
    force = float(np.linalg.norm(total))
    g = float(np.linalg.norm(grad))
    ok = speed < tol_speed and (force < tol_force if kind == "force" else g < tol_grad)
    return InvariantSetReport(kind, speed, force, g, (tol_speed, tol_force, tol_grad), ok)


@dataclass
class ImmersionReport:
    rank: list
    min_singular: list
    dim: int
    full_rank: bool

    def summary(self):
        verdict = "full rank" if self.full_rank else "WARNING rank-deficient"
        return (f"immersion diagnostic: {verdict} (min rank {min(self.rank)}/{self.dim}, "
                f"min singular value {min(self.min_singular):.3e})")


def check_immersion(tree, states, tau=TAU_SVD):
    """Rank of the stacked root-to-leaf Jacobian at each state. Advisory only."""
    ranks, smins = [], []
    for state in states:
        J = stacked_jacobian(tree, forward_pass(tree, state))
        s = np.linalg.svd(J, compute_uv=False)
        rank = int((s > tau * s[0]).sum()) if s.size and s[0] > 0 else 0
        ranks.append(rank)
        smins.append(float(s[-1]) if s.size == tree.dim else 0.0)
    return ImmersionReport(ranks, smins, tree.dim, all(r == tree.dim for r in ranks))
