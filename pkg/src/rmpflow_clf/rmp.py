"""RMP representations, the RMP-tree and the RMP-algebra.

A tree is evaluated in two explicit passes. The forward pass pushes the
root state down every edge and records, per node, the state, the edge
Jacobian, the edge curvature ``Jdot xdot`` and the composed Jacobian from
the root. The backward pass evaluates the leaves and pulls their
natural-form RMPs back to the root, where ``resolve`` turns the result
into an acceleration. Nothing is cached on the nodes, so one tree can be
evaluated from several threads at once.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, StructureError

logger = logging.getLogger(__name__)

#: Relative singular-value cutoff used by ``resolve``.
TAU_SVD = 1e-8


@dataclass
class RmpNatural:
    """Force/inertia pair ``[f, M]``."""

    f: np.ndarray
    M: np.ndarray

    @property
    def dim(self):
        return self.f.shape[0]

    def is_finite(self):
        return bool(np.isfinite(self.f).all() and np.isfinite(self.M).all())

    def asymmetry(self):
        """Relative Frobenius norm of the skew part of ``M``."""
        scale = max(np.linalg.norm(self.M), 1e-300)
        return float(np.linalg.norm(self.M - self.M.T) / scale)


@dataclass
class RmpCanonical:
    """Acceleration/inertia pair ``(a, M)``.

    ``warning`` is set by ``resolve`` when the inertia is close to the
    pseudoinverse cutoff.
    """

    a: np.ndarray
    M: np.ndarray
    warning: str | None = None


@dataclass
class NodeState:
    x: np.ndarray
    xdot: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.xdot = np.asarray(self.xdot, dtype=float).reshape(-1)
        if self.x.shape != self.xdot.shape:
            raise StructureError(
                f"state position has length {self.x.size}, velocity {self.xdot.size}")


class Node:
    """A tree node living on an ``dim``-dimensional manifold.

    ``taskmap`` is the edge map from the parent (``None`` for the root),
    ``leaf`` the policy of a leaf node.
    """

    def __init__(self, name, dim, parent=None, taskmap=None, leaf=None):
        if "/" in name or not name:
            raise StructureError(f"invalid node name {name!r}")
        self.name = name
        self.dim = int(dim)
        self.parent = parent
        self.taskmap = taskmap
        self.leaf = leaf
        self.children = []

    @property
    def path(self):
        if self.parent is None:
            return self.name
        return f"{self.parent.path}/{self.name}"

    @property
    def is_leaf(self):
        return not self.children

    def __repr__(self):
        return f"Node({self.path!r}, dim={self.dim})"


class RmpTree:
    """Directed tree of policy nodes rooted at the configuration space."""

    def __init__(self, dim, name="root"):
        self.root = Node(name, dim)
        self._order = None
        self._plan = None

    @property
    def dim(self):
        return self.root.dim

    def add(self, parent, name, taskmap, leaf=None):
        """Attach a child under ``parent`` (a node or a path) and return it."""
        if isinstance(parent, str):
            parent = self.find(parent)
        if parent.leaf is not None:
            raise StructureError(f"{parent.path} holds a leaf policy and cannot have children")
        if taskmap.dim_in != parent.dim:
            raise StructureError(
                f"edge into {parent.path}/{name} expects input dim {taskmap.dim_in}, "
                f"parent has dim {parent.dim}")
        if leaf is not None and leaf.dim != taskmap.dim_out:
            raise StructureError(
                f"leaf at {parent.path}/{name} has dim {leaf.dim}, edge maps to {taskmap.dim_out}")
        if any(c.name == name for c in parent.children):
            raise StructureError(f"duplicate child name {name!r} under {parent.path}")
        node = Node(name, taskmap.dim_out, parent, taskmap, leaf)
        parent.children.append(node)
        self._order = None
        return node

    def nodes(self):
        """All nodes in pre-order (parents before children, children in insertion order)."""
        if self._order is None:
            order, stack = [], [self.root]
            while stack:
                node = stack.pop()
                order.append(node)
                stack.extend(reversed(node.children))
            self._order = order
            self._plan = None
        return self._order

    def plan(self):
        """Pre-order list of ``(node, path, parent_path)``; cached until the tree changes."""
        nodes = self.nodes()
        if self._plan is None:
            self.validate()
            paths = {}
            plan = []
            for node in nodes:
                parent_path = None if node.parent is None else paths[id(node.parent)]
                path = node.name if parent_path is None else f"{parent_path}/{node.name}"
                paths[id(node)] = path
                plan.append((node, path, parent_path))
            self._plan = plan
        return self._plan

    def leaves(self):
        return [n for n in self.nodes() if n.leaf is not None]

    def find(self, path):
        for node in self.nodes():
            if node.path == path:
                return node
        raise StructureError(f"no node at {path!r}")

    def validate(self):
        seen = set()
        for node in self.nodes():
            if id(node) in seen:
                raise StructureError(f"{node.path} reachable twice; not a tree")
            seen.add(id(node))
            if node is self.root:
                if node.leaf is not None:
                    raise StructureError("the root cannot hold a leaf policy")
                if not node.children:
                    raise StructureError("tree has no children under the root")
            elif node.is_leaf and node.leaf is None:
                raise StructureError(f"{node.path} has no children and no leaf policy")


@dataclass
class ForwardPass:
    """Per-node quantities produced by ``pushforward``, keyed by node path.

    ``jacobians``/``curvatures`` belong to the edge entering the node;
    ``root_jacobians`` is the Jacobian of the composed map from the root.
    """

    states: dict
    jacobians: dict = field(default_factory=dict)
    curvatures: dict = field(default_factory=dict)
    root_jacobians: dict = field(default_factory=dict)


@dataclass
class TreeEvaluation:
    """Everything one call of the policy computes, for diagnostics and export."""

    t: float
    forward: ForwardPass
    rmps: dict
    active: dict
    canonical: RmpCanonical

    @property
    def control(self):
        return self.canonical.a

    @property
    def states(self):
        return self.forward.states


def _check_finite(value, what, path):
    if not np.isfinite(value).all():
        raise NumericalError(f"non-finite {what}", path)


def forward_pass(tree, root_state):
    """Push ``root_state`` down the tree, recording edge Jacobians and curvatures."""
    if root_state.x.size != tree.dim:
        raise StructureError(f"root state has dim {root_state.x.size}, tree root has dim {tree.dim}")
    root = tree.root
    fp = ForwardPass(states={root.path: root_state})
    fp.root_jacobians[root.path] = np.eye(tree.dim)
    for node, path, parent_path in tree.plan():
        if parent_path is None:
            continue
        ps = fp.states[parent_path]
        m = node.taskmap
        y = np.asarray(m.psi(ps.x), dtype=float).reshape(-1)
        J = np.asarray(m.jacobian(ps.x), dtype=float)
        if y.size != node.dim or J.shape != (node.dim, node.parent.dim):
            raise StructureError(
                f"{path}: task map produced shape {y.shape}/{J.shape}, expected "
                f"({node.dim},)/({node.dim}, {node.parent.dim})")
        c = np.asarray(m.curvature(ps.x, ps.xdot), dtype=float).reshape(-1)
        _check_finite(y, "task map value", path)
        _check_finite(J, "Jacobian", path)
        _check_finite(c, "curvature", path)
        fp.states[path] = NodeState(y, J @ ps.xdot)
        fp.jacobians[path] = J
        fp.curvatures[path] = c
        fp.root_jacobians[path] = J @ fp.root_jacobians[parent_path]
    return fp


def pushforward(tree, root_state):
    """Map of node path to ``NodeState`` for every node of ``tree``."""
    return forward_pass(tree, root_state).states


def pullback(child_rmps, edge_maps, parent_state, jacobians=None, curvatures=None):
    """Combine child RMPs into the parent's natural-form RMP.

    ``f_u = sum J^T (f_v - M_v Jdot xdot)``, ``M_u = sum J^T M_v J``.
    Precomputed Jacobians and curvature vectors may be passed to skip
    re-evaluating the edge maps.
    """
    n = parent_state.x.size
    f = np.zeros(n)
    M = np.zeros((n, n))
    for k, (rmp, edge) in enumerate(zip(child_rmps, edge_maps)):
        if jacobians is None or curvatures is None:
            J = edge.jacobian(parent_state.x)
            c = edge.curvature(parent_state.x, parent_state.xdot)
            if not (np.isfinite(J).all() and np.isfinite(c).all()):
                raise NumericalError(f"non-finite Jacobian or curvature on child edge {k}")
        else:
            J, c = jacobians[k], curvatures[k]
        f += J.T @ (rmp.f - rmp.M @ c)
        M += J.T @ rmp.M @ J
    return RmpNatural(f, M)


def resolve(rmp, tau=TAU_SVD):
    """Natural form to canonical form, ``a = pinv(M) f`` with relative cutoff ``tau``."""
    U, s, Vt = np.linalg.svd(rmp.M)
    smax = s[0] if s.size else 0.0
    if smax <= 0.0:
        return RmpCanonical(np.zeros_like(rmp.f), rmp.M, "inertia is identically zero")
    keep = s > tau * smax
    a = Vt[keep].T @ ((U[:, keep].T @ rmp.f) / s[keep])
    warning = None
    smin_kept = s[keep][-1]
    if smin_kept < 10 * tau * smax:
        warning = f"ill-conditioned inertia: retained singular value {smin_kept:.3e} vs max {smax:.3e}"
        logger.debug(warning)
    elif not keep.all():
        warning = f"singular inertia: dropped {int((~keep).sum())} direction(s)"
    return RmpCanonical(a, rmp.M, warning)


def evaluate(tree, root_state, t=0.0):
    """Run forward pass, leaf evaluation, backward pass and resolve."""
    fp = forward_pass(tree, root_state)
    rmps, active = {}, {}
    plan = tree.plan()
    for node, path, _ in plan:
        if node.leaf is None:
            continue
        s = fp.states[path]
        try:
            rmp, flag = node.leaf.evaluate(s.x, s.xdot, t)
        except NumericalError as e:
            if e.path is None:
                raise NumericalError(str(e), path) from e
            raise
        except (ArithmeticError, np.linalg.LinAlgError) as e:
            raise NumericalError(f"leaf evaluation failed: {e}", path) from e
        if not rmp.is_finite():
            raise NumericalError("leaf produced a non-finite RMP", path)
        rmps[path] = rmp
        active[path] = flag
    for node, path, _ in reversed(plan):
        if node.leaf is not None:
            continue
        kids = [f"{path}/{c.name}" for c in node.children]
        rmps[path] = pullback(
            [rmps[k] for k in kids], [c.taskmap for c in node.children], fp.states[path],
            jacobians=[fp.jacobians[k] for k in kids],
            curvatures=[fp.curvatures[k] for k in kids])
        if not rmps[path].is_finite():
            raise NumericalError("pullback produced a non-finite RMP", path)
    canonical = resolve(rmps[tree.root.path])
    return TreeEvaluation(t, fp, rmps, active, canonical)


def evaluate_policy(tree, root_state, t=0.0):
    """Root acceleration policy; ``u = evaluate_policy(...).a``."""
    return evaluate(tree, root_state, t).canonical


def dump_evaluation(evaluation, energies=None):
    """Serialize per-node states, RMPs and (optionally) energies as JSON keyed by path."""
    out = {}
    for path, s in evaluation.states.items():
        rec = {"x": s.x.tolist(), "xdot": s.xdot.tolist()}
        if path in evaluation.rmps:
            rec["f"] = evaluation.rmps[path].f.tolist()
            rec["M"] = evaluation.rmps[path].M.tolist()
        if evaluation.active.get(path) is not None:
            rec["constraint_active"] = bool(evaluation.active[path])
        out[path] = rec
    for e in energies or ():
        out[e.path].update({"V": e.V, "kinetic": e.kinetic, "potential": e.potential})
    root = evaluation.canonical
    meta = {"t": evaluation.t, "control": root.a.tolist(), "warning": root.warning}
    return json.dumps({"evaluation": meta, "nodes": out}, indent=2)
