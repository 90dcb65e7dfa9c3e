import json

import numpy as np
import pytest

from oracles import random_spd
from rmpflow_clf import taskmaps as tm
from rmpflow_clf.errors import NumericalError, StructureError
from rmpflow_clf.leaves import GdsLeaf, constant_metric, gds_attractor, gds_collision, zero_potential
from rmpflow_clf.rmp import (
    NodeState,
    RmpNatural,
    RmpTree,
    dump_evaluation,
    evaluate,
    evaluate_policy,
    forward_pass,
    pullback,
    pushforward,
    resolve,
)


class FixedLeaf:
    """Leaf returning a constant RMP."""

    family = "gds"

    def __init__(self, f, M):
        self.f = np.asarray(f, float)
        self.M = np.atleast_2d(np.asarray(M, float))

    @property
    def dim(self):
        return self.f.size

    def evaluate(self, x, xd, t=0.0):
        return RmpNatural(self.f.copy(), self.M.copy()), None


def test_pushforward_examples():
    tree = RmpTree(2)
    tree.add(tree.root, "id", tm.identity(2), FixedLeaf([0, 0], np.eye(2)))
    tree.add(tree.root, "sum", tm.linear([[1.0, 1.0]]), FixedLeaf([0], [[1]]))
    tree.add(tree.root, "dist", tm.distance_to_point([0.0, 0.0]), FixedLeaf([0], [[1]]))
    states = pushforward(tree, NodeState([1.0, 2.0], [3.0, 4.0]))
    np.testing.assert_array_equal(states["root/id"].x, [1, 2])
    np.testing.assert_array_equal(states["root/id"].xdot, [3, 4])
    np.testing.assert_array_equal(states["root/sum"].x, [3])
    np.testing.assert_array_equal(states["root/sum"].xdot, [7])
    states = pushforward(tree, NodeState([3.0, 4.0], [0.0, 0.0]))
    assert states["root/dist"].x[0] == pytest.approx(5.0)
    assert states["root/dist"].xdot[0] == 0.0


def test_pushforward_rejects_wrong_root_dim():
    tree = RmpTree(2)
    tree.add(tree.root, "id", tm.identity(2), FixedLeaf([0, 0], np.eye(2)))
    with pytest.raises(StructureError):
        pushforward(tree, NodeState([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]))


def test_pullback_examples():
    s = NodeState([0.5, -0.5], [1.0, 2.0])
    one = pullback([RmpNatural(np.array([1.0, 2.0]), np.eye(2))], [tm.identity(2)], s)
    np.testing.assert_array_equal(one.f, [1, 2])
    np.testing.assert_array_equal(one.M, np.eye(2))
    two = pullback([RmpNatural(np.array([1.0, 0.0]), np.eye(2)),
                    RmpNatural(np.array([0.0, 1.0]), np.eye(2))],
                   [tm.identity(2), tm.identity(2)], s)
    np.testing.assert_array_equal(two.f, [1, 1])
    np.testing.assert_array_equal(two.M, 2 * np.eye(2))
    lin = pullback([RmpNatural(np.array([1.0]), np.array([[1.0]]))], [tm.linear([[1.0, 1.0]])], s)
    np.testing.assert_array_equal(lin.f, [1, 1])
    np.testing.assert_array_equal(lin.M, [[1, 1], [1, 1]])


def test_pullback_subtracts_curvature_term():
    m = tm.distance_to_point([0.0, 0.0])
    s = NodeState([3.0, 4.0], [-0.8, 0.6])
    out = pullback([RmpNatural(np.array([0.0]), np.array([[2.0]]))], [m], s)
    # f_u = J^T (0 - 2 * 0.2)
    np.testing.assert_allclose(out.f, -0.4 * np.array([0.6, 0.8]), atol=1e-14)


def test_pullback_metric_is_sum_and_psd():
    rng = np.random.default_rng(10)
    for _ in range(50):
        n = rng.integers(1, 5)
        s = NodeState(rng.normal(size=n), rng.normal(size=n))
        rmps, maps, expected = [], [], np.zeros((n, n))
        for _ in range(rng.integers(1, 4)):
            m = rng.integers(1, 4)
            A = rng.normal(size=(m, n))
            Mv = random_spd(rng, m, lo=0.0, hi=3.0)
            rmps.append(RmpNatural(rng.normal(size=m), Mv))
            maps.append(tm.linear(A))
            expected += A.T @ Mv @ A
        out = pullback(rmps, maps, s)
        np.testing.assert_allclose(out.M, expected, atol=1e-12)
        assert np.linalg.eigvalsh(out.M).min() >= -1e-10


def test_pullback_flags_non_finite_jacobian():
    bad = tm.TaskMap(1, 1, psi=lambda x: x, jacobian=lambda x: np.array([[np.nan]]),
                     curvature=lambda x, xd: np.zeros(1))
    with pytest.raises(NumericalError):
        pullback([RmpNatural(np.zeros(1), np.eye(1))], [bad], NodeState([0.0], [0.0]))


def test_resolve_examples():
    np.testing.assert_array_equal(resolve(RmpNatural(np.array([2.0, 0.0]), np.eye(2))).a, [2, 0])
    np.testing.assert_allclose(resolve(RmpNatural(np.array([2.0, 4.0]), np.diag([2.0, 4.0]))).a, [1, 1])
    M = np.array([[1.0, 0.0], [0.0, 0.0]])
    f = np.array([3.0, 5.0])
    out = resolve(RmpNatural(f, M))
    np.testing.assert_allclose(out.a, np.linalg.pinv(M, rcond=1e-8) @ f, atol=1e-14)
    np.testing.assert_allclose(out.a, [3, 0], atol=1e-14)
    assert out.warning is not None
    assert out.M is M


def test_resolve_matches_pinv_and_inverts_nonsingular():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = rng.integers(1, 6)
        M = random_spd(rng, n, lo=0.1, hi=10.0)
        f = rng.normal(size=n)
        a = resolve(RmpNatural(f, M)).a
        np.testing.assert_allclose(a, np.linalg.pinv(M, rcond=1e-8) @ f, rtol=1e-9, atol=1e-12)
        assert np.linalg.norm(M @ a - f) <= 1e-9 * np.linalg.norm(f)


def test_resolve_zero_inertia():
    out = resolve(RmpNatural(np.ones(2), np.zeros((2, 2))))
    np.testing.assert_array_equal(out.a, [0, 0])
    assert out.warning


def test_single_leaf_policy_is_resolved_leaf():
    M = np.array([[2.0, 0.5], [0.5, 1.0]])
    tree = RmpTree(2)
    tree.add(tree.root, "leaf", tm.identity(2), FixedLeaf([1.0, -1.0], M))
    a = evaluate_policy(tree, NodeState([0.0, 0.0], [0.0, 0.0])).a
    np.testing.assert_allclose(a, np.linalg.solve(M, [1.0, -1.0]), atol=1e-14)


def test_disjoint_projections_give_block_diagonal_policy():
    M1, M2 = np.array([[2.0, 0.3], [0.3, 1.0]]), np.array([[4.0]])
    f1, f2 = np.array([1.0, 2.0]), np.array([3.0])
    tree = RmpTree(4)
    tree.add(tree.root, "a", tm.coordinate_projection(4, [0, 1]), FixedLeaf(f1, M1))
    tree.add(tree.root, "b", tm.coordinate_projection(4, [3]), FixedLeaf(f2, M2))
    tree.add(tree.root, "c", tm.coordinate_projection(4, [2]), FixedLeaf([0.5], [[0.5]]))
    a = evaluate_policy(tree, NodeState(np.zeros(4), np.zeros(4))).a
    np.testing.assert_allclose(a[:2], np.linalg.solve(M1, f1), atol=1e-14)
    np.testing.assert_allclose(a[3], 3.0 / 4.0, atol=1e-14)
    np.testing.assert_allclose(a[2], 1.0, atol=1e-14)


def _attractor_tree(chain=0):
    tree = RmpTree(2)
    parent = tree.root
    for k in range(chain):
        parent = tree.add(parent, f"id{k}", tm.identity(2))
    tree.add(parent, "goal", tm.identity(2), gds_attractor([1.0, 2.0]))
    tree.add(tree.root, "obstacle", tm.distance_to_sphere([0.0, 1.0], 0.3), gds_collision())
    return tree


def test_identity_chain_matches_flat_tree():
    rng = np.random.default_rng(12)
    flat, deep = _attractor_tree(0), _attractor_tree(2)
    for _ in range(20):
        s = NodeState(rng.uniform(-2, 2, 2) + [0, 3], rng.normal(size=2))
        np.testing.assert_allclose(evaluate_policy(deep, s).a, evaluate_policy(flat, s).a,
                                   rtol=1e-10, atol=1e-10)


def test_evaluation_is_deterministic():
    tree = _attractor_tree(1)
    s = NodeState([0.3, 2.5], [0.4, -1.0])
    a1, a2 = evaluate_policy(tree, s).a, evaluate_policy(tree, s).a
    assert a1.tobytes() == a2.tobytes()


def test_leaf_failure_reports_node_path():
    tree = _attractor_tree(0)
    with pytest.raises(NumericalError, match="root/obstacle"):
        evaluate(tree, NodeState([0.0, 1.1], [0.0, 0.0]))


def test_tree_structure_errors():
    tree = RmpTree(2)
    with pytest.raises(StructureError):
        tree.add(tree.root, "bad", tm.identity(3))
    with pytest.raises(StructureError):
        tree.add(tree.root, "leaf", tm.identity(2), FixedLeaf([0.0], [[1.0]]))
    tree.add(tree.root, "a", tm.identity(2), FixedLeaf([0, 0], np.eye(2)))
    with pytest.raises(StructureError):
        tree.add(tree.root, "a", tm.identity(2), FixedLeaf([0, 0], np.eye(2)))
    with pytest.raises(StructureError):
        tree.add("root/a", "child", tm.identity(2))
    with pytest.raises(StructureError):
        RmpTree(2).validate()
    dangling = RmpTree(2)
    dangling.add(dangling.root, "inner", tm.identity(2))
    with pytest.raises(StructureError):
        dangling.validate()
    with pytest.raises(StructureError):
        NodeState([1.0, 2.0], [1.0])


def test_forward_pass_root_jacobians_compose():
    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    tree = RmpTree(2)
    mid = tree.add(tree.root, "mid", tm.linear(A))
    tree.add(mid, "dist", tm.distance_to_point([0.0, 0.0]),
             GdsLeaf(constant_metric([[1.0]]), zero_potential(1), lambda x, xd: np.zeros((1, 1))))
    x = np.array([0.5, 0.7])
    fp = forward_pass(tree, NodeState(x, [0.0, 0.0]))
    y = A @ x
    np.testing.assert_allclose(fp.root_jacobians["root/mid/dist"], [(y / np.linalg.norm(y)) @ A])


def test_dump_evaluation_is_json_keyed_by_path():
    tree = _attractor_tree(1)
    ev = evaluate(tree, NodeState([0.3, 2.5], [0.4, -1.0]))
    data = json.loads(dump_evaluation(ev))
    assert set(data["nodes"]) == {"root", "root/id0", "root/id0/goal", "root/obstacle"}
    np.testing.assert_allclose(data["evaluation"]["control"], ev.control)
    assert "f" in data["nodes"]["root/obstacle"] and "M" in data["nodes"]["root"]


def test_rmp_natural_asymmetry():
    assert RmpNatural(np.zeros(2), np.eye(2)).asymmetry() == 0.0
    assert RmpNatural(np.zeros(2), np.array([[1.0, 1.0], [0.0, 1.0]])).asymmetry() > 0.1
