import numpy as np
import pytest

from oracles import critically_damped
from rmpflow_clf import leaves as lv
from rmpflow_clf import taskmaps as tm
from rmpflow_clf.errors import ConfigError, NumericalError
from rmpflow_clf.rmp import RmpNatural, RmpTree
from rmpflow_clf.scenarios import Scenario, scenario_goal_reach_2d
from rmpflow_clf.simulation import (
    SimConfig,
    convergence_order,
    count_crossings,
    path_length,
    simulate,
    time_to_goal,
)


def _scenario(tree, q0, qd0, goal=None):
    goals = None if goal is None else np.atleast_2d(np.asarray(goal, float))
    return Scenario("test", {}, tree, np.asarray(q0, float), np.asarray(qd0, float),
                    n_robots=1, robot_dim=tree.dim, goals=goals)


def _damped_tree():
    # G = 1, B = 2, Phi = q^2 / 2
    tree = RmpTree(1)
    pot = lv.Potential(lambda x: 0.5 * x @ x, lambda x: x.copy())
    tree.add(tree.root, "leaf", tm.identity(1),
             lv.GdsLeaf(lv.constant_metric([[1.0]]), pot, lambda x, xd: np.array([[2.0]])))
    return tree


class ScriptedLeaf:
    """1-D leaf with a callable force and unit inertia."""

    family = "gds"
    dim = 1

    def __init__(self, force):
        self.force = force

    def evaluate(self, x, xd, t=0.0):
        return RmpNatural(np.atleast_1d(self.force(x, xd)).astype(float), np.eye(1)), None


def _scripted(force, q0=0.0, qd0=1.0):
    tree = RmpTree(1)
    tree.add(tree.root, "leaf", tm.identity(1), ScriptedLeaf(force))
    return _scenario(tree, [q0], [qd0])


def test_constant_velocity_without_forces():
    tree = RmpTree(2)
    tree.add(tree.root, "leaf", tm.identity(2), lv.GdsLeaf(lv.constant_metric(np.eye(2)),
                                                           lv.zero_potential(2),
                                                           lambda x, xd: np.zeros((2, 2))))
    traj = simulate(_scenario(tree, [0.0, 0.0], [1.0, 0.0]), SimConfig(h=0.01, horizon=1.0))
    np.testing.assert_allclose(traj.q[-1], [1.0, 0.0], atol=1e-8)
    np.testing.assert_allclose(traj.qdot, np.tile([1.0, 0.0], (len(traj), 1)), atol=1e-12)


def test_critically_damped_matches_closed_form():
    traj = simulate(_scenario(_damped_tree(), [1.0], [0.0]),
                    SimConfig(h=0.01, horizon=5.0, stop_on_convergence=False))
    np.testing.assert_allclose(traj.q[:, 0], critically_damped(1.0, 0.0, traj.t), atol=1e-6)
    assert traj.t[-1] == pytest.approx(5.0)
    assert len(traj) == 501


def test_rk4_fourth_order_on_damped_oscillator():
    errors = []
    for h in (0.1, 0.05, 0.025):
        traj = simulate(_scenario(_damped_tree(), [1.0], [0.5]),
                        SimConfig(h=h, horizon=2.0, stop_on_convergence=False), record_energy=False)
        errors.append(abs(traj.q[-1, 0] - critically_damped(1.0, 0.5, 2.0)))
    assert np.all(convergence_order(errors) > 3.5)


def test_semi_implicit_euler_is_first_order():
    errors = []
    for h in (0.02, 0.01, 0.005):
        traj = simulate(_scenario(_damped_tree(), [1.0], [0.0]),
                        SimConfig(h=h, horizon=2.0, integrator="semi-implicit-euler",
                                  stop_on_convergence=False), record_energy=False)
        errors.append(abs(traj.q[-1, 0] - critically_damped(1.0, 0.0, 2.0)))
    orders = convergence_order(errors)
    assert np.all((orders > 0.8) & (orders < 1.5))


def test_sim_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(h=0.0)
    with pytest.raises(ConfigError):
        SimConfig(h=0.1, horizon=0.01)
    with pytest.raises(ConfigError):
        SimConfig(integrator="euler")


def test_policy_error_truncates_trajectory():
    def force(x, xd):
        if x[0] > 0.5:
            raise NumericalError("boom")
        return 0.0

    traj = simulate(_scripted(force), SimConfig(h=0.01, horizon=2.0), record_energy=False)
    errors = traj.event("error")
    assert len(errors) == 1 and "boom" in errors[0]["message"]
    assert traj.t[-1] < 0.6
    assert np.all(traj.q[:, 0] <= 0.5)


def test_initial_state_failure_is_config_error():
    def force(x, xd):
        raise NumericalError("bad start")

    with pytest.raises(ConfigError):
        simulate(_scripted(force), record_energy=False)


def test_non_finite_state_stops_at_last_finite_state():
    traj = simulate(_scripted(lambda x, xd: 1e300), SimConfig(h=1e10, horizon=1e12),
                    record_energy=False)
    assert traj.event("non-finite") or traj.event("error")
    assert np.isfinite(traj.q).all() and np.isfinite(traj.qdot).all()
    assert len(traj) < 101


def test_convergence_stops_run_and_is_recorded():
    traj = simulate(_scenario(_damped_tree(), [1.0], [0.0], goal=[0.0]), SimConfig(h=0.01))
    assert traj.converged and traj.event("converged")
    assert traj.t[-1] < 30.0
    assert abs(traj.q[-1, 0]) < 1e-4 and abs(traj.qdot[-1, 0]) < 1e-4


def test_summary_events_present():
    traj = simulate(scenario_goal_reach_2d("spiral"), SimConfig(h=0.01, horizon=1.0))
    kinds = {e["kind"] for e in traj.events}
    assert {"min_clearance", "min_pair_distance", "constraint_activity"} <= kinds
    assert traj.clf_paths == ["root/attractor"]
    assert traj.active.shape == (len(traj), 1)


def test_time_to_goal():
    traj = simulate(_scenario(_damped_tree(), [1.0], [0.0], goal=[0.0]), SimConfig(h=0.01, horizon=3.0))
    t, reached = time_to_goal(traj, tol=0.5)
    expected = traj.t[np.argmax(np.abs(traj.q[:, 0]) < 0.5)]
    assert reached and t == expected
    t, reached = time_to_goal(traj, tol=1e-9)
    assert not reached and t == traj.t[-1]


def test_path_length_and_crossings():
    assert path_length([[0, 0], [3, 4], [3, 5]]) == pytest.approx(6.0)
    P = np.array([[0.0, 0.0], [2.0, 2.0]])
    Q = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert count_crossings(P, Q) == 1
    assert count_crossings(P, Q, exclude=[[0.0, 0.0]], radius=3.0) == 0
    # touching at a shared endpoint is not a proper crossing
    assert count_crossings([[0, 0], [1, 1]], [[1, 1], [2, 0]]) == 0
    x = np.linspace(0, 2 * np.pi, 200)
    assert count_crossings(np.column_stack([x, np.sin(x)]), np.column_stack([x, np.zeros_like(x) + 0.01])) == 2


def test_repeat_runs_are_bit_identical():
    a = simulate(scenario_goal_reach_2d("sinusoidal"), SimConfig(h=0.01, horizon=2.0))
    b = simulate(scenario_goal_reach_2d("sinusoidal"), SimConfig(h=0.01, horizon=2.0))
    assert a.q.tobytes() == b.q.tobytes()
    assert a.qdot.tobytes() == b.qdot.tobytes()
    assert a.energy.V.tobytes() == b.energy.V.tobytes()
