import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riemintent import robot
from riemintent.robot import RobotState, TargetMap, at_home, set_target, simulate, step

TARGETS = TargetMap()


def test_set_target_examples():
    s = at_home(TARGETS)
    left = set_target(s, "left", TARGETS)
    np.testing.assert_array_equal(left.x_star, TARGETS.left_target)
    np.testing.assert_array_equal(left.x, s.x)
    np.testing.assert_array_equal(set_target(s, "right", TARGETS).x_star, TARGETS.right_target)
    again = set_target(left, "left", TARGETS)
    np.testing.assert_array_equal(again.x_star, left.x_star)
    np.testing.assert_array_equal(again.x, left.x)
    with pytest.raises(ValueError):
        set_target(s, "up", TARGETS)


def test_fixed_point_is_exact():
    s = RobotState([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(step(s).x, s.x)


def test_single_euler_step():
    s = RobotState([1.0, 0.0, 0.0], np.zeros(3), A=-np.eye(3), dt=0.01)
    np.testing.assert_allclose(step(s).x, [0.99, 0.0, 0.0], rtol=0, atol=1e-15)


def test_decay_matches_exponential():
    dt = robot.DEFAULT_DT
    s = RobotState([0.5, 0.0, 0.0], [0.0, 0.0, 0.0], dt=dt)
    traj = simulate(s, int(3.0 / dt))
    t = np.arange(len(traj)) * dt
    d = np.array([st.distance for st in traj])
    exact = 0.5 * np.exp(-2.0 * t)
    rel = np.abs(d - exact) / exact
    # (1 - 2dt)^k = exp(-2t - 2dt t - (8/3) dt^2 t - ...): first-order term 2dt per unit time
    assert np.all(rel <= 2.0 * dt * t * (1.0 + 2.0 * dt))
    assert rel[-1] <= 2.0 * dt * t[-1]


def test_state_validation():
    with pytest.raises(ValueError, match="negative definite"):
        RobotState(np.zeros(3), np.ones(3), A=np.eye(3))
    with pytest.raises(ValueError, match="dt"):
        RobotState(np.zeros(3), np.ones(3), dt=0.2)
    with pytest.raises(ValueError):
        RobotState(np.zeros(2), np.ones(3))
    with pytest.raises(ValueError):
        TargetMap(left_target=[1, 1, 1], right_target=[1, 1, 1])


def random_neg_def(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    lam = rng.uniform(0.1, 10.0, size=3)
    return -(q * lam) @ q.T


def test_lyapunov_decrease_on_random_matrices():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = random_neg_def(rng)
        lam_max = np.max(np.abs(np.linalg.eigvalsh(a)))
        dt = min(0.1, 0.9 * 2.0 / lam_max)
        s = RobotState(rng.normal(size=3), rng.normal(size=3), A=a, dt=dt)
        dists = [x.distance for x in simulate(s, 400)]
        for prev, cur in zip(dists, dists[1:]):
            if prev < 1e-9:
                break
            assert cur < prev


@settings(max_examples=30)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.integers(0, 50))
def test_trajectory_is_deterministic(x0, n):
    s = RobotState(x0, TARGETS.left_target)
    a = [x.x for x in simulate(s, n)]
    b = [x.x for x in simulate(s, n)]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_telemetry_and_csv(tmp_path):
    s = set_target(at_home(TARGETS), "right", TARGETS)
    rec = json.loads(robot.telemetry(s, 0.5))
    assert set(rec) == {"t", "x", "x_star", "dist"} and rec["dist"] == pytest.approx(s.distance)
    path = tmp_path / "traj.csv"
    robot.write_trajectory_csv(path, simulate(s, 10))
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,y,z,tx,ty,tz,dist" and len(lines) == 12
